"""Residual encoder-decoder generator and global CNN discriminator."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

DISCRIMINATOR_WIDTHS = (64, 128, 256, 512, 512, 512)


@dataclass
class GeneratorSpec:
    in_channels: int = 3
    out_channels: int = 1
    base_channels: int = 64
    n_special_blocks: int = 9

    def problems(self, prefix="generator") -> list:
        out = []
        if self.n_special_blocks < 1:
            out.append(f"{prefix}.n_special_blocks must be >= 1")
        for name in ("in_channels", "out_channels", "base_channels"):
            if getattr(self, name) < 1:
                out.append(f"{prefix}.{name} must be >= 1")
        return out


@dataclass
class DiscriminatorSpec:
    in_channels: int = 1
    conditional: bool = False

    def problems(self, prefix="discriminator") -> list:
        return [f"{prefix}.in_channels must be >= 1"] if self.in_channels < 1 else []


def conv_bn_relu(cin, cout, kernel, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def deconv_bn_relu(cin, cout):
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, 3, stride=2, padding=1, output_padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class SpecialBlock(nn.Module):
    """Pre-activation residual unit: x + conv(relu(bn(conv(relu(bn(x))))))."""

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.BatchNorm2d(channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        c = spec.base_channels
        self.stem1 = conv_bn_relu(spec.in_channels, c, 7)
        self.stem2 = conv_bn_relu(c, 2 * c, 3, stride=2)
        self.stem3 = conv_bn_relu(2 * c, 4 * c, 3, stride=2)
        self.blocks = nn.Sequential(*[SpecialBlock(4 * c) for _ in range(spec.n_special_blocks)])
        self.up1 = deconv_bn_relu(4 * c, 2 * c)
        self.up2 = deconv_bn_relu(2 * c, c)
        self.head = nn.Conv2d(c, spec.out_channels, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ValueError(f"generator input {h}x{w} must have sides divisible by 4")
        s1 = self.stem1(x)
        s2 = self.stem2(s1)
        s3 = self.stem3(s2)
        y = self.blocks(s3) + s3
        y = self.up1(y) + s2
        y = self.up2(y) + s1
        return torch.tanh(self.head(y))


class Discriminator(nn.Module):
    """Six stride-2 conv layers of widths 64-128-256-512-512-512, then one logit."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        layers = []
        cin = spec.in_channels
        for i, width in enumerate(DISCRIMINATOR_WIDTHS):
            layers.append(nn.Conv2d(cin, width, 3, stride=2, padding=1, bias=(i == 0)))
            if i > 0:
                layers.append(nn.BatchNorm2d(width))
            layers.append(nn.ReLU(inplace=True))
            cin = width
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Linear(cin, 1)

    def feature_widths(self) -> list:
        return [m.out_channels for m in self.features if isinstance(m, nn.Conv2d)]

    def forward(self, y):
        f = self.features(y).mean(dim=(2, 3))
        return self.classifier(f).squeeze(1)


def build_generator(spec: GeneratorSpec) -> Generator:
    problems = spec.problems()
    if problems:
        raise ValueError("; ".join(problems))
    return Generator(spec)


def build_discriminator(spec: DiscriminatorSpec) -> Discriminator:
    return Discriminator(spec)


def init_weights(network: nn.Module, mean: float = 0.0, std: float = 0.02, seed: int = 0) -> nn.Module:
    """Gaussian conv/linear weights, zero biases, unit-scale normalisation."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in network.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                if std == 0:
                    m.weight.fill_(mean)
                else:
                    m.weight.normal_(mean, std, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.reset_running_stats()
    return network


def parameter_count(network: nn.Module) -> int:
    return sum(p.numel() for p in network.parameters())
