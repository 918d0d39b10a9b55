"""Adversarial and reconstruction objectives.

All functions accept tensors or array-likes and return 0-d tensors.
"""

import torch

EPS = 1e-7


def _prob(p) -> torch.Tensor:
    p = p if torch.is_tensor(p) else torch.as_tensor(p, dtype=torch.float64)
    return p.clamp(EPS, 1 - EPS)


def adversarial_loss(d_real, d_fake) -> torch.Tensor:
    """E[log D(y)] + E[log(1 - D(G(x)))], the value D ascends."""
    return torch.log(_prob(d_real)).mean() + torch.log1p(-_prob(d_fake)).mean()


def discriminator_loss(d_real, d_fake) -> torch.Tensor:
    return -adversarial_loss(d_real, d_fake)


def generator_adversarial_loss(d_fake) -> torch.Tensor:
    # non-saturating form; same fixed point as minimising log(1 - D(G(x)))
    return -torch.log(_prob(d_fake)).mean()


def l1_loss(prediction, target) -> torch.Tensor:
    prediction = prediction if torch.is_tensor(prediction) else torch.as_tensor(prediction, dtype=torch.float64)
    target = target if torch.is_tensor(target) else torch.as_tensor(target, dtype=torch.float64)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(prediction.shape)} vs {tuple(target.shape)}")
    return (prediction - target).abs().mean()


def combined_generator_objective(adv_term, l1_term, lambda_l1: float):
    if lambda_l1 < 0:
        raise ValueError("lambda_l1 must be >= 0")
    return adv_term + lambda_l1 * l1_term
