"""Adversarial image-to-image translation shared by the OD, fovea and lesion tasks."""

from .losses import (
    EPS,
    adversarial_loss,
    combined_generator_objective,
    discriminator_loss,
    generator_adversarial_loss,
    l1_loss,
)
from .networks import (
    DISCRIMINATOR_WIDTHS,
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    init_weights,
)
from .training import Checkpoint, TrainConfig, infer, learning_rate_at, train

__all__ = [
    "EPS", "adversarial_loss", "combined_generator_objective", "discriminator_loss",
    "generator_adversarial_loss", "l1_loss", "DISCRIMINATOR_WIDTHS", "Discriminator",
    "DiscriminatorSpec", "Generator", "GeneratorSpec", "build_discriminator", "build_generator",
    "init_weights", "Checkpoint", "TrainConfig", "infer", "learning_rate_at", "train",
]
