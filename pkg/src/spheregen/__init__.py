"""Symmetry-controllable spherical image generation from a single NFOV image."""

from .geometry import (
    EquirectGrid,
    SymmetryType,
    ViewSpec,
    circular_pad,
    circular_shift,
    default_registry,
    flip_about_longitude,
    mask_extract,
    nfov_to_equirect,
    pixel_to_direction,
    symmetry_transform,
    weight_map,
)
from .networks import Discriminator, Generator, ModelConfig, desk_config, full_config
from .symmetry import estimate_symmetry, symmetry_control
from .training import TrainConfig, Trainer, generate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
