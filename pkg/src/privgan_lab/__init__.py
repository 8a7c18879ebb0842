"""Desk-scale lab for privacy-regularized multi-generator GANs.

Subpackages: numkit (deterministic numeric core), data (datasets, splits,
partitions, PCA), models (GAN / privGAN training and inference), attacks
(membership-inference suite), theory (closed-form oracles on discrete
distributions), evalmetrics (utility metrics), cli (experiment runner).
"""

from .numkit import ContractError, Rng, ShapeError

__version__ = "0.1.0"

__all__ = ["ContractError", "Rng", "ShapeError", "__version__"]
