"""reconkit: a desk-scale accelerated-MRI reconstruction sandbox."""

from . import autodiff, baselines, containers, fourier, metrics, mri, networks, phantom, sampling, training

__all__ = [
    "autodiff",
    "baselines",
    "containers",
    "fourier",
    "metrics",
    "mri",
    "networks",
    "phantom",
    "sampling",
    "training",
]

__version__ = "0.1.0"
