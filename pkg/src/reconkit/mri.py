"""Multicoil accelerated-MRI forward model and its adjoint.

The forward operator maps a complex image x through coil sensitivities,
a centered orthonormal FFT and a binary sampling mask:

    forward_op(x) = mask * fft2c(maps * x)        (per coil)
    adjoint_op(y) = sum_i conj(maps_i) * ifft2c(mask * y_i)

With sensitivity maps normalized so that sum_i |S_i|^2 == 1 everywhere, the
pair is an exact adjoint pair and ``adjoint_op(forward_op(x)) == x`` under
full sampling.  All functions are pure and operate on plain numpy arrays;
differentiable graph-building versions live in :mod:`reconkit.networks`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fourier import fft2c, ifft2c


class DimensionError(ValueError):
    """Shapes of image / maps / mask / k-space do not agree."""


@dataclass
class SamplingMask:
    """Binary k-space selection pattern plus generation metadata."""

    keep: np.ndarray                      # (h, w) of {0, 1}, float or bool
    kind: str = "full"                    # gaussian2d | equidistant1d | poisson2d | full
    requested_acceleration: float = 1.0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.keep = np.asarray(self.keep)
        if self.keep.ndim != 2:
            raise DimensionError(f"mask must be 2D, got shape {self.keep.shape}")
        if self.keep.sum() < 1:
            raise ValueError("mask keeps no samples")

    @property
    def shape(self):
        return self.keep.shape

    @property
    def n_kept(self) -> int:
        return int(np.count_nonzero(self.keep))

    @property
    def achieved_acceleration(self) -> float:
        return self.keep.size / self.n_kept

    def as_float(self, dtype=np.float64) -> np.ndarray:
        return self.keep.astype(dtype)


def _mask_array(mask) -> np.ndarray:
    if isinstance(mask, SamplingMask):
        return mask.keep
    return np.asarray(mask)


def _check_maps(maps: np.ndarray) -> np.ndarray:
    maps = np.asarray(maps)
    if maps.ndim != 3:
        raise DimensionError(f"sensitivity maps must be (coils, h, w), got {maps.shape}")
    return maps


def expand(x: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Image -> per-coil image stack, coil i = maps_i * x."""
    x = np.asarray(x)
    maps = _check_maps(maps)
    if x.shape != maps.shape[1:]:
        raise DimensionError(f"image {x.shape} does not match maps {maps.shape}")
    return maps * x[None, :, :]


def reduce(stack: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Per-coil image stack -> image, sum_i conj(maps_i) * stack_i."""
    stack = np.asarray(stack)
    maps = _check_maps(maps)
    if stack.shape != maps.shape:
        raise DimensionError(f"stack {stack.shape} does not match maps {maps.shape}")
    return np.sum(np.conjugate(maps) * stack, axis=0)


def forward_op(x: np.ndarray, maps: np.ndarray, mask) -> np.ndarray:
    """A(x): masked per-coil k-space of a complex image."""
    m = _mask_array(mask)
    if m.shape != np.asarray(x).shape:
        raise DimensionError(f"mask {m.shape} does not match image {np.asarray(x).shape}")
    return m[None, :, :] * fft2c(expand(x, maps))


def adjoint_op(y: np.ndarray, maps: np.ndarray, mask) -> np.ndarray:
    """A*(y): coil-combined image of masked k-space."""
    y = np.asarray(y)
    maps = _check_maps(maps)
    m = _mask_array(mask)
    if y.shape != maps.shape:
        raise DimensionError(f"k-space {y.shape} does not match maps {maps.shape}")
    if m.shape != y.shape[1:]:
        raise DimensionError(f"mask {m.shape} does not match k-space {y.shape}")
    return reduce(ifft2c(m[None, :, :] * y), maps)


def add_noise(y: np.ndarray, sigma: float, mask, seed: int) -> np.ndarray:
    """Add iid complex Gaussian noise (std sigma) at sampled positions only."""
    if sigma < 0:
        raise ValueError(f"noise level must be non-negative, got {sigma}")
    y = np.asarray(y)
    if sigma == 0:
        return y.copy()
    m = _mask_array(mask).astype(bool)
    rng = np.random.default_rng(seed)
    scale = sigma / np.sqrt(2.0)
    noise = scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    out = y.copy()
    out[:, m] = out[:, m] + noise[:, m]
    return out


def soft_dc_kspace(k: np.ndarray, y: np.ndarray, mask, d: float) -> np.ndarray:
    """Soft replacement of sampled k-space positions: k - d*mask*(k - y).

    d = 0 leaves k untouched; d = 1 hard-replaces sampled positions by the
    measurements.
    """
    m = _mask_array(mask)
    return k - d * (m[None, :, :] * (k - y))


def soft_dc(x_hat: np.ndarray, y: np.ndarray, maps: np.ndarray, mask, d: float) -> np.ndarray:
    """Image-space soft data consistency.

    Interpolates the sampled k-space of x_hat toward the measurements y and
    maps the correction back to image space.  Written in correction form,

        x_hat - reduce(ifft2c(d * mask * (fft2c(expand(x_hat)) - y)))

    which is identical to replacing sampled k-space and re-reducing when the
    maps are normalized, and is an exact identity at d = 0.
    """
    m = _mask_array(mask)
    k_hat = fft2c(expand(x_hat, maps))
    if k_hat.shape != np.asarray(y).shape:
        raise DimensionError(f"k-space {np.asarray(y).shape} does not match prediction {k_hat.shape}")
    delta = d * (m[None, :, :] * (k_hat - y))
    return x_hat - reduce(ifft2c(delta), maps)
