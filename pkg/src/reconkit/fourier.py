"""Centered, orthonormal 2D Fourier transforms.

Convention used everywhere in this package: the DC sample sits at grid index
(h // 2, w // 2) and both directions carry 1/sqrt(n) scaling, so the pair is
unitary: ``ifft2c(fft2c(x)) == x`` to machine precision and L2 norms are
preserved.  Both functions operate on the last two axes, which lets a
multicoil stack (coils, h, w) go through unchanged.  scipy's FFT backend is
used because it preserves single precision.
"""

from __future__ import annotations

import numpy as np
import scipy.fft


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2D FFT over the last two axes."""
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"fft2c expects a 2D grid (or a stack of them), got shape {x.shape}")
    shifted = np.fft.ifftshift(x, axes=(-2, -1))
    k = scipy.fft.fft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Inverse (and adjoint) of :func:`fft2c`."""
    k = np.asarray(k)
    if k.ndim < 2:
        raise ValueError(f"ifft2c expects a 2D grid (or a stack of them), got shape {k.shape}")
    shifted = np.fft.ifftshift(k, axes=(-2, -1))
    x = scipy.fft.ifft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))
