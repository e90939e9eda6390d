import numpy as np
import pytest

from reconkit import phantom, sampling


def finite_diff(f, arrays, eps=1e-6):
    """Central-difference gradients of a scalar function of real arrays."""
    grads = []
    for pos, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        for idx in np.ndindex(arr.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[pos][idx] += eps
            minus[pos][idx] -= eps
            g[idx] = (f(*plus) - f(*minus)) / (2.0 * eps)
        grads.append(g)
    return grads


def rel_error(a, b):
    denom = np.linalg.norm(np.asarray(b).ravel())
    if denom == 0:
        return np.linalg.norm(np.asarray(a).ravel())
    return np.linalg.norm((np.asarray(a) - np.asarray(b)).ravel()) / denom


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture(scope="session")
def small_record():
    """16x16, 3-coil, 2x-undersampled noisy acquisition with ground truth."""
    spec = phantom.default_brain_spec(size=16, seed=11)
    img, lesion, wm = phantom.make_phantom(spec)
    maps = phantom.make_coils(3, 16, 16)
    mask = sampling.gaussian2d_mask(16, 16, 2.0, seed=5)
    return phantom.simulate_acquisition(img, maps, mask, sigma=0.01, seed=7,
                                        lesion_mask=lesion, wm_mask=wm)


@pytest.fixture(scope="session")
def desk_record():
    """64x64, 4-coil record matching the desk-scale experiment settings."""
    spec = phantom.default_brain_spec(size=64, seed=3)
    img, lesion, wm = phantom.make_phantom(spec)
    maps = phantom.make_coils(4, 64, 64)
    mask = sampling.gaussian2d_mask(64, 64, 4.0, seed=9)
    return phantom.simulate_acquisition(img, maps, mask, sigma=0.02, seed=13,
                                        lesion_mask=lesion, wm_mask=wm)
