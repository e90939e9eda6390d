"""Synthetic complex-valued phantoms, analytic coil maps and acquisitions.

Phantoms are superpositions of ellipses (magnitude) with a smooth low-order
polynomial phase, plus optional small "lesion" ellipses whose ground-truth
masks are recorded so that contrast metrics can be computed without any
segmentation step.  Coil maps are Gaussian profiles placed on a ring around
the field of view with a mild per-coil linear phase, normalized pixelwise so
that sum_i |S_i|^2 == 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import mri
from .mri import SamplingMask


class PhantomSpecError(ValueError):
    """Invalid phantom geometry (e.g. an ellipse leaves the field of view)."""


@dataclass(frozen=True)
class Ellipse:
    """Axis coordinates are fractions of the half field of view, in [-1, 1]."""

    cy: float
    cx: float
    ay: float
    ax: float
    angle: float = 0.0      # radians, counter-clockwise
    intensity: float = 1.0


@dataclass
class PhantomSpec:
    size: int = 64
    ellipses: list[Ellipse] = field(default_factory=list)
    lesions: list[Ellipse] = field(default_factory=list)   # intensity = added delta
    wm_index: int | None = None                            # ellipse hosting "white matter"
    phase_coeffs: np.ndarray | None = None                 # (3, 3) poly coeffs, degree <= 2
    seed: int = 0

    def to_dict(self) -> dict:
        d = {
            "size": self.size,
            "ellipses": [asdict(e) for e in self.ellipses],
            "lesions": [asdict(e) for e in self.lesions],
            "wm_index": self.wm_index,
            "phase_coeffs": None if self.phase_coeffs is None else np.asarray(self.phase_coeffs).tolist(),
            "seed": self.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        return cls(
            size=int(d["size"]),
            ellipses=[Ellipse(**e) for e in d.get("ellipses", [])],
            lesions=[Ellipse(**e) for e in d.get("lesions", [])],
            wm_index=d.get("wm_index"),
            phase_coeffs=None if d.get("phase_coeffs") is None else np.asarray(d["phase_coeffs"], dtype=float),
            seed=int(d.get("seed", 0)),
        )


def _ellipse_mask(e: Ellipse, size: int) -> np.ndarray:
    # normalized coordinates in [-1, 1)
    coords = (np.arange(size) - size / 2.0) / (size / 2.0)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dy, dx = yy - e.cy, xx - e.cx
    c, s = np.cos(e.angle), np.sin(e.angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / e.ax) ** 2 + (v / e.ay) ** 2 <= 1.0


def _check_in_fov(e: Ellipse) -> None:
    reach = max(abs(e.cy) + max(e.ay, e.ax), abs(e.cx) + max(e.ay, e.ax))
    if reach > 1.0 + 1e-9:
        raise PhantomSpecError(f"ellipse extends outside the field of view: {e}")


def make_phantom(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build (complex image, lesion mask, white-matter mask) from a spec."""
    n = spec.size
    mag = np.zeros((n, n), dtype=np.float64)
    wm_mask = np.zeros((n, n), dtype=bool)
    lesion_mask = np.zeros((n, n), dtype=bool)

    for i, e in enumerate(spec.ellipses):
        _check_in_fov(e)
        inside = _ellipse_mask(e, n)
        mag[inside] += e.intensity
        if spec.wm_index is not None and i == spec.wm_index:
            wm_mask = inside
    for e in spec.lesions:
        _check_in_fov(e)
        inside = _ellipse_mask(e, n)
        mag[inside] += e.intensity
        lesion_mask |= inside
    wm_mask = wm_mask & ~lesion_mask

    if spec.phase_coeffs is None:
        phase = np.zeros((n, n))
    else:
        c = np.asarray(spec.phase_coeffs, dtype=float)
        coords = (np.arange(n) - n / 2.0) / (n / 2.0)
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        phase = np.zeros((n, n))
        for i in range(min(3, c.shape[0])):
            for j in range(min(3, c.shape[1])):
                if i + j <= 2 and c[i, j] != 0:
                    phase += c[i, j] * yy ** i * xx ** j

    image = mag * np.exp(1j * phase)
    return image, lesion_mask, wm_mask


def make_coils(n_coils: int, h: int, w: int, profile_width: float = 0.9) -> np.ndarray:
    """Analytic sensitivity maps, normalized so sum_i |S_i|^2 == 1 pixelwise.

    Coils are Gaussian profiles (width = profile_width * min(h, w) pixels)
    centered at equal angles on a ring just outside the grid, each with a
    smooth linear phase ramp pointing at its center.
    """
    if n_coils < 1:
        raise ValueError(f"need at least one coil, got {n_coils}")
    if n_coils == 1:
        # normalization leaves only phase; a single coil is the trivial map
        return np.ones((1, h, w), dtype=np.complex128)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ring = 0.6 * max(h, w)
    width = profile_width * min(h, w)

    maps = np.empty((n_coils, h, w), dtype=np.complex128)
    for i in range(n_coils):
        theta = 2.0 * np.pi * i / n_coils
        oy, ox = cy + ring * np.sin(theta), cx + ring * np.cos(theta)
        r2 = (yy - oy) ** 2 + (xx - ox) ** 2
        profile = np.exp(-r2 / (2.0 * width ** 2))
        # half a phase cycle across the FOV, oriented toward the coil
        ramp = np.pi * (np.cos(theta) * (xx - cx) / w + np.sin(theta) * (yy - cy) / h)
        maps[i] = profile * np.exp(1j * ramp)

    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / rss[None, :, :]


@dataclass
class DatasetRecord:
    """One simulated acquisition with its ground truth."""

    reference: np.ndarray          # complex (h, w), unit max magnitude
    maps: np.ndarray               # complex (coils, h, w)
    mask: SamplingMask
    kspace: np.ndarray             # complex (coils, h, w), zeros off-mask
    lesion_mask: np.ndarray        # bool (h, w)
    wm_mask: np.ndarray            # bool (h, w)
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.reference.shape

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]


def simulate_acquisition(image: np.ndarray, maps: np.ndarray, mask: SamplingMask,
                         sigma: float, seed: int,
                         lesion_mask: np.ndarray | None = None,
                         wm_mask: np.ndarray | None = None) -> DatasetRecord:
    """Normalize the reference, run the forward model and add measurement noise."""
    image = np.asarray(image, dtype=np.complex128)
    peak = np.abs(image).max()
    if peak > 0:
        image = image / peak
    y = mri.forward_op(image, maps, mask)
    y = mri.add_noise(y, sigma, mask, seed)
    h, w = image.shape
    if lesion_mask is None:
        lesion_mask = np.zeros((h, w), dtype=bool)
    if wm_mask is None:
        wm_mask = np.zeros((h, w), dtype=bool)
    meta = {
        "seed": int(seed),
        "sigma": float(sigma),
        "acceleration": float(mask.achieved_acceleration),
        "mask_kind": mask.kind,
    }
    return DatasetRecord(image, np.asarray(maps), mask, y, lesion_mask, wm_mask, meta)


def default_brain_spec(size: int = 64, seed: int = 0, n_lesions: int = 2,
                       jitter: float = 0.03) -> PhantomSpec:
    """A brain-like phantom family with seed-controlled variation.

    Head ellipse at 0.25, a white-matter host ellipse adding 0.15 (so the WM
    level is 0.40), two deep structures, and small lesions adding 0.20 on top
    of the WM level.  Lesions sit on a mid-radius ring inside the host, away
    from the deep structures.
    """
    rng = np.random.default_rng(seed)

    def j(scale=1.0):
        return float(rng.uniform(-jitter, jitter)) * scale

    head = Ellipse(cy=j(0.5), cx=j(0.5), ay=0.88 + j(), ax=0.72 + j(), angle=j(2.0), intensity=0.25)
    wm = Ellipse(cy=head.cy + j(0.5), cx=head.cx + j(0.5), ay=0.60 + j(), ax=0.46 + j(),
                 angle=head.angle + j(2.0), intensity=0.15)
    deep1 = Ellipse(cy=wm.cy - 0.10 + j(0.5), cx=wm.cx - 0.06 + j(0.5), ay=0.10 + j(0.3),
                    ax=0.05 + j(0.2), angle=0.3 + j(), intensity=0.25)
    deep2 = Ellipse(cy=wm.cy - 0.10 + j(0.5), cx=wm.cx + 0.06 + j(0.5), ay=0.10 + j(0.3),
                    ax=0.05 + j(0.2), angle=-0.3 + j(), intensity=0.25)

    lesions = []
    for _ in range(n_lesions):
        theta = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0.55, 0.8)
        ly = wm.cy + rad * wm.ay * np.sin(theta) * 0.8
        lx = wm.cx + rad * wm.ax * np.cos(theta) * 0.8
        lesions.append(Ellipse(cy=float(ly), cx=float(lx),
                               ay=0.045 + j(0.2), ax=0.045 + j(0.2),
                               angle=j(2.0), intensity=0.20))

    phase = np.zeros((3, 3))
    phase[0, 1] = rng.uniform(-0.8, 0.8)    # linear ramps
    phase[1, 0] = rng.uniform(-0.8, 0.8)
    phase[0, 2] = rng.uniform(-0.5, 0.5)    # gentle quadratic terms
    phase[2, 0] = rng.uniform(-0.5, 0.5)
    phase[1, 1] = rng.uniform(-0.4, 0.4)

    return PhantomSpec(size=size, ellipses=[head, wm, deep1, deep2],
                       lesions=lesions, wm_index=1, phase_coeffs=phase, seed=seed)
