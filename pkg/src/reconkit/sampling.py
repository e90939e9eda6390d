"""Undersampling mask generators.

Three families:

* ``gaussian2d_mask`` draws k-space points without replacement from a centered
  2D Gaussian density (per-axis sigma derived from a FWHM given relative to
  the grid dimensions), always keeping a small fully sampled central ellipse.
  The sample budget is hit exactly via Gumbel-top-k selection.
* ``equidistant1d_mask`` keeps full phase-encode columns on a regular grid
  plus a fully kept central band.
* ``poisson2d_mask`` performs variable-density Poisson-disc selection with the
  local exclusion radius growing linearly with distance from the k-space
  center; the radius scale is calibrated by bisection until the achieved
  acceleration is within tolerance.

All generators are pure functions of their arguments (seed included), so the
same call always produces the same mask.
"""

from __future__ import annotations

import numpy as np

from .mri import SamplingMask

_FWHM_TO_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


class MaskBudgetError(ValueError):
    """Requested acceleration cannot be met (e.g. ACS alone exceeds budget)."""


class MaskCalibrationError(RuntimeError):
    """Poisson-disc radius calibration failed to reach the target density."""


def _center_offsets(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return yy - h // 2, xx - w // 2


def acs_ellipse(h: int, w: int, acs_frac: float) -> np.ndarray:
    """Central ellipse with half-axes acs_frac * dim / 2 per axis."""
    if acs_frac <= 0:
        return np.zeros((h, w), dtype=bool)
    dy, dx = _center_offsets(h, w)
    return (2.0 * dy / h) ** 2 + (2.0 * dx / w) ** 2 <= acs_frac ** 2


def full_mask(h: int, w: int) -> SamplingMask:
    return SamplingMask(np.ones((h, w)), kind="full", requested_acceleration=1.0, seed=0)


def gaussian2d_mask(h: int, w: int, acceleration: float, fwhm_rel: float = 0.7,
                    acs_frac: float = 0.02, seed: int = 0) -> SamplingMask:
    """Random 2D Gaussian-density mask with an exact sample budget."""
    if acceleration <= 1:
        raise ValueError(f"acceleration must exceed 1, got {acceleration}")
    if not 0 < fwhm_rel <= 2:
        raise ValueError(f"fwhm_rel must be in (0, 2], got {fwhm_rel}")
    if not 0 <= acs_frac < 1:
        raise ValueError(f"acs_frac must be in [0, 1), got {acs_frac}")

    n_keep = int(round(h * w / acceleration))
    acs = acs_ellipse(h, w, acs_frac)
    n_acs = int(acs.sum())
    if n_acs > n_keep:
        raise MaskBudgetError(
            f"ACS ellipse holds {n_acs} samples but the budget at {acceleration}x is {n_keep}"
        )

    sigma_y = fwhm_rel * h / _FWHM_TO_SIGMA
    sigma_x = fwhm_rel * w / _FWHM_TO_SIGMA
    dy, dx = _center_offsets(h, w)
    log_density = -(dy ** 2 / (2.0 * sigma_y ** 2) + dx ** 2 / (2.0 * sigma_x ** 2))

    keep = acs.copy()
    n_rest = n_keep - n_acs
    if n_rest > 0:
        candidates = np.flatnonzero(~acs.ravel())
        rng = np.random.default_rng(seed)
        # Gumbel-top-k == weighted sampling without replacement, exact budget
        keys = log_density.ravel()[candidates] + rng.gumbel(size=candidates.size)
        order = np.argsort(keys, kind="stable")
        chosen = candidates[order[-n_rest:]]
        flat = keep.ravel()
        flat[chosen] = True
        keep = flat.reshape(h, w)

    return SamplingMask(
        keep.astype(np.float64), kind="gaussian2d",
        requested_acceleration=float(acceleration), seed=seed,
        extra={"fwhm_rel": fwhm_rel, "acs_frac": acs_frac},
    )


def equidistant1d_mask(h: int, w: int, acceleration: int = 4, center_frac: float = 0.08,
                       offset_policy: str = "fixed", seed: int = 0) -> SamplingMask:
    """Regularly spaced full phase-encode columns plus a central band."""
    if int(acceleration) != acceleration or acceleration < 2:
        raise ValueError(f"acceleration must be an integer >= 2, got {acceleration}")
    if center_frac >= 1:
        raise ValueError(f"center_frac must be < 1, got {center_frac}")
    acceleration = int(acceleration)

    n_center = int(round(center_frac * w))
    c0 = w // 2 - n_center // 2
    cols = np.zeros(w, dtype=bool)
    if n_center > 0:
        cols[c0:c0 + n_center] = True

    if offset_policy == "fixed":
        offset = 0
    elif offset_policy == "random":
        offset = int(np.random.default_rng(seed).integers(acceleration))
    else:
        raise ValueError(f"unknown offset policy: {offset_policy!r}")
    cols[offset::acceleration] = True

    keep = np.broadcast_to(cols, (h, w)).astype(np.float64).copy()
    return SamplingMask(
        keep, kind="equidistant1d", requested_acceleration=float(acceleration), seed=seed,
        extra={"center_frac": center_frac, "n_center_lines": n_center, "offset": offset},
    )


def _poisson_disc_select(h: int, w: int, scale: float, radius_offset: float,
                         acs: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Greedy dart throwing over a fixed candidate order.

    A candidate p is kept when every already-kept point q (outside the ACS)
    satisfies dist(p, q) >= min(r(p), r(q)) with r(p) = scale*(offset + d(p))
    and d the distance to the k-space center normalized by half the diagonal.
    """
    dy, dx = _center_offsets(h, w)
    half_diag = 0.5 * np.hypot(h, w)
    dist_norm = np.hypot(dy, dx) / half_diag
    radius = scale * (radius_offset + dist_norm)

    placed = np.zeros((h, w), dtype=bool)       # kept points outside the ACS
    kept_r = np.zeros((h, w))
    ys, xs = np.divmod(order, w)
    acs_flat = acs.ravel()
    rad_flat = radius.ravel()
    for idx, py, px in zip(order, ys, xs):
        if acs_flat[idx]:
            continue
        rp = rad_flat[idx]
        win = int(rp) + 1
        y0, y1 = max(0, py - win), min(h, py + win + 1)
        x0, x1 = max(0, px - win), min(w, px + win + 1)
        sub = placed[y0:y1, x0:x1]
        if sub.any():
            qy, qx = np.nonzero(sub)
            d2 = (qy + y0 - py) ** 2 + (qx + x0 - px) ** 2
            rq = kept_r[y0:y1, x0:x1][qy, qx]
            rmin = np.minimum(rp, rq)
            if np.any(d2 < rmin * rmin):
                continue
        placed[py, px] = True
        kept_r[py, px] = rp
    return placed | acs


def _poisson_scale_estimate(h: int, w: int, radius_offset: float, target: float) -> float:
    """Packing-density seed for the radius-scale calibration."""
    dy, dx = _center_offsets(h, w)
    d = np.hypot(dy, dx) / (0.5 * np.hypot(h, w))
    coverage = float(np.sum(1.0 / (radius_offset + d) ** 2))
    return np.sqrt(coverage / (1.8 * target))


def poisson2d_mask(h: int, w: int, acceleration: float = 7.5, acs_frac: float = 0.02,
                   seed: int = 0, radius_offset: float = 0.05, tol: float = 0.05,
                   max_bisections: int = 50) -> SamplingMask:
    """Variable-density Poisson-disc mask calibrated to the target density."""
    if acceleration <= 1:
        raise ValueError(f"acceleration must exceed 1, got {acceleration}")

    acs = acs_ellipse(h, w, acs_frac)
    target = h * w / acceleration
    if acs.sum() > target * (1 + tol):
        raise MaskBudgetError(
            f"ACS ellipse holds {int(acs.sum())} samples, above the {acceleration}x budget"
        )
    order = np.random.default_rng(seed).permutation(h * w)

    def count(scale: float) -> tuple[int, np.ndarray]:
        keep = _poisson_disc_select(h, w, scale, radius_offset, acs, order)
        return int(keep.sum()), keep

    # bracket the radius scale around a packing-density estimate, then
    # bisect; kept count decreases monotonically with the scale
    est = _poisson_scale_estimate(h, w, radius_offset, target)
    lo, hi = est / 1.4, est * 1.4
    n_lo, keep_lo = count(lo)
    grow = 0
    while n_lo < target and grow < 8:
        lo /= 2.0
        n_lo, keep_lo = count(lo)
        grow += 1
    n_hi, keep_hi = count(hi)
    grow = 0
    while n_hi > target and grow < 8:
        hi *= 2.0
        n_hi, keep_hi = count(hi)
        grow += 1
    if n_lo < target or n_hi > target:
        raise MaskCalibrationError(
            f"cannot bracket target density {target:.0f} (got {n_lo}..{n_hi})"
        )

    best_keep, best_scale, best_err = keep_lo, lo, abs(n_lo - target) / target
    if abs(n_hi - target) / target < best_err:
        best_keep, best_scale, best_err = keep_hi, hi, abs(n_hi - target) / target
    for _ in range(max_bisections):
        if best_err <= tol:
            break
        mid = 0.5 * (lo + hi)
        n_mid, keep_mid = count(mid)
        err = abs(n_mid - target) / target
        if err < best_err:
            best_keep, best_scale, best_err = keep_mid, mid, err
        if n_mid > target:
            lo = mid
        else:
            hi = mid
    if best_err > tol:
        raise MaskCalibrationError(
            f"calibration stalled at {best_err:.1%} from the {acceleration}x target"
        )

    return SamplingMask(
        best_keep.astype(np.float64), kind="poisson2d",
        requested_acceleration=float(acceleration), seed=seed,
        extra={"acs_frac": acs_frac, "radius_offset": radius_offset, "tolerance": tol,
               "scale": best_scale},
    )


class MaskReport:
    """Audit summary of a sampling mask."""

    def __init__(self, mask: SamplingMask):
        keep = mask.keep.astype(bool)
        h, w = keep.shape
        self.kind = mask.kind
        self.height = h
        self.width = w
        self.seed = mask.seed
        self.requested_acceleration = mask.requested_acceleration
        self.n_kept = int(keep.sum())
        self.achieved_acceleration = keep.size / self.n_kept
        self.density_y = keep.mean(axis=1)   # marginal along ky (rows)
        self.density_x = keep.mean(axis=0)   # marginal along kx (columns)
        # ACS extent: longest fully sampled run through the center, per axis
        self.acs_extent_y = _center_run(keep[:, w // 2])
        self.acs_extent_x = _center_run(keep[h // 2, :])

    CSV_HEADER = ("kind", "height", "width", "seed", "requested_acc",
                  "achieved_acc", "n_kept", "acs_extent_y", "acs_extent_x")

    def csv_row(self) -> str:
        vals = (self.kind, self.height, self.width, self.seed,
                f"{self.requested_acceleration:.6f}", f"{self.achieved_acceleration:.6f}",
                self.n_kept, self.acs_extent_y, self.acs_extent_x)
        return ",".join(str(v) for v in vals)


def _center_run(line: np.ndarray) -> int:
    n = line.size
    mid = n // 2
    if not line[mid]:
        return 0
    lo = mid
    while lo > 0 and line[lo - 1]:
        lo -= 1
    hi = mid
    while hi < n - 1 and line[hi + 1]:
        hi += 1
    return hi - lo + 1


def mask_report(mask: SamplingMask) -> MaskReport:
    return MaskReport(mask)
