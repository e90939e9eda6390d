"""Unrolled reconstruction networks.

The recurrent reconstructor family runs a fixed number of unrolled update
iterations.  Each iteration feeds the data-fidelity gradient A*(A(x) - y)
together with the current estimate into a small convolutional recurrent cell
(GRU or IndRNN) that emits an additive complex image update, so data
consistency is enforced implicitly through the gradient input.  Cascading
stacks several independently parametrized blocks; an optional explicit soft
data-consistency step interpolates sampled k-space toward the measurements
between cascades.  The variational-cascade baseline replaces the recurrent
regularizer with a small encoder-decoder convnet.

All forward passes are built from :mod:`reconkit.autodiff` ops, so the same
code serves seeded inference (constant parameters, no tape) and training
(leaf parameters on a tape).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from . import mri
from .autodiff import ParameterStore, Tape, Tensor


class DivergedError(RuntimeError):
    """The unrolled reconstruction produced non-finite values."""


class ConfigError(ValueError):
    """Invalid network configuration."""


@dataclass(frozen=True)
class RimCellConfig:
    channels: int = 64
    kernel_sizes: tuple[int, int, int] = (5, 3, 3)
    unit: str = "gru"                 # "gru" | "indrnn"
    iterations: int = 8

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"need at least one unroll iteration, got {self.iterations}")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if self.unit not in ("gru", "indrnn"):
            raise ConfigError(f"unknown recurrent unit {self.unit!r}")


@dataclass(frozen=True)
class CascadeConfig:
    n_cascades: int = 5
    explicit_dc: bool = False
    dc_weight_init: float = 0.0
    share_params: bool = False

    def __post_init__(self):
        if self.n_cascades < 1:
            raise ConfigError(f"need at least one cascade, got {self.n_cascades}")


@dataclass(frozen=True)
class UnetConfig:
    pools: int = 4
    channels: int = 18

    def __post_init__(self):
        if self.pools < 1 or self.channels < 1:
            raise ConfigError(f"invalid encoder-decoder config: {self}")


# ---------------------------------------------------------------------------
# numpy-facing data-fidelity gradient
# ---------------------------------------------------------------------------

def loglik_gradient(x: np.ndarray, y: np.ndarray, maps: np.ndarray, mask,
                    scale: float = 1.0) -> np.ndarray:
    """Gradient of 0.5 * sum_i ||A(x) - y_i||^2 with respect to x.

    The 1/sigma^2 likelihood weighting is absorbed into the learned update;
    pass `scale` to reinstate it.
    """
    return scale * mri.adjoint_op(mri.forward_op(x, maps, mask) - y, maps, mask)


# ---------------------------------------------------------------------------
# graph-building helpers
# ---------------------------------------------------------------------------

class _Operators:
    """Constant tensors for one forward pass (measurements, maps, mask)."""

    def __init__(self, y: np.ndarray, maps: np.ndarray, mask, cdtype=np.complex128):
        rdtype = np.float32 if cdtype == np.complex64 else np.float64
        m = mri._mask_array(mask).astype(rdtype)
        self.h, self.w = m.shape
        self.y = ad.constant(np.asarray(y).astype(cdtype))
        self.maps = ad.constant(np.asarray(maps).astype(cdtype))
        self.maps_conj = ad.constant(np.conjugate(np.asarray(maps).astype(cdtype)))
        self.mask = ad.constant(m[None, :, :])

    def expand(self, x: Tensor) -> Tensor:
        return ad.mul(ad.reshape(x, (1, self.h, self.w)), self.maps)

    def reduce(self, stack: Tensor) -> Tensor:
        return ad.reduce_sum(ad.mul(self.maps_conj, stack), axis=0)

    def forward(self, x: Tensor) -> Tensor:
        return ad.mul(self.mask, ad.fft2c(self.expand(x)))

    def adjoint(self, y: Tensor) -> Tensor:
        return self.reduce(ad.ifft2c(ad.mul(self.mask, y)))

    def zero_filled(self) -> Tensor:
        return self.adjoint(self.y)

    def loglik_gradient(self, x: Tensor) -> Tensor:
        return self.adjoint(ad.sub(self.forward(x), self.y))

    def soft_dc(self, x: Tensor, d: Tensor) -> Tensor:
        """x - reduce(ifft2c(d * mask * (fft2c(expand(x)) - y))); exact no-op at d=0."""
        k_hat = ad.fft2c(self.expand(x))
        resid = ad.mul(self.mask, ad.sub(k_hat, self.y))
        delta = ad.mul(ad.reshape(d, (1, 1, 1)), resid)
        return ad.sub(x, self.reduce(ad.ifft2c(delta)))


def _init_conv(store: ParameterStore, rng, name: str, c_in: int, c_out: int, k: int,
               gain: float = 1.0) -> None:
    std = gain * np.sqrt(2.0 / (c_in * k * k + c_out * k * k))
    store.add(f"{name}.weight", rng.normal(0.0, std, size=(c_out, c_in, k, k)))
    store.add(f"{name}.bias", np.zeros(c_out))


def _conv(x, params, name):
    return ad.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"])


# ---------------------------------------------------------------------------
# recurrent cells (gates are 1x1 convolutions over the spatial grid)
# ---------------------------------------------------------------------------

def init_gru(store: ParameterStore, rng, prefix: str, c_in: int, channels: int) -> None:
    _init_conv(store, rng, f"{prefix}reset", c_in + channels, channels, 1)
    _init_conv(store, rng, f"{prefix}update", c_in + channels, channels, 1)
    _init_conv(store, rng, f"{prefix}cand", c_in + channels, channels, 1)


def gru_step(x, s_prev, params, prefix: str = ""):
    """Gated recurrent update: s = (1 - z) * s_prev + z * tanh-candidate."""
    cat = ad.concat([s_prev, x], axis=0)
    r = ad.sigmoid(_conv(cat, params, f"{prefix}reset"))
    z = ad.sigmoid(_conv(cat, params, f"{prefix}update"))
    cat_r = ad.concat([ad.mul(r, s_prev), x], axis=0)
    s_tilde = ad.tanh(_conv(cat_r, params, f"{prefix}cand"))
    return ad.add(ad.mul(ad.sub(1.0, z), s_prev), ad.mul(z, s_tilde))


def init_indrnn(store: ParameterStore, rng, prefix: str, c_in: int, channels: int) -> None:
    _init_conv(store, rng, f"{prefix}input", c_in, channels, 1)
    store.add(f"{prefix}recurrent", rng.uniform(0.0, 1.0, size=channels))


def indrnn_step(x, s_prev, params, prefix: str = ""):
    """Element-wise recurrence: s = relu(W x + u .* s_prev + b)."""
    wx = _conv(x, params, f"{prefix}input")
    u = ad.reshape(params[f"{prefix}recurrent"], (-1, 1, 1))
    return ad.relu(ad.add(wx, ad.mul(u, s_prev)))


_UNIT_STEPS = {"gru": gru_step, "indrnn": indrnn_step}
_UNIT_INITS = {"gru": init_gru, "indrnn": init_indrnn}


# ---------------------------------------------------------------------------
# RIM block and cascades
# ---------------------------------------------------------------------------

def zero_hidden(cfg: RimCellConfig, h: int, w: int, rdtype=np.float64):
    z = np.zeros((cfg.channels, h, w), dtype=rdtype)
    return ad.constant(z), ad.constant(z.copy())


def rim_block(x, hidden, ops: _Operators, params, cfg: RimCellConfig, prefix: str = ""):
    """One unrolled run of cfg.iterations update steps.

    Returns (final image, final hidden pair, per-iteration estimates).
    """
    s0, s1 = hidden
    step = _UNIT_STEPS[cfg.unit]
    h, w = ops.h, ops.w
    estimates = []
    for tau in range(cfg.iterations):
        grad = ops.loglik_gradient(x)
        feat = ad.concat([
            ad.reshape(ad.real(grad), (1, h, w)),
            ad.reshape(ad.imag(grad), (1, h, w)),
            ad.reshape(ad.real(x), (1, h, w)),
            ad.reshape(ad.imag(x), (1, h, w)),
        ], axis=0)
        a1 = _conv(feat, params, f"{prefix}conv1")
        s0 = step(a1, s0, params, f"{prefix}unit1.")
        a2 = _conv(s0, params, f"{prefix}conv2")
        s1 = step(a2, s1, params, f"{prefix}unit2.")
        dx = _conv(s1, params, f"{prefix}conv3")
        x = ad.add(x, ad.make_complex(dx[0], dx[1]))
        if not np.all(np.isfinite(x.data)):
            raise DivergedError(f"non-finite reconstruction at unroll iteration {tau}")
        estimates.append(x)
    return x, (s0, s1), estimates


class CirimModel:
    """Cascaded recurrent reconstructor (single cascade = plain RIM/IRIM)."""

    def __init__(self, cell: RimCellConfig | None = None,
                 cascade: CascadeConfig | None = None, kind: str = "cirim"):
        self.cell = cell or RimCellConfig()
        self.cascade = cascade or CascadeConfig()
        self.kind = kind

    def _prefix(self, k: int) -> str:
        return "shared." if self.cascade.share_params else f"cascade{k}."

    def init_params(self, store: ParameterStore, seed: int) -> None:
        rng = np.random.default_rng(seed)
        c = self.cell.channels
        k1, k2, k3 = self.cell.kernel_sizes
        n_blocks = 1 if self.cascade.share_params else self.cascade.n_cascades
        for k in range(n_blocks):
            p = self._prefix(k)
            _init_conv(store, rng, f"{p}conv1", 4, c, k1)
            _UNIT_INITS[self.cell.unit](store, rng, f"{p}unit1.", c, c)
            _init_conv(store, rng, f"{p}conv2", c, c, k2)
            _UNIT_INITS[self.cell.unit](store, rng, f"{p}unit2.", c, c)
            _init_conv(store, rng, f"{p}conv3", c, 2, k3, gain=0.1)
        if self.cascade.explicit_dc:
            for k in range(self.cascade.n_cascades):
                store.add(f"cascade{k}.dc_weight",
                          np.array([self.cascade.dc_weight_init], dtype=np.float64))

    def constraints(self) -> list[tuple[str, float, float]]:
        """Value clamps applied after each optimizer step."""
        if self.cell.unit != "indrnn":
            return []
        out = []
        n_blocks = 1 if self.cascade.share_params else self.cascade.n_cascades
        for k in range(n_blocks):
            p = self._prefix(k)
            # keep the T-step product of recurrent weights from exploding
            out.append((f"{p}unit1.recurrent", -1.0, 1.0))
            out.append((f"{p}unit2.recurrent", -1.0, 1.0))
        return out

    def forward(self, y, maps, mask, params, tape: Tape | None = None,
                cdtype=np.complex128):
        ops = _Operators(y, maps, mask, cdtype=cdtype)
        rdtype = np.float32 if cdtype == np.complex64 else np.float64
        x = ops.zero_filled()
        all_estimates = []
        for k in range(self.cascade.n_cascades):
            hidden = zero_hidden(self.cell, ops.h, ops.w, rdtype)
            x, _, estimates = rim_block(x, hidden, ops, params, self.cell, self._prefix(k))
            if self.cascade.explicit_dc:
                x = ops.soft_dc(x, params[f"cascade{k}.dc_weight"])
                # the cascade's prediction is its data-consistent output
                estimates[-1] = x
            all_estimates.append(estimates)
        return x, all_estimates

    def config_dict(self) -> dict:
        return {"kind": self.kind, "cell": asdict(self.cell),
                "cascade": asdict(self.cascade)}


# ---------------------------------------------------------------------------
# variational cascade baseline
# ---------------------------------------------------------------------------

def init_unet(store: ParameterStore, rng, prefix: str, cfg: UnetConfig, c_in: int = 2) -> None:
    ch = cfg.channels
    cur = c_in
    for i in range(cfg.pools):
        out = ch << i
        _init_conv(store, rng, f"{prefix}enc{i}a", cur, out, 3)
        _init_conv(store, rng, f"{prefix}enc{i}b", out, out, 3)
        cur = out
    _init_conv(store, rng, f"{prefix}mid_a", cur, cur * 2, 3)
    _init_conv(store, rng, f"{prefix}mid_b", cur * 2, cur * 2, 3)
    below = cur * 2
    for i in reversed(range(cfg.pools)):
        skip = ch << i
        _init_conv(store, rng, f"{prefix}dec{i}a", below + skip, skip, 3)
        _init_conv(store, rng, f"{prefix}dec{i}b", skip, skip, 3)
        below = skip
    _init_conv(store, rng, f"{prefix}out", ch, c_in, 1, gain=0.1)


def unet_forward(x, params, prefix: str, cfg: UnetConfig):
    skips = []
    h = x
    for i in range(cfg.pools):
        h = ad.relu(_conv(h, params, f"{prefix}enc{i}a"))
        h = ad.relu(_conv(h, params, f"{prefix}enc{i}b"))
        skips.append(h)
        h = ad.avg_pool2(h)
    h = ad.relu(_conv(h, params, f"{prefix}mid_a"))
    h = ad.relu(_conv(h, params, f"{prefix}mid_b"))
    for i in reversed(range(cfg.pools)):
        h = ad.upsample2(h)
        h = ad.concat([h, skips[i]], axis=0)
        h = ad.relu(_conv(h, params, f"{prefix}dec{i}a"))
        h = ad.relu(_conv(h, params, f"{prefix}dec{i}b"))
    return _conv(h, params, f"{prefix}out")


class VarnetModel:
    """Cascade of residual image-space convnet regularizers with optional soft DC.

    The running state is the coil-combined image, initialized from the
    measured data via the adjoint; each cascade applies a residual
    encoder-decoder update and, when enabled, the k-space soft replacement
    step restricted to sampled positions.
    """

    def __init__(self, unet: UnetConfig | None = None,
                 cascade: CascadeConfig | None = None):
        self.unet = unet or UnetConfig()
        self.cascade = cascade or CascadeConfig(n_cascades=8, explicit_dc=True, dc_weight_init=0.5)
        self.kind = "varnet"

    def _prefix(self, k: int) -> str:
        return "shared." if self.cascade.share_params else f"cascade{k}."

    def init_params(self, store: ParameterStore, seed: int) -> None:
        rng = np.random.default_rng(seed)
        n_blocks = 1 if self.cascade.share_params else self.cascade.n_cascades
        for k in range(n_blocks):
            init_unet(store, rng, self._prefix(k), self.unet)
        if self.cascade.explicit_dc:
            for k in range(self.cascade.n_cascades):
                store.add(f"cascade{k}.dc_weight",
                          np.array([self.cascade.dc_weight_init], dtype=np.float64))

    def constraints(self) -> list[tuple[str, float, float]]:
        return []

    def forward(self, y, maps, mask, params, tape: Tape | None = None,
                cdtype=np.complex128):
        ops = _Operators(y, maps, mask, cdtype=cdtype)
        h, w = ops.h, ops.w
        x = ops.zero_filled()
        for k in range(self.cascade.n_cascades):
            feat = ad.concat([
                ad.reshape(ad.real(x), (1, h, w)),
                ad.reshape(ad.imag(x), (1, h, w)),
            ], axis=0)
            upd = unet_forward(feat, params, self._prefix(k), self.unet)
            x = ad.add(x, ad.make_complex(upd[0], upd[1]))
            if self.cascade.explicit_dc:
                x = ops.soft_dc(x, params[f"cascade{k}.dc_weight"])
            if not np.all(np.isfinite(x.data)):
                raise DivergedError(f"non-finite reconstruction after cascade {k}")
        return x, [[x]]

    def config_dict(self) -> dict:
        return {"kind": self.kind, "unet": asdict(self.unet),
                "cascade": asdict(self.cascade)}


# ---------------------------------------------------------------------------
# model factory and functional entry points
# ---------------------------------------------------------------------------

def build_model(kind: str, cell: RimCellConfig | None = None,
                cascade: CascadeConfig | None = None,
                unet: UnetConfig | None = None):
    if kind == "rim":
        return CirimModel(cell or RimCellConfig(unit="gru"),
                          cascade or CascadeConfig(n_cascades=1), kind="rim")
    if kind == "irim":
        return CirimModel(cell or RimCellConfig(unit="indrnn"),
                          cascade or CascadeConfig(n_cascades=1), kind="irim")
    if kind == "cirim":
        return CirimModel(cell or RimCellConfig(unit="indrnn"),
                          cascade or CascadeConfig(n_cascades=5), kind="cirim")
    if kind == "varnet":
        return VarnetModel(unet, cascade)
    raise ConfigError(f"unknown model kind {kind!r}")


def model_from_config(config: dict):
    kind = config.get("kind")
    cell = RimCellConfig(**{**config["cell"], "kernel_sizes": tuple(config["cell"]["kernel_sizes"])}) \
        if "cell" in config else None
    cascade = CascadeConfig(**config["cascade"]) if "cascade" in config else None
    unet = UnetConfig(**config["unet"]) if "unet" in config else None
    return build_model(kind, cell=cell, cascade=cascade, unet=unet)


def cirim_forward(y, maps, mask, model: CirimModel, params, tape=None, cdtype=np.complex128):
    """Full cascaded forward pass; returns (image, per-cascade estimate lists)."""
    return model.forward(y, maps, mask, params, tape=tape, cdtype=cdtype)


def varnet_forward(y, maps, mask, model: VarnetModel, params, tape=None, cdtype=np.complex128):
    """Variational-cascade forward pass; returns the final image tensor."""
    x, _ = model.forward(y, maps, mask, params, tape=tape, cdtype=cdtype)
    return x


def reconstruct(model, store: ParameterStore, record, cdtype=np.complex128) -> np.ndarray:
    """Seeded inference on a dataset record with frozen parameters."""
    params = store.frozen(dtype=np.float32 if cdtype == np.complex64 else np.float64)
    x, _ = model.forward(record.kspace, record.maps, record.mask, params, tape=None, cdtype=cdtype)
    return x.data
