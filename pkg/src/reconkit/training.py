"""Losses, the ADAM optimizer, the training loop and the evaluation harness."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import baselines, containers, metrics
from .autodiff import ParameterStore, Tape, Tensor
from .networks import reconstruct
from .phantom import DatasetRecord


class TrainingError(RuntimeError):
    """Training contract violation (missing estimates, bad config, ...)."""


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _as_tensor_pair(x_hat, x_ref):
    tensor_in = isinstance(x_hat, Tensor) or isinstance(x_ref, Tensor)
    return ad.astensor(x_hat), ad.astensor(x_ref), tensor_in


def l1_loss(x_hat, x_ref):
    """Mean absolute difference of magnitude images."""
    th, tr, tensor_in = _as_tensor_pair(x_hat, x_ref)
    if th.shape != tr.shape:
        raise TrainingError(f"image shapes differ: {th.shape} vs {tr.shape}")
    out = ad.reduce_mean(ad.absolute(ad.sub(ad.absolute(th), ad.absolute(tr))))
    return out if tensor_in else float(out.data)


def iteration_loss_weights(n_iterations: int, orientation: str = "late") -> np.ndarray:
    """Geometric per-iteration loss weights.

    "late" makes the last step 10x the first (w_tau = 10^((tau-T)/(T-1)));
    "early" flips the exponent, for ablation.  A single iteration gets
    weight 1.
    """
    if n_iterations < 1:
        raise TrainingError(f"need at least one iteration, got {n_iterations}")
    if n_iterations == 1:
        return np.ones(1)
    tau = np.arange(1, n_iterations + 1, dtype=np.float64)
    if orientation == "late":
        expo = (tau - n_iterations) / (n_iterations - 1)
    elif orientation == "early":
        expo = (n_iterations - tau) / (n_iterations - 1)
    else:
        raise TrainingError(f"unknown weight orientation {orientation!r}")
    return 10.0 ** expo


def cirim_loss(estimates: Sequence[Sequence], x_ref, orientation: str = "late"):
    """Iteration-weighted magnitude l1, averaged over cascades.

    `estimates` is a list per cascade of the per-iteration images; later
    iterations weigh more so the final prediction dominates.
    """
    if not estimates or not estimates[0]:
        raise TrainingError("no estimates provided")
    n_iter = len(estimates[0])
    weights = iteration_loss_weights(n_iter, orientation)
    tensor_in = any(isinstance(e, Tensor) for ests in estimates for e in ests)
    total = None
    for ests in estimates:
        if len(ests) != n_iter:
            raise TrainingError(f"cascade with {len(ests)} estimates, expected {n_iter}")
        for w, e in zip(weights, ests):
            term = ad.mul(float(w / (n_iter * len(estimates))), l1_loss(ad.astensor(e), ad.astensor(x_ref)))
            total = term if total is None else ad.add(total, term)
    return total if tensor_in else float(total.data)


def _ssim_graph(mag_hat: Tensor, ref_mag: np.ndarray, window: int = metrics.SSIM_WINDOW,
                k1: float = metrics.SSIM_K1, k2: float = metrics.SSIM_K2) -> Tensor:
    h, w = ref_mag.shape
    if min(h, w) < window:
        raise TrainingError(f"image smaller than the {window}x{window} SSIM window")
    p = (window - 1) // 2
    data_range = float(ref_mag.max())
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    kernel = np.full((1, 1, window, window), 1.0 / (window * window))

    def local_mean(t: Tensor) -> Tensor:
        m = ad.conv2d(t, ad.constant(kernel), ad.constant(np.zeros(1)))
        return m[:, p:h - p, p:w - p]

    a = ad.reshape(mag_hat, (1, h, w))
    b = ref_mag[None, :, :]
    mu_a = local_mean(a)
    mu_b = local_mean(ad.constant(b))
    var_a = ad.sub(local_mean(ad.mul(a, a)), ad.mul(mu_a, mu_a))
    var_b = ad.sub(local_mean(ad.constant(b * b)), ad.mul(mu_b, mu_b))
    cov = ad.sub(local_mean(ad.mul(a, ad.constant(b))), ad.mul(mu_a, mu_b))

    num = ad.mul(ad.add(ad.mul(2.0, ad.mul(mu_a, mu_b)), c1), ad.add(ad.mul(2.0, cov), c2))
    den = ad.mul(ad.add(ad.add(ad.mul(mu_a, mu_a), ad.mul(mu_b, mu_b)), c1),
                 ad.add(ad.add(var_a, var_b), c2))
    return ad.reduce_mean(ad.div(num, den))


def ssim_loss(x_hat, x_ref):
    """1 - SSIM of magnitude images, differentiable; bounded in [0, 2]."""
    th, tr, tensor_in = _as_tensor_pair(x_hat, x_ref)
    if th.shape != tr.shape:
        raise TrainingError(f"image shapes differ: {th.shape} vs {tr.shape}")
    ref_mag = np.abs(tr.data).astype(np.float64)
    out = ad.sub(1.0, _ssim_graph(ad.absolute(th), ref_mag))
    return out if tensor_in else float(out.data)


# ---------------------------------------------------------------------------
# ADAM
# ---------------------------------------------------------------------------

def adam_step(store: ParameterStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected ADAM update over every parameter in the store."""
    if not store.grads_ready():
        raise TrainingError("gradients not populated; run backward and collect first")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for _name, p in store.items():
        if p.m is None:
            p.m = np.zeros_like(p.value)
            p.v = np.zeros_like(p.value)
        g = p.grad
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / bc1
        v_hat = p.v / bc2
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "cirim"              # "l1" | "cirim" | "ssim"
    weight_orientation: str = "late"
    dtype: str = "float64"           # "float32" trains faster at desk scale
    max_steps: int | None = None


@dataclass
class TrainResult:
    store: ParameterStore
    best_values: dict
    log: list = field(default_factory=list)
    steps: int = 0
    diverged: bool = False


def _loss_for(x, estimates, record, cfg: TrainConfig):
    ref = ad.constant(record.reference.astype(x.dtype))
    if cfg.loss == "l1":
        return l1_loss(x, ref)
    if cfg.loss == "ssim":
        return ssim_loss(x, ref)
    if cfg.loss == "cirim":
        return cirim_loss(estimates, ref, orientation=cfg.weight_orientation)
    raise TrainingError(f"unknown loss {cfg.loss!r}")


def _train_step(model, record: DatasetRecord, store: ParameterStore, cfg: TrainConfig,
                cdtype) -> tuple[float, float]:
    rdtype = np.float32 if cdtype == np.complex64 else np.float64
    tape = Tape()
    leaves = store.leaves(tape, dtype=rdtype)
    x, estimates = model.forward(record.kspace, record.maps, record.mask, leaves,
                                 tape=tape, cdtype=cdtype)
    loss = _loss_for(x, estimates, record, cfg)
    loss_val = float(loss.data)
    if not np.isfinite(loss_val):
        return loss_val, float("nan")
    ad.backward(loss)
    store.zero_grad()
    store.collect(leaves)
    adam_step(store, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    for name, lo, hi in model.constraints():
        store.clamp(name, lo, hi)
    ssim_val = metrics.ssim(np.abs(x.data), np.abs(record.reference))
    return loss_val, ssim_val


def validation_score(model, records: Sequence[DatasetRecord], store: ParameterStore,
                     cfg: TrainConfig, cdtype) -> tuple[float, float]:
    losses, ssims = [], []
    for rec in records:
        params = store.frozen(dtype=np.float32 if cdtype == np.complex64 else np.float64)
        x, estimates = model.forward(rec.kspace, rec.maps, rec.mask, params, tape=None,
                                     cdtype=cdtype)
        loss = _loss_for(x, estimates, rec, cfg)
        losses.append(float(loss.data) if isinstance(loss, Tensor) else float(loss))
        ssims.append(metrics.ssim(np.abs(x.data), np.abs(rec.reference)))
    return float(np.mean(losses)), float(np.mean(ssims))


def train(model, train_records: Sequence[DatasetRecord],
          val_records: Sequence[DatasetRecord], epochs: int, seed: int,
          cfg: TrainConfig | None = None) -> TrainResult:
    """Batch-size-1 training, deterministic per seed.

    Logs one training and one validation row per epoch; keeps the parameter
    snapshot with the best validation loss.  A non-finite loss aborts the run
    and the last good parameters are retained.
    """
    cfg = cfg or TrainConfig()
    if len(train_records) < 1:
        raise TrainingError("need at least one training record")
    cdtype = np.complex64 if cfg.dtype == "float32" else np.complex128

    store = ParameterStore()
    model.init_params(store, seed)
    result = TrainResult(store=store, best_values=store.copy_values())
    best_val = np.inf
    rng = np.random.default_rng(seed)
    stop = False

    for epoch in range(epochs):
        order = rng.permutation(len(train_records))
        losses, ssims = [], []
        for idx in order:
            snapshot = store.copy_values()
            loss_val, ssim_val = _train_step(model, train_records[idx], store, cfg, cdtype)
            if not np.isfinite(loss_val):
                store.load_values(snapshot)
                result.diverged = True
                stop = True
                break
            losses.append(loss_val)
            ssims.append(ssim_val)
            result.steps += 1
            if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                stop = True
                break
        if losses:
            result.log.append({"epoch": epoch, "split": "train",
                               "loss": float(np.mean(losses)), "ssim": float(np.mean(ssims))})
        if val_records and not result.diverged:
            val_loss, val_ssim = validation_score(model, val_records, store, cfg, cdtype)
            result.log.append({"epoch": epoch, "split": "val",
                               "loss": val_loss, "ssim": val_ssim})
            if val_loss < best_val:
                best_val = val_loss
                result.best_values = store.copy_values()
        elif not result.diverged:
            result.best_values = store.copy_values()
        if stop:
            break
    return result


def training_log_csv(log: list[dict]) -> bytes:
    lines = ["epoch,split,loss,ssim"]
    for row in log:
        lines.append(f"{row['epoch']},{row['split']},{row['loss']:.8f},{row['ssim']:.6f}")
    return ("\r\n".join(lines) + "\r\n").encode("utf-8")


def save_trained(path, model, values: dict, extra_meta: dict | None = None) -> None:
    containers.save_checkpoint(path, model.config_dict(), values, meta=extra_meta)


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------

@dataclass
class MethodSpec:
    name: str
    recon: Callable[[DatasetRecord], np.ndarray]


def method_zero_filled() -> MethodSpec:
    return MethodSpec("zerofill", lambda rec: baselines.zero_filled(rec.kspace, rec.maps, rec.mask))


def method_cs(alpha: float = 0.005, max_iter: int = 60) -> MethodSpec:
    return MethodSpec("cs", lambda rec: baselines.cs_l1wavelet(
        rec.kspace, rec.maps, rec.mask, alpha=alpha, max_iter=max_iter))


def method_model(name: str, model, store: ParameterStore) -> MethodSpec:
    return MethodSpec(name, lambda rec: reconstruct(model, store, rec))


def method_checkpoint(path, name: str | None = None) -> MethodSpec:
    from .networks import model_from_config

    config, values, _extra = containers.load_checkpoint(path)
    model = model_from_config(config)
    store = ParameterStore()
    model.init_params(store, seed=0)
    store.load_values({k: v.astype(np.float64) for k, v in values.items()})
    return method_model(name or config.get("kind", "model"), model, store)


def _safe(metric_fn, *args):
    try:
        return metric_fn(*args)
    except metrics.MetricError:
        return None


def evaluate(methods: Sequence[MethodSpec], records: Sequence[DatasetRecord],
             dataset_name: str = "phantoms", timing: bool = True) -> list[dict]:
    """Score every method on every record; zero-filled is always included.

    Returns per-record rows plus one "mean" summary row per method carrying
    the cohort-relative weighted average.  With `timing` off, wall_ms is
    written as zero so repeated runs are byte-identical.
    """
    methods = list(methods)
    if not any(m.name == "zerofill" for m in methods):
        methods.insert(0, method_zero_filled())

    rows: list[dict] = []
    for rid, rec in enumerate(records):
        ref_mag = np.abs(rec.reference)
        for m in methods:
            t0 = time.perf_counter()
            x_hat = m.recon(rec)
            wall_ms = (time.perf_counter() - t0) * 1000.0 if timing else 0.0
            mag = np.abs(x_hat)
            rows.append({
                "id": f"{rid:04d}",
                "method": m.name,
                "dataset": dataset_name,
                "acc": rec.meta.get("acceleration", rec.mask.achieved_acceleration),
                "ssim": _safe(metrics.ssim, mag, ref_mag),
                "psnr_db": _safe(metrics.psnr, mag, ref_mag),
                "cr": _safe(metrics.contrast_resolution, mag, rec.lesion_mask, rec.wm_mask),
                "wmn": _safe(metrics.wm_noise, mag, rec.wm_mask),
                "bgn": _safe(metrics.bg_noise, mag),
                "wa": None,
                "snr": _safe(metrics.snr, mag, rec.kspace),
                "wall_ms": wall_ms,
            })

    rows.extend(summarize_rows(rows, [m.name for m in methods], dataset_name))
    return rows


def summarize_rows(rows: list[dict], method_names: Sequence[str], dataset_name: str) -> list[dict]:
    """Per-method mean rows with the cohort-relative weighted average."""
    summary = []
    cohort = []
    for name in method_names:
        sub = [r for r in rows if r["method"] == name and r["id"] != "mean"]
        means = {}
        for key in ("acc", "ssim", "psnr_db", "cr", "wmn", "bgn", "snr", "wall_ms"):
            vals = [r[key] for r in sub if r.get(key) is not None and np.isfinite(r[key])]
            means[key] = float(np.mean(vals)) if vals else None
        summary.append({"id": "mean", "method": name, "dataset": dataset_name,
                        "wa": None, **means})
        cohort.append((means["cr"], means["wmn"], means["bgn"]))

    if cohort and all(all(v is not None for v in row) for row in cohort):
        try:
            for srow, wa in zip(summary, metrics.weighted_average(cohort)):
                srow["wa"] = wa
        except metrics.MetricError:
            pass
    return summary


def mean_metric(rows: list[dict], method: str, key: str = "ssim") -> float:
    for r in rows:
        if r["id"] == "mean" and r["method"] == method:
            return r[key]
    raise KeyError(f"no summary row for method {method!r}")
