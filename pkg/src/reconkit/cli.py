"""Command-line entry point.

Subcommands cover the full pipeline: ``phantom gen`` -> ``mask gen`` ->
``simulate`` -> ``train`` -> ``recon`` / ``eval``.  Every command is a pure
function of its flags and seeds, so rerunning a command with the same inputs
reproduces identical output files.  A JSON config file may supply any flag
(``--config``); explicitly passed flags win.  ``RECON_SEED`` serves as the
seed default of last resort.  Unknown flags exit with code 2 (usage), runtime
failures with code 1 and a single machine-parsable error line on stderr.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys
from pathlib import Path

import numpy as np

from . import containers, baselines, sampling, training
from .networks import CascadeConfig, RimCellConfig, UnetConfig, build_model
from .phantom import PhantomSpec, default_brain_spec, make_coils, make_phantom, simulate_acquisition


def _env_seed(default: int = 0) -> int:
    return int(os.environ.get("RECON_SEED", default))


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ValueError(f"size must look like 64x64, got {text!r}") from None


def _merge_config(args: argparse.Namespace, argv: list[str]) -> argparse.Namespace:
    path = getattr(args, "config", None)
    if not path:
        return args
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    for key, val in cfg.items():
        opt = "--in" if key == "input" else "--" + key.replace("_", "-")
        explicitly_given = any(a == opt or a.startswith(opt + "=") for a in argv)
        if not explicitly_given and hasattr(args, key):
            setattr(args, key, val)
    return args


def _records_in(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.glob("*.cks"))
    return [path]


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _gen_one_phantom(job) -> None:
    out_path, spec_dict, family, size, seed, n_lesions, jitter = job
    if family:
        spec = default_brain_spec(size=size, seed=seed, n_lesions=n_lesions, jitter=jitter)
    else:
        spec = PhantomSpec.from_dict(spec_dict)
        spec.seed = seed
    image, lesion_mask, wm_mask = make_phantom(spec)
    containers.write_phantom(out_path, image, lesion_mask, wm_mask,
                             meta={"spec": spec.to_dict(), "seed": seed})


def cmd_phantom_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec_dict = None
    family = True
    size, n_lesions, jitter = args.size, args.lesions, args.jitter
    if args.spec:
        spec_dict = json.loads(Path(args.spec).read_text())
        if spec_dict.get("family") == "brain":
            size = int(spec_dict.get("size", size))
            n_lesions = int(spec_dict.get("n_lesions", n_lesions))
            jitter = float(spec_dict.get("jitter", jitter))
        else:
            family = False
    jobs = [(str(out / f"phantom_{i:04d}.cks"), spec_dict, family, size,
             args.seed + i, n_lesions, jitter) for i in range(args.count)]
    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            pool.map(_gen_one_phantom, jobs)
    else:
        for job in jobs:
            _gen_one_phantom(job)
    print(f"wrote {len(jobs)} phantom(s) to {out}")
    return 0


def cmd_mask_gen(args) -> int:
    h, w = _parse_size(args.size)
    if args.kind == "gaussian2d":
        mask = sampling.gaussian2d_mask(h, w, args.acc, fwhm_rel=args.fwhm,
                                        acs_frac=args.acs, seed=args.seed)
    elif args.kind == "equidistant1d":
        mask = sampling.equidistant1d_mask(h, w, int(args.acc), center_frac=args.center_frac,
                                           offset_policy=args.offset_policy, seed=args.seed)
    elif args.kind == "poisson2d":
        mask = sampling.poisson2d_mask(h, w, args.acc, acs_frac=args.acs, seed=args.seed)
    elif args.kind == "full":
        mask = sampling.full_mask(h, w)
    else:
        raise ValueError(f"unknown mask kind {args.kind!r}")
    containers.write_mask(args.out, mask)
    if args.pbm:
        containers.export_mask_pbm(mask, args.pbm)
    report = sampling.mask_report(mask)
    print(",".join(report.CSV_HEADER))
    print(report.csv_row())
    return 0


def cmd_simulate(args) -> int:
    mask = containers.read_mask(args.mask)
    src = Path(args.phantom)
    paths = _records_in(src)
    out = Path(args.out)
    many = len(paths) > 1
    if many:
        out.mkdir(parents=True, exist_ok=True)
    maps = None
    for i, p in enumerate(paths):
        image, lesion_mask, wm_mask, _meta = containers.read_phantom(p)
        if maps is None:
            maps = make_coils(args.coils, *image.shape)
        rec = simulate_acquisition(image, maps, mask, args.sigma, args.seed + i,
                                   lesion_mask=lesion_mask, wm_mask=wm_mask)
        dest = out / f"record_{i:04d}.cks" if many else out
        containers.write_record(dest, rec)
    print(f"wrote {len(paths)} record(s) to {out}")
    return 0


def cmd_train(args) -> int:
    paths = _records_in(Path(args.data))
    if not paths:
        raise ValueError(f"no records found under {args.data}")
    records = [containers.read_record(p) for p in paths]
    n_val = min(args.val_count, max(0, len(records) - 1))
    val_records = records[:n_val]
    train_records = records[n_val:]

    explicit_dc = args.dc in ("explicit", "both")
    kernels = tuple(int(k) for k in args.kernels.split(","))
    cell = RimCellConfig(channels=args.channels, kernel_sizes=kernels,
                         unit="gru" if args.model == "rim" else "indrnn",
                         iterations=args.iterations)
    cascade = CascadeConfig(n_cascades=args.cascades if args.cascades else
                            {"rim": 1, "irim": 1, "cirim": 5, "varnet": 8}[args.model],
                            explicit_dc=explicit_dc, dc_weight_init=args.dc_weight)
    unet = UnetConfig(pools=args.pools, channels=args.channels) if args.model == "varnet" else None
    model = build_model(args.model, cell=None if args.model == "varnet" else cell,
                        cascade=cascade, unet=unet)

    loss = args.loss or ("l1" if args.model == "varnet" else "cirim")
    cfg = training.TrainConfig(lr=args.lr, loss=loss, dtype=args.dtype, max_steps=args.steps)
    result = training.train(model, train_records, val_records, args.epochs, args.seed, cfg)
    training.save_trained(args.out, model, result.best_values,
                          extra_meta={"seed": args.seed, "steps": result.steps,
                                      "diverged": result.diverged})
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    Path(log_path).write_bytes(training.training_log_csv(result.log))
    status = "diverged; kept last good parameters" if result.diverged else "done"
    print(f"{status}: {result.steps} step(s), checkpoint {args.out}, log {log_path}")
    return 0


def cmd_recon(args) -> int:
    rec = containers.read_record(args.input)
    if args.model == "zerofill":
        x = baselines.zero_filled(rec.kspace, rec.maps, rec.mask)
    elif args.model == "cs":
        x = baselines.cs_l1wavelet(rec.kspace, rec.maps, rec.mask,
                                   alpha=args.alpha, max_iter=args.iters)
    else:
        x = training.method_checkpoint(args.model).recon(rec)
    containers.export_image(x, args.out)
    print(f"wrote {args.out}")
    return 0


def _method_name(desc: str) -> str:
    if desc in ("zerofill", "cs"):
        return desc
    return Path(desc).stem


def _build_method(desc: str) -> training.MethodSpec:
    if desc == "zerofill":
        return training.method_zero_filled()
    if desc == "cs":
        return training.method_cs()
    return training.method_checkpoint(desc, name=_method_name(desc))


def _eval_worker(payload):
    method_descs, record_paths, dataset_name, timing = payload
    methods = [_build_method(d) for d in method_descs]
    records = [containers.read_record(p) for p in record_paths]
    rows = training.evaluate(methods, records, dataset_name=dataset_name, timing=timing)
    return [r for r in rows if r["id"] != "mean"]


def cmd_eval(args) -> int:
    paths = [str(p) for p in _records_in(Path(args.data))]
    if not paths:
        raise ValueError(f"no records found under {args.data}")
    descs = [d.strip() for d in args.methods.split(",") if d.strip()]
    if "zerofill" not in descs:
        descs.insert(0, "zerofill")
    dataset_name = Path(args.data).stem or "records"
    timing = not args.no_timing

    if args.jobs > 1:
        chunks = np.array_split(np.array(paths, dtype=object), args.jobs)
        payloads = [(descs, list(c), dataset_name, timing) for c in chunks if len(c)]
        with multiprocessing.Pool(args.jobs) as pool:
            parts = pool.map(_eval_worker, payloads)
        rows = []
        offset = 0
        for part, payload in zip(parts, payloads):
            n_records = len(payload[1])
            for r in part:
                r["id"] = f"{int(r['id']) + offset:04d}"
            offset += n_records
            rows.extend(part)
        rows.extend(training.summarize_rows(rows, [_method_name(d) for d in descs], dataset_name))
    else:
        methods = [_build_method(d) for d in descs]
        records = [containers.read_record(p) for p in paths]
        rows = training.evaluate(methods, records, dataset_name=dataset_name, timing=timing)
    containers.write_metrics_csv(args.out, rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="reconkit",
                                     description="Accelerated-MRI reconstruction sandbox.")
    sub = parser.add_subparsers(dest="command", required=True)

    phantom = sub.add_parser("phantom", help="synthetic phantom generation")
    psub = phantom.add_subparsers(dest="subcommand", required=True)
    pg = psub.add_parser("gen", help="generate phantom containers", formatter_class=fmt)
    pg.add_argument("--spec", default=None, help="JSON phantom spec or brain-family description")
    pg.add_argument("--out", required=True, help="output directory")
    pg.add_argument("--count", type=int, default=1, help="number of phantoms")
    pg.add_argument("--seed", type=int, default=_env_seed(), help="base seed")
    pg.add_argument("--size", type=int, default=64, help="grid size")
    pg.add_argument("--lesions", type=int, default=2, help="lesions per phantom")
    pg.add_argument("--jitter", type=float, default=0.03, help="family geometry jitter")
    pg.add_argument("--jobs", type=int, default=1, help="parallel workers")
    pg.add_argument("--config", default=None, help="JSON config supplying defaults")
    pg.set_defaults(func=cmd_phantom_gen)

    mask = sub.add_parser("mask", help="undersampling mask generation")
    msub = mask.add_subparsers(dest="subcommand", required=True)
    mg = msub.add_parser("gen", help="generate a sampling mask", formatter_class=fmt)
    mg.add_argument("--kind", required=True,
                    choices=["gaussian2d", "equidistant1d", "poisson2d", "full"])
    mg.add_argument("--size", required=True, help="grid size as HxW, e.g. 64x64")
    mg.add_argument("--acc", type=float, default=4.0,
                    help="acceleration factor (typical: 4, 6, 8, 10)")
    mg.add_argument("--seed", type=int, default=_env_seed(), help="selection seed")
    mg.add_argument("--out", required=True, help="output .cks mask file")
    mg.add_argument("--fwhm", type=float, default=0.7, help="gaussian2d FWHM relative to grid")
    mg.add_argument("--acs", type=float, default=0.02,
                    help="fully sampled central ellipse half-axes, fraction of each dimension")
    mg.add_argument("--center-frac", type=float, default=0.08,
                    help="equidistant1d fully kept central line fraction")
    mg.add_argument("--offset-policy", choices=["fixed", "random"], default="fixed",
                    help="equidistant1d line offset policy")
    mg.add_argument("--pbm", default=None, help="also write a 1-bit PBM preview")
    mg.add_argument("--config", default=None, help="JSON config supplying defaults")
    mg.set_defaults(func=cmd_mask_gen)

    sim = sub.add_parser("simulate", help="simulate acquisitions", formatter_class=fmt)
    sim.add_argument("--phantom", required=True, help="phantom .cks file or directory")
    sim.add_argument("--mask", required=True, help="mask .cks file")
    sim.add_argument("--coils", type=int, default=4, help="number of receiver coils")
    sim.add_argument("--sigma", type=float, default=0.0, help="complex noise std at sampled points")
    sim.add_argument("--seed", type=int, default=_env_seed(), help="noise seed")
    sim.add_argument("--out", required=True, help="output record file or directory")
    sim.add_argument("--config", default=None, help="JSON config supplying defaults")
    sim.set_defaults(func=cmd_simulate)

    tr = sub.add_parser("train", help="train a reconstructor", formatter_class=fmt)
    tr.add_argument("--model", required=True, choices=["cirim", "rim", "irim", "varnet"])
    tr.add_argument("--dc", choices=["implicit", "explicit", "both"], default="implicit",
                    help="data consistency: implicit (gradient input only), explicit, or both")
    tr.add_argument("--data", required=True, help="directory of record .cks files")
    tr.add_argument("--epochs", type=int, default=10, help="training epochs (batch size 1)")
    tr.add_argument("--steps", type=int, default=None, help="optional cap on optimizer steps")
    tr.add_argument("--seed", type=int, default=_env_seed(), help="init/shuffle seed")
    tr.add_argument("--out", required=True, help="output checkpoint .cks")
    tr.add_argument("--log", default=None, help="training log CSV path")
    tr.add_argument("--val-count", type=int, default=1, help="records held out for validation")
    tr.add_argument("--cascades", type=int, default=None,
                    help="cascade count (defaults: cirim 5, varnet 8, rim/irim 1)")
    tr.add_argument("--iterations", type=int, default=8, help="unrolled iterations per block")
    tr.add_argument("--channels", type=int, default=64, help="hidden channels")
    tr.add_argument("--kernels", default="5,3,3", help="RIM conv kernel sizes")
    tr.add_argument("--pools", type=int, default=4, help="varnet pooling depth")
    tr.add_argument("--dc-weight", type=float, default=0.5, help="explicit DC weight init")
    tr.add_argument("--lr", type=float, default=1e-3, help="ADAM learning rate")
    tr.add_argument("--loss", choices=["l1", "cirim", "ssim"], default=None,
                    help="loss (defaults: cirim family -> cirim, varnet -> l1)")
    tr.add_argument("--dtype", choices=["float64", "float32"], default="float64",
                    help="training precision")
    tr.add_argument("--config", default=None, help="JSON config supplying defaults")
    tr.set_defaults(func=cmd_train)

    rc = sub.add_parser("recon", help="reconstruct one record", formatter_class=fmt)
    rc.add_argument("--model", required=True,
                    help="checkpoint .cks path, or 'zerofill' / 'cs'")
    rc.add_argument("--in", dest="input", required=True, help="record .cks file")
    rc.add_argument("--out", required=True, help="output 16-bit PGM image")
    rc.add_argument("--alpha", type=float, default=0.005, help="cs regularization weight")
    rc.add_argument("--iters", type=int, default=60, help="cs iteration cap")
    rc.add_argument("--config", default=None, help="JSON config supplying defaults")
    rc.set_defaults(func=cmd_recon)

    ev = sub.add_parser("eval", help="score methods over a record set", formatter_class=fmt)
    ev.add_argument("--methods", required=True,
                    help="comma list of checkpoint paths and/or 'zerofill','cs'")
    ev.add_argument("--data", required=True, help="directory of record .cks files")
    ev.add_argument("--out", required=True, help="metrics CSV path")
    ev.add_argument("--jobs", type=int, default=1, help="parallel workers over records")
    ev.add_argument("--no-timing", action="store_true",
                    help="write wall_ms as zero for byte-reproducible reports")
    ev.add_argument("--config", default=None, help="JSON config supplying defaults")
    ev.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, argv)
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
