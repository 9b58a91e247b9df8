"""Command line interface.

Subcommands: synth, train, eval, fuse, bench, gradcheck. Configuration is a
JSON file with sections "model", "train", "data"; every key has a default
(the desk-scale setup) and unknown keys are hard errors. --set a.b=value
overrides single keys, --seed overrides every section's seed at once.

Exit codes:
  0  success
  2  usage error (bad arguments, wrong call)
  3  configuration error (bad value, unknown key, bad backend/threads)
  4  dimension error (shape or geometry mismatch)
  5  file format error (malformed cube or manifest)
  6  input file not found
  7  checkpoint mismatch
  8  benchmark could not run or metric undefined
  9  gradient check above tolerance
 10  training aborted on non-finite loss
  1  anything unexpected

Heavy imports happen inside commands so that HSSDCT_THREADS can pin BLAS
thread-count env vars before numpy first loads.
"""

import argparse
import copy
import json
import os
import sys

_EPILOG = (
    "exit codes: 0 ok, 2 usage, 3 config, 4 dimension, 5 format, 6 missing file,"
    " 7 checkpoint, 8 bench/metric, 9 gradcheck, 10 training abort, 1 unexpected"
)

DEFAULT_CONFIG = {
    "model": {
        "hsi_bands": 16,
        "msi_bands": 4,
        "feat": 32,
        "n_blocks": 2,
        "block_windows": [4, 8],
        "ratio": 4,
        "seed": 2024,
        "compress": False,
    },
    "train": {
        "lr_max": 1e-4,
        "lr_min": 1e-6,
        "total_steps": 500,
        "batch_size": 2,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "lambda_sam": 0.01,
        "lambda_swt": 0.01,
        "seed": 7,
    },
    "data": {
        "scenes": 2,
        "height": 32,
        "width": 32,
        "bands": 16,
        "msi_bands": 4,
        "ratio": 4,
        "blur_sigma": 1.0,
        "endmembers": 5,
        "noise_sigma": 0.0,
        "abundance_gain": 2.0,
        "smoothness": None,
        "seed": 20240501,
    },
}


def pin_threads():
    """Propagate HSSDCT_THREADS to the BLAS thread env vars.

    Only effective before numpy's first import, hence called at entry."""
    raw = os.environ.get("HSSDCT_THREADS")
    if raw is None:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, raw)


def _row(key, value):
    if isinstance(value, float):
        print(f"{key},{value:.10g}")
    else:
        print(f"{key},{value}")


# ------------------------------------------------------------- configuration

def load_config(args):
    from .errors import ConfigError

    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        try:
            text = open(args.config).read()
        except FileNotFoundError:
            raise
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: not valid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
        for section, values in user.items():
            if section not in cfg:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key, value in values.items():
                if key not in cfg[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                cfg[section][key] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        section, key = parts
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config key {dotted}")
        try:
            cfg[section][key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[section][key] = raw
    if getattr(args, "seed", None) is not None:
        for section in cfg:
            cfg[section]["seed"] = int(args.seed)
    return cfg


def model_config_from(cfg):
    from .model import ModelConfig

    m = cfg["model"]
    return ModelConfig(
        hsi_bands=int(m["hsi_bands"]),
        msi_bands=int(m["msi_bands"]),
        feat=int(m["feat"]),
        n_blocks=int(m["n_blocks"]),
        block_windows=tuple(int(w) for w in m["block_windows"]),
        ratio=int(m["ratio"]),
        seed=int(m["seed"]),
        compress=bool(m["compress"]),
    ).validate()


def train_config_from(cfg):
    from .trainer import TrainConfig

    t = cfg["train"]
    return TrainConfig(
        lr_max=float(t["lr_max"]),
        lr_min=float(t["lr_min"]),
        total_steps=int(t["total_steps"]),
        batch_size=int(t["batch_size"]),
        beta1=float(t["beta1"]),
        beta2=float(t["beta2"]),
        eps=float(t["eps"]),
        loss_weights=(float(t["lambda_sam"]), float(t["lambda_swt"])),
        seed=int(t["seed"]),
    ).validate()


def _check_data_model_fit(cfg, params):
    from .errors import ConfigError

    m = cfg["model"]
    pairs = [
        ("bands", "hsi_bands"),
        ("msi_bands", "msi_bands"),
        ("ratio", "ratio"),
    ]
    for dkey, mkey in pairs:
        if int(params[dkey]) != int(m[mkey]):
            raise ConfigError(
                f"dataset {dkey}={params[dkey]} does not match model"
                f" {mkey}={m[mkey]}"
            )


# ---------------------------------------------------------------- subcommands

def cmd_synth(args):
    from .data import generate_dataset

    cfg = load_config(args)
    d = cfg["data"]
    generate_dataset(
        args.out,
        n_scenes=int(d["scenes"]),
        height=int(d["height"]),
        width=int(d["width"]),
        bands=int(d["bands"]),
        msi_bands=int(d["msi_bands"]),
        ratio=int(d["ratio"]),
        blur_sigma=float(d["blur_sigma"]),
        seed=int(d["seed"]),
        n_endmembers=int(d["endmembers"]),
        noise_sigma=float(d["noise_sigma"]),
        abundance_gain=float(d["abundance_gain"]),
        smoothness=None if d["smoothness"] is None else float(d["smoothness"]),
    )
    _row("scenes", int(d["scenes"]))
    _row("dir", args.out)
    return 0


def cmd_train(args):
    from pathlib import Path

    from .data import load_dataset
    from .model import Model
    from .trainer import ParamStore, load_checkpoint, save_checkpoint, train

    cfg = load_config(args)
    manifest, dataset = load_dataset(args.data)
    _check_data_model_fit(cfg, manifest["params"])
    net = Model(model_config_from(cfg))
    tcfg = train_config_from(cfg)
    store = ParamStore.from_model(net)
    if args.resume:
        load_checkpoint(args.resume, store)
        _row("resumed_at", store.step)
    every = max(1, int(args.log_every))

    def log(rowdict):
        if rowdict["step"] % every == 0 or rowdict["step"] == tcfg.total_steps - 1:
            print(
                f"step={rowdict['step']} loss={rowdict['loss']:.6g}"
                f" lr={rowdict['lr']:.4g}"
            )

    stop_at = None if args.stop_at is None else int(args.stop_at)
    store, history = train(net, dataset, tcfg, store=store, log=log, stop_at=stop_at)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "ckpt.bin"
    save_checkpoint(ckpt, store)
    lines = ["step,loss,l1,sam,swt,lr"]
    for row in history:
        lines.append(
            f"{row['step']},{row['loss']:.12g},{row['l1']:.12g},"
            f"{row['sam']:.12g},{row['swt']:.12g},{row['lr']:.12g}"
        )
    (out / "history.csv").write_text("\n".join(lines) + "\n")
    _row("checkpoint", ckpt)
    _row("steps", store.step)
    if history:
        _row("final_loss", history[-1]["loss"])
    return 0


def cmd_eval(args):
    import numpy as np

    from .data import load_dataset
    from .metrics import compute_report
    from .model import Model, bicubic_upsample
    from .trainer import ParamStore, load_checkpoint

    cfg = load_config(args)
    manifest, dataset = load_dataset(args.data)
    _check_data_model_fit(cfg, manifest["params"])
    net = Model(model_config_from(cfg))
    load_checkpoint(args.ckpt, ParamStore.from_model(net))
    ratio = int(manifest["params"]["ratio"])
    model_reports = []
    bicubic_reports = []
    for i, scene in enumerate(dataset):
        pred = net.forward(scene.lr_hsi, scene.hr_msi).data
        rep = compute_report(pred, scene.hr_hsi, ratio)
        base = compute_report(
            bicubic_upsample(scene.lr_hsi, ratio), scene.hr_hsi, ratio
        )
        model_reports.append(rep)
        bicubic_reports.append(base)
        for key, value in rep.rows(prefix=f"scene_{i:03d}"):
            _row(key, value)
    for tag, reports in (("mean", model_reports), ("bicubic_mean", bicubic_reports)):
        for field in ("psnr_db", "sam_deg", "rmse", "ergas"):
            _row(f"{tag}.{field}", float(np.mean([getattr(r, field) for r in reports])))
    return 0


def cmd_fuse(args):
    from .data import read_cube, write_cube
    from .model import Model
    from .trainer import ParamStore, load_checkpoint

    cfg = load_config(args)
    net = Model(model_config_from(cfg))
    load_checkpoint(args.ckpt, ParamStore.from_model(net))
    lr = read_cube(args.lr)
    msi = read_cube(args.msi)
    fused = net.forward(lr, msi).data
    write_cube(args.out, fused)
    _row("written", args.out)
    _row("shape", "x".join(str(s) for s in fused.shape))
    return 0


def cmd_bench(args):
    from pathlib import Path

    from . import backend
    from .bench import (
        bench_kernels,
        fit_exponent,
        model_flops,
        records_csv,
        scaling_run,
        write_scaling_svg,
    )
    from .model import Model, desk_config, full_scale_config, param_count

    cfg = load_config(args)
    tokens = [int(t) for t in args.tokens.split(",")]
    records, max_rel = scaling_run(
        token_counts=tokens,
        channels=int(args.channels),
        repeats=int(args.repeats),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_csv(records))
    _row("backend", backend.active())
    for variant in sorted({r.variant for r in records}):
        _row(f"exponent.{variant}", fit_exponent(records, variant))
    _row("factorized_vs_naive_max_rel", max_rel)

    desk = desk_config()
    full = full_scale_config()
    _row("param_count.desk", param_count(Model(desk)))
    _row("flops.desk.32x32", model_flops(desk, 32, 32))
    _row("param_count.full_scale", _full_scale_param_count(full))
    _row("flops.full_scale.256x256", model_flops(full, 256, 256))

    if args.kernels:
        for row in bench_kernels(repeats=int(args.repeats)):
            _row(f"kernel.{row['kernel']}.{row['impl']}", row["wall_ns"])
    if args.plot:
        write_scaling_svg(args.plot, records)
        _row("plot", args.plot)
    _row("records", out / "records.csv")
    return 0


def _full_scale_param_count(config):
    # counting does not need the weights; tally analytically to avoid
    # allocating a full-scale model here
    c = config.feat
    iln = c * c + c + 2 * c * c + 2 * c
    half = c // 2
    ssfe = (half * 9 + half) + 2 * (half * half + half) + 2 * (c * c + c)
    ssfa = 2 * (c * c + c)
    sscl = iln + ssfe + ssfa
    hdrtb = 3 * sscl + c * 3 * c + c
    shallow_spe = c * config.hsi_bands * 9 + c
    shallow_spa = c * config.msi_bands * 9 + c
    head = (c * c * 9 + c) + (config.hsi_bands * c * 9 + config.hsi_bands)
    blocks = config.n_blocks * hdrtb
    return shallow_spe + blocks + shallow_spa + blocks + head


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    results = run_suite(step=float(args.step))
    worst = 0.0
    for name, err in results:
        _row(name, err)
        worst = max(worst, err)
    _row("worst", worst)
    if worst > float(args.tol):
        print(f"gradcheck FAILED: worst {worst:.3e} > tol {args.tol}", file=sys.stderr)
        return 9
    return 0


# --------------------------------------------------------------------- driver

def build_parser():
    parser = argparse.ArgumentParser(
        prog="hssdct",
        description="desk-scale hyperspectral fusion: data, training, "
        "evaluation, complexity checks",
        epilog=_EPILOG,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="SEC.KEY=VAL",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override every section seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset directory")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory (manifest.json)")
    p.add_argument("--out", required=True, help="output directory for ckpt/history")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", help="pause after this step without"
                   " shortening the lr schedule; resume later with --resume")
    p.add_argument("--log-every", default=50, help="console log cadence")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric report for a checkpoint on a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="fuse one lr-hsi/hr-msi cube pair")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--lr", required=True, help="low-resolution hyperspectral cube")
    p.add_argument("--msi", required=True, help="high-resolution multispectral cube")
    p.add_argument("--out", required=True, help="output cube path")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("bench", help="attention scaling and complexity report")
    common(p)
    p.add_argument("--out", default="bench_out")
    p.add_argument("--tokens", default="64,256,1024,4096")
    p.add_argument("--channels", default=32)
    p.add_argument("--repeats", default=5)
    p.add_argument("--kernels", action="store_true",
                   help="also race the numba and numpy conv kernels")
    p.add_argument("--plot", help="write a log-log SVG to this path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    common(p)
    p.add_argument("--step", default=1e-4)
    p.add_argument("--tol", default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    from .errors import (
        BenchError,
        CheckpointError,
        ConfigError,
        DimensionError,
        FormatError,
        MetricError,
        TrainingAborted,
        UsageError,
    )

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except DimensionError as exc:
        print(f"dimension error: {exc}", file=sys.stderr)
        return 4
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 5
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 6
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 7
    except (BenchError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 8
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 10
    except Exception as exc:  # pragma: no cover - last resort
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


def console_main():
    pin_threads()
    sys.exit(main())


if __name__ == "__main__":
    console_main()
