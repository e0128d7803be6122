"""Command-line front end: reproducible experiments from JSON configs.

Every subcommand is deterministic given its config and seeds; artifacts are
JSON, JSON-lines, or CSV, written atomically (temp file + rename).  Wall-clock
timestamps only ever go to the sidecar ``run.log``.  Exit codes: 0 success,
1 user error (bad flags, config, or input files), 2 numeric failure.
"""

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__, data
from ._kernels import BACKEND
from .analysis import (
    NOISE_DISTRIBUTIONS,
    MemoryConfig,
    NoiseSpec,
    ProcessSpec,
    memory_diagnostic,
    sample_subgaussian_M,
    simulate_tprnp,
)
from .cells import jacobian_analytic, stability_probe, tp_cell_exact
from .degree import DegreeBoundInputs, degree_bound
from .errors import NumericError, TprecError
from .tensor import (
    SymTensor,
    spectral_norm,
    spectral_norm_bruteforce,
    symmetrize_first_p,
)
from .train import (
    Checkpoint,
    ModelSpec,
    TrainConfig,
    build_seq2seq,
    rolling_forecast,
    seq2seq_evaluate,
    seq2seq_train_and_forecast,
    train_single_cell,
)

TRAIN_CONFIG_KEYS = ("dataset", "model", "train", "run_count", "base_seed")
SEQ2SEQ_CONFIG_KEYS = ("dataset", "model", "train", "prefix_len", "horizon",
                       "shared_degree", "seed")


# ---------------------------------------------------------------------------
# plumbing


def _out_dir(args) -> str:
    d = getattr(args, "out_dir", None) or os.environ.get("TPREC_OUT_DIR") or "."
    os.makedirs(d, exist_ok=True)
    return d


def _log(out_dir: str, message: str) -> None:
    stamp = datetime.now(timezone.utc).isoformat()
    with open(os.path.join(out_dir, "run.log"), "a") as fh:
        fh.write(f"{stamp} {message}\n")


def _write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: str, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_jsonl(path: str, rows) -> None:
    _write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n"
                              for r in rows))


def _write_csv(values, path: str, header=None) -> None:
    tmp = f"{path}.tmp"
    data.write_csv(values, tmp, header=header)
    os.replace(tmp, path)


def _load_config(path: str, allowed) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise TprecError(f"config {path} must hold a JSON object")
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise TprecError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _override(target: dict, args, mapping) -> None:
    """Copy explicitly passed CLI flags over config-file values."""
    for attr, key in mapping:
        value = getattr(args, attr)
        if value is not None:
            target[key] = value


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _ints(text: str):
    return [int(v) for v in text.split(",") if v.strip() != ""]


MODEL_FLAGS = [
    ("cell", "cell"), ("m", "m"), ("rank", "rank"), ("d_h", "d_h"),
    ("degree_mode", "degree_mode"), ("degree_init", "degree_init"),
    ("degree_min", "degree_min"), ("degree_max", "degree_max"),
    ("standard_gating", "standard_gating"),
]
TRAIN_FLAGS = [
    ("loss", "loss"), ("optimizer", "optimizer"),
    ("learning_rate", "learning_rate"), ("epochs", "epochs"),
    ("grad_clip_norm", "grad_clip_norm"), ("bptt_window", "bptt_window"),
    ("precision", "precision"),
]


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cell", choices=["tp-rnn", "tp-lstm", "exact-tp"],
                   help="recurrent cell family")
    p.add_argument("--m", type=int, help="hidden size")
    p.add_argument("--rank", type=int, help="decomposition rank R")
    p.add_argument("--d-h", dest="d_h", type=int,
                   help="number of stacked past hidden states")
    p.add_argument("--degree-mode", choices=["fixed", "scalar", "subnet"],
                   help="how the power degree p is treated")
    p.add_argument("--degree-init", type=float, help="initial degree value")
    p.add_argument("--degree-min", type=float, help="lower degree clamp")
    p.add_argument("--degree-max", type=float, help="upper degree clamp")
    p.add_argument("--standard-gating", action="store_const", const=True,
                   default=None, help="use sigmoid/tanh gates in the LSTM cell")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=["mse", "sse"], help="training loss")
    p.add_argument("--optimizer", choices=["adam", "rmsprop"])
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--grad-clip-norm", type=float,
                   help="global gradient norm cap (omit to keep default)")
    p.add_argument("--no-grad-clip", action="store_true",
                   help="disable gradient clipping")
    p.add_argument("--bptt-window", type=int,
                   help="truncated-BPTT window length")
    p.add_argument("--precision", type=int, choices=[64, 32])


def _add_out_dir(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", help="artifact directory "
                   "(default: $TPREC_OUT_DIR or '.')")


# ---------------------------------------------------------------------------
# gen-data


def _cmd_gen_data(args) -> int:
    if args.kind == "arfima":
        spec = {"kind": "arfima", "d": args.d, "T": args.T, "sigma": args.sigma,
                "truncation": args.truncation, "seed": args.seed}
    else:
        spec = {"kind": "genz", "family": args.family, "w": [args.w],
                "c": [args.c], "T": args.T}
    dataset = data.dataset_from_spec(spec)
    _write_csv(dataset.values, args.out)
    _write_json(f"{args.out}.meta.json", dataset.meta_dict())
    print(json.dumps({"out": args.out, "rows": dataset.length,
                      "channels": dataset.channels}))
    return 0


# ---------------------------------------------------------------------------
# train


def _train_one_run(task) -> dict:
    """One seeded training run; shaped for a process-pool worker."""
    cfg, run_index, out_dir, tag = task
    seed = int(cfg["base_seed"]) + run_index
    dataset = data.dataset_from_spec(cfg["dataset"])
    spec = ModelSpec.from_dict(cfg["model"])
    tdict = dict(cfg["train"])
    tdict["seed"] = seed
    tcfg = TrainConfig.from_dict(tdict)
    result = train_single_cell(dataset, spec, tcfg)
    result.checkpoint.save(os.path.join(out_dir, f"checkpoint_{tag}{seed}.json"))
    _write_jsonl(os.path.join(out_dir, f"metrics_{tag}{seed}.jsonl"),
                 result.metrics)
    row = {"seed": seed, "diverged": result.diverged,
           "best_epoch": result.checkpoint.epoch}
    if result.diverged:
        row["test_rmse"] = float("nan")
        row["divergence"] = result.divergence_report
    else:
        test_vals = dataset.values[dataset.split_bounds[1]:]
        _, rmse = rolling_forecast(result.checkpoint, test_vals)
        row["test_rmse"] = rmse
    return row


def _aggregate(rows) -> dict:
    rmses = [r["test_rmse"] for r in rows
             if not (r["diverged"] or math.isnan(r["test_rmse"]))]
    agg = {"runs": len(rows), "completed": len(rmses)}
    if rmses:
        agg["mean_rmse"] = float(np.mean(rmses))
        agg["std_rmse"] = float(np.std(rmses))
    return agg


def _fan_out(tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_train_one_run, tasks))
    return [_train_one_run(t) for t in tasks]


def _resolve_train_config(args) -> dict:
    cfg = {"dataset": None, "model": {}, "train": {}, "run_count": 1,
           "base_seed": 0}
    if args.config:
        cfg.update(_load_config(args.config, TRAIN_CONFIG_KEYS))
    cfg.setdefault("model", {})
    cfg.setdefault("train", {})
    _override(cfg["model"], args, MODEL_FLAGS)
    _override(cfg["train"], args, TRAIN_FLAGS)
    if args.no_grad_clip:
        cfg["train"]["grad_clip_norm"] = None
    if args.data is not None:
        cfg["dataset"] = {"kind": "csv", "path": args.data}
    if args.run_count is not None:
        cfg["run_count"] = args.run_count
    if args.base_seed is not None:
        cfg["base_seed"] = args.base_seed
    if cfg["dataset"] is None:
        raise TprecError("no dataset: pass --data or a config with 'dataset'")
    # validate everything before any work starts
    ModelSpec.from_dict(cfg["model"])
    TrainConfig.from_dict(cfg["train"])
    data.dataset_from_spec(cfg["dataset"])
    return cfg


def _cmd_train(args) -> int:
    out = _out_dir(args)
    cfg = _resolve_train_config(args)
    run_count = int(cfg["run_count"])
    if run_count < 1:
        raise TprecError("run_count must be at least 1")
    tasks = [(cfg, k, out, "") for k in range(run_count)]
    rows = _fan_out(tasks, args.jobs)
    summary = {"config": cfg, "per_run": rows, "aggregate": _aggregate(rows)}
    _write_json(os.path.join(out, "summary.json"), summary)
    _log(out, f"train run_count={run_count} base_seed={cfg['base_seed']}")
    print(json.dumps(summary["aggregate"], sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# forecast


def _cmd_forecast(args) -> int:
    cp = Checkpoint.load(args.checkpoint)
    fractions = tuple(_floats(args.fractions))
    dataset = data.load_csv(args.data, fractions=fractions)
    train_end, val_end = dataset.split_bounds
    segments = {
        "train": dataset.values[:train_end],
        "val": dataset.values[train_end:val_end],
        "test": dataset.values[val_end:],
        "all": dataset.values,
    }
    preds, rmse = rolling_forecast(cp, segments[args.segment])
    if args.out:
        _write_csv(preds, args.out)
    print(json.dumps({"segment": args.segment, "rmse": rmse,
                      "points": int(preds.shape[0])}))
    return 0


# ---------------------------------------------------------------------------
# seq2seq


def _seq2seq_once(cfg: dict):
    dataset = data.dataset_from_spec(cfg["dataset"])
    spec = ModelSpec.from_dict(cfg["model"])
    tdict = dict(cfg["train"])
    tdict["seed"] = int(cfg["seed"])
    tcfg = TrainConfig.from_dict(tdict)
    model = build_seq2seq(spec, dataset.channels, tcfg.seed,
                          shared_degree=bool(cfg["shared_degree"]))
    prefix_len, horizon = int(cfg["prefix_len"]), int(cfg["horizon"])
    test_vals = dataset.normalized_values()[dataset.split_bounds[1]:]
    _, untrained = seq2seq_evaluate(model, test_vals, prefix_len, horizon,
                                    dataset.norm_stats)
    result = seq2seq_train_and_forecast(dataset, model, tcfg,
                                        prefix_len=prefix_len, horizon=horizon)
    return result, untrained


def _cmd_seq2seq(args) -> int:
    out = _out_dir(args)
    cfg = {"dataset": None, "model": {"cell": "tp-lstm"}, "train": {},
           "prefix_len": 32, "horizon": 8, "shared_degree": True, "seed": 0}
    if args.config:
        cfg.update(_load_config(args.config, SEQ2SEQ_CONFIG_KEYS))
    cfg["model"].setdefault("cell", "tp-lstm")
    _override(cfg["model"], args, MODEL_FLAGS)
    _override(cfg["train"], args, TRAIN_FLAGS)
    if args.no_grad_clip:
        cfg["train"]["grad_clip_norm"] = None
    if args.data is not None:
        cfg["dataset"] = {"kind": "csv", "path": args.data}
    for attr in ("prefix_len", "horizon", "seed"):
        if getattr(args, attr) is not None:
            cfg[attr] = getattr(args, attr)
    if args.separate_degree:
        cfg["shared_degree"] = False
    if cfg["dataset"] is None:
        raise TprecError("no dataset: pass --data or a config with 'dataset'")

    grid_lr = _floats(args.grid_lr) if args.grid_lr else []
    grid_m = _ints(args.grid_m) if args.grid_m else []
    combos = [(lr, m) for lr in (grid_lr or [None]) for m in (grid_m or [None])]

    trials = []
    best_key, best_val = None, math.inf
    for lr, m in combos:
        trial = json.loads(json.dumps(cfg))  # deep copy
        if lr is not None:
            trial["train"]["learning_rate"] = lr
        if m is not None:
            trial["model"]["m"] = m
        result, untrained = _seq2seq_once(trial)
        val = min((row["val_rmse"] for row in result.metrics
                   if math.isfinite(row["val_rmse"])), default=math.inf)
        trials.append({"learning_rate": lr, "m": m, "val_rmse": val,
                       "test_rmse": result.rmse, "untrained_rmse": untrained,
                       "diverged": result.diverged})
        if val < best_val:
            best_key, best_val = (result, untrained), val
    result, untrained = best_key

    seed = int(cfg["seed"])
    result.checkpoint.save(os.path.join(out, f"checkpoint_s2s_{seed}.json"))
    _write_jsonl(os.path.join(out, f"metrics_s2s_{seed}.jsonl"), result.metrics)
    preds = result.predictions
    flat = np.column_stack([
        np.repeat(np.arange(preds.shape[0]), preds.shape[1]).astype(float),
        np.tile(np.arange(preds.shape[1]), preds.shape[0]).astype(float),
        preds.reshape(-1, preds.shape[2]),
    ])
    header = ["window", "step"] + [f"pred_{i}" for i in range(preds.shape[2])]
    _write_csv(flat, os.path.join(out, f"predictions_s2s_{seed}.csv"),
               header=header)
    summary = {
        "test_rmse": result.rmse,
        "untrained_rmse": untrained,
        "improvement_factor": (untrained / result.rmse
                               if result.rmse > 0 else float("inf")),
        "diverged": result.diverged,
        "trials": trials if len(combos) > 1 else None,
    }
    _write_json(os.path.join(out, f"summary_s2s_{seed}.json"), summary)
    _log(out, f"seq2seq seed={seed} trials={len(combos)}")
    print(json.dumps({k: summary[k] for k in
                      ("test_rmse", "untrained_rmse", "improvement_factor")},
                     sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# analysis commands


def _cmd_simulate_rnp(args) -> int:
    M = sample_subgaussian_M(args.n, args.p, args.sigma, seed=args.seed)
    if args.scale_to is not None:
        cert = spectral_norm(M, restarts=10, seed=args.seed)
        if cert.value == 0.0:
            raise NumericError("cannot rescale a zero tensor")
        M = M.scaled(args.scale_to / cert.value)
    noise = NoiseSpec(distribution=args.noise,
                      active_dims=args.active_dims or args.n,
                      sigma=args.noise_sigma, a=args.noise_a, b=args.noise_b)
    spec = ProcessSpec(M=M, p=args.p, noise=noise, n=args.n)
    res = simulate_tprnp(spec, args.T, burn_in=args.burn_in, seed=args.seed,
                         divergence_threshold=args.threshold)
    if args.out:
        _write_csv(res.values, args.out)
    print(json.dumps({
        "diverged": res.diverged,
        "divergence_step": res.divergence_step,
        "rows": int(res.values.shape[0]),
    }))
    return 0


def _cmd_memory_diag(args) -> int:
    dataset = data.load_csv(args.data)
    series = dataset.values[:, args.col]
    cfg = MemoryConfig(
        max_lag=args.max_lag,
        noise_floor_mult=args.noise_floor_mult,
        hurst_short=args.hurst_short,
        hurst_long=args.hurst_long,
    )
    report = memory_diagnostic(series, cfg)
    payload = report.to_dict()
    if args.out:
        _write_json(args.out, payload)
    print(json.dumps({"verdict": report.verdict, "hurst": report.hurst},
                     sort_keys=True))
    return 0


def _random_weight_tensor(n: int, m: int, p: int, seed: int) -> SymTensor:
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(n**p)
    raw = rng.uniform(-scale, scale, size=(n,) * p + (m,))
    return symmetrize_first_p(raw, p, full_permutations=True)


def _cmd_jacobian_check(args) -> int:
    n = args.l + args.m
    worst = 0.0
    for k in range(args.seeds):
        rng = np.random.default_rng(args.seed + k)
        G = _random_weight_tensor(n, args.m, args.p, args.seed + k)
        b = rng.standard_normal(args.m)
        x = rng.standard_normal(args.l)
        h = rng.standard_normal(args.m)
        J = jacobian_analytic(G, b, x, h, args.p)
        num = np.zeros_like(J)
        for j in range(args.m):
            hp, hm = h.copy(), h.copy()
            hp[j] += args.eps
            hm[j] -= args.eps
            num[:, j] = (tp_cell_exact(G, b, x, hp, args.p)
                         - tp_cell_exact(G, b, x, hm, args.p)) / (2 * args.eps)
        denom = max(float(np.max(np.abs(num))), 1e-12)
        worst = max(worst, float(np.max(np.abs(J - num))) / denom)
    passed = worst < args.tol
    print(json.dumps({"seeds": args.seeds, "max_rel_err": worst,
                      "tol": args.tol, "pass": passed}, sort_keys=True))
    if not passed:
        raise NumericError(
            f"analytic Jacobian off by {worst:.3e} (tol {args.tol:.1e})"
        )
    return 0


def _cmd_spectral_norm(args) -> int:
    if args.tensor:
        with open(args.tensor) as fh:
            G = SymTensor.from_dict(json.load(fh))
    else:
        dims = tuple(_ints(args.dims))
        rng = np.random.default_rng(args.seed)
        raw = rng.standard_normal(dims)
        G = symmetrize_first_p(raw, len(dims) - 1, full_permutations=True)
    cert = spectral_norm(G, restarts=args.restarts, tol=args.tol,
                         max_iters=args.max_iters, seed=args.seed)
    payload = {"value": cert.value, "iterations": cert.iterations,
               "converged": cert.converged, "dims": list(G.dims)}
    if args.bruteforce:
        payload["bruteforce"] = spectral_norm_bruteforce(G)
    if args.out:
        _write_json(args.out, payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_degree_bound(args) -> int:
    bound = degree_bound(DegreeBoundInputs(n=args.n, sigma2=args.sigma2,
                                           c1=args.c1, c2=args.c2))
    print(bound)
    return 0


def _cmd_stability_probe(args) -> int:
    n = args.l + args.m
    G = _random_weight_tensor(n, args.m, args.p, args.seed)
    x = np.zeros(args.l)
    h_witness, norm_value = stability_probe(G, x, args.k, args.p,
                                            seed=args.seed)
    print(json.dumps({
        "norm": norm_value,
        "threshold": args.k,
        "witness_norm": float(np.linalg.norm(h_witness)),
        "pass": bool(norm_value > args.k),
    }, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# repro-table3


def _cmd_repro_table3(args) -> int:
    out = _out_dir(args)
    d_h_values = _ints(args.d_h)
    dataset_spec = {"kind": "arfima", "d": args.arfima_d, "T": args.T,
                    "seed": args.data_seed}
    table = []
    for d_h in d_h_values:
        cfg = {
            "dataset": dataset_spec,
            "model": {"cell": args.cell, "m": args.m, "rank": args.rank,
                      "d_h": d_h, "degree_mode": args.degree_mode,
                      "degree_init": args.degree_init},
            "train": {"loss": "mse", "optimizer": "adam",
                      "learning_rate": args.learning_rate,
                      "epochs": args.epochs,
                      "bptt_window": args.bptt_window},
            "base_seed": args.base_seed,
        }
        tasks = [(cfg, k, out, f"dh{d_h}_") for k in range(args.run_count)]
        rows = _fan_out(tasks, args.jobs)
        agg = _aggregate(rows)
        agg["d_h"] = d_h
        table.append(agg)
    _write_json(os.path.join(out, "table3.json"), table)
    csv_rows = [[row["d_h"], row.get("mean_rmse", float("nan")),
                 row.get("std_rmse", float("nan")), row["completed"]]
                for row in table]
    _write_csv(np.asarray(csv_rows, dtype=np.float64),
               os.path.join(out, "table3.csv"),
               header=["d_h", "mean_rmse", "std_rmse", "completed"])
    _log(out, f"repro-table3 d_h={d_h_values} run_count={args.run_count}")
    print(f"{'D_h':>4} {'mean RMSE':>12} {'std RMSE':>12} {'runs':>5}")
    for row in table:
        print(f"{row['d_h']:>4} {row.get('mean_rmse', float('nan')):>12.6f} "
              f"{row.get('std_rmse', float('nan')):>12.6f} "
              f"{row['completed']:>5}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tprec",
        description="Tensor-power recurrence toolkit: data generation, "
                    "training, forecasting, and stability/memory analysis.",
    )
    parser.add_argument(
        "--version", action="version",
        version=f"tprec {__version__} (kernel backend: {BACKEND})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic series CSV")
    kind = p.add_subparsers(dest="kind", required=True)
    pa = kind.add_parser("arfima", help="fractionally integrated noise")
    pa.add_argument("--d", type=float, required=True,
                    help="fractional differencing exponent in (-0.5, 0.5)")
    pa.add_argument("--T", type=int, required=True, help="series length")
    pa.add_argument("--sigma", type=float, default=1.0,
                    help="innovation standard deviation")
    pa.add_argument("--truncation", type=int, default=1000,
                    help="moving-average truncation order")
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--out", required=True, help="output CSV path")
    pa.set_defaults(func=_cmd_gen_data)
    pg = kind.add_parser("genz", help="deterministic Genz test function")
    pg.add_argument("--family", required=True,
                    choices=list(data.GENZ_FAMILIES))
    pg.add_argument("--T", type=int, required=True, help="grid resolution")
    pg.add_argument("--w", type=float, default=0.5, help="shift parameter")
    pg.add_argument("--c", type=float, default=5.0, help="scale parameter")
    pg.add_argument("--out", required=True, help="output CSV path")
    pg.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train single-cell models over seeds")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--data", help="CSV series (overrides config dataset)")
    p.add_argument("--run-count", type=int, help="number of seeded repeats")
    p.add_argument("--base-seed", type=int,
                   help="seed of run k is base_seed + k")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes for independent runs")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_out_dir(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("forecast",
                       help="teacher-forced forecasts from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="CSV series")
    p.add_argument("--segment", choices=["train", "val", "test", "all"],
                   default="test")
    p.add_argument("--fractions", default="0.6,0.2",
                   help="train,val fractions used to cut the segments")
    p.add_argument("--out", help="write predictions CSV here")
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("seq2seq",
                       help="encoder/decoder horizon forecasting; "
                            "optional small grid search")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--data", help="CSV series (overrides config dataset)")
    p.add_argument("--prefix-len", type=int, help="encoder window length")
    p.add_argument("--horizon", type=int, help="decoder steps per window")
    p.add_argument("--seed", type=int)
    p.add_argument("--separate-degree", action="store_true",
                   help="give the decoder its own degree parameter")
    p.add_argument("--grid-lr", help="comma list of learning rates to try")
    p.add_argument("--grid-m", help="comma list of hidden sizes to try")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_out_dir(p)
    p.set_defaults(func=_cmd_seq2seq)

    p = sub.add_parser("simulate-rnp",
                       help="simulate the stochastic tensor-power process")
    p.add_argument("--n", type=int, required=True, help="state dimension")
    p.add_argument("--p", type=int, required=True, help="tensor degree")
    p.add_argument("--sigma", type=float, default=0.3,
                   help="transition entry scale before symmetrization")
    p.add_argument("--scale-to", type=float,
                   help="rescale the tensor to this spectral norm")
    p.add_argument("--noise", choices=list(NOISE_DISTRIBUTIONS),
                   default="gaussian")
    p.add_argument("--active-dims", type=int,
                   help="noise support size (default: n)")
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--noise-a", type=float, default=0.0)
    p.add_argument("--noise-b", type=float, default=1.0)
    p.add_argument("--T", type=int, default=2000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e12,
                   help="divergence cutoff on |state|")
    p.add_argument("--out", help="write the kept series CSV here")
    p.set_defaults(func=_cmd_simulate_rnp)

    p = sub.add_parser("memory-diag",
                       help="long/short-memory diagnostics for a series")
    p.add_argument("--data", required=True, help="CSV series")
    p.add_argument("--col", type=int, default=0, help="value column index")
    p.add_argument("--max-lag", type=int)
    p.add_argument("--noise-floor-mult", type=float, default=4.0)
    p.add_argument("--hurst-short", type=float, default=0.6)
    p.add_argument("--hurst-long", type=float, default=0.65)
    p.add_argument("--out", help="write the full report JSON here")
    p.set_defaults(func=_cmd_memory_diag)

    p = sub.add_parser("jacobian-check",
                       help="analytic state Jacobian vs finite differences")
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--l", type=int, default=1, help="input dimension")
    p.add_argument("--m", type=int, default=3, help="hidden dimension")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--eps", type=float, default=1e-6)
    p.set_defaults(func=_cmd_jacobian_check)

    p = sub.add_parser("spectral-norm",
                       help="certified spectral norm of a weight tensor")
    p.add_argument("--tensor", help="JSON tensor file")
    p.add_argument("--dims", default="3,3,3",
                   help="random tensor shape when no file is given")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--bruteforce", action="store_true",
                   help="also run the grid-search oracle")
    p.add_argument("--out", help="write the certificate JSON here")
    p.set_defaults(func=_cmd_spectral_norm)

    p = sub.add_parser("degree-bound",
                       help="long-memory lower bound on the degree")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma2", type=float, required=True)
    p.add_argument("--c1", type=float, required=True)
    p.add_argument("--c2", type=float, required=True)
    p.set_defaults(func=_cmd_degree_bound)

    p = sub.add_parser("stability-probe",
                       help="find a state with Jacobian norm above a cutoff")
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--l", type=int, default=1)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--k", type=float, default=1e6, help="norm cutoff")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_stability_probe)

    p = sub.add_parser("repro-table3",
                       help="history-depth sweep with mean/std RMSE")
    p.add_argument("--d-h", default="1,2,3,5,10",
                   help="comma list of history depths")
    p.add_argument("--run-count", type=int, default=5)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cell", choices=["tp-rnn", "tp-lstm"], default="tp-rnn")
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--rank", type=int, default=1)
    p.add_argument("--degree-mode", choices=["fixed", "scalar", "subnet"],
                   default="scalar")
    p.add_argument("--degree-init", type=float, default=1.0)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--bptt-window", type=int, default=50)
    p.add_argument("--arfima-d", type=float, default=0.4)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--data-seed", type=int, default=1)
    _add_out_dir(p)
    p.set_defaults(func=_cmd_repro_table3)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors; the contract
        # here is 1 for every user error
        return 0 if not exc.code else 1
    try:
        return args.func(args) or 0
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (TprecError, FileNotFoundError, json.JSONDecodeError, KeyError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
