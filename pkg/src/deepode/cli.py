"""Command-line front end.

Subcommands: sample, train, rollout, csp-hist, compare, bench. Each takes
plain flags or a JSON config file, honors --seed, and writes CSV plus a
key=value report. The exit code is 0 only when every hard assertion of the
invoked command holds.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .csp import log_bins, timescale_histogram
from .dataset import load_dataset, save_dataset
from .emcs import TauSchedule
from .errors import DeepOdeError
from .indicator import hybrid_rollout, indicator_fit
from .mlp import load_model, rollout, save_model, train
from .presets import get_preset, list_presets
from .systems import get_system, list_systems


def _write_report(path, pairs):
    text = "\n".join(f"{k}={v}" for k, v in pairs) + "\n"
    if path:
        Path(path).write_text(text)
    _sys.stdout.write(text)


def cmd_sample(args) -> int:
    preset = get_preset(args.preset)
    cfg = bench_mod.ExperimentConfig(
        system_name=preset.system_name, sampling_method=args.method,
        preset=args.preset, budget=args.budget or preset.n0 * (preset.tau.steps() + 1),
        seed=args.seed)
    ds = bench_mod.build_dataset_for(cfg, preset)
    save_dataset(ds, args.out, fmt=args.format)
    _write_report(None, [("rows", len(ds)), ("dim", ds.dim), ("dt", ds.dt),
                         ("method", args.method), ("seed", args.seed), ("out", args.out)])
    return 0


def cmd_train(args) -> int:
    from dataclasses import replace

    preset = get_preset(args.preset)
    ds = load_dataset(args.dataset)
    train_cfg = replace(preset.train, seed=args.seed)
    if args.epochs:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    sys_spec = get_system(preset.system_name)
    model, hist = train(ds, preset.layer_sizes(sys_spec), train_cfg,
                        system_name=preset.system_name)
    save_model(model, args.out)
    _write_report(None, [("rows", len(ds)), ("epochs", train_cfg.epochs),
                         ("final_train_mae", f"{hist.train_mae[-1]:.6g}"),
                         ("final_val_mae", f"{hist.val_mae[-1]:.6g}"),
                         ("out", args.out)])
    return 0


def cmd_rollout(args) -> int:
    model = load_model(args.model)
    x0 = np.array([float(v) for v in args.x0.split(",")])
    if args.hybrid:
        if not args.dataset:
            raise DeepOdeError("--hybrid needs --dataset to fit the confidence indicator")
        sys_spec = get_system(model.system_name)
        preset = get_preset(args.preset) if args.preset else None
        integ_cfg = preset.reference_cfg if preset else None
        if integ_cfg is None:
            raise DeepOdeError("--hybrid needs --preset for the fallback integrator")
        ds = load_dataset(args.dataset)
        ind = indicator_fit(ds, model.pre, threshold=args.threshold)
        traj, mask = hybrid_rollout(model, ind, sys_spec, integ_cfg, x0,
                                    t0=args.t0, n_steps=args.steps, threshold=args.threshold)
        header = "t," + ",".join(f"x{i}" for i in range(traj.dim)) + ",fallback"
        rows = np.column_stack([traj.times, traj.states,
                                np.concatenate([[0], mask.astype(float)])])
        np.savetxt(args.out, rows, fmt="%.17g", delimiter=",", header=header, comments="")
        _write_report(None, [("steps", args.steps), ("fallbacks", int(mask.sum())),
                             ("threshold", args.threshold), ("out", args.out)])
        return 0
    traj = rollout(model, x0, t0=args.t0, n_steps=args.steps)
    traj.write_csv(args.out)
    _write_report(None, [("steps", args.steps),
                         ("truncated_at", traj.truncated_at), ("out", args.out)])
    return 0 if traj.truncated_at is None else 1


def cmd_csp_hist(args) -> int:
    ds = load_dataset(args.dataset)
    sys_spec = get_system(args.system)
    if args.bins:
        lo, hi, n = args.bins.split(",")
        edges = log_bins(float(lo), float(hi), int(n))
    else:
        edges = log_bins()
    hist = timescale_histogram(ds, sys_spec, mode=args.mode, bins=edges)
    hist.write_csv(args.out)
    _write_report(None, [("rows", len(ds)), ("steps", ",".join(str(s) for s in hist.steps)),
                         ("mode", args.mode), ("out", args.out)])
    return 0


def cmd_compare(args) -> int:
    spec = json.loads(Path(args.config).read_text())
    preset_name = spec["preset"]
    preset = get_preset(preset_name)
    seeds = spec.get("seeds", [args.seed])
    methods = spec.get("methods", ["mc", "manifold", "emcs"])
    cfgs = [
        bench_mod.ExperimentConfig(
            system_name=spec.get("system", preset.system_name),
            sampling_method=m, preset=preset_name, budget=int(spec["budget"]),
            seed=int(s), epochs=spec.get("epochs"),
            rollout_x0=tuple(spec["x0"]) if "x0" in spec else None,
            horizon=spec.get("horizon"))
        for s in seeds
        for m in methods
    ]
    results = bench_mod.compare_sampling(cfgs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ok = True
    with open(out_dir / "summary.csv", "w") as f:
        f.write("method,seed,n_rows,rollout_rmse_scalar,error\n")
        for res in results:
            r = res.report
            (out_dir / f"report_{r.sampling_method}_seed{r.seed}.txt").write_text(r.to_text())
            f.write(f"{r.sampling_method},{r.seed},{r.n_rows},{r.rollout_rmse_scalar:.17g},"
                    f"{r.error or ''}\n")
            ok &= r.error is None and np.isfinite(r.rollout_rmse_scalar)
    ranked = sorted((r.report for r in results),
                    key=lambda r: (np.isnan(r.rollout_rmse_scalar), r.rollout_rmse_scalar))
    _write_report(out_dir / "ranking.txt",
                  [(f"rank{i}", f"{r.sampling_method}/seed{r.seed}="
                                f"{r.rollout_rmse_scalar:.6g}") for i, r in enumerate(ranked)])
    return 0 if ok else 1


def cmd_bench(args) -> int:
    model = load_model(args.model)
    preset = get_preset(args.preset)
    sys_spec = get_system(model.system_name)
    rec = bench_mod.measure_speedup(model, sys_spec, preset.label_cfg,
                                    n_states=args.n_states, seed=args.seed)
    _write_report(args.out, [
        ("n_states", args.n_states),
        ("surrogate_step_s", f"{rec.surrogate_step_s:.6g}"),
        ("integrator_step_s", f"{rec.integrator_step_s:.6g}"),
        ("speedup", f"{rec.speedup:.6g}"),
        ("repeats", rec.repeats), ("warmup", rec.warmup),
    ])
    return 0 if rec.speedup > 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepode", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="generate a dataset with a named preset")
    s.add_argument("--preset", required=True, choices=list_presets())
    s.add_argument("--method", default="emcs", choices=["mc", "manifold", "emcs"])
    s.add_argument("--budget", type=int, default=None, help="row budget (default: preset)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", default="text", choices=["text", "binary"])
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("train", help="train a surrogate on a dataset file")
    s.add_argument("--dataset", required=True)
    s.add_argument("--preset", required=True, choices=list_presets())
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("rollout", help="autoregressive prediction from a model file")
    s.add_argument("--model", required=True)
    s.add_argument("--x0", required=True, help="comma-separated initial state")
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--hybrid", action="store_true")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--dataset", default=None, help="training data for the indicator (hybrid)")
    s.add_argument("--preset", default=None, choices=list_presets())
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_rollout)

    s = sub.add_parser("csp-hist", help="characteristic-time histograms of a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--system", required=True, choices=list_systems())
    s.add_argument("--mode", default="lambda_max", choices=["lambda_max", "csp"])
    s.add_argument("--bins", default=None, help="lo,hi,n for log-spaced bin edges")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_csp_hist)

    s = sub.add_parser("compare", help="sampling-method comparison from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("bench", help="surrogate vs integrator wall-clock per state")
    s.add_argument("--model", required=True)
    s.add_argument("--preset", required=True, choices=list_presets())
    s.add_argument("--n-states", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DeepOdeError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
