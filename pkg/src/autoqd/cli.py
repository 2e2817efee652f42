"""Command-line front end.

Subcommands::

    autoqd run CONFIG        optimize and write archives, checkpoints and metrics
    autoqd eval RUN          Vendi, qVS and GT QD report for a finished run
    autoqd adapt RUN         friction / mass adaptation sweep
    autoqd mmd-check         embedding distance vs exact MMD on random finite MDPs
    autoqd ablate CONFIG     one run per value of D, k or episodes_per_eval

Exit codes: 0 success, 1 runtime failure (or a failed check), 2 usage or
configuration error. Text outputs start with a ``# config_hash=...`` line and
JSON outputs carry a ``config_hash`` key. ``AUTOQD_OUTPUT_ROOT`` sets the
default output root (``runs`` otherwise).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import driver, metrics, plotting
from .archive import load_archive
from .config import RunConfig, load_config
from .embedding import RffMap, default_sweep_problem, theorem1_sweep
from .errors import ConfigurationError, DomainError

log = logging.getLogger("autoqd")

OUTPUT_ROOT_ENV = "AUTOQD_OUTPUT_ROOT"
ABLATION_AXES = {"D": "embedding.dim", "k": "descriptor.k",
                 "episodes_per_eval": "qd.episodes_per_eval"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def options_hash(options: dict) -> str:
    blob = json.dumps(options, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def csv_text(rows: list[dict], columns, config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["n/a" if row.get(c) is None else _cell(row[c]) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    raise TypeError(f"cannot serialize {type(v)}")


def parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def load_run_config(args) -> RunConfig:
    config = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        changes["mode"] = args.mode
    return config.replace(**changes) if changes else config


def run_dir_for(config: RunConfig, out: str | None) -> Path:
    if out:
        return Path(out)
    if config.output_dir:
        return Path(config.output_dir)
    return output_root() / config.config_hash()


def locate_run(path: str) -> tuple[Path, Path]:
    """``(run_dir, archive_path)`` from a run directory or an archive file."""
    p = Path(path)
    if p.is_dir():
        p = p / "archive.jsonl"
    if not p.is_file():
        raise ConfigurationError(f"no archive at {p}")
    return p.parent, p


def read_run(path: str, rff_path: str | None = None):
    run_dir, archive_path = locate_run(path)
    archive, header = load_archive(archive_path)
    cfg_path = run_dir / "config.json"
    if not cfg_path.is_file():
        raise ConfigurationError(f"missing run config {cfg_path}")
    data = json.loads(cfg_path.read_text())
    data.pop("config_hash", None)
    config = RunConfig.from_dict(data)
    rff_file = Path(rff_path) if rff_path else run_dir / "rff.json"
    if not rff_file.is_file():
        raise ConfigurationError(f"missing feature map {rff_file}")
    rff_data = json.loads(rff_file.read_text())
    h = rff_data.pop("config_hash", None)
    if h is not None and header.get("config_hash") is not None and h != header["config_hash"]:
        raise ConfigurationError("feature map and archive come from different configs")
    rff = RffMap.from_dict(rff_data)
    return config, archive, rff, run_dir


# --------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    config = load_run_config(args)
    out = run_dir_for(config, args.out)
    t0 = time.perf_counter()
    res = driver.run(config, out, workers=args.workers, resume=args.resume,
                     plots=not args.no_plots)
    row = {**res.state.metrics_row(), "restarts": res.state.restarts,
           "seconds": round(time.perf_counter() - t0, 3), "out": str(out)}
    cols = ["iteration", "evals", "qd_score", "coverage", "best_f", "mean_f", "restarts",
            "seconds", "out"]
    sys.stdout.write(csv_text([row], cols, config.config_hash()))
    return 0


def evaluate_run(config: RunConfig, archive, baseline: bool = False, workers: int = 1):
    env = driver.make_env(config)
    arch = driver.make_arch(config, env)
    pops = {"autoqd" if config.mode == "auto" else "regular":
            np.array([o.params for o in archive.elites()]).reshape(-1, arch.param_count)}
    if baseline:
        from concurrent.futures import ThreadPoolExecutor
        ex = ThreadPoolExecutor(workers) if workers > 1 else None
        try:
            rs = driver.random_search(config, ex)
        finally:
            if ex is not None:
                ex.shutdown()
        pops["random"] = np.array([o.params for o in rs.elites()]).reshape(-1, arch.param_count)
    m = config.metrics
    return metrics.compare_populations(pops, env, arch, driver.gt_archive_config(config, env),
                                       eval_dim=m.eval_dim, eval_seed=m.eval_seed,
                                       episodes=m.eval_episodes,
                                       return_floor=driver.min_objective(config, env))


REPORT_COLUMNS = ("population", "size", "vendi", "qvs", "gt_qd", "gt_coverage",
                  "mean_fitness", "max_fitness", "gamma_k")


def cmd_eval(args) -> int:
    config, archive, rff, run_dir = read_run(args.run, args.rff)
    out = Path(args.out) if args.out else run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    h = config.config_hash()
    reports = evaluate_run(config, archive, args.baseline, args.workers)
    rows = [r.row() for r in reports.values()]
    text = csv_text(rows, REPORT_COLUMNS, h)
    (out / "report.csv").write_text(text)
    write_json(out / "kernel.json", {
        "config_hash": h, "eval_dim": config.metrics.eval_dim,
        "eval_seed": config.metrics.eval_seed, "train_dim": rff.D,
        "populations": {k: {"n": r.size, "gamma_k": r.gamma_k} for k, r in reports.items()}})
    if not args.no_plots:
        plotting.plot_archive(archive, out / "archive.png")
    sys.stdout.write(text)
    return 0


def cmd_adapt(args) -> int:
    if args.knob not in metrics.KNOBS:
        raise UsageError(f"knob must be one of {metrics.KNOBS}")
    config, archive, _, run_dir = read_run(args.run, args.rff)
    grid = parse_floats(args.grid)
    thresholds = parse_floats(args.thresholds)
    env = driver.make_env(config)
    arch = driver.make_arch(config, env)
    params = np.array([o.params for o in archive.elites()]).reshape(-1, arch.param_count)
    report = metrics.adaptation_sweep(params, env.config, arch, args.knob, grid,
                                      args.episodes or config.metrics.eval_episodes,
                                      thresholds, args.R, seed=config.metrics.eval_seed)
    h = options_hash({"config": config.config_hash(), "knob": args.knob, "grid": grid,
                      "thresholds": thresholds, "R": report.R, "episodes": args.episodes})
    out = Path(args.out) if args.out else run_dir / f"adapt_{args.knob}"
    out.mkdir(parents=True, exist_ok=True)
    n = report.returns.shape[0]
    cols = ["grid"] + [f"policy_{i}" for i in range(n)] + ["best"]
    rows = [{"grid": g, **{f"policy_{i}": report.returns[i, j] for i in range(n)},
             "best": report.best[j]} for j, g in enumerate(report.grid)]
    (out / "curves.csv").write_text(csv_text(rows, cols, h))
    s_cols = ["grid"] + [f"p={p:g}" for p in report.thresholds]
    s_rows = [{"grid": g, **{f"p={p:g}": int(report.success[p][j]) for p in report.thresholds}}
              for j, g in enumerate(report.grid)]
    (out / "success.csv").write_text(csv_text(s_rows, s_cols, h))
    write_json(out / "summary.json", {"config_hash": h, "knob": args.knob, "auc": report.auc,
                                      "R": report.R, "grid": report.grid,
                                      "best": report.best, "policies": n})
    if not args.no_plots:
        plotting.plot_adaptation(report, out / "adaptation.png")
    sys.stdout.write(csv_text(s_rows, s_cols, h))
    sys.stdout.write(f"auc,{report.auc!r}\n")
    return 0


def mmd_verdict(rows, median_tol: float, p95_tol: float) -> dict:
    Ds = sorted({r.D for r in rows})
    ns = sorted({r.n for r in rows})
    top = np.array([r.psi_error for r in rows if r.D == Ds[-1] and r.n == ns[-1]])
    by_D = [float(np.mean([r.psi_error for r in rows if r.D == D])) for D in Ds]
    by_n = [float(np.mean([r.psi_error for r in rows if r.n == n])) for n in ns]
    median, p95 = float(np.median(top)), float(np.percentile(top, 95))
    mono_D = all(b <= a for a, b in zip(by_D, by_D[1:]))
    mono_n = all(b <= a for a, b in zip(by_n, by_n[1:]))
    ok = median < median_tol and p95 < p95_tol and mono_D and mono_n
    return {"verdict": "pass" if ok else "fail", "median": median, "p95": p95,
            "mean_by_D": dict(zip(Ds, by_D)), "mean_by_n": dict(zip(ns, by_n)),
            "monotone_D": mono_D, "monotone_n": mono_n,
            "median_tol": median_tol, "p95_tol": p95_tol}


def cmd_mmd_check(args) -> int:
    D_grid, n_grid = parse_ints(args.D), parse_ints(args.n)
    if not D_grid or not n_grid or args.seeds < 1 or args.pairs < 1:
        raise UsageError("D, n, seeds and pairs must be nonempty / positive")
    opts = {"states": args.states, "actions": args.actions, "gamma": args.gamma,
            "pairs": args.pairs, "D": D_grid, "n": n_grid, "seeds": args.seeds,
            "seed": args.seed}
    h = options_hash(opts)
    fmdp, pairs = default_sweep_problem(args.states, args.actions, args.gamma, args.pairs,
                                        args.seed)
    rows = theorem1_sweep(fmdp, pairs, D_grid, n_grid,
                          [args.seed * 1000 + s for s in range(args.seeds)])
    verdict = mmd_verdict(rows, args.median_tol, args.p95_tol)
    out = Path(args.out) if args.out else output_root() / f"mmd_{h}"
    out.mkdir(parents=True, exist_ok=True)
    cols = ["D", "n", "seed", "pair", "exact", "phi_dist", "psi_dist", "phi_error", "psi_error"]
    table = [{c: getattr(r, c) for c in cols} for r in rows]
    (out / "errors.csv").write_text(csv_text(table, cols, h))
    write_json(out / "verdict.json", {"config_hash": h, "options": opts, **verdict})
    if not args.no_plots:
        plotting.plot_mmd_errors(rows, out / "errors.png")
    summary = [{"D": D, "n": n,
                "median_psi_error": float(np.median([r.psi_error for r in rows
                                                     if r.D == D and r.n == n]))}
               for D in D_grid for n in n_grid]
    sys.stdout.write(csv_text(summary, ["D", "n", "median_psi_error"], h))
    sys.stdout.write(f"verdict,{verdict['verdict']}\n")
    return 0 if verdict["verdict"] == "pass" else 1


ABLATION_METRICS = ("qd_score", "coverage", "best_f", "gt_qd", "gt_coverage", "vendi")


def cmd_ablate(args) -> int:
    if args.axis not in ABLATION_AXES:
        raise UsageError(f"axis must be one of {sorted(ABLATION_AXES)}")
    values = parse_ints(args.values)
    if not values:
        raise UsageError("values must be nonempty")
    base = load_run_config(args)
    configs = [base.replace(**{ABLATION_AXES[args.axis]: v}) for v in values]
    h = options_hash({"base": base.config_hash(), "axis": args.axis, "values": values})
    out = Path(args.out) if args.out else output_root() / f"ablate_{args.axis}_{h}"
    rows, per_value = [], []
    for v, cfg in zip(values, configs):
        res = driver.run(cfg, out / f"{args.axis}_{v}", workers=args.workers,
                         plots=not args.no_plots)
        rep = list(evaluate_run(cfg, res.archive).values())[0]
        vals = {**res.state.metrics_row(), "gt_qd": rep.gt_qd,
                "gt_coverage": rep.gt_coverage, "vendi": rep.vendi}
        per_value.append({"value": v, **vals})
        rows += [{"value": v, "metric": m, "result": vals[m]} for m in ABLATION_METRICS]
    text = csv_text(rows, ["value", "metric", "result"], h)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(text)
    if not args.no_plots:
        plotting.plot_ablation(per_value, args.axis, "gt_qd", out / "gt_qd.png")
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autoqd", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workers=True):
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--no-plots", action="store_true", help="skip figures")
        if workers:
            sp.add_argument("--workers", type=int, default=1)

    r = sub.add_parser("run", help="run an optimization")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=("auto", "regular"))
    r.add_argument("--resume", action="store_true")
    common(r)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="evaluate a finished run")
    e.add_argument("run", help="run directory or archive file")
    e.add_argument("--rff", help="feature map file (default: rff.json next to the archive)")
    e.add_argument("--baseline", action="store_true",
                   help="also evaluate random sampling with the same budget")
    common(e)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("adapt", help="adaptation sweep over friction or mass")
    a.add_argument("run")
    a.add_argument("--knob", required=True)
    a.add_argument("--grid", default="0.5,1,2,4,8")
    a.add_argument("--thresholds", default="0.9,0.7")
    a.add_argument("--episodes", type=int)
    a.add_argument("--R", type=float, help="reference return (default: best unaltered)")
    a.add_argument("--rff")
    common(a, workers=False)
    a.set_defaults(func=cmd_adapt)

    m = sub.add_parser("mmd-check", help="embedding distance vs exact MMD")
    m.add_argument("--states", type=int, default=5)
    m.add_argument("--actions", type=int, default=3)
    m.add_argument("--gamma", type=float, default=0.9)
    m.add_argument("--pairs", type=int, default=10)
    m.add_argument("--D", default="10,100,1000,2000")
    m.add_argument("--n", default="10,100,500")
    m.add_argument("--seeds", type=int, default=20)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--median-tol", type=float, default=0.05)
    m.add_argument("--p95-tol", type=float, default=0.10)
    common(m, workers=False)
    m.set_defaults(func=cmd_mmd_check)

    b = sub.add_parser("ablate", help="one run per value along an axis")
    b.add_argument("config")
    b.add_argument("--axis", required=True)
    b.add_argument("--values", required=True)
    b.add_argument("--seed", type=int)
    b.add_argument("--mode", choices=("auto", "regular"))
    common(b)
    b.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
