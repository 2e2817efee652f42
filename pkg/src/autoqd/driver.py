"""The AutoQD loop: CMA-MAE steps with periodic descriptor refits.

Each iteration first refits the descriptor map when the iteration is on the
update schedule (auto mode only), then runs one CMA-MAE step per emitter:
ask, evaluate, insert into the soft archive and its elitist shadow, rank by
improvement, tell, and restart if due.

Every random draw comes from a stream derived from the master seed (see
:mod:`autoqd.seeding`), and candidates are evaluated in fixed-size chunks, so
results do not depend on the worker count.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import seeding
from .archive import (ArchiveConfig, GridArchive, Occupant, archive_from_dict,
                      archive_to_dict, rebuild, save_archive)
from .cmaes import (CmaEsState, cma_ask, cma_init, cma_tell, needs_restart,
                    rank_by_improvement)
from .config import RunConfig
from .errors import ConfigurationError
from .descriptor import AffineMap, fit_cwpca
from .embedding import RffMap, default_sigma, embed_batch, sample_rff
from .env import PointMass2D, PointMassConfig
from .policy import PolicyArchitecture

log = logging.getLogger(__name__)

EVAL_CHUNK = 32
METRIC_COLUMNS = ("iteration", "evals", "qd_score", "coverage", "best_f", "mean_f")
CHECKPOINT_FORMAT = "autoqd-checkpoint"


def make_env(config: RunConfig, **overrides) -> PointMass2D:
    e = config.env
    pm = PointMassConfig(e.arena_halfwidth, e.force_scale, e.friction, e.dt, e.max_speed,
                         e.noise_std, e.horizon, e.gamma)
    if overrides:
        pm = dataclasses.replace(pm, **overrides)
    return PointMass2D(pm)


def make_arch(config: RunConfig, env: PointMass2D) -> PolicyArchitecture:
    return PolicyArchitecture.for_env(env.spec.state_dim, env.spec.action_dim,
                                      config.policy.hidden, config.policy.toeplitz)


def min_objective(config: RunConfig, env: PointMass2D) -> float:
    m = config.qd.min_objective
    return env.min_objective if m is None else float(m)


def gt_archive_config(config: RunConfig, env: PointMass2D, alpha: float = 1.0) -> ArchiveConfig:
    return ArchiveConfig(env.gt_dim, config.metrics.gt_cells, env.gt_lower, env.gt_upper,
                         alpha, min_objective(config, env))


def qd_archive_config(config: RunConfig, env: PointMass2D) -> ArchiveConfig:
    q = config.qd
    if config.mode == "regular":
        return ArchiveConfig(env.gt_dim, q.cells_per_dim, env.gt_lower, env.gt_upper,
                             q.alpha, min_objective(config, env))
    return ArchiveConfig(config.descriptor.k, q.cells_per_dim, q.lower, q.upper, q.alpha,
                         min_objective(config, env))


def make_rff(config: RunConfig, env: PointMass2D) -> RffMap:
    s = env.spec
    d = s.state_dim + s.action_dim
    sigma = config.embedding.sigma or default_sigma(s.state_dim, s.action_dim)
    return sample_rff(seeding.derive_seed(config.seed, seeding.RFF), config.embedding.dim, d,
                      sigma, s.state_dim if config.embedding.normalize else None)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Evaluation:
    fitness: np.ndarray      # (n,)
    embeddings: np.ndarray   # (n, D)
    gt: np.ndarray           # (n, gt_dim)
    seeds: np.ndarray        # (n, episodes)
    states: np.ndarray       # (n * episodes * T, state_dim), for the normalizer


def _evaluate_chunk(env, arch, rff, params, seeds):
    n, E = seeds.shape
    if env.deterministic:
        batch = env.rollout_batch(params, arch, seeds[:, 0].tolist())
        rep = lambda a: np.repeat(a, E, axis=0)
        returns = rep(batch.returns)
        z = rep(embed_batch(rff, batch.states, batch.actions, env.spec.gamma))
        gt = rep(env.gt_descriptors(batch))
        states = rep(batch.states)
    else:
        batch = env.rollout_batch(np.repeat(params, E, axis=0), arch, seeds.ravel().tolist())
        returns = batch.returns
        z = embed_batch(rff, batch.states, batch.actions, env.spec.gamma)
        gt = env.gt_descriptors(batch)
        states = batch.states
    fitness = returns.reshape(n, E).mean(axis=1)
    psi = z.reshape(n, E, -1).mean(axis=1)
    gt = gt.reshape(n, E, -1).mean(axis=1)
    return fitness, psi, gt, states.reshape(-1, states.shape[-1])


def _evaluate_safe(env, arch, rff, params, seeds):
    try:
        return _evaluate_chunk(env, arch, rff, params, seeds)
    except (FloatingPointError, ValueError, ArithmeticError) as exc:
        if len(params) == 1:
            log.warning("candidate evaluation failed: %s", exc)
            return (np.array([-np.inf]), np.full((1, rff.D), np.nan),
                    np.full((1, env.gt_dim), np.nan), np.empty((0, env.spec.state_dim)))
        parts = [_evaluate_safe(env, arch, rff, params[i:i + 1], seeds[i:i + 1])
                 for i in range(len(params))]
        return tuple(np.concatenate(p) for p in zip(*parts))


def evaluate_candidates(env: PointMass2D, arch: PolicyArchitecture, rff: RffMap,
                        params: np.ndarray, seeds: np.ndarray,
                        executor: ThreadPoolExecutor | None = None) -> Evaluation:
    """Roll out and embed every candidate with the normalizer frozen.

    Work is split into chunks of ``EVAL_CHUNK`` candidates regardless of the
    executor, so single- and multi-worker runs compute identical bits.
    """
    params = np.atleast_2d(params)
    seeds = np.asarray(seeds, dtype=np.uint64)
    chunks = [(params[i:i + EVAL_CHUNK], seeds[i:i + EVAL_CHUNK])
              for i in range(0, len(params), EVAL_CHUNK)]
    if executor is None:
        parts = [_evaluate_safe(env, arch, rff, p, s) for p, s in chunks]
    else:
        parts = list(executor.map(lambda ps: _evaluate_safe(env, arch, rff, *ps), chunks))
    fitness, psi, gt, states = (np.concatenate(p) for p in zip(*parts))
    bad = ~(np.isfinite(fitness) & np.all(np.isfinite(psi), axis=1))
    fitness = np.where(bad, -np.inf, fitness)
    return Evaluation(fitness, psi, gt, seeds, states)


def candidate_seeds(master: int, stream: int, iteration: int, emitter: int,
                    n: int, episodes: int) -> np.ndarray:
    return np.array([[seeding.derive_seed(master, stream, iteration, emitter, c, ep)
                      for ep in range(episodes)] for c in range(n)], dtype=np.uint64)


# --------------------------------------------------------------------------
# run state


@dataclass
class RunState:
    config: RunConfig
    env: PointMass2D
    arch: PolicyArchitecture
    rff: RffMap
    archive: GridArchive
    elitist: GridArchive
    emitters: list[CmaEsState]
    desc_map: AffineMap | None
    iteration: int = 0
    evals: int = 0
    metrics: list[dict] = field(default_factory=list)
    maps: list[AffineMap] = field(default_factory=list)
    restarts: int = 0
    skipped_updates: int = 0

    @property
    def x0(self) -> np.ndarray:
        return np.zeros(self.arch.param_count)

    def descriptors(self, evaluation: Evaluation) -> np.ndarray:
        if self.config.mode == "regular":
            return evaluation.gt
        return self.desc_map(evaluation.embeddings)

    def metrics_row(self) -> dict:
        f = self.elitist.fitness_values()
        return {"iteration": self.iteration, "evals": self.evals,
                "qd_score": self.elitist.qd_score(), "coverage": self.elitist.coverage(),
                "best_f": float(f.max()) if f.size else float("nan"),
                "mean_f": float(f.mean()) if f.size else float("nan")}


def cma_mae_init(config: RunConfig) -> RunState:
    """Empty archives, fresh emitters, sampled features and the bootstrap map."""
    config.validate()
    env = make_env(config)
    arch = make_arch(config, env)
    rff = make_rff(config, env)
    acfg = qd_archive_config(config, env)
    x0 = np.zeros(arch.param_count)
    emitters = [cma_init(arch.param_count, x0, s0, config.qd.batch_size)
                for s0 in config.qd.sigma0]
    desc_map = None
    if config.mode == "auto":
        rng = seeding.make_rng(config.seed, seeding.PROJECTION)
        desc_map = AffineMap.random_projection(config.descriptor.k, rff.D, rng)
    return RunState(config, env, arch, rff, GridArchive(acfg, soft=True),
                    GridArchive(acfg, soft=False), emitters, desc_map,
                    maps=[desc_map] if desc_map is not None else [])


def _restart(state: RunState, e: int) -> None:
    elites = state.elitist.elites()
    if elites:
        rng = seeding.make_rng(state.config.seed, seeding.RESTART, state.iteration, e)
        x0 = elites[int(rng.integers(len(elites)))].params
    else:
        x0 = state.x0
    state.emitters[e] = cma_init(state.arch.param_count, x0, state.config.qd.sigma0[e],
                                 state.config.qd.batch_size)
    state.restarts += 1


def cma_mae_step(state: RunState, executor: ThreadPoolExecutor | None = None) -> RunState:
    """One CMA-MAE iteration over all emitters (advances ``state.iteration``)."""
    cfg = state.config
    state.iteration += 1
    t = state.iteration
    E = cfg.qd.episodes_per_eval
    for e in range(len(state.emitters)):
        es = state.emitters[e]
        try:
            X = cma_ask(es, seeding.make_rng(cfg.seed, seeding.ASK, t, e))
        except FloatingPointError:
            _restart(state, e)
            es = state.emitters[e]
            X = cma_ask(es, seeding.make_rng(cfg.seed, seeding.ASK, t, e))
        seeds = candidate_seeds(cfg.seed, seeding.EVAL, t, e, len(X), E)
        ev = evaluate_candidates(state.env, state.arch, state.rff, X, seeds, executor)
        desc = state.descriptors(ev)
        delta = np.empty(len(X))
        for i in range(len(X)):
            occ = Occupant(X[i].copy(), float(ev.fitness[i]), np.asarray(desc[i], dtype=float),
                           ev.embeddings[i].copy(), tuple(int(s) for s in ev.seeds[i]))
            delta[i], _ = state.archive.insert(occ)
            state.elitist.insert(occ)
        cma_tell(es, X, rank_by_improvement(delta, ev.fitness))
        if needs_restart(es, every=cfg.qd.restart_every):
            _restart(state, e)
        if state.rff.normalizer is not None:
            state.rff.normalizer.update(ev.states)
        state.evals += len(X) * E
    state.metrics.append(state.metrics_row())
    return state


def update_descriptors(state: RunState) -> RunState:
    """Refit the map on the soft archive's occupants and rebuild both archives."""
    occupants = state.archive.elites()
    if len(occupants) < 2:
        log.warning("iteration %d: %d archive occupant(s), skipping descriptor update",
                    state.iteration + 1, len(occupants))
        state.skipped_updates += 1
        return state
    psi = np.stack([o.embedding for o in occupants])
    f = np.array([o.fitness for o in occupants])
    fit = fit_cwpca(psi, f, state.config.descriptor.k, state.config.descriptor.weighted)
    version = state.desc_map.version + 1 if state.desc_map is not None else 1
    state.desc_map = AffineMap.from_fit(fit, version, state.iteration + 1)
    state.maps.append(state.desc_map)
    state.archive = rebuild(state.archive, state.desc_map)
    state.elitist = rebuild(state.elitist, state.desc_map)
    return state


# --------------------------------------------------------------------------
# persistence


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(rows: Sequence[dict], config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def read_metrics_csv(path) -> list[dict]:
    lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    reader = csv.DictReader(lines)
    return [{k: (int(v) if k in ("iteration", "evals") else float(v)) for k, v in r.items()}
            for r in reader]


def _json(obj) -> str:
    return json.dumps(obj, indent=1) + "\n"


def checkpoint_dict(state: RunState) -> dict:
    return {"format": CHECKPOINT_FORMAT, "config_hash": state.config.config_hash(),
            "iteration": state.iteration, "evals": state.evals,
            "restarts": state.restarts, "skipped_updates": state.skipped_updates,
            "rff": state.rff.to_dict(),
            "desc_map": None if state.desc_map is None else state.desc_map.to_dict(),
            "maps": [m.to_dict() for m in state.maps],
            "emitters": [es.to_dict() for es in state.emitters],
            "archive": archive_to_dict(state.archive),
            "elitist": archive_to_dict(state.elitist),
            "metrics": state.metrics}


def restore_checkpoint(config: RunConfig, data: dict) -> RunState:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError("not a checkpoint file")
    if data["config_hash"] != config.config_hash():
        raise ConfigurationError("checkpoint was written by a different configuration")
    state = cma_mae_init(config)
    state.iteration = data["iteration"]
    state.evals = data["evals"]
    state.restarts = data["restarts"]
    state.skipped_updates = data["skipped_updates"]
    state.rff = RffMap.from_dict(data["rff"])
    state.desc_map = None if data["desc_map"] is None else AffineMap.from_dict(data["desc_map"])
    state.maps = [AffineMap.from_dict(m) for m in data["maps"]]
    state.emitters = [CmaEsState.from_dict(d) for d in data["emitters"]]
    state.archive = archive_from_dict(data["archive"])
    state.elitist = archive_from_dict(data["elitist"])
    state.metrics = data["metrics"]
    return state


def write_outputs(state: RunState, out_dir: Path, final: bool = False) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    h = state.config.config_hash()
    (out_dir / "checkpoint.json").write_text(_json(checkpoint_dict(state)))
    (out_dir / "metrics.csv").write_text(metrics_csv(state.metrics, h))
    (out_dir / "rff.json").write_text(_json({"config_hash": h, **state.rff.to_dict()}))
    maps_dir = out_dir / "maps"
    maps_dir.mkdir(exist_ok=True)
    for m in state.maps:
        (maps_dir / f"map_v{m.version:03d}.json").write_text(
            _json({"config_hash": h, **m.to_dict()}))
    save_archive(state.elitist, out_dir / "archive.jsonl", h)
    save_archive(state.archive, out_dir / "soft_archive.jsonl", h)
    if final:
        summary = {"config_hash": h, "iterations": state.iteration, "evals": state.evals,
                   "restarts": state.restarts, "skipped_updates": state.skipped_updates,
                   "rejected": state.archive.rejected, **state.metrics_row()}
        (out_dir / "summary.json").write_text(_json(summary))


@dataclass
class RunResult:
    archive: GridArchive
    soft_archive: GridArchive
    metrics: list[dict]
    state: RunState


def run(config: RunConfig, out_dir=None, workers: int = 1, resume: bool = False,
        plots: bool = False) -> RunResult:
    """Full optimization; returns the elitist archive as the result population."""
    out = Path(out_dir) if out_dir is not None else (
        Path(config.output_dir) if config.output_dir else None)
    state = None
    if resume and out is not None and (out / "checkpoint.json").exists():
        state = restore_checkpoint(config, json.loads((out / "checkpoint.json").read_text()))
        log.info("resuming at iteration %d", state.iteration)
    if state is None:
        state = cma_mae_init(config)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            _json({"config_hash": config.config_hash(), **config.to_dict()}))
    schedule = set(config.descriptor.schedule) if config.mode == "auto" else set()
    executor = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while state.iteration < config.iterations:
            if state.iteration + 1 in schedule:
                update_descriptors(state)
            cma_mae_step(state, executor)
            if out is not None and state.iteration % config.checkpoint_every == 0:
                write_outputs(state, out)
    finally:
        if executor is not None:
            executor.shutdown()
    if out is not None:
        write_outputs(state, out, final=True)
        if plots:
            from . import plotting
            plotting.plot_metrics(state.metrics, out / "metrics.png")
            plotting.plot_archive(state.elitist, out / "archive.png")
    return RunResult(state.elitist, state.archive, state.metrics, state)


# --------------------------------------------------------------------------
# baselines


def random_search(config: RunConfig, executor: ThreadPoolExecutor | None = None) -> GridArchive:
    """Sample from the emitters' initial distributions with the same budget.

    Every candidate goes into an elitist archive over the hand-crafted
    descriptor space.
    """
    env = make_env(config)
    arch = make_arch(config, env)
    rff = make_rff(config, env)
    gt = GridArchive(gt_archive_config(config, env), soft=False)
    x0 = np.zeros(arch.param_count)
    E = config.qd.episodes_per_eval
    for t in range(1, config.iterations + 1):
        for e, s0 in enumerate(config.qd.sigma0):
            rng = seeding.make_rng(config.seed, seeding.BASELINE, t, e)
            X = x0 + s0 * rng.standard_normal((config.qd.batch_size, arch.param_count))
            seeds = candidate_seeds(config.seed, seeding.BASELINE, t, e, len(X), E)
            ev = evaluate_candidates(env, arch, rff, X, seeds, executor)
            for i in range(len(X)):
                gt.insert(Occupant(X[i], float(ev.fitness[i]), ev.gt[i], ev.embeddings[i],
                                   tuple(int(s) for s in ev.seeds[i])))
    return gt
