"""Grid archives: the soft-threshold CMA-MAE archive and its elitist shadow.

Archive files are line-delimited JSON. The first line is a header object::

    {"format": "autoqd-archive", "version": 1, "config_hash": ..., "soft": ...,
     "k": ..., "cells_per_dim": ..., "lower": [...], "upper": [...],
     "alpha": ..., "min_objective": ...}

followed by one record per occupied cell, sorted by cell index, with fields
in this order: ``cell``, ``descriptor``, ``fitness``, ``psi``, ``params``,
``eval_seeds``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

ARCHIVE_FORMAT = "autoqd-archive"
ARCHIVE_VERSION = 1


def _per_dim(value, k: int) -> tuple[float, ...]:
    if np.ndim(value) == 0:
        return (float(value),) * k
    out = tuple(float(v) for v in value)
    if len(out) != k:
        raise ConfigurationError(f"bounds need {k} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class ArchiveConfig:
    k: int
    cells_per_dim: int = 10
    lower: tuple[float, ...] | float = -1.2
    upper: tuple[float, ...] | float = 1.2
    alpha: float = 0.01
    min_objective: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("k must be positive")
        if self.cells_per_dim < 1:
            raise ConfigurationError("cells_per_dim must be positive")
        lower, upper = _per_dim(self.lower, self.k), _per_dim(self.upper, self.k)
        if not all(lo < hi for lo, hi in zip(lower, upper)):
            raise ConfigurationError("lower bounds must be below upper bounds")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in (0, 1]")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_dim,) * self.k

    @property
    def n_cells(self) -> int:
        return self.cells_per_dim ** self.k


def cell_index(config: ArchiveConfig, descriptor) -> tuple[int, ...] | None:
    """Grid cell of ``descriptor``; out-of-range values clamp to edge cells.

    Returns ``None`` for non-finite descriptors.
    """
    d = np.asarray(descriptor, dtype=float)
    if d.shape != (config.k,):
        raise ConfigurationError(f"descriptor must have length {config.k}")
    if not np.all(np.isfinite(d)):
        return None
    out = []
    for x, lo, hi in zip(d, config.lower, config.upper):
        x = min(max(float(x), lo), hi)
        i = math.floor((x - lo) / (hi - lo) * config.cells_per_dim)
        out.append(min(max(i, 0), config.cells_per_dim - 1))
    return tuple(out)


@dataclass
class Occupant:
    params: np.ndarray
    fitness: float
    descriptor: np.ndarray
    embedding: np.ndarray
    eval_seeds: tuple[int, ...] = ()

    def moved(self, descriptor: np.ndarray) -> "Occupant":
        return Occupant(self.params, self.fitness, np.asarray(descriptor, dtype=float),
                        self.embedding, self.eval_seeds)


@dataclass
class GridArchive:
    """Grid of elites.

    With ``soft=True`` this is the CMA-MAE archive: a candidate enters cell
    ``e`` when its fitness beats the threshold ``t_e``, which then moves toward
    the fitness at rate ``alpha``. With ``soft=False`` it is a plain elitist
    archive that replaces only on strictly greater fitness.

    Both kinds only admit fitness strictly above ``min_objective``.
    """

    config: ArchiveConfig
    soft: bool = True
    occupants: dict = field(default_factory=dict)
    thresholds: np.ndarray = None
    insertions: int = 0
    rejected: int = 0

    def __post_init__(self):
        if self.thresholds is None:
            self.thresholds = np.full(self.config.shape, float(self.config.min_objective))

    def __len__(self) -> int:
        return len(self.occupants)

    def threshold(self, cell) -> float:
        if self.soft:
            return float(self.thresholds[cell])
        occ = self.occupants.get(cell)
        return float(self.config.min_objective) if occ is None else occ.fitness

    def insert(self, occupant: Occupant) -> tuple[float, bool]:
        """Returns ``(improvement, accepted)``; improvement is ``-inf`` on rejection."""
        f = float(occupant.fitness)
        cell = cell_index(self.config, occupant.descriptor)
        if cell is None or not math.isfinite(f):
            self.rejected += 1
            return -math.inf, False
        self.insertions += 1
        if self.soft:
            t = float(self.thresholds[cell])
            delta = f - t
            if f > t:
                self.occupants[cell] = occupant
                a = self.config.alpha
                self.thresholds[cell] = (1.0 - a) * t + a * f
                return delta, True
            return delta, False
        current = self.occupants.get(cell)
        t = self.config.min_objective if current is None else current.fitness
        delta = f - t
        if f > t:
            self.occupants[cell] = occupant
            return delta, True
        return delta, False

    def cells(self) -> list[tuple[int, ...]]:
        return sorted(self.occupants)

    def elites(self) -> list[Occupant]:
        return [self.occupants[c] for c in self.cells()]

    def qd_score(self) -> float:
        return qd_score(self)

    def coverage(self) -> float:
        return coverage(self)

    def best(self) -> Occupant | None:
        if not self.occupants:
            return None
        return max(self.elites(), key=lambda o: o.fitness)

    def fitness_values(self) -> np.ndarray:
        return np.array([o.fitness for o in self.elites()], dtype=float)

    def copy_empty(self) -> "GridArchive":
        return GridArchive(self.config, self.soft)


def qd_score(archive: GridArchive) -> float:
    m = archive.config.min_objective
    return float(sum(o.fitness - m for o in archive.elites()))


def coverage(archive: GridArchive) -> float:
    return len(archive.occupants) / archive.config.n_cells


def rebuild(old: GridArchive, descriptor_fn: Callable[[np.ndarray], np.ndarray]) -> GridArchive:
    """Re-project every occupant through ``descriptor_fn`` into a fresh archive.

    Occupants are re-inserted in ascending fitness order (ties by old cell),
    so on a collision the fittest one ends up holding the cell.
    """
    new = old.copy_empty()
    order = sorted(old.occupants.items(), key=lambda kv: (kv[1].fitness, kv[0]))
    for _, occ in order:
        new.insert(occ.moved(descriptor_fn(occ.embedding)))
    return new


# --------------------------------------------------------------------------
# serialization


def _header(archive: GridArchive, config_hash: str | None) -> dict:
    c = archive.config
    return {"format": ARCHIVE_FORMAT, "version": ARCHIVE_VERSION, "config_hash": config_hash,
            "soft": archive.soft, "k": c.k, "cells_per_dim": c.cells_per_dim,
            "lower": list(c.lower), "upper": list(c.upper), "alpha": c.alpha,
            "min_objective": c.min_objective}


def occupant_record(cell, occ: Occupant) -> dict:
    return {"cell": [int(i) for i in cell],
            "descriptor": [float(x) for x in occ.descriptor],
            "fitness": float(occ.fitness),
            "psi": [float(x) for x in occ.embedding],
            "params": [float(x) for x in occ.params],
            "eval_seeds": [int(s) for s in occ.eval_seeds]}


def occupant_from_record(rec: dict) -> Occupant:
    return Occupant(np.array(rec["params"], dtype=float), float(rec["fitness"]),
                    np.array(rec["descriptor"], dtype=float), np.array(rec["psi"], dtype=float),
                    tuple(rec.get("eval_seeds", ())))


def dumps_archive(archive: GridArchive, config_hash: str | None = None) -> str:
    lines = [json.dumps(_header(archive, config_hash))]
    lines += [json.dumps(occupant_record(cell, archive.occupants[cell]))
              for cell in archive.cells()]
    return "\n".join(lines) + "\n"


def save_archive(archive: GridArchive, path, config_hash: str | None = None) -> None:
    Path(path).write_text(dumps_archive(archive, config_hash))


def load_archive(path) -> tuple[GridArchive, dict]:
    """Read an archive file; thresholds of soft archives are not stored and start fresh."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ConfigurationError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != ARCHIVE_FORMAT:
        raise ConfigurationError(f"{path} is not an archive file")
    config = ArchiveConfig(header["k"], header["cells_per_dim"], tuple(header["lower"]),
                           tuple(header["upper"]), header["alpha"], header["min_objective"])
    archive = GridArchive(config, header["soft"])
    for line in lines[1:]:
        rec = json.loads(line)
        archive.occupants[tuple(rec["cell"])] = occupant_from_record(rec)
    return archive, header


def archive_to_dict(archive: GridArchive) -> dict:
    return {"header": _header(archive, None),
            "thresholds": archive.thresholds.ravel().tolist(),
            "insertions": archive.insertions, "rejected": archive.rejected,
            "records": [occupant_record(c, archive.occupants[c]) for c in archive.cells()]}


def archive_from_dict(d: dict) -> GridArchive:
    h = d["header"]
    config = ArchiveConfig(h["k"], h["cells_per_dim"], tuple(h["lower"]), tuple(h["upper"]),
                           h["alpha"], h["min_objective"])
    archive = GridArchive(config, h["soft"],
                          thresholds=np.array(d["thresholds"], dtype=float).reshape(config.shape),
                          insertions=d["insertions"], rejected=d["rejected"])
    for rec in d["records"]:
        archive.occupants[tuple(rec["cell"])] = occupant_from_record(rec)
    return archive


def insert_all(archive: GridArchive, occupants: Iterable[Occupant]) -> GridArchive:
    for occ in occupants:
        archive.insert(occ)
    return archive
