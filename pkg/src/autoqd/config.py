"""Experiment configuration.

Configs are TOML files with a versioned header key and one table per concern.
Unknown keys are rejected and missing keys take the defaults below::

    schema_version = 1
    seed = 0
    mode = "auto"            # "auto" (learned descriptors) or "regular" (hand-crafted)
    iterations = 500
    checkpoint_every = 25
    output_dir = "runs/demo" # optional

    [env]        # name, arena_halfwidth, force_scale, friction, dt, max_speed,
                 # noise_std, horizon, gamma
    [policy]     # hidden, toeplitz
    [embedding]  # dim, sigma (default sqrt(state_dim + action_dim)), normalize
    [descriptor] # k, schedule, weighted
    [qd]         # emitters, sigma0, batch_size, episodes_per_eval, restart_every,
                 # cells_per_dim, lower, upper, alpha, min_objective
    [metrics]    # eval_dim, eval_seed, eval_episodes, gt_cells
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError

SCHEMA_VERSION = 1
MODES = ("auto", "regular")


@dataclass(frozen=True)
class EnvSettings:
    name: str = "point_mass"
    arena_halfwidth: float = 1.0
    force_scale: float = 1.0
    friction: float = 0.5
    dt: float = 0.1
    max_speed: float = 1.0
    noise_std: float = 0.0
    horizon: int = 50
    gamma: float = 0.98


@dataclass(frozen=True)
class PolicySettings:
    hidden: tuple[int, ...] = (16, 16)
    toeplitz: bool = True


@dataclass(frozen=True)
class EmbeddingSettings:
    dim: int = 100
    sigma: float | None = None
    normalize: bool = True


@dataclass(frozen=True)
class DescriptorSettings:
    k: int = 4
    schedule: tuple[int, ...] = (20, 50, 100, 200, 300)
    weighted: bool = True


@dataclass(frozen=True)
class QDSettings:
    emitters: int = 5
    sigma0: tuple[float, ...] = (0.02, 0.04, 0.08, 0.16, 0.32)
    batch_size: int = 64
    episodes_per_eval: int = 5
    restart_every: int = 100
    cells_per_dim: int = 10
    lower: float = -1.2
    upper: float = 1.2
    alpha: float = 0.01
    min_objective: float | None = None


@dataclass(frozen=True)
class MetricsSettings:
    eval_dim: int = 1000
    eval_seed: int = 12345
    eval_episodes: int = 5
    gt_cells: int = 10


SECTIONS = {"env": EnvSettings, "policy": PolicySettings, "embedding": EmbeddingSettings,
            "descriptor": DescriptorSettings, "qd": QDSettings, "metrics": MetricsSettings}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mode: str = "auto"
    iterations: int = 500
    checkpoint_every: int = 25
    output_dir: str | None = None
    env: EnvSettings = field(default_factory=EnvSettings)
    policy: PolicySettings = field(default_factory=PolicySettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    descriptor: DescriptorSettings = field(default_factory=DescriptorSettings)
    qd: QDSettings = field(default_factory=QDSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be nonnegative")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned value")
        sched = self.descriptor.schedule
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ConfigurationError("descriptor schedule must be strictly increasing")
        if any(t < 1 or t >= self.iterations for t in sched):
            raise ConfigurationError(
                f"schedule points must lie in [1, iterations) = [1, {self.iterations})")
        if self.env.name != "point_mass":
            raise ConfigurationError(f"unknown environment {self.env.name!r}")
        q = self.qd
        if q.emitters < 1 or len(q.sigma0) != q.emitters:
            raise ConfigurationError("need one sigma0 per emitter")
        if q.batch_size < 2 or q.episodes_per_eval < 1 or q.restart_every < 1:
            raise ConfigurationError("invalid batch_size, episodes_per_eval or restart_every")
        if self.descriptor.k < 1 or self.descriptor.k > self.embedding.dim:
            raise ConfigurationError("descriptor k must lie in [1, embedding dim]")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be positive")

    def replace(self, **changes) -> "RunConfig":
        """Copy with top-level or dotted (``"qd.alpha"``) fields replaced."""
        top, nested = {}, {}
        for key, value in changes.items():
            if "." in key:
                section, name = key.split(".", 1)
                nested.setdefault(section, {})[name] = value
            else:
                top[key] = value
        for section, values in nested.items():
            if section not in SECTIONS:
                raise ConfigurationError(f"unknown section {section!r}")
            top[section] = _build(SECTIONS[section], {**dataclasses.asdict(getattr(self, section)),
                                                      **values}, section)
        return dataclasses.replace(self, **top)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(
                f"unsupported or missing schema_version {version!r} (expected {SCHEMA_VERSION})")
        kwargs = {}
        for key, value in data.items():
            if key in SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigurationError(f"[{key}] must be a table")
                kwargs[key] = _build(SECTIONS[key], value, key)
            elif key in {"seed", "mode", "iterations", "checkpoint_every", "output_dir"}:
                kwargs[key] = value
            else:
                raise ConfigurationError(f"unknown key {key!r}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc


def _build(cls, values: dict, section: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(names)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    clean = {}
    for key, value in values.items():
        default = names[key].default
        if isinstance(value, list):
            value = tuple(value)
            if isinstance(default, tuple) and default and isinstance(default[0], float):
                value = tuple(float(v) for v in value)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        clean[key] = value
    return cls(**clean)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    return RunConfig.from_dict(data)


def dump_config_toml(config: RunConfig) -> str:
    """Serialize to the TOML schema (``None`` values are omitted)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, str):
            return json.dumps(v)
        return repr(v)

    d = config.to_dict()
    lines = [f"schema_version = {SCHEMA_VERSION}"]
    for key in ("seed", "mode", "iterations", "checkpoint_every", "output_dir"):
        if d[key] is not None:
            lines.append(f"{key} = {fmt(d[key])}")
    for section in SECTIONS:
        lines.append(f"\n[{section}]")
        for key, value in d[section].items():
            if value is not None:
                lines.append(f"{key} = {fmt(value)}")
    return "\n".join(lines) + "\n"
