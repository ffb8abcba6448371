"""Run configuration: a flat ``key = value`` text file plus command-line overrides.

Lines starting with ``#`` are comments.  List values are comma separated.
Values written as ``auto`` are resolved from the dataset size when training
starts, and the resolved configuration is what gets persisted.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .generator import GeneratorConfig
from .utils import ConfigError

METHODS = ("batch", "finetune", "pnn", "cwr", "l2r", "si", "dgr")
SCENARIOS = ("unconstrained", "data_constrained", "time_data_constrained")
TIME_CAP_EPOCHS = 100
# graphs with fewer entities than this get the small-graph defaults
SMALL_GRAPH_ENTITIES = 1000


@dataclass
class RunConfig:
    dataset: str = ""
    out: str = "runs"
    sessions: int = 5
    sample_seed: int = 0
    filter_mode: str = "cumulative"
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    model: str = "transe"
    scenario: str = "unconstrained"
    seeds: list[int] = field(default_factory=lambda: [0])
    # solver
    epochs: int = 500
    eval_every: int = 10
    patience: int = 3
    dim: int | str = "auto"
    lr: float | str = "auto"
    margin: float = 1.0
    batch_size: int | str = "auto"
    neg_ratio: int = 1
    tie_policy: str = "optimistic"
    # regularisers
    l2r_lambda: float = 1e-2
    si_lambda: float = 1.0
    si_xi: float = 1e-3
    si_weighting: str = "linear"
    # generative replay
    gen_token_dim: int = 64
    gen_latent_dim: int = 32
    gen_hidden: int = 64
    gen_epochs: int = 500
    gen_batch_size: int | str = "auto"
    gen_lr: float = 0.05
    gen_momentum: float = 0.9
    gen_clip_norm: float = 5.0
    anneal_max: float = 1.0
    anneal_slope: float = 0.05
    anneal_pos: float | str = "auto"

    # -- derived -----------------------------------------------------------
    @property
    def retains_samples(self) -> bool:
        return self.scenario == "unconstrained"

    @property
    def early_stopping(self) -> bool:
        return self.scenario != "time_data_constrained"

    @property
    def solver_epochs(self) -> int:
        if self.scenario == "time_data_constrained":
            return min(self.epochs, TIME_CAP_EPOCHS)
        return self.epochs

    @property
    def generator_epochs(self) -> int:
        if self.scenario == "time_data_constrained":
            return min(self.gen_epochs, TIME_CAP_EPOCHS)
        return self.gen_epochs

    def generator_config(self) -> GeneratorConfig:
        pos = None if self.anneal_pos == "auto" else float(self.anneal_pos)
        return GeneratorConfig(
            token_dim=self.gen_token_dim, latent_dim=self.gen_latent_dim, hidden=self.gen_hidden,
            epochs=self.generator_epochs, batch_size=int(self.gen_batch_size), lr=self.gen_lr,
            momentum=self.gen_momentum, clip_norm=self.gen_clip_norm, anneal_max=self.anneal_max,
            anneal_slope=self.anneal_slope, anneal_pos=pos,
        )

    def resolved(self, num_entities: int) -> "RunConfig":
        """Copy with every ``auto`` value replaced by a concrete one."""
        small = num_entities < SMALL_GRAPH_ENTITIES
        cfg = dataclasses.replace(self)
        if cfg.dim == "auto":
            cfg.dim = 25 if small else 100
            if cfg.model == "analogy" and cfg.dim % 2:
                cfg.dim += 1
        if cfg.lr == "auto":
            cfg.lr = 0.01 if cfg.model == "transe" else 0.1
        if cfg.batch_size == "auto":
            cfg.batch_size = 128 if small else 512
        if cfg.gen_batch_size == "auto":
            cfg.gen_batch_size = 64 if small else 256
        if cfg.anneal_pos == "auto":
            cfg.anneal_pos = cfg.generator_epochs / 4
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if not self.methods:
            raise ConfigError("no methods selected")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.model not in ("transe", "analogy"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.si_weighting not in ("linear", "squared"):
            raise ConfigError("si_weighting must be 'linear' or 'squared'")
        if self.tie_policy not in ("optimistic", "pessimistic", "mean"):
            raise ConfigError("tie_policy must be optimistic, pessimistic or mean")
        if self.filter_mode not in ("cumulative", "session"):
            raise ConfigError("filter_mode must be cumulative or session")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        checks = [
            (self.sessions >= 1, "sessions must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.eval_every >= 1, "eval_every must be >= 1"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.margin >= 0, "margin must be >= 0"),
            (self.neg_ratio >= 1, "neg_ratio must be >= 1"),
            (self.l2r_lambda >= 0, "l2r_lambda must be >= 0"),
            (self.si_lambda >= 0, "si_lambda must be >= 0"),
            (self.si_xi > 0, "si_xi must be > 0"),
            (self.gen_epochs >= 0, "gen_epochs must be >= 0"),
            (self.anneal_slope > 0, "anneal_slope must be > 0"),
        ]
        if self.model == "analogy" and self.dim != "auto" and int(self.dim) % 2:
            checks.append((False, "Analogy needs an even dim"))
        if self.lr != "auto" and float(self.lr) <= 0:
            checks.append((False, "lr must be > 0"))
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    # -- text form ---------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def update(self, values: dict) -> "RunConfig":
        """Apply string or typed overrides in place; unknown keys are an error."""
        known = {f.name: f for f in fields(self)}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, getattr(RunConfig(), key), raw))
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls().update(parse_config_text(Path(path).read_text(encoding="utf-8")))


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        values[key.strip()] = value.strip()
    return values


def _coerce(key: str, default, raw):
    if not isinstance(raw, str):
        return list(raw) if isinstance(raw, tuple) else raw
    try:
        if isinstance(default, list):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if key == "seeds":
                return [int(x) for x in items]
            if key == "methods" and items == ["all"]:
                return list(METHODS)
            return items
        if raw == "auto" and default == "auto":
            return raw
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int) or key in ("dim", "batch_size", "gen_batch_size"):
            return int(raw)
        if isinstance(default, float) or key in ("lr", "anneal_pos"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw
