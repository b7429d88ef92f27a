"""Run configuration: flat ``key = value`` files plus command-line overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .engine import EngineConfig
from .posterior import PriorConfig, tt_ranks


@dataclass(frozen=True)
class RunConfig:
    # defaults reproduce the 4th-order synthetic setting
    dims: tuple[int, ...] = (20, 20, 20, 20)
    true_rank: int = 3
    rank: int = 3
    batch_size: int = 512
    snr_db: float = 20.0
    observe_fraction: float = 0.15
    test_fraction: float = 0.1
    max_inner_iters: int = 100
    inner_tolerance: float = 1e-4
    noise_update: str = "per_core"
    cross_terms: str = "current"
    prior_variance: float = 1.0
    alpha0: float = 1e-3
    beta0: float = 1e-3
    data_seed: int = 0
    split_seed: int = 1
    stream_seed: int = 2
    init_seed: int = 3
    repeat_count: int = 1
    # "auto": noiseless truth from the generator sidecar when present
    eval_truth: str = "auto"
    # write per-batch wall time; off makes error CSVs byte-reproducible
    record_time: bool = True

    def __post_init__(self):
        if not self.dims or any(n < 1 for n in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")
        for name in ("true_rank", "rank", "batch_size", "max_inner_iters", "repeat_count",
                     "prior_variance", "alpha0", "beta0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.observe_fraction <= 1:
            raise ValueError("observe_fraction must lie in (0, 1]")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.eval_truth not in ("auto", "observed"):
            raise ValueError("eval_truth must be 'auto' or 'observed'")
        self.engine()  # validates the engine fields

    @property
    def ranks(self) -> tuple[int, ...]:
        return tt_ranks(len(self.dims), self.rank)

    @property
    def true_ranks(self) -> tuple[int, ...]:
        return tt_ranks(len(self.dims), self.true_rank)

    def engine(self) -> EngineConfig:
        return EngineConfig(self.max_inner_iters, self.inner_tolerance,
                            self.noise_update, self.cross_terms)

    def prior(self, repeat: int = 0) -> PriorConfig:
        return PriorConfig(self.prior_variance, self.alpha0, self.beta0,
                           self.init_seed + repeat)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n"
                       for k, v in dataclasses.asdict(self).items())


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_value(key: str, text: str):
    if key not in FIELDS:
        raise ValueError(f"unknown config key {key!r}")
    kind = FIELDS[key].type
    text = text.strip()
    if key == "dims":
        return tuple(int(t) for t in text.replace("x", ",").split(",") if t.strip())
    if kind == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def read_pairs(path) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        k, v = s.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def split_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ValueError(f"override must be KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def load_run_config(path=None, overrides=()) -> tuple[RunConfig, set[str]]:
    """Build a config from an optional file and ``KEY=VALUE`` overrides.

    Returns the config and the set of keys that were given explicitly.
    """
    pairs = read_pairs(path) if path else []
    pairs += [split_override(o) for o in overrides]
    values = {k: parse_value(k, v) for k, v in pairs}
    return RunConfig(**values), set(values)


def load_grid(path=None, overrides=()) -> tuple[RunConfig, dict[str, list], set[str]]:
    """Like :func:`load_run_config` but values may be comma lists for the swept keys."""
    pairs = read_pairs(path) if path else []
    pairs += [split_override(o) for o in overrides]
    base, grid = {}, {}
    for k, v in pairs:
        if k in ("batch_size", "rank", "snr_db"):
            grid[k] = [parse_value(k, t) for t in v.split(",") if t.strip()]
            if not grid[k]:
                raise ValueError(f"empty grid for {k}")
        else:
            base[k] = parse_value(k, v)
    explicit = set(base) | set(grid)
    cfg = RunConfig(**base)
    for k in ("batch_size", "rank", "snr_db"):
        grid.setdefault(k, [getattr(cfg, k)])
    return cfg, grid, explicit
