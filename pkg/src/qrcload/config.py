"""Run configuration in a flat ``key = value`` text format.

Blank lines and lines starting with ``#`` are ignored. Lists are comma
separated; shot settings use ``none`` for exact expectations. Example::

    data_path = data/Tetouan.csv
    output_dir = out
    seeds = 0, 1
    shot_settings = none, 512
    bit_widths = 32, 8, 6, 4, 3, 2
    reservoir = from-search          # or: explicit
    n_qubits = 7
    n_layers = 4
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields

from .readout import DEFAULT_ALPHA_GRID
from .reservoir import DEFAULT_DECAYS, ReservoirConfig


class ConfigError(ValueError):
    pass


def _int_list(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _float_list(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _shots_list(s):
    out = []
    for v in s.split(","):
        v = v.strip()
        if not v:
            continue
        if v.lower() in ("none", "exact"):
            out.append(None)
        else:
            n = int(v)
            if n < 1:
                raise ConfigError(f"shot count must be positive, got {n}")
            out.append(n)
    return tuple(out)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class RunConfig:
    data_path: str = "data/Tetouan City power consumption.csv"
    output_dir: str = "qrc-out"
    cache_dir: str = ""
    seeds: tuple = (0, 1)
    shot_settings: tuple = (None, 512)
    bit_widths: tuple = (32, 8, 6, 4, 3, 2)
    window: int = 24
    split_ratios: tuple = (0.70, 0.10, 0.20)
    # "from-search" uses the winner of `search`; "explicit" uses the fields below
    reservoir: str = "from-search"
    n_qubits: int = 7
    n_layers: int = 4
    encoding_strategy: str = "cheb_stride1"
    coupling_strength: float = 0.5
    l1_ratio: float = 0.5
    kernel_decays: tuple = DEFAULT_DECAYS
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    refine_rounds: int = 5
    ga_population: int = 6
    ga_generations: int = 3
    ga_elitism: int = 1
    ga_tournament_size: int = 2
    ga_mutation_rate: float = 0.2
    ga_sigma_frac: float = 0.1
    ga_subset_fraction: float = 0.2
    ga_seed: int = 0
    trace_length: int = 500
    n_jobs: int = 1

    def __post_init__(self):
        if self.reservoir not in ("from-search", "explicit"):
            raise ConfigError(f"reservoir must be 'from-search' or 'explicit', got {self.reservoir!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.shot_settings:
            raise ConfigError("at least one shot setting is required")
        for k in self.bit_widths:
            if not 2 <= k <= 32:
                raise ConfigError(f"bit width {k} outside [2, 32]")
        if self.window < 1:
            raise ConfigError("window must be >= 1")

    def resolved_cache_dir(self):
        env = os.environ.get("QRC_CACHE_DIR")
        if env:
            return env
        return self.cache_dir or os.path.join(self.output_dir, "cache")

    def explicit_reservoir(self, seed=0):
        return ReservoirConfig(n_qubits=self.n_qubits, n_layers=self.n_layers,
                               encoding_strategy=self.encoding_strategy,
                               coupling_strength=self.coupling_strength,
                               l1_ratio=self.l1_ratio, kernel_decays=self.kernel_decays,
                               seed=seed)

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        d = self.to_dict()
        for k in ("output_dir", "cache_dir", "n_jobs"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return RunConfig(**d)


_PARSERS = {
    "seeds": _int_list, "bit_widths": _int_list, "shot_settings": _shots_list,
    "split_ratios": _float_list, "kernel_decays": _float_list, "alpha_grid": _float_list,
}


def parse_value(key, raw):
    types = {f.name: f.type for f in fields(RunConfig)}
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    raw = raw.strip()
    try:
        if key in _PARSERS:
            return _PARSERS[key](raw)
        default = getattr(RunConfig, key)
        if isinstance(default, bool):
            return _bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        values[key.strip()] = parse_value(key.strip(), raw)
    return values


def load_config(path=None, **overrides):
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def format_config(cfg):
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join("none" if x is None else str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
