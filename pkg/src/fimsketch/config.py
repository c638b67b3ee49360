"""Flat ``key = value`` scenario configuration."""
from dataclasses import asdict, dataclass, fields
from typing import Optional

from .errors import ConfigError
from .schrodinger import PRESETS
from .samplers import CRITERIA

SAMPLERS = ("eks", "cbs", "resample")
ALIASES = {"iters": "iterations", "out": "output", "sigma": "init_sigma"}


@dataclass
class ScenarioConfig:
    scenario: str = "systemC"
    nx: int = 30
    coeffs: Optional[str] = None
    alpha: float = 1.0
    gamma: float = 1.0e4
    mode: str = "fixed"
    sampler: str = "all"
    init: str = "normal"
    c: Optional[int] = None
    iterations: Optional[int] = None
    criterion: str = "inverse_condition_number"
    seed: int = 0
    output: str = "runs/out"
    dt0: float = 1.0
    eps: float = 1.0e-8
    beta: float = 1.0
    dt: float = 0.05
    init_sigma: float = 0.3
    landscape_resolution: int = 41
    landscape_p1: str = "-4,6"
    landscape_p2: str = "5,15"
    snapshots: bool = True

    # c and iterations default from the scenario
    def resolved_c(self):
        if self.c is not None:
            return self.c
        return 8 if self.scenario == "landscape2d" else 18

    def resolved_iterations(self):
        if self.iterations is not None:
            return self.iterations
        return 60 if self.mode == "source" else 25

    def samplers(self):
        return SAMPLERS if self.sampler == "all" else (self.sampler,)

    def coefficient_values(self):
        if self.coeffs is None:
            return None
        return tuple(float(v) for v in self.coeffs.split(","))

    def landscape_ranges(self):
        return _pair(self.landscape_p1, "landscape_p1"), _pair(self.landscape_p2, "landscape_p2")

    def validate(self):
        if self.scenario not in PRESETS:
            raise ConfigError("scenario", f"unknown scenario {self.scenario!r}; choose from {sorted(PRESETS)}")
        if self.nx < 4 or self.nx > 400:
            raise ConfigError("nx", "must lie in [4, 400]")
        if self.coeffs is not None:
            try:
                vals = self.coefficient_values()
            except ValueError:
                raise ConfigError("coeffs", "expected a comma separated list of numbers") from None
            if len(vals) != PRESETS[self.scenario].K:
                raise ConfigError("coeffs", f"need {PRESETS[self.scenario].K} values for {self.scenario}")
        if not self.alpha > 0:
            raise ConfigError("alpha", "must be positive")
        if not self.gamma > 0:
            raise ConfigError("gamma", "must be positive")
        if self.mode not in ("fixed", "source"):
            raise ConfigError("mode", "must be 'fixed' or 'source'")
        if self.mode == "source" and self.scenario == "landscape2d":
            raise ConfigError("mode", "landscape2d runs in fixed-source mode only")
        if self.sampler not in SAMPLERS + ("all",):
            raise ConfigError("sampler", f"must be one of {SAMPLERS + ('all',)}")
        if self.init not in ("normal", "uniform"):
            raise ConfigError("init", "must be 'normal' or 'uniform'")
        if self.c is not None and self.c < 2:
            raise ConfigError("c", "need at least 2 particles")
        if self.iterations is not None and self.iterations < 0:
            raise ConfigError("iterations", "must be nonnegative")
        if self.criterion not in CRITERIA:
            raise ConfigError("criterion", f"must be one of {CRITERIA}")
        if self.mode == "source" and self.criterion == "min_eigenvalue":
            raise ConfigError("criterion", "source-design mode supports inverse_condition_number only")
        if self.seed < 0:
            raise ConfigError("seed", "must be nonnegative")
        for key in ("dt0", "eps", "dt", "init_sigma"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be positive")
        if self.beta < 0:
            raise ConfigError("beta", "must be nonnegative")
        if self.landscape_resolution < 2:
            raise ConfigError("landscape_resolution", "must be at least 2")
        self.landscape_ranges()
        return self

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def as_dict(self):
        return asdict(self)


def _pair(text, key):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(key, "expected 'low,high'") from None
    if not lo < hi:
        raise ConfigError(key, "low must be below high")
    return lo, hi


_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _convert(key, raw):
    kind = _TYPES[key]
    text = str(raw).strip()
    try:
        if kind in (int, Optional[int]):
            return int(text)
        if kind is float:
            return float(text)
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r}") from None
    return text


def normalize_key(key):
    key = key.strip().lstrip("-").replace("-", "_")
    return ALIASES.get(key, key)


def parse_lines(lines):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[normalize_key(key)] = value.strip()
    return out


def build_config(values):
    cfg = ScenarioConfig()
    for key, raw in values.items():
        key = normalize_key(key)
        if key not in _TYPES:
            raise ConfigError(key, "unknown key")
        setattr(cfg, key, _convert(key, raw))
    return cfg.validate()


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values.update(parse_lines(fh))
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    for key, raw in (overrides or {}).items():
        values[normalize_key(key)] = raw
    return build_config(values)
