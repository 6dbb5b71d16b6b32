"""Flat ``key=value`` experiment configuration.

Assignments are separated by whitespace or newlines; ``#`` starts a comment.
Every key except ``model`` has a default:

===============  =====================================================
key              default / meaning
===============  =====================================================
model            required; comma list of ``open-loop``, ``ctmc``, ``rmc``
n                15 (ignored when ``graph`` is given)
p                0.3, edge probability of the directed G(n, p) draw
graph_seed       0; the draw is retried with graph_seed+1, ... until
                 some node roots a spanning tree
graph            edge-list file (overrides n, p, graph_seed)
mu, dt, r        2, 1, 0.22
K                4, grid resolution of each budget simplex
trials           10
base_seed        0; trial k uses base_seed + k
seeds            explicit comma list, overrides base_seed
root             fixed root node; default draws one per trial
bin_width        ``auto`` = largest completion time / 6
orientation      ``in`` (per-receiver budget) or ``out``
closure_bound    ``upper`` or ``lower`` side of the rmc surrogate
fallback         ``global`` or ``node``
out              ``results``
===============  =====================================================
"""

from __future__ import annotations

import dataclasses
import shlex
from dataclasses import dataclass

from .controller import ORIENTATIONS, ControllerConfig
from .exact_ctmc import MAX_EXACT_NODES

MODELS = {"open-loop": "open-loop", "ctmc": "exact-ctmc", "rmc": "moment-closure"}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    models: tuple[str, ...]
    n: int = 15
    p: float = 0.3
    graph_seed: int = 0
    graph: str | None = None
    mu: float = 2.0
    dt: float = 1.0
    r: float = 0.22
    K: int = 4
    trials: int = 10
    base_seed: int = 0
    seeds: tuple[int, ...] | None = None
    root: int | None = None
    bin_width: float | None = None
    orientation: str = "in"
    closure_bound: str = "upper"
    fallback: str = "global"
    out: str = "results"

    def __post_init__(self):
        if not self.models:
            raise ConfigError("model", "at least one model is required")
        for m in self.models:
            if m not in MODELS:
                raise ConfigError("model", f"unknown model {m!r} (expected one of {', '.join(MODELS)})")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("model", "duplicate model")
        if self.n < 1:
            raise ConfigError("n", f"must be >= 1, got {self.n}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("p", f"must lie in [0, 1], got {self.p}")
        for key in ("mu", "dt", "r"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, f"must be positive, got {getattr(self, key)}")
        if self.K < 1:
            raise ConfigError("K", f"must be >= 1, got {self.K}")
        if self.trials < 1:
            raise ConfigError("trials", f"must be >= 1, got {self.trials}")
        if self.seeds is not None and len(self.seeds) < self.trials:
            raise ConfigError("seeds", f"{len(self.seeds)} seeds for {self.trials} trials")
        if self.bin_width is not None and not self.bin_width > 0:
            raise ConfigError("bin_width", f"must be positive, got {self.bin_width}")
        if self.orientation not in ORIENTATIONS:
            raise ConfigError("orientation", f"expected in or out, got {self.orientation!r}")
        if self.closure_bound not in ("upper", "lower"):
            raise ConfigError("closure_bound", f"expected upper or lower, got {self.closure_bound!r}")
        if self.fallback not in ("global", "node"):
            raise ConfigError("fallback", f"expected global or node, got {self.fallback!r}")
        if self.root is not None and not 0 <= self.root < self.n:
            raise ConfigError("root", f"node {self.root} out of range")
        if self.graph is None:
            self.check_size(self.n)

    def check_size(self, n: int) -> None:
        if "ctmc" in self.models and n > MAX_EXACT_NODES:
            raise ConfigError(
                "model", f"ctmc needs n <= {MAX_EXACT_NODES} (2^n joint states), got n={n}"
            )

    def trial_seeds(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds[: self.trials])
        return [self.base_seed + k for k in range(self.trials)]

    def controller(self, model: str) -> ControllerConfig:
        return ControllerConfig(
            dt=self.dt,
            r=self.r,
            mu=self.mu,
            grid=self.K,
            predictor=MODELS[model],
            orientation=self.orientation,
            closure_bound=self.closure_bound,
            fallback=self.fallback,
        )


def _int(key, v):
    try:
        return int(v)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {v!r}") from None


def _float(key, v):
    try:
        return float(v)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {v!r}") from None


def _models(key, v):
    parts = tuple(m.strip() for m in v.split(",") if m.strip())
    if not parts:
        raise ConfigError(key, "must not be empty")
    return parts


def _seeds(key, v):
    return tuple(_int(key, s) for s in v.split(",") if s.strip())


def _opt(conv):
    return lambda key, v: None if v in ("none", "auto") else conv(key, v)


_FIELDS = {
    "model": ("models", _models),
    "n": ("n", _int),
    "p": ("p", _float),
    "graph_seed": ("graph_seed", _int),
    "graph": ("graph", _opt(lambda k, v: v or None)),
    "mu": ("mu", _float),
    "dt": ("dt", _float),
    "r": ("r", _float),
    "K": ("K", _int),
    "trials": ("trials", _int),
    "base_seed": ("base_seed", _int),
    "seeds": ("seeds", _opt(_seeds)),
    "root": ("root", _opt(_int)),
    "bin_width": ("bin_width", _opt(_float)),
    "orientation": ("orientation", lambda k, v: v),
    "closure_bound": ("closure_bound", lambda k, v: v),
    "fallback": ("fallback", lambda k, v: v),
    "out": ("out", lambda k, v: v),
}


def parse_assignments(source: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for line in source.splitlines():
        for tok in shlex.split(line, comments=True):
            if "=" not in tok:
                raise ConfigError(tok, "expected key=value")
            key, value = tok.split("=", 1)
            key = key.strip()
            if key in items:
                raise ConfigError(key, "given twice")
            items[key] = value.strip()
    return items


def parse_config(source: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    items = parse_assignments(source)
    items.update(overrides or {})
    kwargs = {}
    for key, value in items.items():
        if key not in _FIELDS:
            raise ConfigError(key, "unknown key")
        name, conv = _FIELDS[key]
        kwargs[name] = conv(key, value)
    if "models" not in kwargs:
        raise ConfigError("model", "required key is missing")
    return ExperimentConfig(**kwargs)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return shlex.quote(str(v))


def serialize_config(cfg: ExperimentConfig) -> str:
    """One ``key=value`` line per field; :func:`parse_config` inverts it."""
    names = {name: key for key, (name, _) in _FIELDS.items()}
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "bin_width" and v is None:
            lines.append("bin_width=auto")
        else:
            lines.append(f"{names[f.name]}={_fmt(v)}")
    return "\n".join(lines) + "\n"
