"""Run configuration: hyperparameters, defaults, and the key=value config
file format used by the CLI (flags override file values)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

from .errors import UsageError
from .losses import LossWeights

SUBVIEW_MODES = ("busgcl", "hyp_both", "per_both", "reversed")
DISP_MODES = ("dispersing", "kl", "none")
VIEWS = ("perturb", "hypergraph", "node_drop", "edge_drop", "random_walk")

# subview_mode -> (user_view, item_view)
SUBVIEW_TABLE = {
    "busgcl": ("hypergraph", "perturb"),
    "hyp_both": ("hypergraph", "hypergraph"),
    "per_both": ("perturb", "perturb"),
    "reversed": ("perturb", "hypergraph"),
}


@dataclass
class Hyperparams:
    dim: int = 32
    layers: int = 3
    hyperedges: int = 128
    noise_radius: float = 0.1
    lambda_c: float = 0.1
    lambda_d: float = 1.0
    lambda_r: float = 0.01
    tau_c: float = 0.1
    tau_d: float = 1.0
    learning_rate: float = 1e-3
    decay_ratio: float = 0.96
    batch_size: int = 4096
    epochs: int = 300
    eval_every: int = 5
    seed: int = 0
    subview_mode: str = "busgcl"
    disp_mode: str = "dispersing"
    user_view: str = ""
    item_view: str = ""
    leaky_slope: float = 0.5
    drop_ratio: float = 0.1
    full_denominator: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("dim must be >= 1")
        if self.layers < 0:
            raise UsageError("layers must be >= 0")
        if self.hyperedges < 1:
            raise UsageError("hyperedges must be >= 1")
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be > 0")
        if not 0 < self.decay_ratio <= 1:
            raise UsageError("decay_ratio must be in (0, 1]")
        if self.noise_radius < 0:
            raise UsageError("noise_radius must be >= 0")
        if self.subview_mode not in SUBVIEW_MODES:
            raise UsageError(f"subview_mode must be one of {SUBVIEW_MODES}")
        if self.disp_mode not in DISP_MODES:
            raise UsageError(f"disp_mode must be one of {DISP_MODES}")
        for name in ("user_view", "item_view"):
            v = getattr(self, name)
            if v and v not in VIEWS:
                raise UsageError(f"{name} must be one of {VIEWS}")
        LossWeights(self.lambda_c, self.lambda_d, self.lambda_r, self.tau_c, self.tau_d)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_c, self.lambda_d, self.lambda_r,
                           self.tau_c, self.tau_d)

    @property
    def views(self):
        """Resolved (user_view, item_view); explicit views win over the mode."""
        default_u, default_i = SUBVIEW_TABLE[self.subview_mode]
        return (self.user_view or default_u, self.item_view or default_i)


@dataclass
class RunConfig:
    data: str = ""
    out: str = ""
    header: bool = False
    train_frac: float = 0.8
    valid_frac: float = 0.05
    eval_at: tuple = (20, 40)
    figures: bool = True
    hp: Hyperparams = field(default_factory=Hyperparams)

    def resolved_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "hp":
                continue
            v = getattr(self, f.name)
            if f.name == "eval_at":
                v = ",".join(str(n) for n in v)
            lines.append(f"{f.name} = {v}")
        for f in fields(self.hp):
            lines.append(f"{f.name} = {getattr(self.hp, f.name)}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()[:12]


def parse_config_file(path) -> dict:
    """Read `key = value` pairs; `#` starts a comment, blank lines ignored."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {lineno}: expected `key = value`")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise UsageError(f"{path}: line {lineno}: empty key")
            out[key] = value
    return out


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def coerce(value: str, pytype):
    if pytype is bool:
        low = value.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise UsageError(f"expected a boolean, got {value!r}")
    if pytype is tuple:
        return tuple(int(tok) for tok in value.split(",") if tok.strip())
    try:
        return pytype(value)
    except ValueError:
        raise UsageError(f"expected {pytype.__name__}, got {value!r}")


def build_run_config(values: dict) -> RunConfig:
    """Assemble a RunConfig from string/typed values keyed by field name."""
    rc_fields = {f.name: f for f in fields(RunConfig) if f.name != "hp"}
    hp_fields = {f.name: f for f in fields(Hyperparams)}
    rc_kwargs, hp_kwargs = {}, {}
    for key, value in values.items():
        if key in rc_fields:
            ftype = {"data": str, "out": str, "header": bool, "train_frac": float,
                     "valid_frac": float, "eval_at": tuple, "figures": bool}[key]
            rc_kwargs[key] = coerce(value, ftype) if isinstance(value, str) else value
        elif key in hp_fields:
            ftype = type(getattr(Hyperparams(), key))
            hp_kwargs[key] = coerce(value, ftype) if isinstance(value, str) else value
        else:
            raise UsageError(f"unknown config key {key!r}")
    return RunConfig(hp=Hyperparams(**hp_kwargs), **rc_kwargs)
