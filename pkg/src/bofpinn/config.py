"""Experiment configuration.

Configs are flat ``key = value`` text with dotted section names::

    tag = rd1d-manufactured
    problem.alpha = 1.5
    train.adam_iters = 50000   # comments after '#'
    eval.times = 0.3141592653589793, 3.141592653589793

Values are parsed as Python literals (int, float, bool, tuples) and fall back
to strings; comma separated values become tuples.  Resolution order is: tag
defaults, then the tag's lite preset (``lite = true``), then the file, then CLI
``--set key=value`` overrides, then ``BOFPINN_SEED`` for the master seed.
"""

from __future__ import annotations

import ast
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .surrogate import TABLE_SIZES

__all__ = ["ConfigError", "TAGS", "ExperimentConfig", "defaults_for", "parse_config_text", "load_config",
           "resolve_config", "format_config", "parse_arch"]

TAGS = ("rd1d-manufactured", "rd1d-forcing-static", "rd1d-inverse", "rd1d-forcing-evolving",
        "rd1d-transfer", "rd2d", "appD-deterministic")

SEED_ENV = "BOFPINN_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class ProblemCfg:
    alpha: float = 1.5
    beta: Optional[float] = None
    mu: float = 1.0
    eps: float = 1.0
    sigma: float = 1.0
    length: float = 0.1
    n_kl: Optional[int] = None
    energy: float = 0.98
    T: float = 1.0
    M: int = 50
    sensors: bool = False
    k_sigma: float = 1.0


@dataclass
class DiscCfg:
    n_x: int = 71
    n_t: int = 70
    n_xi: int = 1000
    gauss: int = 8
    t_split: Optional[tuple] = None
    windows: int = 1
    order: int = 2


@dataclass
class ModelCfg:
    n_modes: int = 2
    mean: str = ""
    A: str = ""
    U: str = ""
    Y: str = ""
    lifting: Optional[bool] = None


@dataclass
class LossCfg:
    w: float = 1.0
    ic: float = 1.0
    bc: float = 1.0
    bo: float = 1.0
    g: float = 0.0
    data: float = 100.0
    dynamic: bool = False
    interval: int = 100


@dataclass
class TrainCfg:
    adam_iters: int = 400000
    lr: float = 1e-3
    decay_interval: int = 1000
    decay_factor: float = 0.9
    lbfgs_iters: int = 50000
    lbfgs_history: int = 20
    gtol: float = 1e-10
    ftol: float = 1e-15
    log_every: int = 1


@dataclass
class RefCfg:
    solver: str = "qmc"
    n_samples: int = 1000
    dt: float = 5e-5
    N: int = 100
    t_s: float = 0.01
    components: bool = True


@dataclass
class EvalCfg:
    times: tuple = (0.1, 1.0)
    n_x: int = 101


@dataclass
class InverseCfg:
    mu0: float = 1.0
    eps0: float = 1.0
    theta0: float = 0.2
    true_mu: float = 0.5
    true_eps: float = 0.3
    true_alpha: float = 1.5
    obs_x: tuple = (-0.5, 0.0, 0.5)
    obs_t: tuple = (0.1, 0.9)


@dataclass
class TransferCfg:
    source_alpha: float = 1.8
    checkpoint: str = ""
    lbfgs_iters: int = 50000


@dataclass
class FpinnCfg:
    N: tuple = (32, 64, 128, 512)
    hidden: str = "4x20"
    n_t: int = 11
    n_v: int = 101
    adam_iters: int = 20000
    lbfgs_iters: int = 5000
    lr: float = 1e-3
    fdm_dt: float = 1e-3


SECTIONS = {"problem": ProblemCfg, "disc": DiscCfg, "model": ModelCfg, "loss": LossCfg, "train": TrainCfg,
            "ref": RefCfg, "eval": EvalCfg, "inverse": InverseCfg, "transfer": TransferCfg, "fpinn": FpinnCfg}


@dataclass
class ExperimentConfig:
    tag: str = "rd1d-manufactured"
    seed: int = 0
    out: str = "runs/out"
    lite: bool = False
    workers: int = 1
    problem: ProblemCfg = field(default_factory=ProblemCfg)
    disc: DiscCfg = field(default_factory=DiscCfg)
    model: ModelCfg = field(default_factory=ModelCfg)
    loss: LossCfg = field(default_factory=LossCfg)
    train: TrainCfg = field(default_factory=TrainCfg)
    ref: RefCfg = field(default_factory=RefCfg)
    eval: EvalCfg = field(default_factory=EvalCfg)
    inverse: InverseCfg = field(default_factory=InverseCfg)
    transfer: TransferCfg = field(default_factory=TransferCfg)
    fpinn: FpinnCfg = field(default_factory=FpinnCfg)

    def to_flat(self) -> dict:
        out = {k: getattr(self, k) for k in ("tag", "seed", "out", "lite", "workers")}
        for sec in SECTIONS:
            for k, v in asdict(getattr(self, sec)).items():
                out[f"{sec}.{k}"] = v
        return out

    def set(self, key: str, value) -> None:
        if "." not in key:
            if key not in ("tag", "seed", "out", "lite", "workers"):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, value, type(getattr(self, key))))
            return
        sec, name = key.split(".", 1)
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section {sec!r} in {key!r}")
        obj = getattr(self, sec)
        names = {f.name for f in fields(obj)}
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, name, _coerce(key, value, type(getattr(obj, name))))

    def arch_sizes(self) -> tuple:
        base = TABLE_SIZES.get(self.tag, TABLE_SIZES["rd1d-manufactured"])
        spec = (self.model.mean, self.model.A, self.model.U, self.model.Y)
        return tuple(parse_arch(s) if s else b for s, b in zip(spec, base))

    def validate(self) -> None:
        if self.tag not in TAGS:
            raise ConfigError(f"unknown benchmark tag {self.tag!r}; expected one of {', '.join(TAGS)}")
        if not 1.0 < self.problem.alpha <= 2.0:
            raise ConfigError(f"problem.alpha={self.problem.alpha} outside (1, 2]")
        if self.disc.n_x < 3 or self.disc.n_t < 1:
            raise ConfigError("disc.n_x must be >= 3 and disc.n_t >= 1")
        if self.disc.order not in (1, 2):
            raise ConfigError("disc.order must be 1 or 2")
        if self.disc.windows < 1:
            raise ConfigError("disc.windows must be >= 1")
        if self.ref.solver not in ("exact", "qmc", "fdm", "none"):
            raise ConfigError(f"unknown reference solver {self.ref.solver!r}")
        if self.tag == "rd2d" and self.ref.solver == "fdm":
            raise ConfigError("rd2d needs an ensemble reference (ref.solver = qmc)")
        for k in ("w", "ic", "bc", "bo", "g", "data"):
            if getattr(self.loss, k) < 0:
                raise ConfigError(f"loss.{k} must be nonnegative")
        self.arch_sizes()


def parse_arch(s) -> tuple:
    """``"4x64"`` -> ``(4, 64)`` (hidden layers x width)."""
    if isinstance(s, (tuple, list)) and len(s) == 2:
        return int(s[0]), int(s[1])
    try:
        d, w = str(s).lower().split("x")
        return int(d), int(w)
    except ValueError:
        raise ConfigError(f"network size {s!r} is not of the form DEPTHxWIDTH") from None


def _literal(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    env = {"pi": math.pi}
    if "pi" in low and all(c in "0123456789.+-*/ pi()e" for c in low):
        try:
            return float(eval(low, {"__builtins__": {}}, env))
        except Exception:
            pass
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        pass
    if "," in text:
        return tuple(_literal(p) for p in text.split(",") if p.strip())
    return text


def _coerce(key, value, typ):
    if value is None:
        return "" if typ is str else None
    try:
        if typ is bool:
            if isinstance(value, str):
                value = _literal(value)
            if not isinstance(value, (bool, int)):
                raise TypeError
            return bool(value)
        if typ is int:
            if isinstance(value, float) and value != int(value):
                raise TypeError
            return int(value)
        if typ is float:
            return float(value)
        if typ is tuple:
            return tuple(value) if isinstance(value, (list, tuple)) else (value,)
        if typ is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {key}") from None
    # Optional fields default to None; accept numbers or tuples as given
    return value


def parse_config_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = _literal(v)
    return out


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# paper settings per benchmark, then the reduced budgets used for desk runs
_PAPER = {
    "rd1d-manufactured": {
        "problem.alpha": 1.5, "problem.T": math.pi, "problem.M": 50,
        "disc.n_x": 70, "disc.n_t": 70, "disc.gauss": 8, "model.n_modes": 2,
        "loss.w": 1.0, "loss.ic": 1000.0, "loss.bc": 1000.0, "loss.bo": 1000.0, "loss.g": 1.0,
        "loss.dynamic": True, "train.adam_iters": 400000, "train.lr": 1e-3,
        "ref.solver": "exact", "eval.times": (math.pi / 10, math.pi),
    },
    "rd1d-forcing-static": {
        "problem.alpha": 1.5, "problem.length": 0.1, "problem.sigma": 1.0, "problem.T": 1.0,
        "disc.n_x": 71, "disc.n_t": 70, "disc.n_xi": 1000, "model.n_modes": 6,
        "loss.w": 1.0, "loss.ic": 10.0, "loss.bc": 100.0, "loss.bo": 10.0, "loss.g": 0.01,
        "train.adam_iters": 400000, "train.lr": 1e-3, "ref.solver": "qmc", "ref.n_samples": 1000,
        "ref.N": 100, "ref.dt": 5e-5, "ref.t_s": 0.01, "eval.times": (0.1, 1.0),
    },
    "rd1d-inverse": {
        "problem.alpha": 1.5, "problem.length": 0.4, "problem.sigma": 1.0, "problem.T": 1.0,
        "problem.mu": 0.5, "problem.eps": 0.3,
        "disc.n_x": 71, "disc.n_t": 70, "disc.n_xi": 1000, "model.n_modes": 4,
        "loss.w": 1.0, "loss.ic": 10.0, "loss.bc": 100.0, "loss.bo": 10.0, "loss.g": 0.01, "loss.data": 100.0,
        "train.adam_iters": 600000, "train.lr": 1e-3, "ref.solver": "qmc", "ref.n_samples": 1000,
        "ref.N": 100, "ref.dt": 5e-5, "eval.times": (0.1, 1.0),
    },
    "rd1d-forcing-evolving": {
        "problem.alpha": 1.5, "problem.length": 0.4, "problem.mu": 0.5, "problem.eps": 0.3, "problem.T": 1.0,
        "disc.n_x": 71, "disc.n_t": 70, "disc.n_xi": 1000, "model.n_modes": 5, "model.lifting": True,
        "loss.w": 1.0, "loss.ic": 10.0, "loss.bc": 0.0, "loss.bo": 10.0, "loss.g": 0.1,
        "train.adam_iters": 400000, "train.lr": 1e-4, "ref.solver": "qmc", "ref.n_samples": 1000,
        "ref.N": 100, "ref.dt": 5e-5, "eval.times": (0.1, 1.0),
    },
    "rd1d-transfer": {
        "problem.alpha": 1.5, "problem.length": 0.4, "problem.mu": 0.5, "problem.eps": 0.3, "problem.T": 1.0,
        "disc.n_x": 71, "disc.n_t": 70, "disc.n_xi": 1000, "model.n_modes": 5, "model.lifting": True,
        "loss.w": 1.0, "loss.ic": 10.0, "loss.bc": 0.0, "loss.bo": 10.0, "loss.g": 0.1,
        "train.adam_iters": 400000, "train.lr": 1e-4, "transfer.source_alpha": 1.8,
        "ref.solver": "qmc", "ref.n_samples": 1000, "ref.N": 100, "eval.times": (0.1, 1.0),
    },
    "rd2d": {
        "problem.alpha": 1.8, "problem.T": 1.0, "problem.k_sigma": 1.0,
        "disc.n_x": 31, "disc.n_t": 60, "disc.t_split": ((0.0, 0.1, 20), (0.1, 1.0, 40)), "disc.n_xi": 1000,
        "model.n_modes": 4, "loss.w": 1.0, "loss.ic": 5.0, "loss.bc": 50.0, "loss.bo": 5.0, "loss.g": 0.0,
        "train.adam_iters": 400000, "train.lr": 1e-4, "ref.solver": "qmc", "ref.n_samples": 1000,
        "ref.N": 30, "ref.dt": 1e-3, "ref.components": False, "eval.times": (0.1, 1.0), "eval.n_x": 31,
    },
    "appD-deterministic": {
        "problem.alpha": 1.5, "problem.T": 1.0, "ref.solver": "exact", "eval.times": (1.0,),
        "fpinn.N": (32, 64, 128, 512), "fpinn.fdm_dt": 1e-3,
    },
}

_LITE = {
    # ~33 ms per Adam step on one core at this size; [0, pi/2] still holds both crossings
    "rd1d-manufactured": {"problem.T": math.pi / 2, "disc.n_x": 36, "disc.n_t": 32, "model.mean": "3x32",
                          "model.A": "2x8", "model.U": "3x32", "model.Y": "3x32", "train.adam_iters": 50000,
                          "train.lbfgs_iters": 1000, "eval.times": (math.pi / 10, math.pi / 2)},
    "rd1d-forcing-static": {"problem.n_kl": 5, "problem.T": 0.5, "disc.n_x": 26, "disc.n_t": 24,
                            "disc.n_xi": 64, "model.n_modes": 5, "model.mean": "3x32", "model.A": "2x8",
                            "model.U": "3x32", "model.Y": "3x32", "train.adam_iters": 10000,
                            "train.lbfgs_iters": 1000, "ref.n_samples": 500, "ref.N": 50,
                            "eval.times": (0.1, 0.5)},
    # n_x matches the reference grid (ref.N = 40) so data and surrogate share one GL discretization
    "rd1d-inverse": {"disc.n_x": 41, "disc.n_t": 24, "disc.n_xi": 64, "model.mean": "3x32", "model.A": "2x8",
                     "model.U": "3x32", "model.Y": "3x32", "train.adam_iters": 20000, "train.lbfgs_iters": 3000,
                     "ref.n_samples": 500, "ref.N": 40, "ref.components": False},
    "rd1d-forcing-evolving": {"disc.n_x": 26, "disc.n_t": 24, "disc.n_xi": 64, "model.mean": "3x32",
                              "model.A": "2x8", "model.U": "3x32", "model.Y": "3x32", "train.lr": 1e-3,
                              "train.adam_iters": 10000, "train.lbfgs_iters": 1000, "ref.n_samples": 500,
                              "ref.N": 50},
    "rd1d-transfer": {"disc.n_x": 26, "disc.n_t": 24, "disc.n_xi": 64, "model.n_modes": 2, "model.mean": "3x32",
                      "model.A": "2x8", "model.U": "3x32", "model.Y": "3x32", "train.lr": 1e-3,
                      "train.adam_iters": 20000, "train.lbfgs_iters": 5000, "transfer.lbfgs_iters": 6000,
                      "ref.n_samples": 256, "ref.N": 50, "ref.components": False},
    "rd2d": {"disc.n_x": 11, "disc.n_t": 12, "disc.t_split": ((0.0, 0.1, 4), (0.1, 1.0, 8)), "disc.n_xi": 32,
             "model.n_modes": 2, "model.mean": "2x16", "model.A": "2x4", "model.U": "2x16", "model.Y": "2x16",
             "train.lr": 1e-3, "train.adam_iters": 2000, "train.lbfgs_iters": 300, "ref.n_samples": 64,
             "ref.N": 10, "ref.dt": 5e-3, "eval.n_x": 11},
    "appD-deterministic": {"fpinn.N": (128, 512), "fpinn.adam_iters": 5000, "fpinn.lbfgs_iters": 200},
}


def defaults_for(tag: str, lite: bool = False) -> ExperimentConfig:
    if tag not in TAGS:
        raise ConfigError(f"unknown benchmark tag {tag!r}; expected one of {', '.join(TAGS)}")
    cfg = ExperimentConfig(tag=tag, lite=lite)
    for k, v in _PAPER[tag].items():
        cfg.set(k, v)
    if lite:
        for k, v in _LITE[tag].items():
            cfg.set(k, v)
    return cfg


def resolve_config(file_values: Optional[dict] = None, overrides: Optional[dict] = None,
                   env: Optional[dict] = None, tag: Optional[str] = None) -> ExperimentConfig:
    vals = dict(file_values or {})
    vals.update(overrides or {})
    tag = vals.pop("tag", tag) or "rd1d-manufactured"
    lite = vals.pop("lite", False)
    cfg = defaults_for(str(tag), bool(_coerce("lite", lite, bool)))
    for k, v in vals.items():
        cfg.set(k, v)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        cfg.set("seed", env[SEED_ENV])
    cfg.validate()
    return cfg


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in cfg.to_flat().items():
        if isinstance(v, tuple):
            v = ", ".join(repr(e) for e in v) if v else "none"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
