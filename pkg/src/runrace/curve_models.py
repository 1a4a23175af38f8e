"""Parametric learning-curve families and ensemble evaluation.

Each family ``f`` is a growth curve (nondecreasing in the epoch ``t`` over its
parameter box).  Validation errors are modelled by the minimized form
``offset - f(t)``, and an ensemble is a convex combination of the minimized
families.

Parameter boxes depend on two scales: ``y_cap`` (ten times the largest observed
error of the curve being modelled) and ``t_max`` (the budget horizon).  They are
chosen so that every family stays in ``[-y_cap, y_cap]`` on ``[1, t_max]``:

=============  ==================================  =====================================
family         formula                             box
=============  ==================================  =====================================
vap_pressure   exp(a + b/t + c ln t)               a in [ln Y-10, ln Y-1], b in [-5, 0],
                                                   c in [0, 1/max(ln T, 1)]
pow3           c - a t^-alpha                      c in [0, Y/2], a in [0, Y/2],
                                                   alpha in [0.01, 3]
log_log_linear ln(a ln t + b)                      a in [0, sinh(L)/max(ln T, 1)],
                                                   b in [e^-L, cosh(L)], L = min(Y, 3)
hill3          ymax t^eta / (kappa^eta + t^eta)    ymax in [0, Y], eta in [0.1, 5],
                                                   kappa in [0.01, 2T]
log_power      a / (1 + (t/e^b)^c)                 a in [0, Y], b in [-3, ln T + 3],
                                                   c in [-5, -0.01]
pow4           c - (a t + b)^-alpha                c in [0, Y], a in [0, B], b in [B, 10B],
                                                   alpha in [0.5, 3], B = max(1, Y^-2)
mmf            alpha - (alpha-beta)/(1+(kappa t)^d)  alpha in [0, Y], beta in [-Y, 0],
                                                   kappa in [0.001, 10], d in [0.1, 5]
exp4           c - exp(-a t^alpha + b)             c in [0, Y/2], a in [0, 5],
                                                   b in [ln Y-10, ln Y-1], alpha in [0.01, 2]
janoschek      alpha - (alpha-beta) exp(-kappa t^d)  alpha in [0, Y], beta in [-Y, 0],
                                                   kappa in [1e-4, 5], d in [0.1, 3]
weibull        alpha - (alpha-beta) exp(-(kappa t)^d)  alpha in [0, Y], beta in [-Y, 0],
                                                   kappa in [0.001, 2], d in [0.1, 3]
ilog2          c - a / ln(t + 1)                   c in [0, Y/2], a in [0, Y ln 2 / 2]
=============  ==================================  =====================================

Offsets live in ``[0, y_cap]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit

from .errors import DomainError

MAX_ARITY = 4

FAMILY_IDS = (
    "vap_pressure",
    "pow3",
    "log_log_linear",
    "hill3",
    "log_power",
    "pow4",
    "mmf",
    "exp4",
    "janoschek",
    "weibull",
    "ilog2",
)

PARAM_NAMES = {
    "vap_pressure": ("a", "b", "c"),
    "pow3": ("c", "a", "alpha"),
    "log_log_linear": ("a", "b"),
    "hill3": ("ymax", "eta", "kappa"),
    "log_power": ("a", "b", "c"),
    "pow4": ("c", "a", "b", "alpha"),
    "mmf": ("alpha", "beta", "kappa", "d"),
    "exp4": ("c", "a", "b", "alpha"),
    "janoschek": ("alpha", "beta", "kappa", "d"),
    "weibull": ("alpha", "beta", "kappa", "d"),
    "ilog2": ("c", "a"),
}


@njit(cache=True)
def family_value(fid, p, t):
    """Value of family number ``fid`` with padded parameter array ``p`` at ``t``."""
    if fid == 0:
        return math.exp(p[0] + p[1] / t + p[2] * math.log(t))
    if fid == 1:
        return p[0] - p[1] * t ** (-p[2])
    if fid == 2:
        return math.log(p[0] * math.log(t) + p[1])
    if fid == 3:
        return p[0] / (1.0 + (p[2] / t) ** p[1])
    if fid == 4:
        return p[0] / (1.0 + math.exp(p[2] * (math.log(t) - p[1])))
    if fid == 5:
        return p[0] - (p[1] * t + p[2]) ** (-p[3])
    if fid == 6:
        return p[0] - (p[0] - p[1]) / (1.0 + (p[2] * t) ** p[3])
    if fid == 7:
        return p[0] - math.exp(-p[1] * t ** p[3] + p[2])
    if fid == 8:
        return p[0] - (p[0] - p[1]) * math.exp(-p[2] * t ** p[3])
    if fid == 9:
        return p[0] - (p[0] - p[1]) * math.exp(-((p[2] * t) ** p[3]))
    return p[0] - p[1] / math.log(t + 1.0)


def _bounds_table(y_cap: float, t_max: int) -> dict[str, tuple[tuple[float, float], ...]]:
    Y = float(y_cap)
    lnY = math.log(Y)
    lnT = max(math.log(t_max), 1.0)
    L = min(Y, 3.0)
    B = max(1.0, Y**-2)
    return {
        "vap_pressure": ((lnY - 10, lnY - 1), (-5.0, 0.0), (0.0, 1.0 / lnT)),
        "pow3": ((0.0, Y / 2), (0.0, Y / 2), (0.01, 3.0)),
        "log_log_linear": ((0.0, math.sinh(L) / lnT), (math.exp(-L), math.cosh(L))),
        "hill3": ((0.0, Y), (0.1, 5.0), (0.01, 2.0 * t_max)),
        "log_power": ((0.0, Y), (-3.0, math.log(t_max) + 3), (-5.0, -0.01)),
        "pow4": ((0.0, Y), (0.0, B), (B, 10 * B), (0.5, 3.0)),
        "mmf": ((0.0, Y), (-Y, 0.0), (0.001, 10.0), (0.1, 5.0)),
        "exp4": ((0.0, Y / 2), (0.0, 5.0), (lnY - 10, lnY - 1), (0.01, 2.0)),
        "janoschek": ((0.0, Y), (-Y, 0.0), (1e-4, 5.0), (0.1, 3.0)),
        "weibull": ((0.0, Y), (-Y, 0.0), (0.001, 2.0), (0.1, 3.0)),
        "ilog2": ((0.0, Y / 2), (0.0, Y * math.log(2) / 2)),
    }


@dataclass(frozen=True)
class ModelFamily:
    """One basic curve family with its parameter box."""

    id: str
    index: int
    param_names: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...]
    y_cap: float = 10.0
    t_max: int = 1000

    @property
    def arity(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])

    def contains(self, params) -> bool:
        p = np.asarray(params, dtype=float)
        if p.shape != (self.arity,) or not np.all(np.isfinite(p)):
            return False
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def eval(self, params, t) -> float:
        return eval_model(self, params, t)


@lru_cache(maxsize=256)
def make_families(y_cap: float = 10.0, t_max: int = 1000) -> tuple[ModelFamily, ...]:
    """The eleven families with boxes sized for ``y_cap`` and horizon ``t_max``."""
    if not y_cap > 0 or not math.isfinite(y_cap):
        raise DomainError(f"y_cap must be positive and finite, got {y_cap}")
    if t_max < 1:
        raise DomainError(f"t_max must be >= 1, got {t_max}")
    table = _bounds_table(y_cap, int(t_max))
    return tuple(
        ModelFamily(name, i, PARAM_NAMES[name], table[name], float(y_cap), int(t_max))
        for i, name in enumerate(FAMILY_IDS)
    )


def get_family(name: str, y_cap: float = 10.0, t_max: int = 1000) -> ModelFamily:
    try:
        return make_families(y_cap, t_max)[FAMILY_IDS.index(name)]
    except ValueError:
        raise DomainError(f"unknown family {name!r}") from None


def y_cap_for(values) -> float:
    """Ten times the largest finite observed error (floored at 1e-3)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    top = float(v.max()) if v.size else 0.0
    return 10.0 * max(top, 1e-3)


def _padded(family: ModelFamily, params) -> np.ndarray:
    p = np.asarray(params, dtype=float)
    if not family.contains(p):
        raise DomainError(f"parameters {p.tolist()} outside the {family.id} box")
    out = np.zeros(MAX_ARITY)
    out[: family.arity] = p
    return out


def _check_t(t) -> float:
    t = float(t)
    if not t >= 1:
        raise DomainError(f"epoch must be >= 1, got {t}")
    return t


def eval_model(family: ModelFamily, params, t) -> float:
    return float(family_value(family.index, _padded(family, params), _check_t(t)))


def eval_minimized(family: ModelFamily, params, offset: float, t) -> float:
    """``offset - f(t)``: the family turned into a decreasing error curve."""
    if not 0.0 <= offset <= family.y_cap:
        raise DomainError(f"offset {offset} outside [0, {family.y_cap}]")
    return offset - eval_model(family, params, t)


def curve_values(family: ModelFamily, params, ts) -> np.ndarray:
    """Vector of ``f(t)`` over the epochs ``ts``."""
    p = _padded(family, params)
    return np.array([family_value(family.index, p, _check_t(t)) for t in ts])


@dataclass(frozen=True, eq=False)
class EnsembleSample:
    """One posterior draw over the ensemble space."""

    weights: np.ndarray
    params: tuple[np.ndarray, ...]
    offsets: np.ndarray
    noise_sigma: float
    families: tuple[ModelFamily, ...] = field(default_factory=make_families)

    def problems(self) -> list[str]:
        out = []
        w = np.asarray(self.weights, dtype=float)
        k = len(self.families)
        if w.shape != (k,) or len(self.params) != k or np.shape(self.offsets) != (k,):
            return [f"expected {k} weights, parameter vectors and offsets"]
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            out.append("weights must be non-negative and sum to 1")
        for fam, p, o in zip(self.families, self.params, self.offsets):
            if not fam.contains(p):
                out.append(f"{fam.id} parameters outside box")
            if not 0.0 <= o <= fam.y_cap:
                out.append(f"{fam.id} offset outside [0, {fam.y_cap}]")
        if not self.noise_sigma > 0:
            out.append("noise_sigma must be positive")
        return out

    @property
    def is_valid(self) -> bool:
        return not self.problems()

    def __eq__(self, other):
        if not isinstance(other, EnsembleSample):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and len(self.params) == len(other.params)
            and all(np.array_equal(a, b) for a, b in zip(self.params, other.params))
            and np.array_equal(self.offsets, other.offsets)
            and self.noise_sigma == other.noise_sigma
            and self.families == other.families
        )


def eval_ensemble(sample: EnsembleSample, t) -> float:
    """Weighted mean of the minimized families at epoch ``t``."""
    problems = sample.problems()
    if problems:
        raise DomainError("invalid ensemble sample: " + "; ".join(problems))
    t = _check_t(t)
    total = 0.0
    for w, fam, p, o in zip(sample.weights, sample.families, sample.params, sample.offsets):
        if w == 0.0:
            continue
        total += w * (o - family_value(fam.index, _padded(fam, p), t))
    return float(total)


def init_params(family: ModelFamily, curve: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """Uniform draw inside the family box.

    ``curve`` is only checked for emptiness; the draw does not look at the data.
    """
    if len(curve) == 0:
        raise DomainError("cannot initialise from an empty curve")
    return rng.uniform(family.lower, family.upper)


def init_offset(family: ModelFamily, params, curve: Sequence[float]) -> float:
    """Offset putting the minimized curve's mean on the data mean, clipped to the box."""
    y = np.asarray(curve, dtype=float)
    if y.size == 0:
        raise DomainError("cannot initialise from an empty curve")
    ok = np.isfinite(y)
    ts = np.arange(1, y.size + 1)[ok]
    f = curve_values(family, params, ts)
    return float(np.clip(y[ok].mean() + f.mean(), 0.0, family.y_cap))
