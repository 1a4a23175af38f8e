"""Halting thresholds, the clever-halt rank, per-run decisions and guard rules.

Criteria compare each alive run's predictive distribution at the horizon with a
threshold ``tau`` and halt the run when ``P(prediction < tau) < delta``:

- ``a``: the current best observed error;
- ``b`` / ``c``: the point / conservative estimate of the current-best run;
- ``d`` / ``e``: the best point / conservative estimate over all runs;
- ``f``: the k-th best conservative estimate, ``k`` from :func:`select_k`;
- ``sh``: successive-halving baseline (no predictions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Literal, Mapping

from .errors import DomainError
from .inference import Prediction, prob_below

Criterion = Literal["a", "b", "c", "d", "e", "f", "sh"]
CRITERIA: tuple[str, ...] = ("a", "b", "c", "d", "e", "f", "sh")
PREDICTIVE = frozenset("bcdef")
CONSERVATIVE = frozenset("cef")


@dataclass(frozen=True)
class HaltPolicy:
    criterion: Criterion = "f"
    delta: float = 0.5
    guards_enabled: bool = False
    warmup_epochs: int = 5
    k_override: int | None = None

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise DomainError(f"unknown criterion {self.criterion!r}")
        if not 0.0 <= self.delta <= 1.0:
            raise DomainError(f"delta must lie in [0, 1], got {self.delta}")
        if self.warmup_epochs < 1:
            raise DomainError("warmup_epochs must be >= 1")
        if self.k_override is not None and self.k_override < 1:
            raise DomainError("k_override must be positive")

    @property
    def needs_predictions(self) -> bool:
        return self.criterion != "sh"


@dataclass(frozen=True)
class ThresholdSpec:
    criterion: str
    tau: float
    k_used: int | None = None
    source_run: str | None = None
    fallback: bool = False


@dataclass(frozen=True)
class Decision:
    halt: bool
    reason: str
    probability: float | None = None
    tau: float | None = None

    @property
    def action(self) -> str:
        return "halt" if self.halt else "continue"


CONTINUE = Decision(False, "continue")


@dataclass
class RaceSnapshot:
    """Alive runs at one decision epoch: latest errors and (optional) predictions."""

    errors: dict[str, float]
    predictions: dict[str, Prediction | None] = field(default_factory=dict)

    @property
    def run_ids(self) -> list[str]:
        return list(self.errors)

    def current_best(self) -> str:
        if not self.errors:
            raise DomainError("no alive runs")
        # ties go to the lowest run id
        return min(self.errors, key=lambda r: (self.errors[r], r))

    def valid_predictions(self) -> dict[str, Prediction]:
        return {r: p for r, p in self.predictions.items()
                if p is not None and p.valid and r in self.errors}


def normal_upper_tail(z: float) -> float:
    """P(N(0, 1) >= z)."""
    if math.isnan(z):
        raise DomainError("normal tail of NaN")
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def select_k(n: int, delta: float) -> int:
    """Smallest k >= 1 with P(N(0,1) >= (k - n delta) / sqrt(n delta (1 - delta))) <= delta.

    Clamped to ``[1, n]``.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    mean = n * delta
    sd = math.sqrt(n * delta * (1.0 - delta))

    def ok(k):
        return normal_upper_tail((k - mean) / sd) <= delta

    # closed-form guess, then settle the boundary with the exact tail test
    k = max(1, min(n, math.ceil(mean + NormalDist().inv_cdf(1.0 - delta) * sd)))
    while k > 1 and ok(k - 1):
        k -= 1
    while k < n and not ok(k):
        k += 1
    return k


def _k_for(n_valid: int, delta: float, k_override: int | None) -> int:
    if k_override is not None:
        return max(1, min(k_override, n_valid))
    if delta <= 0.0:
        return 1
    if delta >= 1.0:
        return n_valid
    return select_k(n_valid, delta)


def compute_threshold(criterion: str, snapshot: RaceSnapshot, delta: float,
                      k_override: int | None = None) -> ThresholdSpec:
    """Comparison value ``tau`` for one criterion over the alive, valid predictions.

    Criteria b-f fall back to criterion a's value when the predictions they need
    are missing or invalid.
    """
    if not snapshot.errors:
        raise DomainError("no alive runs")
    best = snapshot.current_best()
    base = ThresholdSpec("a", snapshot.errors[best], source_run=best)
    if criterion == "a":
        return base
    if criterion not in PREDICTIVE:
        raise DomainError(f"criterion {criterion!r} has no prediction threshold")
    valid = snapshot.valid_predictions()
    fallback = ThresholdSpec(criterion, base.tau, source_run=best, fallback=True)
    if criterion in "bc":
        pred = valid.get(best)
        if pred is None:
            return fallback
        tau = pred.point_estimate if criterion == "b" else pred.conservative_estimate
        return ThresholdSpec(criterion, tau, source_run=best)
    if not valid:
        return fallback
    if criterion == "d":
        run = min(valid, key=lambda r: (valid[r].point_estimate, r))
        return ThresholdSpec("d", valid[run].point_estimate, source_run=run)
    ranked = sorted(valid, key=lambda r: (valid[r].conservative_estimate, r))
    if criterion == "e":
        return ThresholdSpec("e", valid[ranked[0]].conservative_estimate, source_run=ranked[0])
    k = _k_for(len(ranked), delta, k_override)
    run = ranked[k - 1]
    return ThresholdSpec("f", valid[run].conservative_estimate, k_used=k, source_run=run)


def decide(prediction: Prediction | None, tau: float, delta: float,
           protect_bound: bool = False) -> Decision:
    """Halt iff the probability of finishing below ``tau`` is strictly under ``delta``.

    With ``protect_bound`` (criteria built on conservative estimates) and
    ``delta <= 0.5``, a run whose own conservative estimate is at or below
    ``tau`` continues: its exact coverage of ``tau`` is then at least
    ``1 - delta >= delta``, which the discrete strict count can miss by one
    sample.
    """
    if prediction is None:
        return Decision(False, "no-prediction", tau=tau)
    p = prob_below(prediction, tau)
    if protect_bound and delta <= 0.5 and prediction.conservative_estimate <= tau:
        return Decision(False, "within-bound", p, tau)
    if p < delta:
        return Decision(True, "threshold", p, tau)
    return Decision(False, "threshold", p, tau)


def apply_guards(decisions: Mapping[str, Decision], snapshot: RaceSnapshot, guards_enabled: bool,
                 criterion: str = "a", delta: float = 0.5) -> dict[str, Decision]:
    """Conservative overrides.

    The current best is never halted.  Under criteria b-f, a run whose
    prediction failed screening is judged against criterion a's threshold
    instead.
    """
    out = dict(decisions)
    if not guards_enabled:
        return out
    if criterion in PREDICTIVE:
        tau_a = compute_threshold("a", snapshot, delta).tau
        for run in out:
            pred = snapshot.predictions.get(run)
            if pred is not None and not pred.valid:
                redo = decide(pred, tau_a, delta)
                out[run] = redo if redo.halt else Decision(False, "guard-invalid-prediction",
                                                          redo.probability, tau_a)
    best = snapshot.current_best()
    if best in out and out[best].halt:
        d = out[best]
        out[best] = Decision(False, "guard-current-best", d.probability, d.tau)
    return out


def successive_halving_epochs(horizon_T: int) -> set[int]:
    """Checkpoints ``T // 2**j`` (j >= 1) below the horizon."""
    out, j = set(), 1
    while horizon_T // 2**j >= 1:
        out.add(horizon_T // 2**j)
        j += 1
    return out


def successive_halving(snapshot: RaceSnapshot) -> dict[str, Decision]:
    """Halt the worse half (rounded down) of the alive runs by current error."""
    ranked = sorted(snapshot.errors, key=lambda r: (snapshot.errors[r], r))
    n_halt = len(ranked) // 2
    keep = set(ranked[: len(ranked) - n_halt])
    cut = snapshot.errors[ranked[len(ranked) - n_halt - 1]] if n_halt else None
    return {r: Decision(r not in keep, "successive-halving", tau=cut) for r in snapshot.errors}
