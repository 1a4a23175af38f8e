"""Epoch-synchronous run races: replay, accounting, FAIL detection and corpora."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .criteria import (
    CONSERVATIVE,
    Decision,
    HaltPolicy,
    RaceSnapshot,
    ThresholdSpec,
    apply_guards,
    compute_threshold,
    decide,
    successive_halving,
    successive_halving_epochs,
)
from .curve_models import FAMILY_IDS, curve_values, get_family, init_params
from .errors import DomainError, NotFoundError, ProtocolError
from .inference import Fit, InferenceConfig, LearningCurve, derive_seed, fit_curve


@dataclass(frozen=True)
class RaceConfig:
    horizon_T: int
    policy: HaltPolicy = HaltPolicy()
    inference: InferenceConfig = InferenceConfig()
    master_seed: int = 0

    def __post_init__(self):
        if self.horizon_T < self.policy.warmup_epochs:
            raise DomainError("horizon_T must be at least the warm-up length")
        if self.policy.needs_predictions and self.policy.warmup_epochs < self.inference.min_observations:
            raise DomainError("warm-up shorter than the sampler's minimum number of observations")

    def with_policy(self, **changes) -> "RaceConfig":
        return replace(self, policy=replace(self.policy, **changes))


class CurveFitter:
    """Memoised per-(run, observed prefix) refits.

    A fit depends only on the prefix, the inference settings and a seed derived
    from ``(master_seed, run_id, epoch)``, so caching never changes results and
    can be shared by every policy replayed over the same traces.
    """

    def __init__(self, inference: InferenceConfig, master_seed: int, horizon_T: int):
        self.inference = inference
        self.master_seed = master_seed
        self.horizon_T = horizon_T
        self._cache: dict[tuple[str, bytes], Fit] = {}
        self.n_fits = 0

    def compatible(self, config: RaceConfig) -> bool:
        return (config.inference == self.inference and config.master_seed == self.master_seed
                and config.horizon_T == self.horizon_T)

    def fit(self, run_id: str, values) -> Fit:
        values = np.ascontiguousarray(values, dtype=float)
        key = (run_id, values.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            cfg = replace(self.inference, seed=derive_seed(self.master_seed, run_id, values.size))
            hit = fit_curve(values, self.horizon_T, cfg, run_id)
            self._cache[key] = hit
            self.n_fits += 1
        return hit

    def __len__(self):
        return len(self._cache)


@dataclass
class RaceState:
    curves: dict[str, LearningCurve]
    epoch: int = 0
    thresholds_history: list[ThresholdSpec | None] = field(default_factory=list)
    decisions_history: list[dict[str, Decision]] = field(default_factory=list)

    @classmethod
    def new(cls, run_ids: Iterable[str], horizon_T: int) -> "RaceState":
        curves = {}
        for r in run_ids:
            r = str(r)
            if r in curves:
                raise DomainError(f"duplicate run id {r!r}")
            curves[r] = LearningCurve(r, np.empty(0), horizon_T)
        if not curves:
            raise DomainError("a race needs at least one run")
        return cls(curves)

    def alive(self) -> list[str]:
        return [r for r, c in self.curves.items() if c.status == "alive"]

    def halt_epochs(self) -> dict[str, int | None]:
        return {r: c.halt_epoch for r, c in self.curves.items()}


def step(state: RaceState, observations: Mapping[str, float], config: RaceConfig,
         fitter: CurveFitter | None = None) -> tuple[dict[str, Decision], RaceState]:
    """Ingest one epoch of observations and decide for every alive run."""
    T = config.horizon_T
    if state.epoch >= T:
        raise ProtocolError("race already reached the horizon")
    t = state.epoch + 1
    alive = state.alive()
    for r in observations:
        if r not in state.curves:
            raise NotFoundError(f"unknown run {r!r}")
        if r not in alive:
            raise ProtocolError(f"observation for {state.curves[r].status} run {r!r}")
    missing = [r for r in alive if r not in observations]
    if missing:
        raise ProtocolError(f"missing observations for {missing}")

    decisions: dict[str, Decision] = {}
    for r in alive:
        v = float(observations[r])
        state.curves[r].append(v)
        if not math.isfinite(v):
            decisions[r] = Decision(True, "data-error")
    live = [r for r in alive if r not in decisions]
    policy = config.policy
    threshold = None

    if not live:
        pass
    elif t >= T:
        decisions.update({r: Decision(False, "finished") for r in live})
    elif t < policy.warmup_epochs:
        decisions.update({r: Decision(False, "warmup") for r in live})
    elif policy.delta <= 0.0:
        decisions.update({r: Decision(False, "delta-zero") for r in live})
    elif policy.criterion == "sh":
        snap = RaceSnapshot({r: state.curves[r].values[-1] for r in live})
        if t in successive_halving_epochs(T):
            decisions.update(successive_halving(snap))
        else:
            decisions.update({r: Decision(False, "not-checkpoint") for r in live})
    else:
        if fitter is None:
            fitter = CurveFitter(config.inference, config.master_seed, T)
        elif not fitter.compatible(config):
            raise DomainError("fitter built for different inference settings")
        preds = {r: fitter.fit(r, state.curves[r].values).prediction(
                     policy.delta, screen=policy.guards_enabled) for r in live}
        snap = RaceSnapshot({r: float(state.curves[r].values[-1]) for r in live}, preds)
        threshold = compute_threshold(policy.criterion, snap, policy.delta, policy.k_override)
        protect = policy.criterion in CONSERVATIVE
        raw = {r: decide(preds[r], threshold.tau, policy.delta, protect) for r in live}
        decisions.update(apply_guards(raw, snap, policy.guards_enabled, policy.criterion, policy.delta))

    for r, d in decisions.items():
        c = state.curves[r]
        if d.halt:
            c.status, c.halt_epoch = "halted", t
        elif t >= T:
            c.status = "finished"
    state.epoch = t
    state.thresholds_history.append(threshold)
    state.decisions_history.append(decisions)
    return decisions, state


@dataclass(frozen=True)
class FailRecord:
    best_run_id: str
    halt_epoch: int
    best_final_error: float
    surviving_best_final_error: float | None

    def __str__(self):
        return format_fail(self)


def _num(x: float) -> str:
    return format(x, ".4g")


def format_fail(fail: FailRecord) -> str:
    if fail.surviving_best_final_error is None:
        return f"FAIL by {_num(fail.best_final_error)}"
    return f"FAIL by {_num(fail.best_final_error)} → {_num(fail.surviving_best_final_error)}"


def format_savings(savings: float) -> str:
    """Savings as the tables print them, e.g. 0.721 -> '−72.1%'."""
    pct = round(savings * 100, 1)
    if pct == 0:
        return "0.0%"
    return f"−{pct:.1f}%" if pct > 0 else f"+{-pct:.1f}%"


@dataclass(frozen=True)
class HaltEvent:
    epoch: int
    run_id: str
    reason: str
    probability: float | None = None
    tau: float | None = None


@dataclass(frozen=True)
class RaceReport:
    criterion: str
    delta: float
    guards_enabled: bool
    horizon_T: int
    n_runs: int
    epochs_executed: int
    epochs_budgeted: int
    fail: FailRecord | None
    outcomes: dict[str, int | None]
    thresholds: tuple[tuple[int, ThresholdSpec], ...] = ()
    halts: tuple[HaltEvent, ...] = ()
    warmup_epochs: int = 5
    master_seed: int = 0

    @property
    def savings(self) -> float:
        return 1.0 - self.epochs_executed / self.epochs_budgeted

    @property
    def epochs_saved(self) -> int:
        return self.epochs_budgeted - self.epochs_executed

    @property
    def k_values(self) -> list[tuple[int, int]]:
        return [(t, s.k_used) for t, s in self.thresholds if s.k_used is not None]

    def cell(self) -> str:
        if self.fail is None:
            return format_savings(self.savings)
        return f"{format_savings(self.savings)} {format_fail(self.fail)}"


def _check_traces(traces: Mapping[str, Sequence[float]], horizon_T: int) -> dict[str, np.ndarray]:
    if not traces:
        raise DomainError("no traces")
    out = {}
    for r, v in traces.items():
        a = np.asarray(v, dtype=float).ravel()
        if a.size != horizon_T:
            raise DomainError(f"trace {r!r} has {a.size} epochs, expected {horizon_T}")
        out[str(r)] = a
    return out


def detect_fail(report: RaceReport, traces: Mapping[str, Sequence[float]]) -> FailRecord | None:
    """FAIL iff every run reaching the minimal final error was halted."""
    finals = {r: float(np.asarray(v, dtype=float)[-1]) for r, v in traces.items()}
    finals = {r: v for r, v in finals.items() if math.isfinite(v)}  # failed measurements rank nowhere
    if not finals:
        return None
    best = min(finals.values())
    best_runs = sorted(r for r, v in finals.items() if v == best)
    if any(report.outcomes.get(r) is None for r in best_runs):
        return None
    survivors = [finals[r] for r, h in report.outcomes.items() if h is None and r in finals]
    first = min(best_runs, key=lambda r: (report.outcomes[r], r))
    return FailRecord(first, report.outcomes[first], best, min(survivors) if survivors else None)


def run_race(traces: Mapping[str, Sequence[float]], config: RaceConfig,
             fitter: CurveFitter | None = None) -> RaceReport:
    """Replay complete traces epoch by epoch under ``config``."""
    T = config.horizon_T
    traces = _check_traces(traces, T)
    if fitter is None and config.policy.needs_predictions:
        fitter = CurveFitter(config.inference, config.master_seed, T)
    state = RaceState.new(traces, T)
    halts = []
    thresholds = []
    while state.epoch < T and state.alive():
        t = state.epoch
        decisions, _ = step(state, {r: traces[r][t] for r in state.alive()}, config, fitter)
        for r, d in decisions.items():
            if d.halt:
                halts.append(HaltEvent(t + 1, r, d.reason, d.probability, d.tau))
        if state.thresholds_history[-1] is not None:
            thresholds.append((t + 1, state.thresholds_history[-1]))
    outcomes = state.halt_epochs()
    executed = sum(T if h is None else min(h, T) for h in outcomes.values())
    report = RaceReport(
        criterion=config.policy.criterion,
        delta=config.policy.delta,
        guards_enabled=config.policy.guards_enabled,
        horizon_T=T,
        n_runs=len(traces),
        epochs_executed=executed,
        epochs_budgeted=len(traces) * T,
        fail=None,
        outcomes=outcomes,
        thresholds=tuple(thresholds),
        halts=tuple(halts),
        warmup_epochs=config.policy.warmup_epochs,
        master_seed=config.master_seed,
    )
    return replace(report, fail=detect_fail(report, traces))


@dataclass
class SweepResult:
    reports: dict[tuple[str, float], RaceReport]

    def table(self) -> dict[str, dict[float, str]]:
        out: dict[str, dict[float, str]] = {}
        for (crit, delta), rep in self.reports.items():
            out.setdefault(crit, {})[delta] = rep.cell()
        return out

    def series(self) -> dict[str, list[dict]]:
        """Plot-ready savings / FAIL per criterion, ordered by delta."""
        out: dict[str, list[dict]] = {}
        for (crit, delta), rep in sorted(self.reports.items()):
            out.setdefault(crit, []).append(
                {"delta": delta, "savings": rep.savings, "fail": rep.fail is not None})
        return out


def sweep(traces: Mapping[str, Sequence[float]], criteria: Sequence[str], deltas: Sequence[float],
          config: RaceConfig, fitter: CurveFitter | None = None) -> SweepResult:
    """One race per (criterion, delta) cell over the same traces.

    Cells share the memoised fits; each report is identical to a standalone
    :func:`run_race` with that cell's policy.
    """
    if fitter is None:
        fitter = CurveFitter(config.inference, config.master_seed, config.horizon_T)
    reports = {}
    for crit in criteria:
        for delta in deltas:
            cfg = config.with_policy(criterion=crit, delta=float(delta))
            reports[(crit, float(delta))] = run_race(traces, cfg, fitter)
    return SweepResult(reports)


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass
class SyntheticCorpus:
    traces: dict[str, np.ndarray]
    clean: dict[str, np.ndarray]
    asymptotes: dict[str, float]
    families: dict[str, str]
    params: dict[str, np.ndarray]
    horizon_T: int
    seed: int

    @property
    def best_run(self) -> str:
        return min(self.asymptotes, key=lambda r: (self.asymptotes[r], r))


def gen_synthetic(n_runs: int, horizon_T: int, families: Sequence[str] | None = None,
                  noise_sigma: float = 0.02, seed: int = 0, asymptote_gap: float | None = 0.05,
                  amplitude: tuple[float, float] = (0.1, 1.0),
                  base: tuple[float, float] = (0.05, 0.3)) -> SyntheticCorpus:
    """Seeded corpus of noisy decreasing error curves.

    Each run picks a family uniformly from ``families`` and parameters uniformly
    in its box, and uses the rescaled minimized curve
    ``asymptote + amplitude * (f(T) - f(t)) / (f(T) - f(1))``, so its value at
    ``T`` is exactly the asymptote.  Sorted asymptotes are at least
    ``asymptote_gap`` apart (``None`` draws them independently).  Noisy values
    are clipped at 0.
    """
    if n_runs < 1 or horizon_T < 1:
        raise DomainError("need n_runs >= 1 and horizon_T >= 1")
    families = tuple(families or FAMILY_IDS)
    rng = np.random.default_rng(seed)
    if asymptote_gap is not None:
        steps = asymptote_gap + rng.exponential(asymptote_gap / 2, n_runs - 1)
        levels = rng.uniform(*base) + np.concatenate([[0.0], np.cumsum(steps)])
        levels = rng.permutation(levels)
    else:
        levels = rng.uniform(base[0], base[1] + 1.0, n_runs)
    ts = np.arange(1, horizon_T + 1, dtype=float)
    width = len(str(n_runs - 1))
    out = SyntheticCorpus({}, {}, {}, {}, {}, horizon_T, seed)
    for i in range(n_runs):
        rid = f"run-{i:0{width}d}"
        name = families[rng.integers(len(families))]
        fam = get_family(name, 10.0, max(horizon_T, 2))
        for _ in range(1000):
            p = init_params(fam, ts, rng)
            f = curve_values(fam, p, ts)
            span = f[-1] - f[0]
            if np.all(np.isfinite(f)) and (span > 1e-6 or horizon_T == 1):
                break
        else:
            raise DomainError(f"could not draw a usable {name} curve")
        amp = rng.uniform(*amplitude)
        clean = levels[i] + amp * (f[-1] - f) / span if horizon_T > 1 else np.full(1, levels[i])
        noisy = clean + rng.normal(0.0, noise_sigma, horizon_T) if noise_sigma > 0 else clean.copy()
        out.traces[rid] = np.maximum(noisy, 0.0)
        out.clean[rid] = clean
        out.asymptotes[rid] = float(levels[i])
        out.families[rid] = name
        out.params[rid] = p
    return out
