"""Bayesian fit of one learning curve and its prediction at the horizon.

The posterior over the ensemble space uses a uniform prior on the parameter,
offset and noise boxes (uniform on the weight simplex) and an iid Gaussian
likelihood with a shared noise scale.  It is explored by single-chain
random-walk Metropolis, updating one block at a time: a family's parameters
and offset, all weight logits, or the noise scale.  Block proposal scales adapt
during burn-in only.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from numba import njit

from .curve_models import (
    MAX_ARITY,
    EnsembleSample,
    ModelFamily,
    eval_ensemble,
    family_value,
    init_offset,
    init_params,
    make_families,
    y_cap_for,
)
from .errors import DomainError, InsufficientDataError

SIGMA_FLOOR = 1e-4
LOG_2PI = math.log(2 * math.pi)

Reason = Literal["ok", "negative-loss", "low-correlation", "insufficient-data"]


@dataclass
class LearningCurve:
    """Per-epoch validation errors of one run; ``values[i]`` is epoch ``i + 1``.

    NaN marks a flagged-invalid observation.
    """

    run_id: str
    values: np.ndarray
    horizon_T: int
    status: Literal["alive", "halted", "finished"] = "alive"
    halt_epoch: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.horizon_T < 1:
            raise DomainError("horizon_T must be positive")
        if self.values.size > self.horizon_T:
            raise DomainError(f"{self.run_id}: {self.values.size} epochs exceed horizon {self.horizon_T}")
        finite = self.values[np.isfinite(self.values)]
        if np.any(finite < 0):
            raise DomainError(f"{self.run_id}: negative validation error")
        if self.status == "halted":
            if self.halt_epoch is None or self.values.size > self.halt_epoch:
                raise DomainError(f"{self.run_id}: observations after halt epoch")

    @property
    def epochs(self) -> np.ndarray:
        return np.arange(1, self.values.size + 1)

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def append(self, value: float) -> None:
        if self.status != "alive":
            raise DomainError(f"{self.run_id} is {self.status}")
        if self.values.size >= self.horizon_T:
            raise DomainError(f"{self.run_id} already reached the horizon")
        self.values = np.append(self.values, float(value))


@dataclass(frozen=True)
class InferenceConfig:
    chain_length: int = 3000
    burn_in: int = 1000
    thinning: int = 20
    # relative to each box width; a scalar, or {family id: arity + 1 scales (offset last)}
    proposal_scales: float | dict = 0.05
    seed: int = 0
    quantile_delta: float = 0.5
    min_observations: int = 5
    # least-squares start per family; False gives the plain uniform draw
    warm_start: bool = True
    restarts: int = 2
    warm_start_iter: int = 20
    # keep every component's error non-negative through the horizon
    nonnegative: bool = True

    def __post_init__(self):
        if min(self.chain_length, self.burn_in + 1, self.thinning) < 1:
            raise DomainError("chain_length and thinning must be positive, burn_in non-negative")
        if self.chain_length <= self.burn_in:
            raise DomainError("chain_length must exceed burn_in")
        if not 0 < self.quantile_delta <= 1:
            raise DomainError("quantile_delta must lie in (0, 1]")
        if self.min_observations < 1:
            raise DomainError("min_observations must be >= 1")

    @property
    def n_samples(self) -> int:
        return (self.chain_length - self.burn_in) // self.thinning


def derive_seed(master_seed: int, run_id: str, epoch: int) -> int:
    """Per-(run, epoch) seed, independent of scheduling order."""
    h = int.from_bytes(hashlib.sha256(str(run_id).encode()).digest()[:8], "little")
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), h, int(epoch)])
    return int(ss.generate_state(2, np.uint64)[0])


# ---------------------------------------------------------------------------
# likelihood and prior


def _obs(curve) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(curve, LearningCurve):
        y = curve.values
    else:
        y = np.asarray(curve, dtype=float)
    ok = np.isfinite(y)
    return np.arange(1, y.size + 1)[ok].astype(float), y[ok]


def log_likelihood(sample: EnsembleSample, curve) -> float:
    """Sum of Gaussian log-densities of the valid observations around the ensemble."""
    ts, y = _obs(curve)
    if y.size == 0:
        raise InsufficientDataError("no valid observation")
    sigma = sample.noise_sigma
    if not sigma > 0 or not math.isfinite(sigma):
        return -math.inf
    mu = np.array([eval_ensemble(sample, t) for t in ts])
    r = y - mu
    return float(-0.5 * y.size * LOG_2PI - y.size * math.log(sigma) - (r @ r) / (2 * sigma**2))


def log_prior(sample: EnsembleSample) -> float:
    """0 inside the support (normalization dropped), ``-inf`` outside."""
    if sample.problems():
        return -math.inf
    y_cap = max(f.y_cap for f in sample.families)
    if not SIGMA_FLOOR < sample.noise_sigma <= y_cap:
        return -math.inf
    return 0.0


# ---------------------------------------------------------------------------
# per-family warm start


@njit(cache=True)
def _sq_cost(fid, x, arity, ts, y):
    p = x[:MAX_ARITY]
    c = 0.0
    for i in range(y.size):
        r = x[MAX_ARITY] - family_value(fid, p, ts[i]) - y[i]
        c += r * r
    return c


@njit(cache=True)
def _lm_fit(fid, arity, lo, hi, x0, ts, y, max_iter):
    """Box-projected Levenberg-Marquardt on ``offset - f(t) - y``.

    ``x`` holds the padded parameters followed by the offset.
    """
    n = arity + 1
    m = y.size
    idx = np.empty(n, dtype=np.int64)
    for j in range(arity):
        idx[j] = j
    idx[arity] = MAX_ARITY
    x = x0.copy()
    cost = _sq_cost(fid, x, arity, ts, y)
    if not math.isfinite(cost):
        return x, cost
    lam = 1e-2
    r = np.empty(m)
    J = np.empty((m, n))
    xp = np.empty_like(x)
    for _ in range(max_iter):
        p = x[:MAX_ARITY]
        for i in range(m):
            r[i] = x[MAX_ARITY] - family_value(fid, p, ts[i]) - y[i]
        for jj in range(n):
            j = idx[jj]
            if j == MAX_ARITY:
                for i in range(m):
                    J[i, jj] = 1.0
                continue
            h = 1e-7 * (hi[j] - lo[j]) + 1e-12
            xp[:] = x
            if x[j] + h > hi[j]:
                h = -h
            xp[j] = x[j] + h
            pp = xp[:MAX_ARITY]
            for i in range(m):
                J[i, jj] = (xp[MAX_ARITY] - family_value(fid, pp, ts[i]) - y[i] - r[i]) / h
        A = J.T @ J
        g = J.T @ r
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(g))):
            break
        improved = False
        for _try in range(8):
            M = A.copy()
            for jj in range(n):
                M[jj, jj] += lam * (A[jj, jj] + 1e-12)
            step = np.linalg.solve(M, -g)
            xp[:] = x
            for jj in range(n):
                j = idx[jj]
                xp[j] = min(max(x[j] + step[jj], lo[j]), hi[j])
            c = _sq_cost(fid, xp, arity, ts, y)
            if math.isfinite(c) and c < cost:
                rel = (cost - c) / (cost + 1e-300)
                x[:] = xp
                cost = c
                lam = max(lam / 3.0, 1e-12)
                improved = True
                break
            lam *= 4.0
        if not improved or rel < 1e-6:
            break
    return x, cost


@njit(cache=True)
def _warm_start_all(fids, arity, lo, hi, y_cap, ts, y, draws, max_iter):
    """Best-of-restarts least-squares start for every family.

    ``draws[r, k, j]`` are uniforms in [0, 1) mapped onto family ``k``'s box.
    """
    R, K = draws.shape[0], draws.shape[1]
    m = y.size
    ymean = y.mean()
    params = np.zeros((K, MAX_ARITY))
    offsets = np.zeros(K)
    blo = np.zeros(MAX_ARITY + 1)
    bhi = np.zeros(MAX_ARITY + 1)
    x0 = np.zeros(MAX_ARITY + 1)
    for k in range(K):
        blo[:] = 0.0
        bhi[:] = 0.0
        blo[:MAX_ARITY] = lo[k]
        bhi[:MAX_ARITY] = hi[k]
        bhi[MAX_ARITY] = y_cap
        best_cost = math.inf
        for r in range(R):
            x0[:] = 0.0
            for j in range(arity[k]):
                x0[j] = lo[k, j] + draws[r, k, j] * (hi[k, j] - lo[k, j])
            fmean = 0.0
            for i in range(m):
                fmean += family_value(fids[k], x0[:MAX_ARITY], ts[i])
            off = ymean + fmean / m
            if not math.isfinite(off):
                off = 0.0
            x0[MAX_ARITY] = min(max(off, 0.0), y_cap)
            x, cost = _lm_fit(fids[k], arity[k], blo, bhi, x0, ts, y, max_iter)
            if r == 0 or cost < best_cost:
                best_cost = cost
                params[k, :] = x[:MAX_ARITY]
                offsets[k] = x[MAX_ARITY]
    return params, offsets


def warm_start(family: ModelFamily, curve, rng: np.random.Generator,
               restarts: int = 2, max_iter: int = 20) -> tuple[np.ndarray, float]:
    """Least-squares fit of one minimized family, started from uniform draws.

    Returns ``(params, offset)`` inside the box; the best of ``restarts`` starts.
    """
    ts, y = _obs(curve)
    if y.size == 0:
        raise InsufficientDataError("no valid observation")
    lo = np.zeros((1, MAX_ARITY))
    hi = np.zeros((1, MAX_ARITY))
    lo[0, : family.arity] = family.lower
    hi[0, : family.arity] = family.upper
    draws = rng.random((max(restarts, 1), 1, MAX_ARITY))
    params, offsets = _warm_start_all(
        np.array([family.index]), np.array([family.arity]), lo, hi, family.y_cap,
        ts, y, draws, max_iter)
    return params[0, : family.arity].copy(), float(offsets[0])


# ---------------------------------------------------------------------------
# sampler


@njit(cache=True)
def _loglik(mu, y, sigma):
    ss = 0.0
    for i in range(y.size):
        r = y[i] - mu[i]
        ss += r * r
    return -y.size * math.log(sigma) - ss / (2.0 * sigma * sigma)


@njit(cache=True)
def _run_chain(fids, arity, lo, hi, ts, y, horizon, y_cap, params, offsets, z, sigma,
               scale, z_scale, sigma_scale, normals, logu, burn_in, thin, floor):
    K = fids.size
    m = y.size
    n_blocks = K + 2
    N = logu.size
    S = (N - burn_in) // thin

    # per-family minimized curves and ensemble mean at the observed epochs
    g = np.empty((K, m))
    for k in range(K):
        for i in range(m):
            g[k, i] = offsets[k] - family_value(fids[k], params[k], ts[i])
    ez = np.exp(z)
    w = ez / ez.sum()
    mu = np.zeros(m)
    for k in range(K):
        mu += w[k] * g[k]
    ll = _loglik(mu, y, sigma)
    logjac = np.log(w).sum()

    out_params = np.empty((S, K, params.shape[1]))
    out_offsets = np.empty((S, K))
    out_weights = np.empty((S, K))
    out_sigma = np.empty(S)
    out_pred = np.empty(S)
    fitted = np.zeros(m)

    block_scale = np.ones(n_blocks)
    tries = np.zeros(n_blocks)
    accepts = np.zeros(n_blocks)
    prop_p = np.empty(params.shape[1])
    gk = np.empty(m)
    mu_new = np.empty(m)
    s = 0

    for it in range(N):
        b = it % n_blocks
        accepted = False
        if b < K:
            inside = True
            for j in range(params.shape[1]):
                if j < arity[b]:
                    v = params[b, j] + block_scale[b] * scale[b, j] * normals[it, j]
                    if v < lo[b, j] or v > hi[b, j]:
                        inside = False
                    prop_p[j] = v
                else:
                    prop_p[j] = 0.0
            off = offsets[b] + block_scale[b] * scale[b, MAX_ARITY] * normals[it, MAX_ARITY]
            if off < 0.0 or off > y_cap:
                inside = False
            elif inside and floor and off - family_value(fids[b], prop_p, horizon) < 0.0:
                inside = False
            if inside:
                ok = True
                for i in range(m):
                    gk[i] = off - family_value(fids[b], prop_p, ts[i])
                    if not math.isfinite(gk[i]):
                        ok = False
                    mu_new[i] = mu[i] + w[b] * (gk[i] - g[b, i])
                if ok:
                    ll_new = _loglik(mu_new, y, sigma)
                    if logu[it] < ll_new - ll:
                        accepted = True
                        params[b, :] = prop_p
                        offsets[b] = off
                        g[b, :] = gk
                        mu[:] = mu_new
                        ll = ll_new
        elif b == K:
            z_new = z.copy()
            for k in range(K - 1):
                z_new[k] = z[k] + block_scale[b] * z_scale * normals[it, k]
            ez = np.exp(z_new - z_new.max())
            w_new = ez / ez.sum()
            if np.all(w_new > 0.0):
                mu_new[:] = 0.0
                for k in range(K):
                    mu_new += w_new[k] * g[k]
                ll_new = _loglik(mu_new, y, sigma)
                logjac_new = np.log(w_new).sum()
                if logu[it] < ll_new + logjac_new - ll - logjac:
                    accepted = True
                    z[:] = z_new
                    w[:] = w_new
                    mu[:] = mu_new
                    ll = ll_new
                    logjac = logjac_new
        else:
            sig_new = sigma + block_scale[b] * sigma_scale * normals[it, 0]
            if sig_new > 1e-4 and sig_new <= y_cap:
                ll_new = _loglik(mu, y, sig_new)
                if logu[it] < ll_new - ll:
                    accepted = True
                    sigma = sig_new
                    ll = ll_new

        if it < burn_in:
            tries[b] += 1
            if accepted:
                accepts[b] += 1
            if tries[b] >= 20:
                rate = accepts[b] / tries[b]
                block_scale[b] *= math.exp(2.0 * (rate - 0.3))
                tries[b] = 0
                accepts[b] = 0
        elif (it - burn_in + 1) % thin == 0 and s < S:
            out_params[s] = params
            out_offsets[s] = offsets
            out_weights[s] = w
            out_sigma[s] = sigma
            pred = 0.0
            for k in range(K):
                pred += w[k] * (offsets[k] - family_value(fids[k], params[k], horizon))
            out_pred[s] = pred
            fitted += mu
            s += 1

    if S > 0:
        fitted /= S
    return out_params, out_offsets, out_weights, out_sigma, out_pred, fitted


@njit(cache=True)
def _ensemble_at(fids, params, offsets, weights, t):
    S, K = weights.shape
    out = np.empty(S)
    for s in range(S):
        v = 0.0
        for k in range(K):
            if weights[s, k] != 0.0:
                v += weights[s, k] * (offsets[s, k] - family_value(fids[k], params[s, k], t))
        out[s] = v
    return out


class Posterior(Sequence):
    """Kept MCMC draws; a sequence of :class:`EnsembleSample` backed by arrays."""

    def __init__(self, families, params, offsets, weights, sigma, fitted_mean,
                 predictive_T=None, horizon_T=None, quantile_delta=0.5):
        self.families = tuple(families)
        self.params = params
        self.offsets = offsets
        self.weights = weights
        self.sigma = sigma
        self.fitted_mean = fitted_mean
        self.predictive_T = predictive_T
        self.horizon_T = horizon_T
        self.quantile_delta = quantile_delta

    def __len__(self):
        return self.sigma.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return EnsembleSample(
            weights=self.weights[i].copy(),
            params=tuple(self.params[i, k, : f.arity].copy() for k, f in enumerate(self.families)),
            offsets=self.offsets[i].copy(),
            noise_sigma=float(self.sigma[i]),
            families=self.families,
        )

    def ensemble_at(self, t) -> np.ndarray:
        if self.predictive_T is not None and t == self.horizon_T:
            return self.predictive_T.copy()
        fids = np.array([f.index for f in self.families], dtype=np.int64)
        return _ensemble_at(fids, self.params, self.offsets, self.weights, float(t))


def _scale_matrix(families, proposal_scales) -> np.ndarray:
    K = len(families)
    scale = np.zeros((K, MAX_ARITY + 1))
    for k, fam in enumerate(families):
        if isinstance(proposal_scales, dict) and fam.id in proposal_scales:
            rel = np.asarray(proposal_scales[fam.id], dtype=float)
            if rel.shape != (fam.arity + 1,) or np.any(rel <= 0):
                raise DomainError(f"{fam.id}: need {fam.arity + 1} positive proposal scales")
        else:
            base = 0.05 if isinstance(proposal_scales, dict) else float(proposal_scales)
            if not base > 0:
                raise DomainError("proposal scales must be positive")
            rel = np.full(fam.arity + 1, base)
        widths = np.append(fam.upper - fam.lower, fam.y_cap)
        scale[k, : fam.arity] = rel[:-1] * widths[:-1]
        scale[k, MAX_ARITY] = rel[-1] * widths[-1]
    return scale


def mh_sample(curve, config: InferenceConfig = InferenceConfig(), horizon_T: int | None = None) -> Posterior:
    """Run the sampler on one curve; returns the thinned post-burn-in draws.

    ``curve`` is a :class:`LearningCurve` or a plain sequence of errors (epoch 1
    first).  Deterministic in ``(curve, config)``.
    """
    if isinstance(curve, LearningCurve):
        horizon_T = horizon_T or curve.horizon_T
        raw = curve.values
    else:
        raw = np.asarray(curve, dtype=float)
    ts, y = _obs(raw)
    if y.size < config.min_observations:
        raise InsufficientDataError(
            f"{y.size} valid observations, need at least {config.min_observations}")
    if horizon_T is None:
        horizon_T = int(raw.size)
    y_cap = y_cap_for(y)
    families = make_families(y_cap, max(int(horizon_T), int(raw.size)))
    K = len(families)
    rng = np.random.Generator(np.random.PCG64(config.seed & (2**64 - 1)))

    lo = np.zeros((K, MAX_ARITY))
    hi = np.zeros((K, MAX_ARITY))
    for k, fam in enumerate(families):
        lo[k, : fam.arity] = fam.lower
        hi[k, : fam.arity] = fam.upper
    fids = np.array([f.index for f in families], dtype=np.int64)
    arity = np.array([f.arity for f in families], dtype=np.int64)

    if config.warm_start:
        draws = rng.random((max(config.restarts, 1), K, MAX_ARITY))
        params, offsets = _warm_start_all(fids, arity, lo, hi, y_cap, ts, y, draws, config.warm_start_iter)
    else:
        params = np.zeros((K, MAX_ARITY))
        offsets = np.zeros(K)
        for k, fam in enumerate(families):
            p = init_params(fam, y, rng)
            params[k, : fam.arity] = p
            offsets[k] = init_offset(fam, p, raw)
    if config.nonnegative:
        # lift offsets so each component ends non-negative at the horizon
        for k in range(K):
            end = family_value(fids[k], params[k], float(horizon_T))
            offsets[k] = min(max(offsets[k], end), y_cap)
    w0 = np.full((1, K), 1.0 / K)
    mu0 = np.array([_ensemble_at(fids, params[None], offsets[None], w0, t)[0] for t in ts])
    rms = float(np.sqrt(np.mean((y - mu0) ** 2)))
    sigma = float(np.clip(rms, 2 * SIGMA_FLOOR, y_cap))

    N = config.chain_length
    normals = rng.standard_normal((N, max(MAX_ARITY + 1, K - 1)))
    logu = np.log(rng.random(N))

    out = _run_chain(
        fids, arity, lo, hi, ts, y, float(horizon_T), y_cap, params, offsets,
        np.zeros(K), sigma, _scale_matrix(families, config.proposal_scales),
        0.5, 0.1 * max(y.std(), 1e-3), normals, logu, config.burn_in, config.thinning,
        config.nonnegative,
    )
    p, o, w, s, pred, fitted = out
    return Posterior(families, p, o, w, s, fitted, pred, int(horizon_T), config.quantile_delta)


# ---------------------------------------------------------------------------
# predictions


def nearest_rank_quantile(values, q: float) -> float:
    """Sample value at rank ``ceil(q * m)`` (1-based, clamped to ``[1, m]``)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise DomainError("quantile of an empty sample")
    rank = math.ceil(round(q * v.size, 9))
    rank = min(max(rank, 1), v.size)
    return float(v[rank - 1])


@dataclass(frozen=True, eq=False)
class Prediction:
    """Distribution of a run's error at the horizon."""

    samples: np.ndarray
    point_estimate: float
    conservative_estimate: float
    delta: float
    reason: Reason = "ok"

    @property
    def valid(self) -> bool:
        return self.reason == "ok"

    @classmethod
    def from_samples(cls, samples, delta: float, reason: Reason = "ok") -> "Prediction":
        s = np.asarray(samples, dtype=float).ravel()
        if s.size == 0:
            raise DomainError("a prediction needs at least one sample")
        return cls(s, float(s.mean()), nearest_rank_quantile(s, 1.0 - delta), float(delta), reason)

    def flagged(self, reason: Reason) -> "Prediction":
        return replace(self, reason=reason)

    def __eq__(self, other):
        if not isinstance(other, Prediction):
            return NotImplemented
        return (np.array_equal(self.samples, other.samples)
                and (self.point_estimate, self.conservative_estimate, self.delta, self.reason)
                == (other.point_estimate, other.conservative_estimate, other.delta, other.reason))


def predict_at(samples: Sequence[EnsembleSample], horizon: int, delta: float | None = None) -> Prediction:
    """Noise-free predictive distribution of the ensemble value at ``horizon``."""
    if len(samples) == 0:
        raise DomainError("no posterior samples")
    if isinstance(samples, Posterior):
        values = samples.ensemble_at(horizon)
        delta = samples.quantile_delta if delta is None else delta
    else:
        values = np.array([eval_ensemble(s, horizon) for s in samples])
    return Prediction.from_samples(values, 0.5 if delta is None else delta)


def prob_below(prediction: Prediction, tau: float) -> float:
    """Fraction of predictive samples strictly below ``tau``."""
    s = prediction.samples
    return float(np.count_nonzero(s < tau)) / s.size


def check_validity(prediction: Prediction, curve, fitted) -> Reason:
    """Screening used by the guard layer; returns a reason code (``"ok"`` if valid)."""
    _, y = _obs(curve)
    f = np.asarray(fitted, dtype=float)
    if y.size < 3:
        return "insufficient-data"
    if f.shape != y.shape:
        raise DomainError(f"{f.size} fitted values for {y.size} observations")
    if prediction.point_estimate < 0:
        return "negative-loss"
    if np.ptp(y) == 0 or np.ptp(f) == 0:
        return "low-correlation"
    r = float(np.corrcoef(f, y)[0, 1])
    if not r >= 0.5:
        return "low-correlation"
    return "ok"


@dataclass(frozen=True, eq=False)
class Fit:
    """Cached product of one refit: predictive draws at the horizon and the fitted mean."""

    run_id: str
    observed: np.ndarray
    predictive: np.ndarray
    fitted_mean: np.ndarray
    posterior: Posterior | None = field(default=None, repr=False)

    def prediction(self, delta: float, screen: bool = False) -> Prediction:
        pred = Prediction.from_samples(self.predictive, delta)
        if screen:
            reason = check_validity(pred, self.observed, self.fitted_mean)
            if reason != "ok":
                pred = pred.flagged(reason)
        return pred


def fit_curve(values, horizon_T: int, config: InferenceConfig = InferenceConfig(),
              run_id: str = "run", keep_posterior: bool = False) -> Fit:
    values = np.asarray(values, dtype=float)
    post = mh_sample(values, config, horizon_T)
    return Fit(run_id, values.copy(), post.predictive_T, post.fitted_mean,
               post if keep_posterior else None)
