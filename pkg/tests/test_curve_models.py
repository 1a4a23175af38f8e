import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from runrace.curve_models import (
    FAMILY_IDS,
    EnsembleSample,
    eval_ensemble,
    eval_minimized,
    eval_model,
    get_family,
    init_offset,
    init_params,
    make_families,
    y_cap_for,
)
from runrace.errors import DomainError

FAMILIES = make_families()


def test_eleven_families_with_matching_arity():
    assert len(FAMILIES) == 11
    assert tuple(f.id for f in FAMILIES) == FAMILY_IDS
    for fam in FAMILIES:
        assert fam.arity == len(fam.bounds) == len(fam.param_names)
        assert np.all(fam.lower < fam.upper)


def test_pow3_examples():
    pow3 = get_family("pow3")
    assert eval_model(pow3, [1, 1, 1], 1) == 0.0
    assert eval_model(pow3, [0.9, 0.5, 0.5], 4) == pytest.approx(0.65, abs=1e-15)


def test_vapor_pressure_at_zero_params():
    vap = get_family("vap_pressure")
    assert eval_model(vap, [0, 0, 0], 7) == 1.0


def test_minimized_examples():
    pow3 = get_family("pow3")
    vap = get_family("vap_pressure")
    assert eval_minimized(pow3, [1, 1, 1], 1.0, 1) == 1.0
    assert eval_minimized(vap, [0, 0, 0], 2.0, 3) == 1.0
    p = [0.4, 0.3, 0.7]
    assert eval_minimized(pow3, p, 0.0, 9) == -eval_model(pow3, p, 9)


@pytest.mark.parametrize("bad_t", [0, 0.5, -3, math.nan])
def test_epoch_below_one_rejected(bad_t):
    with pytest.raises(DomainError):
        eval_model(get_family("pow3"), [1, 1, 1], bad_t)


def test_params_outside_box_rejected():
    pow3 = get_family("pow3")
    with pytest.raises(DomainError):
        eval_model(pow3, [1, 1, 100.0], 2)
    with pytest.raises(DomainError):
        eval_model(pow3, [1, 1], 2)
    with pytest.raises(DomainError):
        eval_minimized(pow3, [1, 1, 1], -0.1, 2)


def test_unknown_family():
    with pytest.raises(DomainError):
        get_family("gompertz")


def test_ilog2_defined_at_first_epoch():
    ilog2 = get_family("ilog2")
    assert math.isfinite(eval_model(ilog2, [1.0, 1.0], 1))


def test_y_cap_is_ten_times_max_error():
    assert y_cap_for([0.2, 0.5, np.nan, 0.1]) == 5.0
    assert y_cap_for([0.0, 0.0]) == pytest.approx(1e-2)


def _one_hot(k, families=FAMILIES):
    w = np.zeros(len(families))
    w[k] = 1.0
    return w


def _mid_sample(families=FAMILIES, weights=None, sigma=0.1):
    params = tuple((f.lower + f.upper) / 2 for f in families)
    offsets = np.full(len(families), families[0].y_cap / 2)
    if weights is None:
        weights = np.full(len(families), 1.0 / len(families))
    return EnsembleSample(np.asarray(weights, float), params, offsets, sigma, families)


def test_single_atom_equals_minimized():
    for k, fam in enumerate(FAMILIES):
        s = _mid_sample(weights=_one_hot(k))
        assert eval_ensemble(s, 12) == pytest.approx(
            eval_minimized(fam, s.params[k], s.offsets[k], 12), rel=1e-12, abs=1e-12)


def test_two_atom_weighted_mean():
    fams = (get_family("pow3"), get_family("ilog2"))
    # pow3 with a=0 is the constant c; ilog2 with a=0 is the constant c
    s = EnsembleSample(np.array([0.5, 0.5]), (np.array([0.3, 0.0, 1.0]), np.array([0.4, 0.0])),
                       np.array([0.5, 1.0]), 0.1, fams)
    assert eval_ensemble(s, 5) == pytest.approx(0.4)


def test_invalid_sample_rejected():
    s = _mid_sample(weights=np.full(11, 0.15))
    assert not s.is_valid
    with pytest.raises(DomainError):
        eval_ensemble(s, 3)
    with pytest.raises(DomainError):
        eval_ensemble(_mid_sample(sigma=0.0), 3)


def test_init_params_deterministic_and_inside():
    for fam in FAMILIES:
        a = init_params(fam, [0.5], np.random.default_rng(3))
        b = init_params(fam, [0.5], np.random.default_rng(3))
        assert np.array_equal(a, b)
    with pytest.raises(DomainError):
        init_params(FAMILIES[0], [], np.random.default_rng(0))


def test_init_params_inside_box_for_many_seeds():
    for seed in range(1000):
        fam = FAMILIES[seed % len(FAMILIES)]
        assert fam.contains(init_params(fam, [0.3, 0.2], np.random.default_rng(seed)))


def test_pow3_initialisation_on_constant_curve():
    y = np.full(10, 0.5)
    fam = get_family("pow3", y_cap_for(y), 50)
    p = init_params(fam, y, np.random.default_rng(11))
    off = init_offset(fam, p, y)
    assert 0.0 <= eval_minimized(fam, p, off, 1) <= fam.y_cap


# -- properties ----------------------------------------------------------------

family_idx = st.integers(0, len(FAMILY_IDS) - 1)
unit = st.floats(0.0, 1.0)
y_caps = st.sampled_from([1e-2, 0.5, 3.0, 10.0, 80.0])
horizons = st.sampled_from([1, 2, 10, 50, 1000, 10_000])


def _draw_params(fam, us):
    p = fam.lower + np.asarray(us[: fam.arity]) * (fam.upper - fam.lower)
    return np.clip(p, fam.lower, fam.upper)


@settings(max_examples=300, deadline=None)
@given(family_idx, st.lists(unit, min_size=4, max_size=4), y_caps, horizons, st.floats(0, 1))
def test_values_finite_and_within_cap(k, us, y_cap, T, tu):
    fam = make_families(y_cap, T)[k]
    p = _draw_params(fam, us)
    t = 1 + tu * (T - 1)
    v = eval_model(fam, p, t)
    assert math.isfinite(v)
    assert abs(v) <= y_cap * (1 + 1e-9)


@settings(max_examples=200, deadline=None)
@given(family_idx, st.lists(unit, min_size=4, max_size=4), st.integers(1, 10_000))
def test_families_nondecreasing_in_t(k, us, t):
    fam = FAMILIES[k]
    p = _draw_params(fam, us)
    a, b = eval_model(fam, p, t), eval_model(fam, p, t + 1)
    assert b >= a - 1e-9 * max(1.0, abs(a))


@settings(max_examples=200, deadline=None)
@given(family_idx, st.lists(unit, min_size=4, max_size=4), unit, st.integers(1, 10_000))
def test_offset_identity(k, us, u, t):
    fam = FAMILIES[k]
    p = _draw_params(fam, us)
    off = u * fam.y_cap
    assert eval_minimized(fam, p, off, t) + eval_model(fam, p, t) == pytest.approx(off, abs=1e-12)


@st.composite
def samples(draw):
    w = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=11, max_size=11)))
    if w.sum() == 0:
        w[0] = 1.0
    w = w / w.sum()
    params = tuple(_draw_params(f, draw(st.lists(unit, min_size=4, max_size=4))) for f in FAMILIES)
    offsets = np.array(draw(st.lists(st.floats(0.0, 10.0), min_size=11, max_size=11)))
    return EnsembleSample(w, params, offsets, 0.05, FAMILIES)


@settings(max_examples=150, deadline=None)
@given(samples(), st.integers(1, 1000))
def test_ensemble_is_convex_combination(s, t):
    vals = [eval_minimized(f, p, o, t) for f, p, o in zip(FAMILIES, s.params, s.offsets)]
    v = eval_ensemble(s, t)
    tol = 1e-9 * max(1.0, max(map(abs, vals)))
    assert min(vals) - tol <= v <= max(vals) + tol


@settings(max_examples=100, deadline=None)
@given(samples(), family_idx, st.lists(unit, min_size=4, max_size=4), st.integers(1, 500))
def test_zero_weight_family_is_irrelevant(s, k, us, t):
    w = s.weights.copy()
    w[k] = 0.0
    if w.sum() == 0:
        return
    w = w / w.sum()
    base = EnsembleSample(w, s.params, s.offsets, 0.05, FAMILIES)
    params = list(s.params)
    params[k] = _draw_params(FAMILIES[k], us)
    moved = EnsembleSample(w, tuple(params), s.offsets, 0.05, FAMILIES)
    assert eval_ensemble(base, t) == eval_ensemble(moved, t)
