import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from rssvar.fading import (
    DEFAULT_K_GRID,
    RAYLEIGH_VAR_DB2,
    LinearVarModel,
    RiceanSpec,
    expected_log_gap,
    expected_var_from_etap,
    expected_var_surface,
    fit_linear_var_model,
    k_factor,
    var_rdb_of_k,
)

# Var[R_dB] by quadrature, frozen after agreeing with 10^7-draw Monte Carlo runs.
FROZEN_VAR = {-math.inf: 31.025, -2.0: 28.513, 0.0: 25.95, 10.0: 3.994, 20.0: 0.379}


def _rice_var_direct(v_bar: complex, sigma2: float, n: int, seed: int) -> float:
    """Sample variance of 20 log10 |v_bar + CN(0, sigma2)| by direct simulation."""
    rng = np.random.default_rng(seed)
    noise = math.sqrt(sigma2 / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return float(np.var(20 * np.log10(np.abs(v_bar + noise)), ddof=1))


# -- K-factor -------------------------------------------------------------------


def test_k_factor_examples():
    assert k_factor(RiceanSpec(1.0 + 0j, 1.0)) == 0.0
    assert k_factor(RiceanSpec(0j, 2.0)) == -math.inf
    assert k_factor(RiceanSpec(complex(math.sqrt(10), 0), 1.0)) == pytest.approx(10.0, abs=1e-12)
    with pytest.raises(ValueError):
        RiceanSpec(1.0, 0.0)


# -- Var[R_dB] --------------------------------------------------------------------


def test_rayleigh_limit_closed_form():
    expected = (10 / math.log(10)) ** 2 * math.pi**2 / 6
    assert RAYLEIGH_VAR_DB2 == pytest.approx(expected, rel=1e-15)
    assert var_rdb_of_k(-math.inf) == pytest.approx(expected, rel=1e-8)
    assert expected == pytest.approx(31.03, abs=0.01)


@pytest.mark.parametrize("k_db, value", sorted(FROZEN_VAR.items()))
def test_frozen_values(k_db, value):
    assert var_rdb_of_k(k_db) == pytest.approx(value, abs=1e-3)


@pytest.mark.parametrize("k_db", [-math.inf, -2.0, 4.0, 10.0])
def test_montecarlo_agrees_with_quadrature(k_db):
    mc = var_rdb_of_k(k_db, method="montecarlo", n=10_000_000, seed=3)
    assert mc == pytest.approx(var_rdb_of_k(k_db), abs=0.1)


def test_independent_simulation_agrees():
    # K = 2 dB built from explicit voltages rather than the unit-power helper
    k = 10 ** 0.2
    direct = _rice_var_direct(complex(3.0 * math.sqrt(k), 0.0), 9.0, 2_000_000, 11)
    assert direct == pytest.approx(var_rdb_of_k(2.0), abs=0.15)


def test_variance_depends_on_k_only():
    a = _rice_var_direct(2.0 + 1.0j, 0.7, 500_000, 4)
    b = _rice_var_direct(10.0 * (2.0 + 1.0j), 100.0 * 0.7, 500_000, 4)
    assert a == pytest.approx(b, rel=1e-9)


def test_strictly_decreasing_on_fit_range():
    v = [var_rdb_of_k(k) for k in np.arange(-2.0, 10.01, 0.5)]
    assert all(b < a for a, b in zip(v, v[1:]))


def test_argument_validation():
    with pytest.raises(ValueError):
        var_rdb_of_k(math.nan)
    with pytest.raises(ValueError):
        var_rdb_of_k(0.0, method="montecarlo", n=1000)
    with pytest.raises(ValueError):
        var_rdb_of_k(0.0, method="guess")


# -- linear model -----------------------------------------------------------------


def test_fit_is_decreasing_and_near_endpoints():
    m = fit_linear_var_model()
    assert m.a1 > 0
    assert m.predict(10.0) < m.predict(-2.0)
    assert abs(m.predict(-2.0) - var_rdb_of_k(-2.0)) <= m.max_residual
    assert abs(m.predict(10.0) - var_rdb_of_k(10.0)) <= m.max_residual
    assert m.valid_range == (-2.0, 10.0)


def test_fit_frozen_coefficients():
    m = fit_linear_var_model()
    assert m.a0 == pytest.approx(25.295, abs=1e-3)
    assert m.a1 == pytest.approx(2.2568, abs=1e-4)
    assert m.max_residual == pytest.approx(1.2956, abs=1e-4)


def test_refit_on_own_predictions_is_exact():
    m = fit_linear_var_model()
    again = fit_linear_var_model(DEFAULT_K_GRID, m.predict(np.array(DEFAULT_K_GRID)))
    assert again.a0 == pytest.approx(m.a0, rel=1e-12)
    assert again.a1 == pytest.approx(m.a1, rel=1e-12)
    assert again.max_residual < 1e-12


def test_fit_requires_full_grid():
    with pytest.raises(ValueError):
        fit_linear_var_model(np.linspace(0, 10, 13))
    with pytest.raises(ValueError):
        fit_linear_var_model(np.linspace(-2, 10, 7))
    with pytest.raises(ValueError):
        LinearVarModel(20.0, -1.0)


# -- ETAP to variance ----------------------------------------------------------------


@given(st.floats(1e-3, 1e3), st.floats(0.5, 3.0), st.floats(-20.0, 30.0))
def test_tenfold_etap_adds_ten_a1(e, a1, a2):
    m = LinearVarModel(25.0, a1)
    lo = expected_var_from_etap(e, m, a2)
    hi = expected_var_from_etap(10 * e, m, a2)
    assert hi.raw - lo.raw == pytest.approx(10 * a1, rel=1e-9)


def test_clamping_and_flag():
    m = LinearVarModel(25.0, 2.0, a2=15.0)
    tiny = expected_var_from_etap(1e-30, m)
    assert tiny.value == 3.0 and tiny.saturated
    zero = expected_var_from_etap(0.0, m)
    assert zero.value == 3.0 and zero.saturated and zero.raw == -math.inf
    big = expected_var_from_etap(1e6, m)
    assert big.value == 27.0 and big.saturated
    mid = expected_var_from_etap(1.0, m)
    assert mid.value == 15.0 and not mid.saturated
    with pytest.raises(ValueError):
        expected_var_from_etap(-1.0, m)
    with pytest.raises(ValueError):
        expected_var_from_etap(1.0, LinearVarModel(25.0, 2.0))


def test_surface_matches_scalar():
    m = LinearVarModel(25.0, 2.0)
    e = np.array([[1e-5, 0.1], [1.0, 1e4]])
    surf = expected_var_surface(e, m, 14.0)
    for idx in np.ndindex(e.shape):
        assert surf[idx] == expected_var_from_etap(float(e[idx]), m, 14.0).value


# -- expected-log gap -------------------------------------------------------------------


def test_gap_closed_form_values():
    for m in (1, 2, 5):
        exact = 10 / math.log(10) * special.digamma(2 * m)
        assert expected_log_gap(m).exact == pytest.approx(exact, rel=1e-14)
    assert expected_log_gap(1).gap == pytest.approx(1.1742, abs=1e-4)
    assert expected_log_gap(2).gap == pytest.approx(0.5654, abs=1e-4)
    assert expected_log_gap(5).gap == pytest.approx(0.2208, abs=1e-4)


@pytest.mark.parametrize("m", [1, 2, 5])
def test_gap_montecarlo_agrees_with_closed_form(m):
    mc = expected_log_gap(m, method="montecarlo", n=10_000_000, seed=m)
    assert mc.gap == pytest.approx(expected_log_gap(m).gap, abs=0.01)


@pytest.mark.parametrize("sigma2", [0.1, 1.0, 10.0])
def test_gap_independent_of_sigma2(sigma2):
    a = expected_log_gap(2, sigma2, method="montecarlo", n=2_000_000, seed=9)
    b = expected_log_gap(2, 1.0, method="montecarlo", n=2_000_000, seed=9)
    assert a.gap == pytest.approx(b.gap, abs=0.02)
    assert expected_log_gap(2, sigma2).gap == pytest.approx(expected_log_gap(2).gap, abs=1e-12)


def test_gap_decreasing_in_m():
    gaps = [expected_log_gap(m).gap for m in range(1, 12)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[0] > 0


def test_gap_argument_validation():
    with pytest.raises(ValueError):
        expected_log_gap(0)
    with pytest.raises(ValueError):
        expected_log_gap(1.5)
    with pytest.raises(ValueError):
        expected_log_gap(1, sigma2=0.0)
