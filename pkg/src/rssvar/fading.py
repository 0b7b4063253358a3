"""Ricean envelope statistics and the variance/ETAP relation.

RSS is ``R_dB = 20 log10 |V|``. When the unaffected multipath sum ``v_bar``
is fixed and the affected paths have random phases, ``|V|`` is Ricean with
K-factor ``|v_bar|^2 / sum |V_i|^2`` and ``Var[R_dB]`` depends on K alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, special

DB_PER_NEPER_POWER = 10.0 / math.log(10.0)
DB_PER_NEPER_AMPLITUDE = 20.0 / math.log(10.0)

#: Measured variance outside this range is noise floor or beyond the linear region.
VARIANCE_FLOOR_DB2 = 3.0
VARIANCE_CEILING_DB2 = 27.0

RAYLEIGH_VAR_DB2 = DB_PER_NEPER_POWER**2 * math.pi**2 / 6.0

_CHUNK = 1_000_000


@dataclass(frozen=True)
class RiceanSpec:
    v_bar: complex
    sigma2_aff: float

    def __post_init__(self) -> None:
        if not (self.sigma2_aff > 0 and math.isfinite(self.sigma2_aff)):
            raise ValueError("affected power must be positive and finite")

    @property
    def k(self) -> float:
        return abs(self.v_bar) ** 2 / self.sigma2_aff


def k_factor(spec: RiceanSpec) -> float:
    """K-factor in dB; ``-inf`` in the Rayleigh limit ``v_bar = 0``."""
    k = spec.k
    return -math.inf if k == 0.0 else 10.0 * math.log10(k)


def _ricean_parts(k_db: float) -> tuple[float, float]:
    """Mean amplitude ``nu`` and per-component std ``s`` for unit mean power."""
    k = 0.0 if k_db == -math.inf else 10.0 ** (k_db / 10.0)
    nu = math.sqrt(k / (k + 1.0))
    s = math.sqrt(0.5 / (k + 1.0))
    return nu, s


def _log_envelope_density(u: float, nu: float, s: float) -> float:
    # density of ln|V| when |V| is Rice(nu, s); i0e keeps the Bessel factor finite
    r = math.exp(u)
    z = r * nu / (s * s)
    return r * r / (s * s) * math.exp(-((r - nu) ** 2) / (2.0 * s * s)) * special.i0e(z)


def _var_rdb_quadrature(k_db: float) -> float:
    nu, s = _ricean_parts(k_db)
    centre = math.log(nu) if nu > 0 else 0.5 * math.log(2.0 * s * s)
    width = s / max(nu, s)
    lo, hi = centre - 40.0, centre + 3.0 + 10.0 * width
    pts = sorted({centre - 6 * width, centre, centre + 6 * width})
    pts = [p for p in pts if lo < p < hi]
    kw = dict(epsabs=0.0, epsrel=1e-11, limit=500, points=pts)
    m0 = integrate.quad(_log_envelope_density, lo, hi, args=(nu, s), **kw)[0]
    m1 = integrate.quad(lambda u: u * _log_envelope_density(u, nu, s), lo, hi, **kw)[0] / m0
    m2 = integrate.quad(lambda u: (u - m1) ** 2 * _log_envelope_density(u, nu, s), lo, hi, **kw)[0] / m0
    return DB_PER_NEPER_AMPLITUDE**2 * m2


def _var_rdb_montecarlo(k_db: float, n: int, seed: int) -> float:
    nu, s = _ricean_parts(k_db)
    rng = np.random.default_rng(seed)
    total = 0.0
    total2 = 0.0
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        re = nu + s * rng.standard_normal(m)
        im = s * rng.standard_normal(m)
        r_db = 10.0 * np.log10(re * re + im * im)
        total += float(r_db.sum())
        total2 += float((r_db * r_db).sum())
        done += m
    mean = total / n
    return (total2 - n * mean * mean) / (n - 1)


def var_rdb_of_k(k_db: float, method: str = "quadrature", n: int = 1_000_000, seed: int = 0) -> float:
    """``Var[20 log10 |V|]`` in dB^2 for a Ricean envelope with K-factor ``k_db``.

    ``method="quadrature"`` integrates the log-envelope moments against the
    Ricean density; ``method="montecarlo"`` draws ``n`` seeded samples.
    """
    if math.isnan(k_db) or k_db == math.inf:
        raise ValueError(f"K-factor must be finite or -inf, got {k_db}")
    if method == "quadrature":
        return _var_rdb_quadrature(k_db)
    if method == "montecarlo":
        if n < 1_000_000:
            raise ValueError("Monte Carlo estimate needs at least 1e6 draws")
        return _var_rdb_montecarlo(k_db, n, seed)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class LinearVarModel:
    """``Var[R_dB] ~ a0 - a1 * K_dB`` over ``valid_range``."""

    a0: float
    a1: float
    a2: float | None = None
    valid_range: tuple[float, float] = (-2.0, 10.0)
    max_residual: float = 0.0

    def __post_init__(self) -> None:
        if not self.a1 > 0:
            raise ValueError("slope a1 must be positive (variance decreases with K)")

    def predict(self, k_db):
        return self.a0 - self.a1 * np.asarray(k_db, dtype=float)


DEFAULT_K_GRID = tuple(float(k) for k in range(-2, 11))


def fit_linear_var_model(
    k_db: Sequence[float] = DEFAULT_K_GRID,
    variances: Sequence[float] | None = None,
) -> LinearVarModel:
    """Least-squares affine fit of ``Var[R_dB]`` against ``K_dB``.

    With ``variances=None`` the samples come from :func:`var_rdb_of_k` by
    quadrature. The reported residual is the largest absolute misfit at the
    sample points.
    """
    k = np.asarray(k_db, dtype=float)
    if k.size < 13 or k.min() > -2.0 or k.max() < 10.0:
        raise ValueError("K grid must cover [-2, 10] dB with at least 13 points")
    if variances is None:
        v = np.array([var_rdb_of_k(float(x)) for x in k])
    else:
        v = np.asarray(variances, dtype=float)
    slope, intercept = np.polyfit(k, v, 1)
    resid = float(np.max(np.abs(intercept + slope * k - v)))
    return LinearVarModel(
        a0=float(intercept),
        a1=float(-slope),
        valid_range=(float(k.min()), float(k.max())),
        max_residual=resid,
    )


class VariancePrediction(NamedTuple):
    value: float
    raw: float
    saturated: bool


def expected_var_from_etap(etap: float, model: LinearVarModel, a2: float | None = None) -> VariancePrediction:
    """Ensemble-mean RSS variance ``a2 + a1 * 10 log10(etap)``, clamped to [3, 27] dB^2."""
    if a2 is None:
        a2 = model.a2
    if a2 is None:
        raise ValueError("intercept a2 is required")
    if etap < 0 or math.isnan(etap):
        raise ValueError(f"ETAP must be non-negative, got {etap}")
    raw = -math.inf if etap == 0 else a2 + model.a1 * 10.0 * math.log10(etap)
    value = min(max(raw, VARIANCE_FLOOR_DB2), VARIANCE_CEILING_DB2)
    return VariancePrediction(value, raw, value != raw)


def expected_var_surface(etap_values: np.ndarray, model: LinearVarModel, a2: float) -> np.ndarray:
    """Vectorized :func:`expected_var_from_etap` (values only)."""
    e = np.asarray(etap_values, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = a2 + model.a1 * 10.0 * np.log10(e)
    return np.clip(raw, VARIANCE_FLOOR_DB2, VARIANCE_CEILING_DB2)


class LogGap(NamedTuple):
    exact: float
    approx: float
    gap: float


def _expected_log_sum_closed(m: int, sigma2: float) -> float:
    # sum of 2m exponential terms with mean sigma2 is Gamma(2m, sigma2)
    return DB_PER_NEPER_POWER * (float(special.digamma(2 * m)) + math.log(sigma2))


def _expected_log_sum_montecarlo(m: int, sigma2: float, n: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    sd = math.sqrt(sigma2 / 2.0)
    total = 0.0
    done = 0
    chunk = max(1, _CHUNK // (2 * m))
    while done < n:
        k = min(chunk, n - done)
        iq = sd * rng.standard_normal((k, 2 * m, 2))
        y = np.einsum("ijk,ijk->i", iq, iq)
        total += float(np.log10(y).sum())
        done += k
    return 10.0 * total / n


def expected_log_gap(
    m: int, sigma2: float = 1.0, method: str = "closed_form", n: int = 10_000_000, seed: int = 0
) -> LogGap:
    """Error of replacing ``E[10 log10 Y]`` by ``10 log10 E[Y]``.

    ``Y`` sums ``2m`` independent terms ``|U_j|^2`` where each ``U_j`` is a
    zero-mean circular complex Gaussian with ``E|U_j|^2 = sigma2``, so
    ``E[Y] = 2 m sigma2``. The gap depends on ``m`` only.
    """
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    m = int(m)
    if method == "closed_form":
        exact = _expected_log_sum_closed(m, sigma2)
    elif method == "montecarlo":
        exact = _expected_log_sum_montecarlo(m, sigma2, n, seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    approx = 10.0 * math.log10(2 * m * sigma2)
    return LogGap(exact, approx, approx - exact)
