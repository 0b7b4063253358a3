"""Monte Carlo single-bounce channel.

Scatterers are a homogeneous Poisson process on a finite rectangle of the
scatterer plane. Each scatterer contributes one multipath whose power is the
scattering or reflection kernel at its position. A multipath is affected
when either leg of its path crosses the person's cylinder in plan view;
affected paths get fresh uniform phases for every RSS sample while the
unaffected sum stays fixed.

Seeds: every random stream is derived as
``numpy.random.SeedSequence([master_seed, *stream_key])`` with a fixed,
documented integer key per stream, so serial and parallel runs agree.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import NoScatterers, RegionTooSmall
from .etap import QuadratureSettings, Scenario, ray_integral
from .fading import DB_PER_NEPER_POWER
from .geometry import COINCIDENT_TOL, LinkGeometry, Person, segments_shadowed
from .propagation import KERNELS, PropagationParams, node_distances, scatter_from_distances

# stream keys for SeedSequence([master, key, ...])
STREAM_FIELD = 0
STREAM_PHASE = 1
STREAM_SERIES = 2


def child_rng(master: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master), *map(int, key)]))


@dataclass(frozen=True)
class Region:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("region must have positive area")

    @classmethod
    def square(cls, half: float, cx: float = 0.0, cy: float = 0.0) -> "Region":
        return cls(cx - half, cx + half, cy - half, cy + half)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        return (
            (p[..., 0] >= self.x_min) & (p[..., 0] <= self.x_max)
            & (p[..., 1] >= self.y_min) & (p[..., 1] <= self.y_max)
        )

    def to_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in ("x_min", "x_max", "y_min", "y_max")}


@dataclass(frozen=True)
class ScattererField:
    region: Region
    eta: float
    scatterers: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.scatterers)


def _uniform_in(rng: np.random.Generator, n: int, x0, x1, y0, y1) -> np.ndarray:
    pts = np.zeros((n, 3))
    pts[:, 0] = x0 + (x1 - x0) * rng.random(n)
    pts[:, 1] = y0 + (y1 - y0) * rng.random(n)
    return pts


@dataclass(frozen=True)
class TileMask:
    """Rectangular tiles covering a region, with a keep flag per tile."""

    x0: np.ndarray
    x1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    keep: np.ndarray

    @classmethod
    def build(cls, region: Region, tile: float, keep: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]):
        xe = np.append(np.arange(region.x_min, region.x_max, tile), region.x_max)
        ye = np.append(np.arange(region.y_min, region.y_max, tile), region.y_max)
        xe = xe[np.concatenate([[True], np.diff(xe) > 1e-12])]
        ye = ye[np.concatenate([[True], np.diff(ye) > 1e-12])]
        X0, Y0 = np.meshgrid(xe[:-1], ye[:-1])
        X1, Y1 = np.meshgrid(xe[1:], ye[1:])
        cx, cy = 0.5 * (X0 + X1), 0.5 * (Y0 + Y1)
        half_diag = 0.5 * np.hypot(X1 - X0, Y1 - Y0)
        mask = keep(cx.ravel(), cy.ravel(), half_diag.ravel())
        return cls(X0.ravel()[mask], X1.ravel()[mask], Y0.ravel()[mask], Y1.ravel()[mask], mask)

    @property
    def kept_area(self) -> float:
        return float(np.sum((self.x1 - self.x0) * (self.y1 - self.y0)))


def sample_field(region: Region, eta: float, seed: int, tiles: TileMask | None = None) -> ScattererField:
    """Poisson field of density ``eta`` per m^2 on ``region``.

    With ``tiles``, only the kept tiles are populated (independently, each
    with its own Poisson count). This is the exact restriction of the same
    process to those tiles.
    """
    if not eta > 0:
        raise NoScatterers("scatterer density must be positive")
    rng = child_rng(seed, STREAM_FIELD)
    if tiles is None:
        n = int(rng.poisson(eta * region.area))
        pts = _uniform_in(rng, n, region.x_min, region.x_max, region.y_min, region.y_max)
    else:
        areas = (tiles.x1 - tiles.x0) * (tiles.y1 - tiles.y0)
        counts = rng.poisson(eta * areas)
        idx = np.repeat(np.arange(len(counts)), counts)
        n = int(counts.sum())
        pts = np.zeros((n, 3))
        pts[:, 0] = tiles.x0[idx] + (tiles.x1[idx] - tiles.x0[idx]) * rng.random(n)
        pts[:, 1] = tiles.y0[idx] + (tiles.y1[idx] - tiles.y0[idx]) * rng.random(n)
    return ScattererField(region, float(eta), pts, int(seed))


@dataclass(frozen=True)
class LinkRealization:
    field: ScattererField
    link: LinkGeometry
    voltages: np.ndarray
    affected: np.ndarray

    @property
    def v_bar(self) -> complex:
        return complex(self.voltages[~self.affected].sum())

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.voltages) ** 2))

    @property
    def affected_power(self) -> float:
        return float(np.sum(np.abs(self.voltages[self.affected]) ** 2))

    def with_person(self, person: Person) -> "LinkRealization":
        return replace(self, affected=classify_affected(self, person))

    def k_db(self) -> float:
        p_aff = self.affected_power
        if p_aff == 0.0:
            return math.inf
        v = abs(self.v_bar) ** 2
        return -math.inf if v == 0.0 else 10.0 * math.log10(v / p_aff)


def synthesize_voltages(
    field: ScattererField,
    link: LinkGeometry,
    mechanism: str,
    params: PropagationParams,
    phase_seed: int,
) -> LinkRealization:
    """One complex voltage per scatterer: kernel amplitude, uniform phase."""
    kernel = KERNELS.get(mechanism)
    if kernel is None:
        raise ValueError(f"mechanism must be 'scatter' or 'reflect', got {mechanism!r}")
    pts = field.scatterers
    if len(pts):
        d_t, d_r = node_distances(link, pts)
        if np.any(d_t <= COINCIDENT_TOL) or np.any(d_r <= COINCIDENT_TOL):
            from .errors import SingularPosition

            raise SingularPosition("a scatterer coincides with a node")
        amp = np.sqrt(kernel(d_t, d_r, params))
    else:
        amp = np.zeros(0)
    rng = child_rng(phase_seed, STREAM_PHASE)
    phase = rng.uniform(0.0, 2.0 * np.pi, len(amp))
    volts = amp * np.exp(1j * phase)
    return LinkRealization(field, link, volts, np.zeros(len(amp), dtype=bool))


def classify_affected(realization: LinkRealization, person: Person) -> np.ndarray:
    pts = realization.field.scatterers
    link = realization.link
    return segments_shadowed(link.x_t, pts, person) | segments_shadowed(link.x_r, pts, person)


def person_path_voltage(link: LinkGeometry, person: Person, params: PropagationParams) -> float:
    """Amplitude of the extra path scattered by the person itself."""
    d_t, d_r = node_distances(link, np.asarray(person.x_o))
    return float(np.sqrt(scatter_from_distances(d_t, d_r, params)))


@dataclass(frozen=True)
class RssSeries:
    r_db: np.ndarray
    variance: float


def simulate_rss_series(
    realization: LinkRealization,
    n_samples: int,
    seed: int,
    person_amplitude: float = 0.0,
) -> RssSeries:
    """RSS samples with the affected paths' phases redrawn for every sample.

    ``person_amplitude`` adds the optional path scattered by the person,
    whose phase also changes from sample to sample.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    amps = np.abs(realization.voltages[realization.affected])
    if person_amplitude > 0.0:
        amps = np.append(amps, person_amplitude)
    v_bar = realization.v_bar
    if len(amps) == 0:
        r = np.full(n_samples, 20.0 * math.log10(abs(v_bar)) if v_bar != 0 else -math.inf)
        return RssSeries(r, 0.0)
    rng = child_rng(seed, STREAM_SERIES)
    out = np.empty(n_samples)
    chunk = max(1, 2_000_000 // len(amps))
    for start in range(0, n_samples, chunk):
        k = min(chunk, n_samples - start)
        ph = rng.uniform(0.0, 2.0 * np.pi, (k, len(amps)))
        v = v_bar + (np.exp(1j * ph) @ amps)
        out[start : start + k] = 10.0 * np.log10(v.real**2 + v.imag**2)
    return RssSeries(out, float(np.var(out, ddof=1)))


# -- empirical ETAP ---------------------------------------------------------


def _cone_keep(link: LinkGeometry, person: Person):
    """Conservative test: can a tile hold a scatterer shadowed from either node?"""
    c = np.array([person.x_o.x, person.x_o.y])
    r = 0.5 * person.D
    cones = []
    for node in (link.x_t, link.x_r):
        p = np.array([node[0], node[1]])
        v = c - p
        dist = float(np.hypot(*v))
        cones.append((p, v, dist, math.asin(min(1.0, r / dist)) if dist > r else math.pi))

    def keep(cx, cy, half_diag):
        out = np.zeros(len(cx), dtype=bool)
        for p, v, dist, beta in cones:
            wx, wy = cx - p[0], cy - p[1]
            rr = np.hypot(wx, wy)
            phi = np.arctan2(np.abs(wx * v[1] - wy * v[0]), wx * v[0] + wy * v[1])
            with np.errstate(invalid="ignore", divide="ignore"):
                margin = np.arcsin(np.clip(half_diag / np.maximum(rr, 1e-300), 0.0, 1.0))
            out |= (rr <= half_diag) | (phi <= beta + margin)
        return out

    return keep


def _exit_distance(region: Region, start: np.ndarray, direction: np.ndarray) -> float:
    """Plan-view distance from ``start`` along ``direction`` to the region boundary."""
    ts = []
    for k, (lo, hi) in enumerate(((region.x_min, region.x_max), (region.y_min, region.y_max))):
        d = direction[k]
        if d > 0:
            ts.append((hi - start[k]) / d)
        elif d < 0:
            ts.append((lo - start[k]) / d)
    return max(0.0, min(ts)) if ts else math.inf


def shadow_coverage(scn: Scenario, mechanism: str, region: Region, quad: QuadratureSettings = QuadratureSettings()) -> float:
    """Fraction of the shadow-ray kernel mass that falls inside ``region``."""
    kernel = KERNELS[mechanism]
    inside = 0.0
    total = 0.0
    o = np.asarray(scn.person.x_o)
    if not region.contains(o[None, :2])[0]:
        return 0.0
    for node in ("t", "r"):
        p = np.asarray(scn.link.x_t if node == "t" else scn.link.x_r)
        u = (o - p) / np.linalg.norm(o - p)
        horiz = float(np.hypot(u[0], u[1]))
        if horiz == 0.0:
            return 0.0
        s_exit = _exit_distance(region, o[:2], u[:2] / horiz)
        alpha_exit = s_exit / horiz
        full = ray_integral(scn, kernel, node, quad)
        part = ray_integral(scn, kernel, node, replace(quad, alpha_max=alpha_exit)) if alpha_exit > 0 else 0.0
        inside += part
        total += full
    return inside / total if total > 0 else 1.0


@dataclass(frozen=True)
class EmpiricalEtap:
    mean: float
    halfwidth: float  # 3 standard errors
    n_fields: int
    per_field: np.ndarray
    coverage: float
    mean_affected_count: float


def _affected_power_one(args) -> tuple[float, int]:
    scn, mechanism, region, tiles, seed = args
    field = sample_field(region, scn.eta, seed, tiles)
    real = synthesize_voltages(field, scn.link, mechanism, scn.params, seed)
    aff = classify_affected(real, scn.person)
    return float(np.sum(np.abs(real.voltages[aff]) ** 2)), int(aff.sum())


def _map(fn, jobs: Sequence, workers: int) -> list:
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    chunk = max(1, len(jobs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=chunk))


def empirical_etap(
    scn: Scenario,
    region: Region,
    n_fields: int,
    seed: int,
    mechanism: str = "scatter",
    tile: float | None = 2.0,
    coverage_tol: float = 0.01,
    workers: int = 1,
) -> EmpiricalEtap:
    """Mean affected power over ``n_fields`` independent Poisson fields.

    ``tile`` enables population of only those tiles that can contain a
    shadowed scatterer; ``None`` populates the whole region.
    """
    coverage = shadow_coverage(scn, mechanism, region)
    if not coverage >= 1.0 - coverage_tol:
        raise RegionTooSmall(
            f"region holds only {coverage:.4f} of the shadowed kernel mass (need {1 - coverage_tol:.4f})"
        )
    tiles = TileMask.build(region, tile, _cone_keep(scn.link, scn.person)) if tile else None
    jobs = [(scn, mechanism, region, tiles, int(np.random.SeedSequence([seed, i]).generate_state(1)[0])) for i in range(n_fields)]
    res = _map(_affected_power_one, jobs, workers)
    powers = np.array([p for p, _ in res])
    counts = np.array([c for _, c in res])
    mean = float(powers.mean())
    half = 3.0 * float(powers.std(ddof=1)) / math.sqrt(n_fields) if n_fields > 1 else math.inf
    return EmpiricalEtap(mean, half, n_fields, powers, coverage, float(counts.mean()))


# -- ensemble regression ------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSettings:
    region: Region = field(default_factory=lambda: Region.square(8.0))
    eta: float = 2.0
    D: float = 0.4
    n_realizations: int = 200
    n_samples: int = 200
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "region": self.region.to_dict(),
            "eta": self.eta,
            "D": self.D,
            "n_realizations": self.n_realizations,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Regression:
    slope: float
    intercept: float
    r2: float
    n_points: int
    residual_rms: float


def linear_regression(x: np.ndarray, y: np.ndarray) -> Regression:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    fit = intercept + slope * x
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return Regression(float(slope), float(intercept), r2, len(x), math.sqrt(ss_res / len(x)))


@dataclass(frozen=True)
class EnsembleReport:
    positions: np.ndarray  # (P, 2)
    variances: np.ndarray  # (P, R) per-realization Var[R_dB]
    affected_power: np.ndarray  # (P, R)
    total_power: np.ndarray  # (R,)
    k_db: np.ndarray  # (P, R)
    mean_variance: np.ndarray  # (P,)
    mean_affected_power: np.ndarray  # (P,)
    variance_halfwidth: np.ndarray  # (P,) 3 standard errors
    regression: Regression
    restricted_regression: Regression | None
    k_in_range_fraction: float
    settings: EnsembleSettings

    def summary(self) -> dict:
        reg = self.regression
        out = {
            "a1_estimate": reg.slope,
            "a2_estimate": reg.intercept,
            "r2": reg.r2,
            "residual_rms": reg.residual_rms,
            "n_positions": reg.n_points,
            "n_realizations": self.settings.n_realizations,
            "k_in_range_fraction": self.k_in_range_fraction,
        }
        if self.restricted_regression is not None:
            out["restricted_r2"] = self.restricted_regression.r2
            out["restricted_residual_rms"] = self.restricted_regression.residual_rms
        return out


def _realization_task(args):
    link, positions, mechanism, params, st, r = args
    seed = int(np.random.SeedSequence([st.seed, r]).generate_state(1)[0])
    field_ = sample_field(st.region, st.eta, seed)
    base = synthesize_voltages(field_, link, mechanism, params, seed)
    var = np.empty(len(positions))
    aff = np.empty(len(positions))
    kdb = np.empty(len(positions))
    for p, (x, y) in enumerate(positions):
        real = base.with_person(Person((x, y, 0.0), st.D))
        series = simulate_rss_series(real, st.n_samples, int(np.random.SeedSequence([st.seed, r, p]).generate_state(1)[0]))
        var[p] = series.variance
        aff[p] = real.affected_power
        kdb[p] = real.k_db()
    return var, aff, kdb, base.total_power


def ensemble_regression(
    link: LinkGeometry,
    positions: Sequence[tuple[float, float]],
    mechanism: str,
    params: PropagationParams,
    settings: EnsembleSettings = EnsembleSettings(),
    workers: int = 1,
) -> EnsembleReport:
    """Regress ensemble-mean ``Var[R_dB]`` on ``10 log10`` of mean affected power.

    Every realization is one environment (one Poisson field) shared by all
    person positions, so position-to-position differences are not masked by
    environment noise.
    """
    pos = [(float(x), float(y)) for x, y in positions]
    jobs = [(link, pos, mechanism, params, settings, r) for r in range(settings.n_realizations)]
    res = _map(_realization_task, jobs, workers)
    var = np.stack([v for v, _, _, _ in res], axis=1)
    aff = np.stack([a for _, a, _, _ in res], axis=1)
    kdb = np.stack([k for _, _, k, _ in res], axis=1)
    total = np.array([t for _, _, _, t in res])

    mean_var = var.mean(axis=1)
    mean_aff = aff.mean(axis=1)
    half = 3.0 * var.std(axis=1, ddof=1) / math.sqrt(var.shape[1])
    ok = mean_aff > 0
    reg = linear_regression(DB_PER_NEPER_POWER * np.log(mean_aff[ok]), mean_var[ok])

    small = aff < 0.5 * total[None, :]
    restricted = None
    counts = small.sum(axis=1)
    if np.all(counts >= 2):
        rv = np.where(small, var, 0.0).sum(axis=1) / counts
        ra = np.where(small, aff, 0.0).sum(axis=1) / counts
        keep = ra > 0
        if keep.sum() >= 3:
            restricted = linear_regression(DB_PER_NEPER_POWER * np.log(ra[keep]), rv[keep])
    in_range = np.isfinite(kdb) & (kdb >= -2.0) & (kdb <= 10.0)
    return EnsembleReport(
        positions=np.asarray(pos),
        variances=var,
        affected_power=aff,
        total_power=total,
        k_db=kdb,
        mean_variance=mean_var,
        mean_affected_power=mean_aff,
        variance_halfwidth=half,
        regression=reg,
        restricted_regression=restricted,
        k_in_range_fraction=float(in_range.mean()),
        settings=settings,
    )
