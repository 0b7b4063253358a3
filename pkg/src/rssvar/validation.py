"""Self-checks of the model against independent computations.

Each check returns a :class:`CheckResult` holding the measured numbers and
the requirement they were held to. Reports carry no timings, so a fixed
seed gives byte-identical output regardless of worker count.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .etap import (
    QuadratureSettings,
    Scenario,
    etap_generic,
    etap_reflect,
    etap_scatter_closed_form,
    etap_surface,
    standard_scenario,
)
from .fading import expected_log_gap, fit_linear_var_model, var_rdb_of_k
from .geometry import LinkGeometry, Person, geometry_scalars
from .grid import GridLine, GridSpec
from .ingest import build_variance_surface, compare_surfaces
from .propagation import PropagationParams, scatter_from_distances
from .simulator import EnsembleSettings, Region, child_rng, empirical_etap, ensemble_regression
from .surface import sweep_dz, sweep_np
from .synthetic import CampaignSettings, canonical_link, generate_campaign

EMPIRICAL_POSITIONS = ((0.0, 1.0), (0.5, 0.6), (-1.5, 0.8), (2.0, -1.0), (0.3, -2.0))
ENSEMBLE_POSITIONS = tuple((x, y) for x in (-0.3, 0.0, 0.6, 1.2) for y in (0.1, 0.3, 0.6, 0.9, 1.2))


@dataclass(frozen=True)
class Profile:
    name: str
    n_geometries: int = 200
    closed_form_rtol: float = 1e-6
    gap_draws: int = 10_000_000
    ensemble_realizations: int = 200
    ensemble_samples: int = 200
    scatter_mc: tuple[float, float, int] = (20.0, 200.0, 200)  # (half width, eta, fields)
    reflect_mc: tuple[float, float, int] = (200.0, 25.0, 100)
    campaign_links: int = 16

    def to_dict(self) -> dict:
        return asdict(self)


PROFILES = {
    "full": Profile("full"),
    "quick": Profile(
        "quick",
        n_geometries=40,
        gap_draws=1_000_000,
        ensemble_realizations=30,
        ensemble_samples=50,
        scatter_mc=(20.0, 50.0, 20),
        reflect_mc=(200.0, 5.0, 10),
        campaign_links=4,
    ),
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    requirement: str
    measured: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "requirement": self.requirement, "measured": self.measured}


def random_geometries(n: int, seed: int, D: float = 0.05) -> list[Scenario]:
    """Unflagged scenarios with 2 m spacing, dz in [0, 3], theta in [0.15, pi - 0.15]."""
    rng = child_rng(seed, 10)
    out = []
    while len(out) < n:
        dz = rng.uniform(0.0, 3.0)
        x, y = rng.uniform(-3.0, 3.0, 2)
        link = LinkGeometry.standard(dz)
        person = Person((x, y, 0.0), D)
        g = geometry_scalars(link, person)
        if not (0.15 <= g.theta <= math.pi - 0.15) or min(g.a, g.b) < D:
            continue
        out.append(Scenario(link, person, PropagationParams(), 1.0))
    return out


def check_closed_form(profile: Profile, seed: int, rtol: float | None = None) -> CheckResult:
    rtol = profile.closed_form_rtol if rtol is None else rtol
    quad = QuadratureSettings(rel_tol=max(1e-13, min(1e-10, rtol / 100.0)))
    worst = 0.0
    for scn in random_geometries(profile.n_geometries, seed):
        cf = etap_scatter_closed_form(scn).value
        qv = etap_generic(scn, scatter_from_distances, quad).value
        worst = max(worst, abs(cf - qv) / abs(qv))
    return CheckResult(
        "closed_form_vs_quadrature",
        worst <= rtol,
        f"max relative difference <= {rtol:g} over {profile.n_geometries} geometries",
        {"max_relative_difference": worst, "n_geometries": profile.n_geometries},
    )


def check_log_gaps(profile: Profile, seed: int) -> list[CheckResult]:
    targets = {1: (1.1, 1.3), 2: (0.5, 0.7), 5: (-math.inf, 0.2)}
    out = []
    for m, (lo, hi) in targets.items():
        mc = expected_log_gap(m, method="montecarlo", n=profile.gap_draws, seed=seed + m)
        cf = expected_log_gap(m)
        req = f"gap <= {hi:g} dB" if lo == -math.inf else f"gap in [{lo:g}, {hi:g}] dB"
        out.append(
            CheckResult(
                f"log_gap_m{m}",
                lo <= mc.gap <= hi,
                req,
                {"gap_montecarlo_db": mc.gap, "gap_closed_form_db": cf.gap, "draws": profile.gap_draws},
            )
        )
    return out


def check_ricean() -> list[CheckResult]:
    lo = var_rdb_of_k(-2.0)
    hi = var_rdb_of_k(10.0)
    model = fit_linear_var_model()
    return [
        CheckResult("ricean_var_at_k_minus2", 23.0 <= lo <= 31.0, "Var[R_dB] at K=-2 dB in [23, 31] dB^2", {"var_db2": lo}),
        CheckResult("ricean_var_at_k_10", 2.5 <= hi <= 3.5, "Var[R_dB] at K=10 dB in [2.5, 3.5] dB^2", {"var_db2": hi}),
        CheckResult(
            "ricean_linear_fit",
            model.max_residual < 1.5,
            "max residual of the affine fit over [-2, 10] dB < 1.5 dB^2",
            {"a0": model.a0, "a1": model.a1, "max_residual_db2": model.max_residual},
        ),
    ]


def check_ensemble(profile: Profile, seed: int, workers: int = 1) -> CheckResult:
    st = replace(
        EnsembleSettings(),
        n_realizations=profile.ensemble_realizations,
        n_samples=profile.ensemble_samples,
        seed=seed,
    )
    rep = ensemble_regression(canonical_link(0.5), ENSEMBLE_POSITIONS, "scatter", PropagationParams(), st, workers)
    reg = rep.regression
    return CheckResult(
        "ensemble_regression",
        reg.r2 > 0.9 and reg.slope > 0,
        f"R^2 > 0.9 and positive slope over {len(ENSEMBLE_POSITIONS)} positions",
        rep.summary(),
    )


def check_empirical_etap(profile: Profile, seed: int, workers: int = 1) -> list[CheckResult]:
    out = []
    for mech, (half, eta, n) in (("scatter", profile.scatter_mc), ("reflect", profile.reflect_mc)):
        ratios = []
        for k, pos in enumerate(EMPIRICAL_POSITIONS):
            scn = standard_scenario(dz=0.0, D=0.05, eta=eta, x_o=pos)
            analytic = etap_scatter_closed_form(scn).value if mech == "scatter" else etap_reflect(scn).value
            emp = empirical_etap(scn, Region.square(half), n, seed + 1000 * k, mech, workers=workers)
            ratios.append(emp.mean / analytic)
        out.append(
            CheckResult(
                f"empirical_etap_{mech}",
                all(0.85 <= r <= 1.15 for r in ratios),
                "empirical/analytic in [0.85, 1.15] at every position",
                {"positions": [list(p) for p in EMPIRICAL_POSITIONS], "ratios": ratios, "eta": eta, "n_fields": n, "region_half_width": half},
            )
        )
    return out


def check_shapes(workers: int = 1) -> list[CheckResult]:
    grid = GridSpec()
    line = GridLine()
    half = grid.step / 2.0

    scat = etap_surface(standard_scenario(dz=0.1), grid, "scatter", workers=workers)
    px, py = scat.argmax_xy()
    a = CheckResult(
        "shape_scatter_peak_at_midpoint",
        abs(px) <= half and abs(py) <= half,
        "scattering surface peaks in a cell touching the link midpoint",
        {"argmax": [px, py]},
    )

    refl = etap_surface(standard_scenario(dz=0.1), grid, "reflect", workers=workers)
    xs, ys = grid.centers()
    peaks = [(float(xs[i, j]), float(ys[i, j])) for i, j in refl.local_maxima()]
    near = [min(math.hypot(x - 1.0, y), math.hypot(x + 1.0, y)) for x, y in peaks]
    b = CheckResult(
        "shape_reflect_two_peaks_near_nodes",
        len(peaks) == 2 and all(d <= 0.2 for d in near) and peaks[0][0] * peaks[1][0] < 0,
        "reflection (n_p=3, dz=0.1) has two local maxima, one within 0.2 m of each node",
        {"local_maxima": [list(p) for p in peaks], "distance_to_node": near},
    )

    ceiling = sweep_dz(standard_scenario(), line, [2.4], "reflect", workers=workers)
    cx = ceiling.argmax_x(0)
    c = CheckResult(
        "shape_reflect_high_nodes_peak_at_midpoint",
        abs(cx) <= line.step / 2.0 + 1e-12,
        "reflection cut with dz=2.4 peaks at x=0",
        {"argmax_x": cx},
    )

    cuts = sweep_np(standard_scenario(dz=0.1), line, [2, 3, 4, 5], QuadratureSettings(alpha_max=1000.0), workers)
    away = (np.abs(np.abs(cuts.xs) - 1.0) > 0.2)
    v = cuts.values[:, away]
    ordered = bool(np.all(np.diff(v, axis=0) < 0))
    d = CheckResult(
        "shape_np_ordering",
        ordered,
        "cuts decrease with n_p at every point more than 0.2 m from a node",
        {"n_points": int(away.sum())},
    )
    return [a, b, c, d]


def check_round_trip(profile: Profile, seed: int) -> CheckResult:
    st = CampaignSettings(n_links=profile.campaign_links, seed=seed)
    records, survey = generate_campaign(st)
    emp = build_variance_surface(records, survey, st.raster, pooling="per_link")
    scn = Scenario(canonical_link(st.dz), Person((0.0, 1.0, 0.0), st.D), st.params, st.eta)
    model = etap_surface(scn, st.raster, st.mechanism)
    rep = compare_surfaces(emp, model)
    return CheckResult(
        "synthetic_round_trip",
        rep.spearman > 0.7,
        "Spearman rank correlation > 0.7 between binned variance and ETAP",
        rep.to_dict() | {"n_records": len(records)},
    )


CHECKS: dict[str, Callable[..., "CheckResult | list[CheckResult]"]] = {
    "closed_form": lambda p, s, w, o: check_closed_form(p, s, o.get("closed_form_rtol")),
    "log_gaps": lambda p, s, w, o: check_log_gaps(p, s),
    "ricean": lambda p, s, w, o: check_ricean(),
    "ensemble": lambda p, s, w, o: check_ensemble(p, s, w),
    "empirical_etap": lambda p, s, w, o: check_empirical_etap(p, s, w),
    "shapes": lambda p, s, w, o: check_shapes(w),
    "round_trip": lambda p, s, w, o: check_round_trip(p, s),
}


def run_validation(
    profile: str | Profile = "full",
    seed: int = 0,
    workers: int = 1,
    only: list[str] | None = None,
    overrides: dict | None = None,
) -> list[CheckResult]:
    prof = PROFILES[profile] if isinstance(profile, str) else profile
    names = list(CHECKS) if not only else only
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check(s): {', '.join(unknown)}; choose from {', '.join(CHECKS)}")
    results: list[CheckResult] = []
    for name in names:
        r = CHECKS[name](prof, seed, workers, overrides or {})
        results.extend(r if isinstance(r, list) else [r])
    return results
