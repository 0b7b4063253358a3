"""Expected total affected power (ETAP) as a function of person position.

The shadow a person casts from each node is collapsed onto its median ray
(the ray from the node through the person's centre), whose width grows
linearly with distance. The ETAP is then a sum of two one-dimensional
integrals along those rays, one per node:

    Q_t = eta * D * int_0^inf (a + s)/a * f(a + s, |x_r - x_o - s u_t|) ds

with ``u_t`` the unit vector from TX to the person and ``a = |x_t - x_o|``.
``Q_r`` swaps the roles of the nodes. The rays are parameterized with full
3-D vectors, so for ``dz > 0`` they leave the scatterer plane; the closed
form for scattering is exact for that reading.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import DegenerateGeometry, DivergentTail, QuadratureFailure, RssVarError
from .geometry import GeometryScalars, LinkGeometry, Person, Vec3, geometry_scalars
from .grid import GridSpec, SurfaceGrid
from .propagation import PropagationParams, reflect_from_distances, scatter_from_distances

Kernel = Callable[[float, float, PropagationParams], float]

#: Angular margin (radians) around collinear configurations.
THETA_MIN = 0.05

_KRONROD_POINTS = 21


class EtapFlag(enum.IntFlag):
    NONE = 0
    NEAR_COLLINEAR_FAR = 1  # beyond the nodes on the TX-RX line; shadows overlap
    NEAR_COLLINEAR_BETWEEN = 2  # between the nodes; median ray grazes the other node
    NEAR_NODE = 4  # person diameter not small against its node distance
    ERROR = 8  # evaluation raised; value is NaN


@dataclass(frozen=True)
class Scenario:
    link: LinkGeometry
    person: Person
    params: PropagationParams = field(default_factory=PropagationParams)
    eta: float = 1.0

    def __post_init__(self) -> None:
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError(f"scatterer density must be positive, got {self.eta}")

    def at(self, x: float, y: float) -> "Scenario":
        return replace(self, person=self.person.moved(x, y))

    def swapped(self) -> "Scenario":
        return replace(self, link=self.link.swapped())


@dataclass(frozen=True)
class EtapResult:
    value: float
    q_t: float
    q_r: float
    flags: EtapFlag = EtapFlag.NONE

    @property
    def flagged(self) -> bool:
        return self.flags != EtapFlag.NONE


@dataclass(frozen=True)
class QuadratureSettings:
    rel_tol: float = 1e-8
    max_evals: int = 100_000
    alpha_max: float | None = None  # truncate the rays at this distance (m)

    def __post_init__(self) -> None:
        if self.alpha_max is not None and not self.alpha_max > 0:
            raise ValueError("alpha_max must be positive")
        if not self.rel_tol >= 50.0 * np.finfo(float).eps:
            raise ValueError(f"rel_tol must be at least {50.0 * np.finfo(float).eps:.3g}, got {self.rel_tol}")
        if self.max_evals < 1:
            raise ValueError("max_evals must be positive")


def etap_flags(g: GeometryScalars, D: float) -> EtapFlag:
    flags = EtapFlag.NONE
    if math.pi - g.theta < THETA_MIN:
        flags |= EtapFlag.NEAR_COLLINEAR_FAR
    if g.theta < THETA_MIN:
        flags |= EtapFlag.NEAR_COLLINEAR_BETWEEN
    if min(g.a, g.b) < D:
        flags |= EtapFlag.NEAR_NODE
    return flags


def _ray_integral(
    near: float,
    far: float,
    cos_theta: float,
    sin_theta: float,
    kernel: Kernel,
    params: PropagationParams,
    near_is_tx: bool,
    quad: QuadratureSettings,
) -> float:
    """``int_0^inf (near + s)/near * f(...) ds`` after the map ``s = t / (1 - t)``.

    ``near`` is the distance from the ray's own node to the person, ``far``
    the distance from the other node.
    """
    along = far * cos_theta  # abscissa of closest approach to the other node
    perp2 = (far * sin_theta) ** 2

    def integrand(t: float) -> float:
        if t >= 1.0:
            return 0.0
        one_m = 1.0 - t
        s = t / one_m
        d_near = near + s
        d_far = math.sqrt((s - along) ** 2 + perp2)
        if near_is_tx:
            p = kernel(d_near, d_far, params)
        else:
            p = kernel(d_far, d_near, params)
        return (d_near / near) * p / (one_m * one_m)

    t_max = 1.0 if quad.alpha_max is None else quad.alpha_max / (1.0 + quad.alpha_max)
    points = None
    if along > 0.0:
        t_star = along / (1.0 + along)
        if t_star < t_max:
            points = [t_star]
    limit = max(3, quad.max_evals // _KRONROD_POINTS)  # QUADPACK needs room for the breakpoint
    out = integrate.quad(
        integrand,
        0.0,
        t_max,
        epsabs=0.0,
        epsrel=quad.rel_tol,
        limit=limit,
        points=points,
        full_output=1,
    )
    value, abserr, info = out[0], out[1], out[2]
    if len(out) > 3 or info["neval"] > quad.max_evals:
        msg = out[3] if len(out) > 3 else "evaluation budget exceeded"
        # A zero integrand converges trivially even though QUADPACK may complain.
        if not (value == 0.0 and abserr == 0.0):
            raise QuadratureFailure(f"shadow ray integral did not converge: {msg}")
    return value


def etap_generic(
    scn: Scenario, kernel: Kernel, quad: QuadratureSettings = QuadratureSettings()
) -> EtapResult:
    """ETAP for any distance kernel ``f(d_t, d_r, params)`` by adaptive quadrature."""
    g = geometry_scalars(scn.link, scn.person)
    sin_theta = math.sin(g.theta)
    scale = scn.eta * scn.person.D
    q_t = scale * _ray_integral(g.a, g.b, g.cos_theta, sin_theta, kernel, scn.params, True, quad)
    q_r = scale * _ray_integral(g.b, g.a, g.cos_theta, sin_theta, kernel, scn.params, False, quad)
    return EtapResult(q_t + q_r, q_t, q_r, etap_flags(g, scn.person.D))


def ray_integral(
    scn: Scenario, kernel: Kernel, node: str, quad: QuadratureSettings = QuadratureSettings()
) -> float:
    """One node's share of the ETAP (``node`` is ``"t"`` or ``"r"``)."""
    g = geometry_scalars(scn.link, scn.person)
    near, far = (g.a, g.b) if node == "t" else (g.b, g.a)
    val = _ray_integral(near, far, g.cos_theta, math.sin(g.theta), kernel, scn.params, node == "t", quad)
    return scn.eta * scn.person.D * val


def _pi_minus_over_sin(theta: float) -> float:
    """``(pi - theta) / sin(theta)``, finite as theta -> pi."""
    eps = math.pi - theta
    if eps < 1e-4:
        return 1.0 + eps * eps / 6.0
    s = math.sin(theta)
    return math.inf if s == 0.0 else eps / s


def etap_scatter_closed_form(scn: Scenario) -> EtapResult:
    """Closed-form scattering ETAP with per-ray split.

    On the perpendicular bisector (``a == b``) the logarithmic terms vanish.
    Between the nodes on the TX-RX line with ``dz = 0`` the value is infinite.
    """
    g = geometry_scalars(scn.link, scn.person)
    a, b, c = g.a, g.b, g.cos_theta
    k0 = scn.person.D * scn.params.c_s * scn.eta / (g.d_rt * g.d_rt)
    ratio = _pi_minus_over_sin(g.theta)
    log_ab = math.log(a / b)
    q_t = k0 * (ratio * (1.0 / b + c / a) - log_ab / a)
    q_r = k0 * (ratio * (1.0 / a + c / b) + log_ab / b)
    if math.isinf(ratio):
        q_t = q_r = math.inf
    return EtapResult(q_t + q_r, q_t, q_r, etap_flags(g, scn.person.D))


def etap_reflect(scn: Scenario, quad: QuadratureSettings = QuadratureSettings()) -> EtapResult:
    """Reflection ETAP by quadrature.

    The ray integrand decays like ``s**(1 - n_p)``, so the untruncated
    integral only exists for ``n_p > 2``.
    """
    if scn.params.n_p <= 2.0 and quad.alpha_max is None:
        raise DivergentTail(
            f"reflection ETAP diverges for n_p = {scn.params.n_p}; set alpha_max to truncate"
        )
    return etap_generic(scn, reflect_from_distances, quad)


@dataclass(frozen=True)
class Mechanism:
    """``scatter``, ``reflect``, or ``blend`` with scattering weight ``w``."""

    kind: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("scatter", "reflect", "blend"):
            raise ValueError(f"unknown mechanism {self.kind!r}")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("blend weight must lie in [0, 1]")

    @classmethod
    def parse(cls, text: "str | Mechanism") -> "Mechanism":
        if isinstance(text, Mechanism):
            return text
        if text.startswith("blend"):
            _, _, w = text.partition(":")
            return cls("blend", float(w or 0.5))
        return cls(text)

    def __str__(self) -> str:
        return f"blend:{self.weight:g}" if self.kind == "blend" else self.kind


def etap(scn: Scenario, mechanism: "str | Mechanism", quad: QuadratureSettings = QuadratureSettings()) -> EtapResult:
    mech = Mechanism.parse(mechanism)
    if mech.kind == "scatter":
        return etap_scatter_closed_form(scn)
    if mech.kind == "reflect":
        return etap_reflect(scn, quad)
    w = mech.weight
    parts = []
    if w > 0.0:
        parts.append((w, etap_scatter_closed_form(scn)))
    if w < 1.0:
        parts.append((1.0 - w, etap_reflect(scn, quad)))
    flags = EtapFlag.NONE
    for _, r in parts:
        flags |= r.flags
    q_t = sum(k * r.q_t for k, r in parts)
    q_r = sum(k * r.q_r for k, r in parts)
    return EtapResult(q_t + q_r, q_t, q_r, flags)


def _eval_cells(args) -> list[tuple[float, int]]:
    template, mech, quad, points = args
    out = []
    for x, y in points:
        try:
            r = etap(template.at(x, y), mech, quad)
            out.append((r.value, int(r.flags)))
        except (RssVarError, DegenerateGeometry, ValueError):
            out.append((math.nan, int(EtapFlag.ERROR)))
    return out


def _evaluate_points(template, mech, quad, points, workers: int) -> list[tuple[float, int]]:
    if workers <= 1 or len(points) < 2:
        return _eval_cells((template, mech, quad, points))
    chunk = max(1, -(-len(points) // (4 * workers)))
    jobs = [(template, mech, quad, points[i : i + chunk]) for i in range(0, len(points), chunk)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_eval_cells, jobs))
    return [cell for part in results for cell in part]


def etap_surface(
    template: Scenario,
    grid: GridSpec,
    mechanism: "str | Mechanism" = "scatter",
    quad: QuadratureSettings = QuadratureSettings(),
    workers: int = 1,
) -> SurfaceGrid:
    """ETAP at every cell centre of ``grid``.

    Cells whose evaluation fails become NaN holes flagged ``ERROR``. Flagged
    cells are marked invalid, so dB normalization ignores them.
    """
    mech = Mechanism.parse(mechanism)
    xs, ys = grid.centers()
    points = list(zip(xs.ravel().tolist(), ys.ravel().tolist()))
    cells = _evaluate_points(template, mech, quad, points, workers)
    values = np.array([v for v, _ in cells], dtype=float).reshape(grid.shape)
    flags = np.array([f for _, f in cells], dtype=np.int64).reshape(grid.shape)
    valid = (flags == 0) & np.isfinite(values)
    meta = {
        "quantity": "etap",
        "mechanism": str(mech),
        "dz": template.link.dz,
        "x_t": list(template.link.x_t),
        "x_r": list(template.link.x_r),
        "D": template.person.D,
        "eta": template.eta,
        "params": {"c_s": template.params.c_s, "c_r": template.params.c_r, "n_p": template.params.n_p},
        "quadrature": {"rel_tol": quad.rel_tol, "max_evals": quad.max_evals, "alpha_max": quad.alpha_max},
        "flagged_cells": int(np.count_nonzero(flags)),
    }
    return SurfaceGrid(grid, values, valid, meta, flags)


def etap_cut(
    template: Scenario,
    xs: np.ndarray,
    y: float,
    mechanism: "str | Mechanism",
    quad: QuadratureSettings = QuadratureSettings(),
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """ETAP values and flags along the horizontal line at ``y``."""
    mech = Mechanism.parse(mechanism)
    points = [(float(x), float(y)) for x in xs]
    cells = _evaluate_points(template, mech, quad, points, workers)
    return (
        np.array([v for v, _ in cells], dtype=float),
        np.array([f for _, f in cells], dtype=np.int64),
    )


def standard_scenario(
    dz: float = 0.1,
    D: float = 0.05,
    params: PropagationParams | None = None,
    eta: float = 1.0,
    x_o: tuple[float, float] = (0.0, 1.0),
    spacing: float = 2.0,
) -> Scenario:
    """2 m link along the x axis with the person at ``x_o``."""
    return Scenario(
        LinkGeometry.standard(dz, spacing),
        Person(Vec3(x_o[0], x_o[1], 0.0), D),
        params or PropagationParams(),
        eta,
    )
