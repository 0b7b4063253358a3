"""Link and person geometry.

Coordinates are metres. Scatterers live in the plane ``z = 0``; both radio
nodes sit at the same height ``dz`` above it. The person is a vertical
cylinder of diameter ``D`` standing in the scatterer plane, tall enough that
only its plan-view footprint matters for shadowing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateGeometry

#: Points closer than this (metres) are treated as coincident.
COINCIDENT_TOL = 1e-9


class Vec3(NamedTuple):
    x: float
    y: float
    z: float = 0.0

    @classmethod
    def of(cls, p: Sequence[float]) -> "Vec3":
        vals = [float(v) for v in p]
        if len(vals) == 2:
            vals.append(0.0)
        if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
            raise ValueError(f"expected 2 or 3 finite coordinates, got {p!r}")
        return cls(*vals)

    def array(self) -> np.ndarray:
        return np.array(self, dtype=float)


def _dist(p: Sequence[float], q: Sequence[float]) -> float:
    return math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2)


@dataclass(frozen=True)
class LinkGeometry:
    """A TX/RX pair at a common height above the scatterer plane."""

    x_t: Vec3
    x_r: Vec3

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_t", Vec3.of(self.x_t))
        object.__setattr__(self, "x_r", Vec3.of(self.x_r))
        if _dist(self.x_t, self.x_r) <= COINCIDENT_TOL:
            raise DegenerateGeometry("TX and RX coincide")
        if abs(self.x_t.z - self.x_r.z) > COINCIDENT_TOL:
            raise ValueError("TX and RX must be at the same height")

    @classmethod
    def standard(cls, dz: float = 0.1, spacing: float = 2.0) -> "LinkGeometry":
        """Nodes at ``(-spacing/2, 0, dz)`` and ``(spacing/2, 0, dz)``."""
        h = spacing / 2.0
        return cls(Vec3(-h, 0.0, dz), Vec3(h, 0.0, dz))

    @property
    def d_rt(self) -> float:
        return _dist(self.x_t, self.x_r)

    @property
    def dz(self) -> float:
        return self.x_t.z

    def swapped(self) -> "LinkGeometry":
        return LinkGeometry(self.x_r, self.x_t)


@dataclass(frozen=True)
class Person:
    """Vertical cylinder centred at ``x_o`` (in the scatterer plane)."""

    x_o: Vec3
    D: float

    def __post_init__(self) -> None:
        x_o = Vec3.of(self.x_o)
        if x_o.z != 0.0:
            raise ValueError("person must stand in the scatterer plane (z = 0)")
        if not (self.D > 0 and math.isfinite(self.D)):
            raise ValueError(f"diameter must be positive, got {self.D}")
        object.__setattr__(self, "x_o", x_o)
        object.__setattr__(self, "D", float(self.D))

    def moved(self, x: float, y: float) -> "Person":
        return Person(Vec3(x, y, 0.0), self.D)


class GeometryScalars(NamedTuple):
    a: float  # |x_t - x_o|
    b: float  # |x_r - x_o|
    theta: float
    cos_theta: float
    d_plus: float
    d_minus: float  # +inf when a == b
    d_rt: float


def geometry_scalars(link: LinkGeometry, person: Person) -> GeometryScalars:
    """Distances and angle that parameterize the shadow integrals.

    ``theta`` is the angle between ``x_r - x_o`` and ``x_o - x_t`` (full 3-D
    vectors). It is near 0 when the person stands between the nodes and near
    pi on the far extensions of the TX-RX line.
    """
    t, r, o = link.x_t, link.x_r, person.x_o
    a = _dist(t, o)
    b = _dist(r, o)
    if a <= COINCIDENT_TOL or b <= COINCIDENT_TOL:
        raise DegenerateGeometry(f"person position {tuple(o)} coincides with a node")
    u = (r[0] - o[0], r[1] - o[1], r[2] - o[2])
    v = (o[0] - t[0], o[1] - t[1], o[2] - t[2])
    dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
    cx = u[1] * v[2] - u[2] * v[1]
    cy = u[2] * v[0] - u[0] * v[2]
    cz = u[0] * v[1] - u[1] * v[0]
    # atan2 keeps precision near 0 and pi where arccos does not.
    theta = math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), dot)
    cos_theta = max(-1.0, min(1.0, dot / (a * b)))
    d_plus = 1.0 / (1.0 / a + 1.0 / b)
    inv_minus = 1.0 / b - 1.0 / a
    d_minus = math.inf if inv_minus == 0.0 else 1.0 / inv_minus
    return GeometryScalars(a, b, theta, cos_theta, d_plus, d_minus, link.d_rt)


def shadow_width(apex: Sequence[float], person: Person, alpha: float) -> float:
    """Width of the shadow cast from ``apex``, a distance ``alpha`` behind the person."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    h = _dist(Vec3.of(apex), person.x_o)
    if h <= COINCIDENT_TOL:
        raise DegenerateGeometry("apex coincides with the person")
    return person.D * (1.0 + alpha / h)


def segments_shadowed(
    endpoint: Sequence[float], scatterers: np.ndarray, person: Person
) -> np.ndarray:
    """Vectorized plan-view cylinder test for segments ``endpoint -> scatterer``.

    Returns a boolean array with one entry per row of ``scatterers``. A
    segment touching the circle (distance exactly ``D/2``) counts as shadowed.
    """
    pts = np.asarray(scatterers, dtype=float).reshape(-1, np.shape(scatterers)[-1])
    px, py = float(endpoint[0]), float(endpoint[1])
    cx, cy = person.x_o.x, person.x_o.y
    dx = pts[:, 0] - px
    dy = pts[:, 1] - py
    wx, wy = cx - px, cy - py
    len2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(len2 > 0.0, (wx * dx + wy * dy) / len2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    ex = px + t * dx - cx
    ey = py + t * dy - cy
    r = 0.5 * person.D
    return ex * ex + ey * ey <= r * r


def segment_shadowed(endpoint: Sequence[float], scatterer: Sequence[float], person: Person) -> bool:
    """True if the plan view of segment ``endpoint -> scatterer`` meets the person."""
    return bool(segments_shadowed(endpoint, np.asarray([scatterer], dtype=float), person)[0])


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * R(rotation) @ (p - origin)``, a rotation with det = +1."""

    origin: tuple[float, float]
    cos: float
    sin: float
    scale: float

    def apply(self, points: np.ndarray | Sequence[Sequence[float]]) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        q = p[..., :2] - np.asarray(self.origin)
        x = self.cos * q[..., 0] + self.sin * q[..., 1]
        y = -self.sin * q[..., 0] + self.cos * q[..., 1]
        return self.scale * np.stack([x, y], axis=-1)

    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 matrix of the transform."""
        R = self.scale * np.array([[self.cos, self.sin], [-self.sin, self.cos]])
        out = np.eye(3)
        out[:2, :2] = R
        out[:2, 2] = -R @ np.asarray(self.origin)
        return out


def link_frame(tx: Sequence[float], rx: Sequence[float]) -> SimilarityTransform:
    """Orientation-preserving similarity taking ``tx -> (1, 0)`` and ``rx -> (-1, 0)``."""
    tx2 = np.asarray(tx, dtype=float)[:2]
    rx2 = np.asarray(rx, dtype=float)[:2]
    d = tx2 - rx2
    length = float(np.hypot(d[0], d[1]))
    if length <= COINCIDENT_TOL:
        raise DegenerateGeometry("TX and RX coincide in plan view")
    mid = 0.5 * (tx2 + rx2)
    return SimilarityTransform(
        origin=(float(mid[0]), float(mid[1])),
        cos=float(d[0] / length),
        sin=float(d[1] / length),
        scale=2.0 / length,
    )


def normalize_coordinates(
    link2d: tuple[Sequence[float], Sequence[float]], points: Sequence[Sequence[float]]
) -> tuple[SimilarityTransform, np.ndarray]:
    """Map a (tx, rx) pair onto (1, 0), (-1, 0) and carry ``points`` along."""
    transform = link_frame(*link2d)
    pts = np.asarray(points, dtype=float).reshape(-1, 2) if len(points) else np.empty((0, 2))
    return transform, transform.apply(pts)
