"""Single-bounce received-power kernels.

Both kernels depend on a scatterer position only through its distances to
the two nodes, so each comes in two forms: a distance form used inside the
shadow integrals, and a position form that accepts one point or an ``(N, 3)``
array of points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularPosition
from .geometry import COINCIDENT_TOL, LinkGeometry


@dataclass(frozen=True)
class PropagationParams:
    c_s: float = 1.0
    c_r: float = 1.0
    n_p: float = 3.0

    def __post_init__(self) -> None:
        for name in ("c_s", "c_r", "n_p"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.n_p < 1:
            raise ValueError(f"path loss exponent must be >= 1, got {self.n_p}")


def scatter_from_distances(d_t, d_r, params: PropagationParams):
    """Bistatic scattering power ``c_s / (d_t^2 d_r^2)``."""
    return params.c_s / ((d_t * d_t) * (d_r * d_r))


def reflect_from_distances(d_t, d_r, params: PropagationParams):
    """Reflection power ``c_r / (d_t + d_r)^n_p``."""
    return params.c_r / (d_t + d_r) ** params.n_p


def node_distances(link: LinkGeometry, x) -> tuple[np.ndarray, np.ndarray]:
    """Distances from ``x`` (shape ``(3,)`` or ``(N, 3)``) to TX and RX."""
    pts = np.asarray(x, dtype=float)
    d_t = np.linalg.norm(pts - np.asarray(link.x_t), axis=-1)
    d_r = np.linalg.norm(pts - np.asarray(link.x_r), axis=-1)
    return d_t, d_r


def _checked_distances(link: LinkGeometry, x):
    d_t, d_r = node_distances(link, x)
    if np.any(d_t <= COINCIDENT_TOL) or np.any(d_r <= COINCIDENT_TOL):
        raise SingularPosition("scatterer position coincides with a node")
    return d_t, d_r


def _scalarize(v):
    return float(v) if np.ndim(v) == 0 else v


def power_scatter(link: LinkGeometry, x, params: PropagationParams):
    d_t, d_r = _checked_distances(link, x)
    return _scalarize(scatter_from_distances(d_t, d_r, params))


def power_reflect(link: LinkGeometry, x, params: PropagationParams):
    d_t, d_r = _checked_distances(link, x)
    return _scalarize(reflect_from_distances(d_t, d_r, params))


def cassini_level(link: LinkGeometry, x):
    """Product of the distances to both nodes; its level sets are Cassini ovals."""
    d_t, d_r = node_distances(link, x)
    return _scalarize(d_t * d_r)


KERNELS = {
    "scatter": scatter_from_distances,
    "reflect": reflect_from_distances,
}


def power(mechanism: str, link: LinkGeometry, x, params: PropagationParams):
    """Dispatch on ``"scatter"`` or ``"reflect"``."""
    if mechanism == "scatter":
        return power_scatter(link, x, params)
    if mechanism == "reflect":
        return power_reflect(link, x, params)
    raise ValueError(f"unknown mechanism {mechanism!r}")
