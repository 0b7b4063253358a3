"""Rectangular grids and the surfaces evaluated on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class GridSpec:
    """Cells of side ``step`` tiling ``[x_min, x_max] x [y_min, y_max]``.

    Rows run along y (row 0 at ``y_min``), columns along x. Bins are
    half-open ``[lo, hi)`` except that the last bin on each axis also takes
    points lying exactly on the upper edge.
    """

    x_min: float = -2.0
    x_max: float = 2.0
    y_min: float = -2.0
    y_max: float = 2.0
    step: float = 0.05

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid must have at least 2x2 cells")

    @staticmethod
    def _count(lo: float, hi: float, step: float) -> int:
        n = (hi - lo) / step
        k = round(n)
        if abs(n - k) > 1e-6:
            raise ValueError(f"extent {hi - lo} is not a multiple of step {step}")
        return int(k)

    @property
    def nx(self) -> int:
        return self._count(self.x_min, self.x_max, self.step)

    @property
    def ny(self) -> int:
        return self._count(self.y_min, self.y_max, self.step)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def x_centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.step

    def y_centers(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.step

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of cell centres, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.x_centers(), self.y_centers())

    def locate(self, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row/column indices for points, plus an in-grid mask."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        col = np.floor((x - self.x_min) / self.step).astype(np.int64)
        row = np.floor((y - self.y_min) / self.step).astype(np.int64)
        col = np.where(x == self.x_max, self.nx - 1, col)
        row = np.where(y == self.y_max, self.ny - 1, row)
        inside = (
            (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)
            & (col >= 0) & (col < self.nx) & (row >= 0) & (row < self.ny)
        )
        return row, col, inside

    def to_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in ("x_min", "x_max", "y_min", "y_max", "step")}


@dataclass(frozen=True)
class GridLine:
    """Points ``(x_min + k*step, y)`` for ``k = 0..n`` (both ends included)."""

    x_min: float = -2.0
    x_max: float = 2.0
    step: float = 0.05
    y: float = 0.1

    def xs(self) -> np.ndarray:
        n = GridSpec._count(self.x_min, self.x_max, self.step)
        return self.x_min + np.arange(n + 1) * self.step

    def to_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in ("x_min", "x_max", "step", "y")}


@dataclass
class SurfaceGrid:
    """Per-cell values on a :class:`GridSpec` with a validity mask."""

    spec: GridSpec
    values: np.ndarray
    valid: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)
    flags: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(self.spec.shape)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(self.spec.shape)

    def argmax(self) -> tuple[int, int]:
        """Row/column of the largest valid value; ties go to the lowest row-major index."""
        masked = np.where(self.valid, self.values, -np.inf).ravel()
        if not np.any(np.isfinite(masked)):
            raise ValueError("surface has no valid cells")
        return divmod(int(np.argmax(masked)), self.spec.nx)

    def argmax_xy(self) -> tuple[float, float]:
        i, j = self.argmax()
        return float(self.spec.x_centers()[j]), float(self.spec.y_centers()[i])

    def to_db(self) -> "SurfaceGrid":
        """``10 log10(value / max)`` with the max taken over valid cells only.

        Exactly one cell ends up at 0 dB: cells tied with the peak are nudged
        to the largest negative double.
        """
        i, j = self.argmax()
        peak = self.values[i, j]
        with np.errstate(divide="ignore", invalid="ignore"):
            db = 10.0 * np.log10(self.values / peak)
        ties = (db == 0.0)
        ties[i, j] = False
        db[ties] = -math.ulp(0.0)
        db[i, j] = 0.0
        meta = dict(self.metadata)
        meta.update(
            normalization="db_relative_to_max",
            peak_value=float(peak),
            peak_index=int(i * self.spec.nx + j),
            peak_ties=int(ties.sum()),
        )
        return replace(self, values=db, valid=self.valid.copy(), metadata=meta)

    def local_maxima(self) -> list[tuple[int, int]]:
        """Plateau-aware local maxima over valid cells (8-neighbourhood).

        Cells no smaller than any valid neighbour are grouped into connected
        plateaus; each plateau is reported once, by its lowest row-major cell.
        Mirror-symmetric surfaces put peaks on such two-cell plateaus.
        """
        v = np.where(self.valid, self.values, -np.inf)
        weak = self.valid & np.isfinite(v) & (v == ndimage.maximum_filter(v, size=3, mode="constant", cval=-np.inf))
        labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
        out = []
        for k in range(1, n + 1):
            cells = np.argwhere(labels == k)
            i, j = cells[0]
            out.append((int(i), int(j)))
        return out
