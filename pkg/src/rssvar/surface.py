"""Parameter sweeps, Cassini-oval surfaces, and grid serialization.

Grid CSV files have the header ``x,y,value,valid`` followed by one row per
cell in row-major order (y outer, x inner), numbers written with 6
significant digits, ``nan`` for holes and ``1``/``0`` for validity. A JSON
sidecar ``<name>.meta.json`` carries the grid spec and metadata. The JSON
format holds everything in one file at full precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .errors import RssVarError
from .etap import Mechanism, QuadratureSettings, Scenario, etap_cut
from .geometry import COINCIDENT_TOL, LinkGeometry
from .grid import GridLine, GridSpec, SurfaceGrid
from .propagation import PropagationParams, node_distances, scatter_from_distances

CSV_HEADER = "x,y,value,valid"
GRID_FORMAT = "rssvar-grid"
CUTS_FORMAT = "rssvar-cuts"


@dataclass
class CutSet:
    """1-D ETAP cuts along ``y = line.y``, one per swept parameter value."""

    param: str
    param_values: list[float]
    line: GridLine
    values: np.ndarray  # (n_params, n_x)
    flags: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def xs(self) -> np.ndarray:
        return self.line.xs()

    @property
    def valid(self) -> np.ndarray:
        return (self.flags == 0) & np.isfinite(self.values)

    def db(self) -> np.ndarray:
        """All cuts in dB relative to the largest valid value across the whole sweep."""
        peak = np.max(np.where(self.valid, self.values, -np.inf))
        with np.errstate(divide="ignore", invalid="ignore"):
            return 10.0 * np.log10(self.values / peak)

    def peak_param(self) -> float:
        masked = np.where(self.valid, self.values, -np.inf)
        return self.param_values[int(np.unravel_index(np.argmax(masked), masked.shape)[0])]

    def argmax_x(self, k: int) -> float:
        masked = np.where(self.valid[k], self.values[k], -np.inf)
        return float(self.xs[int(np.argmax(masked))])


def _sweep(template: Scenario, line: GridLine, variants, param, values, mechanism, quad, workers) -> CutSet:
    rows, flags = [], []
    for scn, mech, q in variants:
        v, f = etap_cut(scn, line.xs(), line.y, mech, q, workers)
        rows.append(v)
        flags.append(f)
    meta = {
        "quantity": "etap_cut",
        "param": param,
        "mechanism": str(mechanism),
        "D": template.person.D,
        "eta": template.eta,
        "params": {"c_s": template.params.c_s, "c_r": template.params.c_r, "n_p": template.params.n_p},
        "dz": template.link.dz,
        "spacing": template.link.d_rt,
        "alpha_max": quad.alpha_max,
        "normalization": "db_relative_to_sweep_max",
    }
    return CutSet(param, [float(v) for v in values], line, np.array(rows), np.array(flags), meta)


def sweep_np(
    template: Scenario,
    line: GridLine,
    np_list: Sequence[float],
    quad: QuadratureSettings = QuadratureSettings(),
    workers: int = 1,
) -> CutSet:
    """Reflection ETAP cuts for several path loss exponents.

    ``n_p <= 2`` needs ``quad.alpha_max``; the same truncation is then used
    for every exponent so the cuts stay comparable.
    """
    if not len(np_list):
        raise ValueError("np_list is empty")
    variants = [
        (replace(template, params=replace(template.params, n_p=float(n))), "reflect", quad) for n in np_list
    ]
    return _sweep(template, line, variants, "n_p", np_list, "reflect", quad, workers)


def sweep_dz(
    template: Scenario,
    line: GridLine,
    dz_list: Sequence[float],
    mechanism: "str | Mechanism" = "reflect",
    quad: QuadratureSettings = QuadratureSettings(),
    workers: int = 1,
) -> CutSet:
    """ETAP cuts with both nodes raised to each height in ``dz_list``."""
    if not len(dz_list):
        raise ValueError("dz_list is empty")
    variants = []
    for dz in dz_list:
        t, r = template.link.x_t, template.link.x_r
        link = LinkGeometry((t.x, t.y, float(dz)), (r.x, r.y, float(dz)))
        variants.append((replace(template, link=link), mechanism, quad))
    return _sweep(template, line, variants, "dz", dz_list, mechanism, quad, workers)


def cassini_surface(link: LinkGeometry, grid: GridSpec, c_s: float = 100.0) -> SurfaceGrid:
    """Bistatic scattering power at each cell centre (scatterer plane, z = 0)."""
    xs, ys = grid.centers()
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
    d_t, d_r = node_distances(link, pts)
    hole = (d_t <= COINCIDENT_TOL) | (d_r <= COINCIDENT_TOL)
    with np.errstate(divide="ignore"):
        vals = scatter_from_distances(d_t, d_r, PropagationParams(c_s=c_s))
    vals = np.where(hole, np.nan, vals)
    meta = {
        "quantity": "scatter_power",
        "c_s": c_s,
        "x_t": list(link.x_t),
        "x_r": list(link.x_r),
        "dz": link.dz,
    }
    return SurfaceGrid(grid, vals, ~hole, meta)


# -- serialization ----------------------------------------------------------


def sidecar_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj, path: Path) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    _write_text(path, text)


def _write_text(path: Path, text: str) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise RssVarError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise RssVarError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else f"{v:.6g}"


def _grid_document(surface: SurfaceGrid, provenance: dict | None) -> dict:
    doc = {
        "format": GRID_FORMAT,
        "artifact_version": __version__,
        "grid": surface.spec.to_dict(),
        "metadata": surface.metadata,
    }
    if provenance is not None:
        doc["provenance"] = provenance
    return doc


def export_grid(
    surface: SurfaceGrid, path: str | Path, fmt: str = "csv", provenance: dict | None = None
) -> Path:
    """Write ``surface`` as CSV (plus JSON sidecar) or as a single JSON file."""
    path = Path(path)
    doc = _grid_document(surface, provenance)
    if fmt == "json":
        doc["values"] = surface.values.ravel()
        doc["valid"] = surface.valid.ravel()
        if surface.flags is not None:
            doc["flags"] = np.asarray(surface.flags).ravel()
        dump_json(doc, path)
        return path
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    xs, ys = surface.spec.centers()
    lines = [CSV_HEADER]
    for x, y, v, ok in zip(xs.ravel(), ys.ravel(), surface.values.ravel(), surface.valid.ravel()):
        lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(v)},{int(ok)}")
    _write_text(path, "\n".join(lines) + "\n")
    if surface.flags is not None:
        doc["flags"] = np.asarray(surface.flags).ravel()
    dump_json(doc, sidecar_path(path))
    return path


def _spec_from_doc(doc: dict) -> GridSpec:
    return GridSpec(**{k: float(v) for k, v in doc["grid"].items()})


def read_grid(path: str | Path) -> SurfaceGrid:
    """Inverse of :func:`export_grid` for either format."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(_read_text(path))
        spec = _spec_from_doc(doc)
        vals = np.array([math.nan if v is None else v for v in doc["values"]], dtype=float)
        flags = np.asarray(doc["flags"], dtype=np.int64).reshape(spec.shape) if "flags" in doc else None
        return SurfaceGrid(spec, vals, np.asarray(doc["valid"], dtype=bool), doc.get("metadata", {}), flags)
    lines = _read_text(path).splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise RssVarError(f"{path}: expected header {CSV_HEADER!r}")
    rows = [ln.split(",") for ln in lines[1:] if ln]
    xs = np.array([float(r[0]) for r in rows])
    ys = np.array([float(r[1]) for r in rows])
    vals = np.array([float(r[2]) for r in rows])
    valid = np.array([r[3] == "1" for r in rows])
    side = sidecar_path(path)
    if side.exists():
        doc = json.loads(_read_text(side))
        spec = _spec_from_doc(doc)
        meta = doc.get("metadata", {})
        flags = np.asarray(doc["flags"], dtype=np.int64).reshape(spec.shape) if "flags" in doc else None
    else:
        ux, uy = np.unique(xs), np.unique(ys)
        step = float(ux[1] - ux[0])
        spec = GridSpec(ux[0] - step / 2, ux[-1] + step / 2, uy[0] - step / 2, uy[-1] + step / 2, step)
        meta, flags = {}, None
    if len(rows) != spec.size:
        raise RssVarError(f"{path}: {len(rows)} rows for a {spec.ny}x{spec.nx} grid")
    return SurfaceGrid(spec, vals, valid, meta, flags)


def export_cuts(cuts: CutSet, path: str | Path, provenance: dict | None = None) -> Path:
    """CSV with columns ``<param>,x,y,value,db,valid`` and a JSON sidecar."""
    path = Path(path)
    db = cuts.db()
    lines = [f"{cuts.param},x,y,value,db,valid"]
    for k, pv in enumerate(cuts.param_values):
        for j, x in enumerate(cuts.xs):
            lines.append(
                f"{_fmt(pv)},{_fmt(x)},{_fmt(cuts.line.y)},{_fmt(cuts.values[k, j])},"
                f"{_fmt(db[k, j])},{int(cuts.valid[k, j])}"
            )
    _write_text(path, "\n".join(lines) + "\n")
    doc = {
        "format": CUTS_FORMAT,
        "artifact_version": __version__,
        "line": cuts.line.to_dict(),
        "param": cuts.param,
        "param_values": cuts.param_values,
        "metadata": cuts.metadata,
        "peak_param": cuts.peak_param(),
    }
    if provenance is not None:
        doc["provenance"] = provenance
    dump_json(doc, sidecar_path(path))
    return path
