"""Measurement logs to an empirical RSS-variance surface.

Every record is moved into its own link's normalized frame (TX at (1, 0),
RX at (-1, 0)) and binned by the normalized person position. Bin
statistics are accumulated per link as (count, mean, M2) and merged with
the pairwise parallel-variance rule in sorted link order, so the surface
does not depend on record order or sharding.

File formats (UTF-8 CSV with a header row):

* measurements: ``time_s,tx_id,rx_id,rss_db,person_x_m,person_y_m``
* survey: ``node_id,x_m,y_m,z_m``
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import NoOverlap, RssVarError, SchemaMismatch, UnknownNodeId
from .geometry import Vec3, link_frame
from .grid import GridSpec, SurfaceGrid

MEASUREMENT_COLUMNS = ("time_s", "tx_id", "rx_id", "rss_db", "person_x_m", "person_y_m")
SURVEY_COLUMNS = ("node_id", "x_m", "y_m", "z_m")

NodeSurvey = dict  # node_id -> Vec3


class MeasurementRecord(NamedTuple):
    time_s: float
    tx_id: str
    rx_id: str
    rss_db: float
    person_x: float
    person_y: float


class Reject(NamedTuple):
    row: int  # 1-based line number in the file, header is line 1
    reason: str
    text: str


@dataclass
class LoadResult:
    records: list[MeasurementRecord]
    rejects: list[Reject]
    survey: NodeSurvey


def _open_csv(path: Path):
    try:
        return open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise RssVarError(f"cannot read {path}: {exc.strerror or exc}") from exc


def load_survey(path: str | Path) -> NodeSurvey:
    path = Path(path)
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SURVEY_COLUMNS:
            raise SchemaMismatch(f"{path}: expected header {','.join(SURVEY_COLUMNS)}, got {header}")
        survey: NodeSurvey = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                node, x, y, z = row
                pos = Vec3.of((float(x), float(y), float(z)))
            except ValueError as exc:
                raise SchemaMismatch(f"{path}:{lineno}: malformed survey row {row}") from exc
            if node in survey:
                raise SchemaMismatch(f"{path}:{lineno}: duplicate node id {node!r}")
            survey[node] = pos
    return survey


def load_measurements(csv_path: str | Path, survey_path: str | Path, strict: bool = False) -> LoadResult:
    """Parse a measurement log against a node survey.

    Malformed rows and rows naming unknown nodes are collected as rejects
    with their line numbers. With ``strict=True`` an unknown node raises
    :class:`UnknownNodeId` instead.
    """
    survey = load_survey(survey_path)
    csv_path = Path(csv_path)
    records: list[MeasurementRecord] = []
    rejects: list[Reject] = []
    with _open_csv(csv_path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MEASUREMENT_COLUMNS:
            raise SchemaMismatch(
                f"{csv_path}: expected header {','.join(MEASUREMENT_COLUMNS)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            text = ",".join(row)
            if len(row) != len(MEASUREMENT_COLUMNS):
                rejects.append(Reject(lineno, "wrong column count", text))
                continue
            try:
                t, tx, rx, rss, px, py = row
                rec = MeasurementRecord(float(t), tx.strip(), rx.strip(), float(rss), float(px), float(py))
            except ValueError:
                rejects.append(Reject(lineno, "unparseable number", text))
                continue
            if not all(math.isfinite(v) for v in (rec.time_s, rec.rss_db, rec.person_x, rec.person_y)):
                rejects.append(Reject(lineno, "non-finite value", text))
                continue
            missing = [n for n in (rec.tx_id, rec.rx_id) if n not in survey]
            if missing:
                if strict:
                    raise UnknownNodeId(f"{csv_path}:{lineno}: unknown node id {missing[0]!r}")
                rejects.append(Reject(lineno, f"unknown node id {missing[0]}", text))
                continue
            if rec.tx_id == rec.rx_id:
                rejects.append(Reject(lineno, "tx_id equals rx_id", text))
                continue
            records.append(rec)
    return LoadResult(records, rejects, survey)


def write_measurements(path: str | Path, records: Iterable[MeasurementRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_COLUMNS)
        for r in records:
            w.writerow([repr(r.time_s), r.tx_id, r.rx_id, repr(r.rss_db), repr(r.person_x), repr(r.person_y)])


def write_survey(path: str | Path, survey: NodeSurvey) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURVEY_COLUMNS)
        for node, p in survey.items():
            w.writerow([node, repr(p.x), repr(p.y), repr(p.z)])


def write_rejects(path: str | Path, rejects: Sequence[Reject]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("row", "reason", "text"))
        for r in rejects:
            w.writerow(r)


@dataclass
class BinnedVariance:
    spec: GridSpec
    count: np.ndarray  # (ny, nx) samples per bin
    variance: np.ndarray  # (ny, nx), NaN where invalid
    valid: np.ndarray
    min_count: int
    n_in_grid: int
    n_out_of_grid: int
    n_rejects: int = 0
    pooling: str = "pooled"
    metadata: dict = field(default_factory=dict)

    @property
    def n_total(self) -> int:
        return self.n_in_grid + self.n_out_of_grid + self.n_rejects

    @property
    def out_of_grid_fraction(self) -> float:
        n = self.n_in_grid + self.n_out_of_grid
        return self.n_out_of_grid / n if n else 0.0

    def as_surface(self) -> SurfaceGrid:
        meta = dict(self.metadata)
        meta.update(
            quantity="rss_variance_db2",
            min_count=self.min_count,
            pooling=self.pooling,
            n_in_grid=self.n_in_grid,
            n_out_of_grid=self.n_out_of_grid,
            n_rejects=self.n_rejects,
        )
        return SurfaceGrid(self.spec, self.variance, self.valid, meta)


class _Moments(NamedTuple):
    n: np.ndarray
    mean: np.ndarray
    m2: np.ndarray


def _bin_moments(flat: np.ndarray, vals: np.ndarray, size: int) -> _Moments:
    order = np.lexsort((vals, flat))
    flat, vals = flat[order], vals[order]
    n = np.bincount(flat, minlength=size).astype(float)
    s = np.bincount(flat, weights=vals, minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n > 0, s / n, 0.0)
    m2 = np.bincount(flat, weights=(vals - mean[flat]) ** 2, minlength=size)
    return _Moments(n, mean, m2)


def merge_moments(a: _Moments, b: _Moments) -> _Moments:
    """Pairwise combination of per-bin (count, mean, M2) accumulators."""
    n = a.n + b.n
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = b.mean - a.mean
        mean = np.where(n > 0, a.mean + delta * b.n / np.where(n > 0, n, 1.0), 0.0)
        m2 = a.m2 + b.m2 + np.where(n > 0, delta * delta * a.n * b.n / np.where(n > 0, n, 1.0), 0.0)
    return _Moments(n, mean, m2)


def normalized_positions(records: Sequence[MeasurementRecord], survey: NodeSurvey) -> dict:
    """Group records by (tx, rx) and map person positions into each link's frame.

    Returns ``{(tx, rx): (transform, positions (N, 2), rss (N,))}``.
    """
    groups: dict[tuple[str, str], list[MeasurementRecord]] = defaultdict(list)
    for r in records:
        groups[(r.tx_id, r.rx_id)].append(r)
    out = {}
    for key in sorted(groups):
        recs = groups[key]
        tf = link_frame(survey[key[0]], survey[key[1]])
        pts = tf.apply(np.array([[r.person_x, r.person_y] for r in recs]))
        out[key] = (tf, pts, np.array([r.rss_db for r in recs]))
    return out


def build_variance_surface(
    records: Sequence[MeasurementRecord],
    survey: NodeSurvey,
    grid: GridSpec,
    min_count: int = 10,
    pooling: str = "pooled",
    n_rejects: int = 0,
) -> BinnedVariance:
    """Bin RSS by normalized person position and take per-bin sample variance.

    ``pooling="pooled"`` is the variance of all samples in a bin.
    ``pooling="per_link"`` averages each link's own within-bin variance
    (links with at least two samples in the bin), which removes differences
    between link mean levels.
    """
    if min_count < 2:
        raise ValueError("min_count must be at least 2")
    if pooling not in ("pooled", "per_link"):
        raise ValueError(f"unknown pooling {pooling!r}")
    size = grid.size
    total = _Moments(np.zeros(size), np.zeros(size), np.zeros(size))
    var_sum = np.zeros(size)
    var_links = np.zeros(size)
    n_in = n_out = 0
    for key, (_, pts, rss) in normalized_positions(records, survey).items():
        row, col, inside = grid.locate(pts[:, 0], pts[:, 1])
        n_out += int((~inside).sum())
        n_in += int(inside.sum())
        flat = (row * grid.nx + col)[inside]
        mom = _bin_moments(flat, rss[inside], size)
        total = merge_moments(total, mom)
        has = mom.n >= 2
        var_sum[has] += mom.m2[has] / (mom.n[has] - 1.0)
        var_links[has] += 1.0
    valid = total.n >= min_count
    with np.errstate(invalid="ignore", divide="ignore"):
        if pooling == "pooled":
            variance = np.where(valid, total.m2 / (total.n - 1.0), np.nan)
        else:
            valid &= var_links > 0
            variance = np.where(valid, var_sum / np.where(var_links > 0, var_links, 1.0), np.nan)
    return BinnedVariance(
        spec=grid,
        count=total.n.reshape(grid.shape).astype(np.int64),
        variance=variance.reshape(grid.shape),
        valid=valid.reshape(grid.shape),
        min_count=min_count,
        n_in_grid=n_in,
        n_out_of_grid=n_out,
        n_rejects=n_rejects,
        pooling=pooling,
    )


@dataclass(frozen=True)
class ComparisonReport:
    spearman: float
    peak_distance: float
    top_decile_jaccard: float
    n_joint: int
    empirical_peak: tuple[float, float]
    model_peak: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "spearman": self.spearman,
            "peak_distance": self.peak_distance,
            "top_decile_jaccard": self.top_decile_jaccard,
            "n_joint": self.n_joint,
            "empirical_peak": list(self.empirical_peak),
            "model_peak": list(self.model_peak),
        }


def _resample(model: "SurfaceGrid | Callable", spec: GridSpec) -> SurfaceGrid:
    xs, ys = spec.centers()
    if callable(model) and not isinstance(model, SurfaceGrid):
        vals = np.asarray(model(xs, ys), dtype=float)
        return SurfaceGrid(spec, vals, np.isfinite(vals))
    if model.spec == spec:
        return model
    row, col, inside = model.spec.locate(xs.ravel(), ys.ravel())
    r = np.clip(row, 0, model.spec.ny - 1)
    c = np.clip(col, 0, model.spec.nx - 1)
    vals = np.where(inside, model.values[r, c], np.nan)
    ok = inside & model.valid[r, c]
    return SurfaceGrid(spec, vals, ok)


def _top_decile(values: np.ndarray) -> np.ndarray:
    k = max(1, int(math.ceil(0.1 * len(values))))
    idx = np.argsort(-values, kind="stable")[:k]
    out = np.zeros(len(values), dtype=bool)
    out[idx] = True
    return out


def compare_surfaces(empirical: "BinnedVariance | SurfaceGrid", model: "SurfaceGrid | Callable") -> ComparisonReport:
    """Rank agreement, peak offset, and top-decile overlap of two surfaces."""
    emp = empirical.as_surface() if isinstance(empirical, BinnedVariance) else empirical
    mod = _resample(model, emp.spec)
    joint = emp.valid & mod.valid & np.isfinite(emp.values) & np.isfinite(mod.values)
    n = int(joint.sum())
    if n < 10:
        raise NoOverlap(f"only {n} jointly valid bins (need 10)")
    e = emp.values[joint]
    m = mod.values[joint]
    rho = float(stats.spearmanr(e, m).statistic)
    te, tm = _top_decile(e), _top_decile(m)
    jaccard = float((te & tm).sum() / (te | tm).sum())
    xs, ys = emp.spec.centers()
    jx, jy = xs[joint], ys[joint]
    pe = (float(jx[np.argmax(e)]), float(jy[np.argmax(e)]))
    pm = (float(jx[np.argmax(m)]), float(jy[np.argmax(m)]))
    dist = math.hypot(pe[0] - pm[0], pe[1] - pm[1])
    return ComparisonReport(rho, dist, jaccard, n, pe, pm)
