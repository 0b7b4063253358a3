"""Synthetic measurement campaigns built from the single-bounce simulator.

Each link is simulated in its own canonical frame (TX at (1, 0, dz), RX at
(-1, 0, dz), scatterers on z = 0) with its own Poisson field, then placed
at a distinct site by a rotation and translation. A person walks a raster
of jittered positions around every link and a short RSS series is
recorded at each stop. The output is what a field campaign would log:
surveyed node positions plus time-stamped RSS rows in site coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoScatterers
from .geometry import LinkGeometry, Person, Vec3
from .grid import GridSpec
from .ingest import MeasurementRecord, NodeSurvey
from .propagation import PropagationParams
from .simulator import Region, child_rng, sample_field, simulate_rss_series, synthesize_voltages

SITE_SPACING = 30.0  # m between link sites; far beyond any field's reach


@dataclass(frozen=True)
class CampaignSettings:
    n_links: int = 16
    dz: float = 0.5
    mechanism: str = "scatter"
    params: PropagationParams = field(default_factory=PropagationParams)
    region: Region = field(default_factory=lambda: Region.square(8.0))
    eta: float = 2.0
    D: float = 0.4
    raster: GridSpec = field(default_factory=lambda: GridSpec(-2.0, 2.0, -2.0, 2.0, 0.25))
    samples_per_stop: int = 25
    sample_period_s: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_links < 1:
            raise ValueError("n_links must be at least 1")
        if self.samples_per_stop < 2:
            raise ValueError("samples_per_stop must be at least 2")
        if self.eta <= 0:
            raise NoScatterers(f"scatterer density must be positive, got {self.eta}")

    def to_dict(self) -> dict:
        return {
            "n_links": self.n_links,
            "dz": self.dz,
            "mechanism": self.mechanism,
            "params": {"c_s": self.params.c_s, "c_r": self.params.c_r, "n_p": self.params.n_p},
            "region": self.region.to_dict(),
            "eta": self.eta,
            "D": self.D,
            "raster": self.raster.to_dict(),
            "samples_per_stop": self.samples_per_stop,
            "sample_period_s": self.sample_period_s,
            "seed": self.seed,
        }


def canonical_link(dz: float) -> LinkGeometry:
    return LinkGeometry((1.0, 0.0, dz), (-1.0, 0.0, dz))


def site_pose(k: int, n_links: int) -> tuple[float, float, float]:
    """(angle, dx, dy) placing link ``k``; angles spread over the full circle."""
    return 2.0 * math.pi * k / n_links + 0.3, SITE_SPACING * k, 0.0


def _to_site(pts: np.ndarray, pose) -> np.ndarray:
    ang, dx, dy = pose
    c, s = math.cos(ang), math.sin(ang)
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([c * x - s * y + dx, s * x + c * y + dy], axis=-1)


def generate_campaign(st: CampaignSettings) -> tuple[list[MeasurementRecord], NodeSurvey]:
    """Records and node survey for a full synthetic campaign."""
    link = canonical_link(st.dz)
    xs, ys = st.raster.centers()
    stops = np.stack([xs.ravel(), ys.ravel()], axis=1)
    half = st.raster.step / 2.0
    survey: NodeSurvey = {}
    records: list[MeasurementRecord] = []
    t = 0.0
    for k in range(st.n_links):
        link_seed = int(np.random.SeedSequence([st.seed, k]).generate_state(1)[0])
        pose = site_pose(k, st.n_links)
        tx_id, rx_id = f"N{2 * k:03d}", f"N{2 * k + 1:03d}"
        nodes = _to_site(np.array([[1.0, 0.0], [-1.0, 0.0]]), pose)
        survey[tx_id] = Vec3(float(nodes[0, 0]), float(nodes[0, 1]), st.dz)
        survey[rx_id] = Vec3(float(nodes[1, 0]), float(nodes[1, 1]), st.dz)

        fld = sample_field(st.region, st.eta, link_seed)
        base = synthesize_voltages(fld, link, st.mechanism, st.params, link_seed)
        jitter = child_rng(link_seed, 3).uniform(-half * 0.9, half * 0.9, stops.shape)
        local = stops + jitter
        site = _to_site(local, pose)
        for p, (x, y) in enumerate(local):
            real = base.with_person(Person((float(x), float(y), 0.0), st.D))
            seed = int(np.random.SeedSequence([link_seed, p]).generate_state(1)[0])
            series = simulate_rss_series(real, st.samples_per_stop, seed)
            px, py = float(site[p, 0]), float(site[p, 1])
            for r in series.r_db:
                records.append(MeasurementRecord(round(t, 6), tx_id, rx_id, float(r), px, py))
                t += st.sample_period_s
    return records, survey
