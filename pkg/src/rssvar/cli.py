"""Command-line front end: ``rssvar <command> [options]``.

Commands: ``etap``, ``sweep``, ``validate``, ``ingest``, ``simulate``.
Settings come from built-in defaults, then an optional ``--config`` JSON
file, then command-line flags. The resolved settings are written into
every output so a file can always be traced back to the run that made it.

Exit codes: 0 success, 1 a check failed or a computation failed,
2 usage, configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .errors import NoScatterers, RssVarError, SchemaMismatch, UnknownNodeId
from .etap import EtapFlag, Mechanism, QuadratureSettings, Scenario, etap_surface
from .fading import fit_linear_var_model
from .geometry import LinkGeometry, Person
from .grid import GridLine, GridSpec, SurfaceGrid
from .propagation import PropagationParams
from .simulator import EnsembleSettings, Region, ensemble_regression
from .surface import dump_json, export_cuts, export_grid, sidecar_path, sweep_dz, sweep_np

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

# Per-command defaults for settings left unset by the config file and flags.
_FIGURE_DEFAULTS = {"dz": 0.1, "D": 0.05, "eta": 1.0, "step": 0.05}
_CAMPAIGN_DEFAULTS = {"dz": 0.5, "D": 0.4, "eta": 2.0, "step": 0.25}
COMMAND_DEFAULTS = {
    "etap": _FIGURE_DEFAULTS,
    "sweep": _FIGURE_DEFAULTS,
    "validate": _FIGURE_DEFAULTS,
    "ingest": _CAMPAIGN_DEFAULTS,
    "simulate": _CAMPAIGN_DEFAULTS,
}
SWEEP_DEFAULT_VALUES = {"np": [2.0, 3.0, 4.0, 5.0], "dz": [0.0, 0.1, 0.5, 1.0, 2.4]}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Every setting a command can use. ``None`` means "command default"."""

    command: str = ""
    out_dir: str = "."
    seed: int = 0
    plot: bool = False
    # scenario
    mechanism: str = "scatter"
    dz: float | None = None
    spacing: float = 2.0
    D: float | None = None
    eta: float | None = None
    c_s: float = 1.0
    c_r: float = 1.0
    n_p: float = 3.0
    # grid and cut line
    x_min: float = -2.0
    x_max: float = 2.0
    y_min: float = -2.0
    y_max: float = 2.0
    step: float | None = None
    line_y: float = 0.1
    # quadrature
    rel_tol: float = 1e-8
    max_evals: int = 100_000
    cap: float | None = None
    # etap
    format: str = "csv"
    # sweep
    param: str = "np"
    values: list[float] | None = None
    # validate
    profile: str = "full"
    checks: list[str] | None = None
    closed_form_rtol: float | None = None
    report: str | None = None
    # ingest
    measurements: str | None = None
    survey: str | None = None
    min_count: int = 10
    pooling: str = "per_link"
    strict: bool = False
    # simulate
    n_links: int = 16
    samples_per_stop: int = 25
    region_half: float = 8.0
    n_realizations: int = 200
    n_samples: int = 200

    def resolved(self) -> "RunConfig":
        cfg = replace(self)
        for key, val in COMMAND_DEFAULTS.get(self.command, _FIGURE_DEFAULTS).items():
            if getattr(cfg, key) is None:
                setattr(cfg, key, val)
        if cfg.command == "sweep" and cfg.values is None:
            cfg.values = list(SWEEP_DEFAULT_VALUES.get(cfg.param, []))
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    # derived objects

    def grid(self) -> GridSpec:
        return GridSpec(self.x_min, self.x_max, self.y_min, self.y_max, self.step)

    def line(self) -> GridLine:
        return GridLine(self.x_min, self.x_max, self.step, self.line_y)

    def params(self) -> PropagationParams:
        return PropagationParams(c_s=self.c_s, c_r=self.c_r, n_p=self.n_p)

    def quad(self) -> QuadratureSettings:
        return QuadratureSettings(rel_tol=self.rel_tol, max_evals=self.max_evals, alpha_max=self.cap)

    def scenario(self) -> Scenario:
        link = LinkGeometry.standard(self.dz, self.spacing)
        return Scenario(link, Person((0.0, 1.0, 0.0), self.D), self.params(), self.eta)


CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"command"}


def provenance(cfg: RunConfig) -> dict:
    return {"artifact_version": __version__, "run_config": cfg.to_dict()}


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {p} must hold a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config key(s) in {p}: {', '.join(unknown)}")
    return data


def _float_list(text: str) -> list[float]:
    parts = [t for t in text.split(",") if t.strip()]
    try:
        return [float(t) for t in parts]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rssvar", description="RSS variance vs. person position.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with settings; flags override it")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, default=1, help="worker processes (output does not depend on it)")
    common.add_argument("--plot", action="store_const", const=True, help="also render PNG figures")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--mechanism", help="scatter, reflect, or blend:<w>")
    scen.add_argument("--dz", type=float, help="node height above the scatterer plane (m)")
    scen.add_argument("--spacing", type=float)
    scen.add_argument("--D", "--diameter", dest="D", type=float, help="person diameter (m)")
    scen.add_argument("--eta", type=float, help="scatterer density (1/m^2)")
    scen.add_argument("--c-s", dest="c_s", type=float)
    scen.add_argument("--c-r", dest="c_r", type=float)
    scen.add_argument("--np", dest="n_p", type=float, help="path loss exponent for reflection")
    scen.add_argument("--x-min", dest="x_min", type=float)
    scen.add_argument("--x-max", dest="x_max", type=float)
    scen.add_argument("--y-min", dest="y_min", type=float)
    scen.add_argument("--y-max", dest="y_max", type=float)
    scen.add_argument("--step", type=float)
    scen.add_argument("--rel-tol", dest="rel_tol", type=float)
    scen.add_argument("--max-evals", dest="max_evals", type=int)
    scen.add_argument("--cap", type=float, help="truncate shadow rays at this many metres")

    p = sub.add_parser("etap", parents=[common, scen], help="ETAP surface over a grid")
    p.add_argument("--format", choices=["csv", "json"])

    p = sub.add_parser("sweep", parents=[common, scen], help="ETAP cuts over a parameter sweep")
    p.add_argument("--param", choices=["np", "dz"])
    p.add_argument("--values", type=_float_list, help="comma-separated parameter values")
    p.add_argument("--line-y", dest="line_y", type=float)

    p = sub.add_parser("validate", parents=[common], help="run the model self-checks")
    p.add_argument("--profile", choices=["full", "quick"])
    p.add_argument("--checks", type=_str_list, help="comma-separated subset of checks")
    p.add_argument("--rtol", dest="closed_form_rtol", type=float, help="closed form vs quadrature tolerance")
    p.add_argument("--report", help="report path (default <out-dir>/validation_report.json)")

    p = sub.add_parser("ingest", parents=[common, scen], help="empirical variance surface from logs")
    p.add_argument("--measurements", help="measurement CSV")
    p.add_argument("--survey", help="node survey CSV")
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--pooling", choices=["pooled", "per_link"])
    p.add_argument("--strict", action="store_const", const=True, help="fail on unknown node ids")

    p = sub.add_parser("simulate", parents=[common, scen], help="synthetic measurement campaign")
    p.add_argument("--n-links", dest="n_links", type=int)
    p.add_argument("--samples-per-stop", dest="samples_per_stop", type=int)
    p.add_argument("--region-half", dest="region_half", type=float)
    p.add_argument("--n-realizations", dest="n_realizations", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    data = load_config(args.config)
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    try:
        cfg = RunConfig(command=args.command, **data)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    return cfg.resolved()


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _flag_summary(flags: np.ndarray) -> str | None:
    flags = np.asarray(flags)
    n = int(np.count_nonzero(flags))
    if n == 0:
        return None
    parts = []
    for f in (EtapFlag.NEAR_COLLINEAR_FAR, EtapFlag.NEAR_COLLINEAR_BETWEEN, EtapFlag.NEAR_NODE, EtapFlag.ERROR):
        k = int(np.count_nonzero(flags & int(f)))
        if k:
            parts.append(f"{f.name.lower()}={k}")
    return f"{n} flagged cell(s) marked invalid ({', '.join(parts)})"


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------


def cmd_etap(cfg: RunConfig, workers: int = 1) -> int:
    mech = Mechanism.parse(cfg.mechanism)
    surf = etap_surface(cfg.scenario(), cfg.grid(), mech, cfg.quad(), workers)
    msg = _flag_summary(surf.flags)
    if msg:
        _warn(msg)
    out = _out_dir(cfg)
    stem = "etap_" + str(mech).replace(":", "_")
    ext = ".json" if cfg.format == "json" else ".csv"
    prov = provenance(cfg)
    export_grid(surf, out / (stem + ext), cfg.format, prov)
    db = surf.to_db()
    export_grid(db, out / (stem + "_db" + ext), cfg.format, prov)
    print(f"wrote {out / (stem + ext)}")
    print(f"peak at x={surf.argmax_xy()[0]:.6g} y={surf.argmax_xy()[1]:.6g}")
    if cfg.plot:
        from .plotting import plot_surface

        s = cfg.scenario()
        plot_surface(db, out / (stem + "_db.png"), f"ETAP ({mech}, dz={cfg.dz:g} m)", "dB rel. max",
                     nodes=(s.link.x_t, s.link.x_r), vmin=-20.0)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, workers: int = 1) -> int:
    if not cfg.values:
        raise UsageError("sweep needs at least one value (--values)")
    if cfg.param == "np":
        cfg = replace(cfg, mechanism="reflect")
        cuts = sweep_np(cfg.scenario(), cfg.line(), cfg.values, cfg.quad(), workers)
    else:
        cuts = sweep_dz(cfg.scenario(), cfg.line(), cfg.values, cfg.mechanism, cfg.quad(), workers)
    msg = _flag_summary(cuts.flags)
    if msg:
        _warn(msg)
    out = _out_dir(cfg)
    path = out / f"cuts_{cfg.param}.csv"
    export_cuts(cuts, path, provenance(cfg))
    print(f"wrote {path} ({len(cuts.param_values)} cuts)")
    if cfg.plot:
        from .plotting import plot_cuts

        plot_cuts(cuts, out / f"cuts_{cfg.param}.png", f"ETAP cuts at y={cfg.line_y:g} m")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, workers: int = 1) -> int:
    from .validation import PROFILES, run_validation

    if cfg.profile not in PROFILES:
        raise UsageError(f"unknown profile {cfg.profile!r}")
    overrides = {"closed_form_rtol": cfg.closed_form_rtol} if cfg.closed_form_rtol is not None else {}
    try:
        results = run_validation(cfg.profile, cfg.seed, workers, cfg.checks, overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = {
        "provenance": provenance(cfg),
        "profile": PROFILES[cfg.profile].to_dict(),
        "checks": [r.to_dict() for r in results],
        "all_passed": all(r.passed for r in results),
    }
    path = Path(cfg.report) if cfg.report else _out_dir(cfg) / "validation_report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(report, path)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.requirement}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _model_variance(cfg: RunConfig, grid: GridSpec, empirical: SurfaceGrid, workers: int):
    """ETAP surface of the normalized link mapped to variance ``a2 + a1 * 10 log10(ETAP)``.

    ``a1`` is the Ricean slope; ``a2`` is fitted to the empirical bins.
    """
    etap = etap_surface(cfg.scenario(), grid, cfg.mechanism, cfg.quad(), workers)
    a1 = fit_linear_var_model().a1
    with np.errstate(divide="ignore", invalid="ignore"):
        level = a1 * 10.0 * np.log10(etap.values)
    joint = etap.valid & empirical.valid & np.isfinite(level)
    a2 = float(np.mean(empirical.values[joint] - level[joint])) if joint.any() else 0.0
    raw = a2 + level
    meta = dict(etap.metadata, quantity="predicted_rss_variance_db2", a1=a1, a2=a2)
    model = SurfaceGrid(grid, raw, etap.valid & np.isfinite(raw), meta, etap.flags)
    clamped = replace(model, values=np.clip(raw, 3.0, 27.0), metadata=dict(meta, clamped=[3.0, 27.0]))
    return model, clamped


def cmd_ingest(cfg: RunConfig, workers: int = 1) -> int:
    from .ingest import build_variance_surface, compare_surfaces, load_measurements, write_rejects

    if not cfg.measurements or not cfg.survey:
        raise UsageError("ingest needs --measurements and --survey")
    for f in (cfg.measurements, cfg.survey):
        if not Path(f).is_file():
            raise UsageError(f"input file not found: {f}")
    loaded = load_measurements(cfg.measurements, cfg.survey, strict=cfg.strict)
    out = _out_dir(cfg)
    prov = provenance(cfg)
    if loaded.rejects:
        write_rejects(out / "rejects.csv", loaded.rejects)
        _warn(f"{len(loaded.rejects)} malformed row(s) written to {out / 'rejects.csv'}")
    grid = cfg.grid()
    binned = build_variance_surface(loaded.records, loaded.survey, grid, cfg.min_count, cfg.pooling, len(loaded.rejects))
    emp = binned.as_surface()
    emp.metadata["counts"] = binned.count.ravel().tolist()
    export_grid(emp, out / "variance.csv", "csv", prov)
    print(f"records: {len(loaded.records)} accepted, {len(loaded.rejects)} rejected")
    print(f"out-of-grid fraction: {binned.out_of_grid_fraction:.6f}")
    report: dict[str, Any] = {
        "provenance": prov,
        "n_records": len(loaded.records),
        "n_rejects": len(loaded.rejects),
        "n_in_grid": binned.n_in_grid,
        "n_out_of_grid": binned.n_out_of_grid,
        "out_of_grid_fraction": binned.out_of_grid_fraction,
        "n_valid_bins": int(binned.valid.sum()),
    }
    if binned.valid.any():
        model, clamped = _model_variance(cfg, grid, emp, workers)
        export_grid(model, out / "model_variance.csv", "csv", prov)
        cmp_raw = compare_surfaces(binned, model)
        cmp_clamped = compare_surfaces(binned, clamped)
        report["comparison"] = cmp_raw.to_dict()
        report["comparison_clamped"] = cmp_clamped.to_dict()
        report["a2_fitted"] = model.metadata["a2"]
        print(f"spearman: {cmp_raw.spearman:.4f} (clamped prediction {cmp_clamped.spearman:.4f})")
    else:
        _warn("no bin reached min_count; comparison skipped")
    dump_json(report, out / "comparison.json")
    if cfg.plot and binned.valid.any():
        from .plotting import plot_surface

        plot_surface(emp, out / "variance.png", "binned RSS variance", "dB^2", nodes=((1, 0), (-1, 0)))
        plot_surface(model, out / "model_variance.png", "ETAP-predicted variance", "dB^2", nodes=((1, 0), (-1, 0)))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, workers: int = 1) -> int:
    from .ingest import write_measurements, write_survey
    from .synthetic import CampaignSettings, canonical_link, generate_campaign
    from .validation import ENSEMBLE_POSITIONS

    if cfg.mechanism not in ("scatter", "reflect"):
        raise UsageError("simulate supports mechanism scatter or reflect")
    if not cfg.eta > 0:
        raise NoScatterers(f"scatterer density must be positive, got {cfg.eta}")
    region = Region.square(cfg.region_half)
    st = CampaignSettings(
        n_links=cfg.n_links,
        dz=cfg.dz,
        mechanism=cfg.mechanism,
        params=cfg.params(),
        region=region,
        eta=cfg.eta,
        D=cfg.D,
        raster=cfg.grid(),
        samples_per_stop=cfg.samples_per_stop,
        seed=cfg.seed,
    )
    records, survey = generate_campaign(st)
    out = _out_dir(cfg)
    prov = provenance(cfg)
    write_measurements(out / "measurements.csv", records)
    write_survey(out / "survey.csv", survey)
    meta = {"provenance": prov, "campaign": st.to_dict(), "n_records": len(records)}
    dump_json(meta, sidecar_path(out / "measurements.csv"))
    dump_json(meta, sidecar_path(out / "survey.csv"))

    ens = EnsembleSettings(region, cfg.eta, cfg.D, cfg.n_realizations, cfg.n_samples, cfg.seed)
    rep = ensemble_regression(canonical_link(cfg.dz), ENSEMBLE_POSITIONS, cfg.mechanism, cfg.params(), ens, workers)
    doc = {
        "provenance": prov,
        "settings": ens.to_dict(),
        "summary": rep.summary(),
        "positions": rep.positions,
        "mean_variance_db2": rep.mean_variance,
        "mean_affected_power": rep.mean_affected_power,
        "variance_halfwidth_db2": rep.variance_halfwidth,
    }
    dump_json(doc, out / "ensemble_report.json")
    s = rep.summary()
    print(f"wrote {len(records)} records to {out / 'measurements.csv'}")
    print(f"ensemble: a1={s['a1_estimate']:.4f} a2={s['a2_estimate']:.4f} R2={s['r2']:.4f}")
    return EXIT_OK


COMMANDS = {
    "etap": cmd_etap,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "ingest": cmd_ingest,
    "simulate": cmd_simulate,
}

# Input and configuration problems map to exit code 2, everything else to 1.
_USAGE_ERRORS = (UsageError, SchemaMismatch, UnknownNodeId, NoScatterers, ValueError, FileNotFoundError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = config_from_args(args)
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        return COMMANDS[args.command](cfg, args.workers)
    except _USAGE_ERRORS as exc:
        name = type(exc).__name__
        print(f"error: {name}: {exc}" if name != "UsageError" else f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RssVarError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
