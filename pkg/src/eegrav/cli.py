"""Command-line interface.

Every command computes all of its outputs before writing any of them, and
records a ``run.json`` manifest (command, options, configuration, input and
output hashes, package version) from which ``eegrav replay`` reruns it.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .estimate import (
    THREADS_ENV, FitOptions, ablation, endemic_trajectory, fit, lag_scan, season_compare,
    with_max_lag,
)
from .io import (
    Bundle, BundleError, bundle_files, csv_text, fit_document, ingest, json_text, sha256_bytes, table_csv,
    table_text, trajectory_csv, write_files, MANIFEST,
)
from .panel import DAILY, MONTHLY, PanelError
from .simulate import SimConfig, SimulationError, simulate, synthetic_world
from .spec import EE, GRAVITY, ModelSpec, SpecError, spec_from_dict
from .weights import WeightError

log = logging.getLogger("eegrav")

RUN_MANIFEST = "run.json"
COMMANDS = ("simulate", "fit", "lag-scan", "season-compare", "ablation", "endemic-export")
COMMAND_HELP = {
    "fit": "maximum-likelihood fit of one model",
    "lag-scan": "fit an ee model for lag depths 1..--max-lag (daily data)",
    "season-compare": "month-seasonal versus free per-month endemic for a gravity model",
    "ablation": "with/without the traffic term across four effect/endemic rows",
    "endemic-export": "fit and write the normalised endemic trajectory as CSV",
}
KERNEL_FLAGS = {"power": "power", "exp": "exp", "exp-sqrt": "exp-sqrt", "exp-normal": "exp-normal"}


class UsageError(Exception):
    """Inconsistent command-line options (exit status 2)."""


# ---------------------------------------------------------------------------
# configuration


def load_yaml(path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"config file {path} is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    return doc


def apply_overrides(spec: ModelSpec, opts: dict) -> ModelSpec:
    """Fold --variant / --decay / --cross-region / --max-lag into the ModelSpec."""
    gravity_flags = [f for f in ("variant", "decay", "cross_region") if opts.get(f)]
    if spec.family != GRAVITY and gravity_flags:
        names = ", ".join("--" + f.replace("_", "-") for f in gravity_flags)
        raise UsageError(f"{names} only apply to gravity models")
    if spec.family == GRAVITY:
        g = spec.gravity
        if opts.get("variant"):
            g = replace(g, variant=opts["variant"])
        if opts.get("decay"):
            g = replace(g, kernel=KERNEL_FLAGS[opts["decay"]])
        if opts.get("cross_region"):
            g = replace(g, cross_region=True)
        spec = replace(spec, gravity=g, endemic=replace(spec.endemic, per_region=g.variant == "per-region"))
    if opts.get("max_lag") is not None and opts.get("command") != "lag-scan":
        if spec.family != EE or spec.epidemic is None:
            raise UsageError("--max-lag needs an ee model with an epidemic block")
        spec = with_max_lag(spec, int(opts["max_lag"]), int(opts["max_lag"]))
    return spec


def check_resolution(spec: ModelSpec, bundle: Bundle, command: str):
    res = bundle.panel.axis.resolution
    if spec.family == GRAVITY and res != MONTHLY:
        raise UsageError(f"a gravity model needs a monthly bundle, got {res} data")
    if command == "lag-scan" and res != DAILY:
        raise UsageError("lag-scan needs a daily bundle")
    if spec.family == GRAVITY and spec.gravity.traffic and bundle.cube is None:
        raise UsageError("the gravity model needs covariates.csv in the bundle")


def fit_options(opts: dict) -> FitOptions:
    return FitOptions(grid_points=int(opts.get("grid_points") or 25), threads=opts.get("threads"))


# ---------------------------------------------------------------------------
# commands; each returns {file name: text}


def cmd_simulate(opts, config, bundle):
    doc = dict(config)
    world = doc.pop("world", None)
    if opts.get("seed") is not None:
        doc["seed"] = int(opts["seed"])
    model = doc.pop("model", None)
    if model is not None:
        doc["spec"] = model
    time = doc.pop("time", None)
    if time is not None:
        doc["axis"] = time
    if bundle is not None:
        structure, cube = bundle.structure, bundle.cube
        units = bundle.panel.units
    elif world is not None:
        w = dict(world)
        ax = doc.get("axis") or {}
        if ax.get("resolution") == MONTHLY and "n_months" not in w:
            w["n_months"] = int(ax["length"])
        if "start" in w:
            w["start"] = dt.date.fromisoformat(str(w["start"]))
        elif ax.get("resolution") == MONTHLY:
            w["start"] = dt.date.fromisoformat(str(ax["origin"])[:7] + "-01")
        wd = synthetic_world(**w)
        structure, cube, units = wd.structure, wd.cube, wd.units
    else:
        raise UsageError("simulate needs a 'world' block in the config or --bundle for geography")
    doc.setdefault("units", {"ids": list(units.unit_ids), "regions": list(units.unit_regions)})
    try:
        cfg = SimConfig.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"simulation config is incomplete: {exc}") from None
    if cfg.spec.family == GRAVITY and cfg.axis.resolution != MONTHLY:
        raise UsageError("a gravity simulation needs a monthly time axis")
    panel = simulate(cfg, structure, cube)
    files = bundle_files(panel, structure, cube if cfg.spec.family == GRAVITY else None)
    manifest = {"resolution": panel.axis.resolution,
                "files": {n: sha256_bytes(t.encode()) for n, t in files.items()}}
    files[MANIFEST] = json_text(manifest)
    files["provenance.json"] = json_text(panel.provenance)
    return files


def _fit_text(res) -> str:
    lines = [f"model           {res.spec.family} / endemic {res.spec.endemic.kind}"
             + (" per region" if res.spec.endemic.per_region else ""),
             f"converged       {res.converged} ({res.iterations} iterations, max|grad| {res.grad_norm:.3g})",
             f"loglik          {res.loglik:.6f}",
             f"k               {res.k}",
             f"AIC             {res.aic:.4f}",
             f"pseudo-R2       {res.pseudo_r2:.6f}",
             f"null            mu {res.null.mu:.6g}, psi {res.null.psi:.6g}, loglik {res.null.loglik:.6f}"]
    if res.decay is not None:
        lines.append(f"{res.decay_name:<15} {res.decay:.6g}")
    for k, v in res.params.items():
        v = np.asarray(v).ravel()
        shown = ", ".join(f"{x:.4g}" for x in v[:8]) + (", ..." if v.size > 8 else "")
        lines.append(f"{k:<15} [{shown}]")
    return "\n".join(lines) + "\n"


def cmd_fit(opts, spec, bundle):
    res = fit(bundle.panel, spec, bundle.structure, bundle.cube, fit_options(opts))
    return {"fit.json": json_text(fit_document(res)), "fit.txt": _fit_text(res)}


def cmd_lag_scan(opts, spec, bundle):
    D = opts.get("max_lag")
    if D is None:
        raise UsageError("lag-scan needs --max-lag")
    rows = lag_scan(bundle.panel, bundle.structure, spec, int(D), fit_options(opts))
    cols = ["D", "loglik", "k", "aic", "pseudo_r2", "converged"]
    return {"lag_scan.csv": table_csv(rows, cols), "lag_scan.txt": table_text(rows, cols)}


def cmd_season_compare(opts, spec, bundle):
    out = season_compare(bundle.panel, bundle.structure, bundle.cube, spec, fit_options(opts))
    cols = ["model", "loglik", "k", "aic", "pseudo_r2", "converged"]
    season = np.asarray(out["season"]).reshape(-1, 12)
    ma = np.asarray(out["season_ma2"]).reshape(-1, 12)
    scopes = list(out["fits"]["seasonal"].regions) if season.shape[0] > 1 else ["shared"]
    srows = [(scopes[s], m + 1, repr(float(season[s, m])), repr(float(ma[s, m])))
             for s in range(season.shape[0]) for m in range(12)]
    return {
        "season_compare.csv": table_csv(out["rows"], cols),
        "season_compare.txt": table_text(out["rows"], cols),
        "season_effects.csv": csv_text(["scope", "month", "estimate", "moving_average_2"], srows),
    }


def cmd_ablation(opts, spec, bundle):
    rows = ablation(bundle.panel, bundle.structure, bundle.cube, spec, fit_options(opts))
    cols = ["model", "without", "with", "aic_without", "aic_with"]
    return {"ablation.csv": table_csv(rows, list(rows[0])), "ablation.txt": table_text(rows, cols)}


def cmd_endemic_export(opts, spec, bundle):
    res = fit(bundle.panel, spec, bundle.structure, bundle.cube, fit_options(opts))
    traj = endemic_trajectory(res)
    files = {"trajectory.csv": trajectory_csv(traj)}
    if traj.axis.resolution == DAILY:
        try:
            files["trajectory_mid_month.csv"] = trajectory_csv(traj.mid_month())
        except PanelError as exc:
            log.warning("no mid-month slice: %s", exc)
    files["fit.json"] = json_text(fit_document(res))
    return files


HANDLERS = {
    "fit": cmd_fit,
    "lag-scan": cmd_lag_scan,
    "season-compare": cmd_season_compare,
    "ablation": cmd_ablation,
    "endemic-export": cmd_endemic_export,
}


# ---------------------------------------------------------------------------
# orchestration


def execute(opts: dict, config: dict | None) -> tuple[dict, dict]:
    """Run one command from normalised options; returns (files, manifest)."""
    command = opts["command"]
    bundle = None
    if opts.get("bundle"):
        bundle = ingest(opts["bundle"], zero_fill=bool(opts.get("zero_fill")))
    if command == "simulate":
        if config is None:
            raise UsageError("simulate needs --config")
        files = cmd_simulate(opts, config, bundle)
    else:
        if bundle is None:
            raise UsageError(f"{command} needs --bundle")
        if config is None:
            raise UsageError(f"{command} needs --config")
        spec = apply_overrides(spec_from_dict(config), opts)
        check_resolution(spec, bundle, command)
        if command in ("season-compare", "ablation") and spec.family != GRAVITY:
            raise UsageError(f"{command} needs a gravity model")
        if command == "lag-scan" and spec.family != EE:
            raise UsageError("lag-scan needs an ee model")
        files = HANDLERS[command](opts, spec, bundle)
    recorded = {k: v for k, v in opts.items() if k not in ("out", "config", "command", "bundle")}
    manifest = {
        "command": command,
        "options": recorded,
        "config": config,
        "bundle": str(Path(opts["bundle"]).resolve()) if opts.get("bundle") else None,
        "inputs": bundle.hashes if bundle is not None else {},
        "seed": opts.get("seed"),
        "threads_env": THREADS_ENV,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "outputs": {n: sha256_bytes(t.encode()) for n, t in sorted(files.items())},
    }
    return files, manifest


def run(opts: dict, config: dict | None) -> dict:
    files, manifest = execute(opts, config)
    out = Path(opts["out"])
    files = dict(files)
    files[RUN_MANIFEST] = json_text(manifest)
    return write_files(out, files)


def replay(manifest_path, out, *, bundle=None) -> dict:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / RUN_MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"no run manifest at {path}") from None
    opts = dict(manifest["options"])
    opts["command"] = manifest["command"]
    opts["out"] = str(out)
    src = bundle or manifest.get("bundle")
    if src:
        opts["bundle"] = src
        b = ingest(src, zero_fill=bool(opts.get("zero_fill")))
        if manifest.get("inputs") and b.hashes != manifest["inputs"]:
            raise BundleError("bundle contents differ from the recorded input hashes")
    return run(opts, manifest.get("config"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="eegrav",
        description="Fit, compare and simulate endemic-epidemic and air-traffic gravity models "
                    "for district-level count data.")
    p.add_argument("--version", action="version", version=f"eegrav {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, bundle_required=True):
        sp.add_argument("--config", required=True, help="YAML model / simulation configuration")
        sp.add_argument("--bundle", required=bundle_required, help="dataset bundle directory")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        sp.add_argument("--zero-fill", action="store_true", help="fill missing count cells with 0")

    def model_flags(sp):
        sp.add_argument("--grid-points", type=int, help="profile grid size for alpha / rho")
        sp.add_argument("--variant", choices=["per-region", "composite"])
        sp.add_argument("--decay", choices=sorted(KERNEL_FLAGS))
        sp.add_argument("--cross-region", action="store_true",
                        help="every airport reaches every district")
        sp.add_argument("--max-lag", type=int)

    sim = sub.add_parser("simulate", help="simulate a bundle from a configuration")
    common(sim, bundle_required=False)
    sim.add_argument("--seed", type=int)
    for name in COMMANDS[1:]:
        sp = sub.add_parser(name, help=COMMAND_HELP[name])
        common(sp)
        model_flags(sp)
    rp = sub.add_parser("replay", help="rerun a command from its run.json")
    rp.add_argument("--manifest", required=True, help="run.json or the directory holding it")
    rp.add_argument("--out", required=True)
    rp.add_argument("--bundle", help="bundle location if it moved (hashes must match)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            replay(args.manifest, args.out, bundle=args.bundle)
            return 0
        opts = {k: v for k, v in vars(args).items() if k != "verbose"}
        if opts.get("threads") is not None and opts["threads"] < 1:
            raise UsageError("--threads must be >= 1")
        if opts.get("grid_points") is not None and opts["grid_points"] < 2:
            raise UsageError("--grid-points must be >= 2")
        if opts.get("max_lag") is not None and opts["max_lag"] < 1:
            raise UsageError("--max-lag must be >= 1")
        config = load_yaml(opts["config"])
        run(opts, config)
        return 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eegrav: error: {exc}", file=sys.stderr)
        return 2
    except (BundleError, PanelError, SpecError, WeightError, SimulationError, ValueError) as exc:
        print(f"eegrav: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
