"""Dataset bundles, result documents and atomic file output.

A bundle is a directory holding

    counts.csv              district_id,region_id,date,cases
    adjacency.csv           district_id_a,district_id_b          (optional)
    airports.csv            airport_id,region_id                 (optional)
    airport_distances.csv   district_id,airport_id,km            (optional)
    covariates.csv          airport_id,month,passengers          (optional)
    manifest.json           {"resolution": ..., "files": {name: sha256}}
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .panel import (
    DAILY, MONTHLY, CountPanel, CovariateCube, SpatialStructure, TimeAxis, UnitIndex,
)

COUNTS = "counts.csv"
ADJACENCY = "adjacency.csv"
AIRPORTS = "airports.csv"
DISTANCES = "airport_distances.csv"
COVARIATES = "covariates.csv"
MANIFEST = "manifest.json"

HEADERS = {
    COUNTS: ["district_id", "region_id", "date", "cases"],
    ADJACENCY: ["district_id_a", "district_id_b"],
    AIRPORTS: ["airport_id", "region_id"],
    DISTANCES: ["district_id", "airport_id", "km"],
    COVARIATES: ["airport_id", "month", "passengers"],
}


class BundleError(ValueError):
    """Schema or consistency violation, located by file and line."""


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# atomic output


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_files(out_dir, files: dict) -> dict:
    """Write every {name: text} atomically; returns {name: sha256}."""
    hashes = {}
    for name, text in files.items():
        data = text.encode() if isinstance(text, str) else text
        atomic_write(Path(out_dir) / name, data)
        hashes[name] = sha256_bytes(data)
    return hashes


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def fmt(x) -> str:
    """Shortest round-trip representation of a float."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def json_text(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def to_jsonable(x):
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, dt.date):
        return x.isoformat()
    return x


# ---------------------------------------------------------------------------
# export


def _date_label(axis: TimeAxis) -> list[str]:
    return axis.labels()


def bundle_files(panel: CountPanel, structure: SpatialStructure | None = None,
                 cube: CovariateCube | None = None) -> dict:
    """CSV texts of a bundle (manifest excluded)."""
    labels = _date_label(panel.axis)
    units = panel.units
    rows = [(u, r, labels[t], int(panel.counts[i, t]))
            for i, (u, r) in enumerate(zip(units.unit_ids, units.unit_regions))
            for t in range(panel.n_times)]
    files = {COUNTS: csv_text(HEADERS[COUNTS], rows)}
    if structure is not None:
        ids = units.unit_ids
        adj = structure.adjacency
        edges = [(ids[a], ids[b]) for a in range(len(ids)) for b in range(a + 1, len(ids))
                 if adj[a, b]]
        files[ADJACENCY] = csv_text(HEADERS[ADJACENCY], edges)
        if structure.n_airports:
            files[AIRPORTS] = csv_text(HEADERS[AIRPORTS],
                                       zip(structure.airport_ids, structure.airport_regions))
            d = structure.airport_distance
            files[DISTANCES] = csv_text(HEADERS[DISTANCES], [
                (ids[i], a, fmt(d[i, k])) for i in range(len(ids))
                for k, a in enumerate(structure.airport_ids) if not np.isnan(d[i, k])])
    if cube is not None:
        files[COVARIATES] = csv_text(HEADERS[COVARIATES], [
            (a, f"{y:04d}-{m:02d}", fmt(cube.raw[k, j]))
            for k, a in enumerate(cube.airport_ids) for j, (y, m) in enumerate(cube.months)])
    return files


def export_bundle(out_dir, panel: CountPanel, structure=None, cube=None) -> dict:
    files = bundle_files(panel, structure, cube)
    manifest = {
        "resolution": panel.axis.resolution,
        "files": {name: sha256_bytes(text.encode()) for name, text in files.items()},
    }
    files[MANIFEST] = json_text(manifest)
    return write_files(out_dir, files)


# ---------------------------------------------------------------------------
# ingestion


@dataclass
class Bundle:
    panel: CountPanel
    structure: SpatialStructure | None
    cube: CovariateCube | None
    report: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)


def _read_csv(path: Path):
    name = path.name
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise BundleError(f"{name}: empty file") from None
        expected = HEADERS[name]
        if [h.strip() for h in header] != expected:
            raise BundleError(f"{name}:1: header must be {','.join(expected)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise BundleError(f"{name}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def _parse_date(text, resolution, where):
    try:
        if resolution == MONTHLY and len(text) == 7:
            return dt.date(int(text[:4]), int(text[5:7]), 1)
        d = dt.date.fromisoformat(text)
    except ValueError:
        raise BundleError(f"{where}: bad date {text!r}") from None
    if resolution == MONTHLY and d.day != 1:
        raise BundleError(f"{where}: monthly dates must fall on the first of the month")
    return d


def _parse_number(text, where, integer=False):
    try:
        v = float(text)
    except ValueError:
        raise BundleError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise BundleError(f"{where}: value must be finite")
    if v < 0:
        raise BundleError(f"{where}: negative value {text}")
    if integer and v != int(v):
        raise BundleError(f"{where}: count must be an integer, got {text}")
    return v


def _check_manifest(root: Path) -> tuple[str, dict]:
    mpath = root / MANIFEST
    if not mpath.exists():
        raise BundleError(f"{MANIFEST}: missing")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"{MANIFEST}: invalid JSON ({exc})") from None
    resolution = manifest.get("resolution")
    if resolution not in (DAILY, MONTHLY):
        raise BundleError(f"{MANIFEST}: resolution must be 'daily' or 'monthly'")
    declared = manifest.get("files", {})
    if COUNTS not in declared:
        raise BundleError(f"{MANIFEST}: counts.csv is not declared")
    hashes = {}
    for name, digest in declared.items():
        if name not in HEADERS:
            raise BundleError(f"{MANIFEST}: unknown file {name}")
        p = root / name
        if not p.exists():
            raise BundleError(f"{name}: declared in the manifest but missing")
        actual = sha256_file(p)
        if actual != digest:
            raise BundleError(f"{name}: sha256 mismatch with the manifest")
        hashes[name] = actual
    for name in HEADERS:
        if (root / name).exists() and name not in declared:
            raise BundleError(f"{name}: present but not declared in the manifest")
    return resolution, hashes


def ingest(path, *, zero_fill: bool = False) -> Bundle:
    """Load and validate a bundle directory.

    Missing (district, date) cells are an error unless ``zero_fill`` is set,
    in which case they become zeros and the count is recorded in provenance.
    """
    root = Path(path)
    if not root.is_dir():
        raise BundleError(f"{root}: not a bundle directory")
    resolution, hashes = _check_manifest(root)

    unit_region: dict = {}
    cells: dict = {}
    for ln, (u, r, d, c) in _read_csv(root / COUNTS):
        where = f"{COUNTS}:{ln}"
        if not u or not r:
            raise BundleError(f"{where}: empty district or region id")
        if unit_region.setdefault(u, r) != r:
            raise BundleError(f"{where}: district {u} listed under regions {unit_region[u]} and {r}")
        day = _parse_date(d, resolution, where)
        key = (u, day)
        if key in cells:
            raise BundleError(f"{where}: duplicate row for district {u} on {d}")
        cells[key] = _parse_number(c, where, integer=True)
    if not cells:
        raise BundleError(f"{COUNTS}: no data rows")
    days = sorted({k[1] for k in cells})
    first, last = days[0], days[-1]
    if resolution == DAILY:
        T = (last - first).days + 1
    else:
        T = (last.year - first.year) * 12 + last.month - first.month + 1
    axis = TimeAxis(resolution, first, T)
    units = UnitIndex(list(unit_region), list(unit_region.values()))
    counts = np.zeros((units.n_units, T), dtype=np.int64)
    seen = np.zeros((units.n_units, T), dtype=bool)
    for (u, day), c in cells.items():
        i, t = units.position(u), axis.index_of(day)
        counts[i, t] = int(c)
        seen[i, t] = True
    missing = int((~seen).sum())
    if missing and not zero_fill:
        i, t = np.argwhere(~seen)[0]
        raise BundleError(
            f"{COUNTS}: {missing} missing (district, date) cells, first {units.unit_ids[i]} "
            f"on {axis.labels()[t]}; pass zero_fill to fill them with 0")
    provenance = {"source": str(root.name), "counts_sha256": hashes[COUNTS],
                  "zero_filled_cells": missing}
    panel = CountPanel(axis, units, counts, provenance)
    report = {"resolution": resolution, "districts": units.n_units, "regions": units.n_regions,
              "times": T, "count_rows": len(cells), "zero_filled_cells": missing}

    structure = None
    if (root / ADJACENCY).exists():
        ids = set(units.unit_ids)
        adj = np.zeros((units.n_units, units.n_units), dtype=bool)
        n_edges = 0
        for ln, (a, b) in _read_csv(root / ADJACENCY):
            where = f"{ADJACENCY}:{ln}"
            for x in (a, b):
                if x not in ids:
                    raise BundleError(f"{where}: unknown district id {x}")
            if a == b:
                raise BundleError(f"{where}: self-adjacency for {a}")
            ia, ib = units.position(a), units.position(b)
            adj[ia, ib] = adj[ib, ia] = True
            n_edges += 1
        air_ids, air_regs = [], []
        if (root / AIRPORTS).exists():
            for ln, (a, r) in _read_csv(root / AIRPORTS):
                if a in air_ids:
                    raise BundleError(f"{AIRPORTS}:{ln}: duplicate airport {a}")
                air_ids.append(a)
                air_regs.append(r)
        dist = np.full((units.n_units, len(air_ids)), np.nan)
        if (root / DISTANCES).exists():
            if not air_ids:
                raise BundleError(f"{DISTANCES}: distances given without {AIRPORTS}")
            apos = {a: k for k, a in enumerate(air_ids)}
            for ln, (u, a, km) in _read_csv(root / DISTANCES):
                where = f"{DISTANCES}:{ln}"
                if u not in ids:
                    raise BundleError(f"{where}: unknown district id {u}")
                if a not in apos:
                    raise BundleError(f"{where}: unknown airport id {a}")
                dist[units.position(u), apos[a]] = _parse_number(km, where)
        structure = SpatialStructure.from_adjacency(
            adj, airport_ids=air_ids, airport_regions=air_regs, airport_distance=dist)
        report.update(edges=n_edges, airports=len(air_ids),
                      distance_pairs=int((~np.isnan(dist)).sum()))
    elif (root / DISTANCES).exists() or (root / AIRPORTS).exists():
        raise BundleError(f"{ADJACENCY}: airports given without the adjacency file")

    cube = None
    if (root / COVARIATES).exists():
        values: dict = {}
        for ln, (a, m, v) in _read_csv(root / COVARIATES):
            where = f"{COVARIATES}:{ln}"
            if structure is not None and structure.n_airports and a not in structure.airport_ids:
                raise BundleError(f"{where}: unknown airport id {a}")
            if len(m) != 7 or m[4] != "-":
                raise BundleError(f"{where}: month must be YYYY-MM, got {m!r}")
            try:
                key = (int(m[:4]), int(m[5:7]))
            except ValueError:
                raise BundleError(f"{where}: month must be YYYY-MM, got {m!r}") from None
            if not 1 <= key[1] <= 12:
                raise BundleError(f"{where}: month must be YYYY-MM, got {m!r}")
            if (a, key) in values:
                raise BundleError(f"{where}: duplicate row for airport {a} in {m}")
            values[(a, key)] = _parse_number(v, where)
        airports = list(dict.fromkeys(k[0] for k in values))
        months = sorted({k[1] for k in values})
        raw = np.full((len(airports), len(months)), np.nan)
        for (a, key), v in values.items():
            raw[airports.index(a), months.index(key)] = v
        if np.isnan(raw).any():
            k, j = np.argwhere(np.isnan(raw))[0]
            raise BundleError(f"{COVARIATES}: no value for airport {airports[k]} in "
                              f"{months[j][0]:04d}-{months[j][1]:02d}")
        cube = CovariateCube(airports, months, raw)
        report.update(covariate_airports=len(airports), covariate_months=len(months))
    return Bundle(panel, structure, cube, report, hashes)


# ---------------------------------------------------------------------------
# result documents


def fit_document(res) -> dict:
    """Machine-readable form of a FitResult."""
    doc = {
        "model": res.spec.to_dict(),
        "converged": res.converged,
        "loglik": res.loglik,
        "k": res.k,
        "aic": res.aic,
        "pseudo_r2": res.pseudo_r2,
        "null": {"mu": res.null.mu, "psi": res.null.psi, "loglik": res.null.loglik},
        "n": res.n,
        "iterations": res.iterations,
        "gradient_norm": res.grad_norm,
        "fallback_steps": res.fallback_steps,
        "params": {k: np.asarray(v).tolist() for k, v in res.params.items()},
        "packed": np.asarray(res.packed).tolist(),
        "notes": list(res.notes),
    }
    if res.decay is not None:
        doc["decay"] = {"name": res.decay_name, "value": res.decay,
                        "profiled": bool(res.profile)}
    if res.profile:
        doc["profile"] = [{"value": v, "loglik": ll, "converged": c} for v, ll, c in res.profile]
    if res.theta_labels:
        doc["theta_labels"] = [list(x) for x in res.theta_labels]
    return to_jsonable(doc)


def table_text(rows: list[dict], columns: list[str] | None = None) -> str:
    """Fixed-width human-readable table."""
    if not rows:
        return ""
    columns = columns or list(rows[0])
    def cell(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)
    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[j]) for b in body)) for j, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"


def table_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    columns = columns or (list(rows[0]) if rows else [])
    out = []
    for r in rows:
        out.append([fmt(r[c]) if isinstance(r.get(c), (float, np.floating)) else r.get(c, "")
                    for c in columns])
    return csv_text(columns, out)


def trajectory_csv(traj) -> str:
    """Long format ``scope,t,value``."""
    return csv_text(["scope", "t", "value"], [(s, t, fmt(v)) for s, t, v in traj.rows()])


def read_trajectory_csv(path) -> dict:
    out: dict = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        for row in r:
            out.setdefault(row["scope"], []).append((row["t"], float(row["value"])))
    return out
