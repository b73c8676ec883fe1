"""Point ingestion, surface and report serialization, synthetic clouds.

All formats are plain text for diffability: xyz triples for points, a JSON
surface document with stable key ordering, a CSV run report and an
ESRI-ASCII-style grid raster.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .driver import RunLedger
from .mesh import LRSpace, MeshError, MeshSegment, U, V
from .surface import LRSurface, PointCloud

SCHEMA_VERSION = 1


class FormatError(ValueError):
    """Malformed input file."""


# ----------------------------------------------------------------------
# point clouds


def read_points(path: str) -> PointCloud:
    """Read whitespace- or comma-separated ``x y z`` triples; ``#`` starts a
    comment; parse errors report the 1-based line number."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.replace(",", " ").split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 values, "
                                  f"got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if len(rows) < 3:
        raise FormatError(f"{path}: need at least 3 points, got {len(rows)}")
    return PointCloud(np.array(rows))


def write_points(cloud: PointCloud, path: str) -> None:
    with open(path, "w") as fh:
        for x, y, z in cloud.xyz:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


# ----------------------------------------------------------------------
# surface documents


def write_surface(surface: LRSurface, path: str, provenance: dict | None = None) -> None:
    """Serialize the surface as a JSON document with stable key ordering;
    floats use shortest round-trip decimals, so reading back reproduces
    evaluation exactly."""
    sp = surface.space
    doc = {
        "schema_version": SCHEMA_VERSION,
        "degrees": list(sp.degrees),
        "domain": list(sp.domain),
        "knots_u": [float(x) for x in sp.u],
        "knots_v": [float(x) for x in sp.v],
        "segments": [[s.axis, s.fixed, s.lo, s.hi] for s in sp.segments()],
        "bsplines": [
            [list(k[0]), list(k[1]), sp.bsplines[k][1], sp.bsplines[k][0]]
            for k in sp.keys_sorted()
        ],
        "provenance": provenance or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_surface(path: str) -> LRSurface:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a surface document: {exc}") from exc
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema version {version!r} "
                          f"(this build reads version {SCHEMA_VERSION})")
    try:
        degrees = tuple(int(p) for p in doc["degrees"])
        u = np.array(doc["knots_u"], dtype=float)
        v = np.array(doc["knots_v"], dtype=float)
        segments = doc["segments"]
        bsplines = doc["bsplines"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed surface document: {exc}") from exc
    if len(bsplines) == 0:
        raise FormatError(f"{path}: surface document without B-splines")
    if len(u) < 2 or len(v) < 2 or (np.diff(u) <= 0).any() or (np.diff(v) <= 0).any():
        raise FormatError(f"{path}: knot tables must be strictly increasing")
    space = LRSpace(u, v, degrees)
    nu, nv = len(u), len(v)
    for seg in segments:
        try:
            axis, fixed, lo, hi = seg
            ms = MeshSegment(str(axis), int(fixed), int(lo), int(hi))
        except (TypeError, ValueError, MeshError) as exc:
            raise FormatError(f"{path}: corrupt segment {seg!r}: {exc}") from exc
        n_fix = nu if ms.axis == U else nv
        n_orth = nv if ms.axis == U else nu
        if not (0 <= ms.fixed < n_fix and 0 <= ms.lo < ms.hi < n_orth):
            raise FormatError(f"{path}: segment {seg!r} indexes outside "
                              "the knot tables")
        space._add_span(ms.axis, ms.fixed, ms.lo, ms.hi)
    p1, p2 = degrees
    for entry in bsplines:
        try:
            ku, kv, coeff, scale = entry
            key = (tuple(int(i) for i in ku), tuple(int(i) for i in kv))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: corrupt B-spline {entry!r}: {exc}") from exc
        if len(key[0]) != p1 + 2 or len(key[1]) != p2 + 2:
            raise FormatError(f"{path}: B-spline {entry!r} has the wrong "
                              "local knot count for its degree")
        for idx, n in ((key[0], nu), (key[1], nv)):
            arr = np.asarray(idx)
            if (arr < 0).any() or (arr >= n).any() or (np.diff(arr) < 0).any():
                raise FormatError(f"{path}: B-spline {entry!r} indexes outside "
                                  "the knot tables")
        if key in space.bsplines:
            raise FormatError(f"{path}: duplicate B-spline {entry!r}")
        space.bsplines[key] = [float(scale), float(coeff)]
    space._touch()
    return LRSurface(space)


# ----------------------------------------------------------------------
# rasters


def sample_raster(surface: LRSurface, nx: int, ny: int, path: str) -> None:
    """Write an ESRI-ASCII-style grid of surface heights over the domain,
    row-major and north-up (the first data row is the maximum-y row)."""
    if nx < 2 or ny < 2:
        raise ValueError("raster needs nx, ny >= 2")
    u0, u1, v0, v1 = surface.domain
    gu = np.linspace(u0, u1, nx)
    gv = np.linspace(v0, v1, ny)
    uu, vv = np.meshgrid(gu, gv)
    zz = surface.evaluate(uu, vv)
    with open(path, "w") as fh:
        fh.write(f"ncols {nx}\n")
        fh.write(f"nrows {ny}\n")
        fh.write(f"xllcorner {u0!r}\n")
        fh.write(f"yllcorner {v0!r}\n")
        fh.write(f"dx {(u1 - u0) / (nx - 1)!r}\n")
        fh.write(f"dy {(v1 - v0) / (ny - 1)!r}\n")
        fh.write("NODATA_value -9999\n")
        for row in zz[::-1]:
            fh.write(" ".join(repr(float(z)) for z in row) + "\n")


# ----------------------------------------------------------------------
# run reports

REPORT_HEADER = "iter,n_out,n_coeff,max,avg,avg_out,efficiency,segments,wall_ms,strategy"


def write_report(ledger: RunLedger, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(REPORT_HEADER + "\n")
        for r in ledger.rows:
            fh.write(",".join([
                str(r.iteration), str(r.n_out), str(r.n_coeff),
                repr(r.max_dist), repr(r.avg_dist), repr(r.avg_out_dist),
                repr(r.efficiency), str(r.segments_inserted),
                repr(r.wall_time * 1000.0), r.strategy_active,
            ]) + "\n")


# ----------------------------------------------------------------------
# synthetic clouds

KINDS = ("dunes", "peaks", "scanlines", "steps")


def _dunes_height(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Smooth dune field: large-scale exponential hills with superposed
    medium-scale sand ripples of varying wavelength."""
    u, v = x / 1000.0, y / 1000.0
    z = (0.75 * np.exp(-((9 * u - 2) ** 2 + (9 * v - 2) ** 2) / 4)
         + 0.75 * np.exp(-((9 * u + 1) ** 2) / 49 - (9 * v + 1) / 10)
         + 0.5 * np.exp(-((9 * u - 7) ** 2 + (9 * v - 3) ** 2) / 4)
         - 0.2 * np.exp(-(9 * u - 4) ** 2 - (9 * v - 7) ** 2))
    z = 40.0 * z
    # ripple field: amplitude and frequency both grow toward the south-west
    ripple = (2.2 * np.exp(-((u - 0.35) ** 2 + (v - 0.3) ** 2) / 0.08)
              * np.sin(2 * np.pi * (14 * u + 3 * u * u))
              * np.sin(2 * np.pi * (11 * v)))
    crest = 3.0 * np.exp(-((u - 0.72) ** 2 / 0.001 + (v - 0.6) ** 2 / 0.05))
    return z + ripple + crest


def _peaks_height(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rugged mountain-side: steep anisotropic peaks over a sloping base."""
    u, v = x / 1000.0, y / 1000.0
    base = 120.0 * u + 60.0 * v
    z = base
    peaks = [(0.3, 0.4, 180.0, 0.004), (0.55, 0.7, 240.0, 0.002),
             (0.7, 0.25, 150.0, 0.003), (0.85, 0.6, 90.0, 0.0015)]
    for cx, cy, h, w in peaks:
        z = z + h * np.exp(-((u - cx) ** 2 + 1.8 * (v - cy) ** 2) / w)
    z = z + 8.0 * np.sin(21 * u) * np.sin(17 * v)
    return z


def _steps_height(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Raster-like piecewise-constant terraces."""
    return 5.0 * np.floor(x / 180.0) + 3.0 * np.floor(y / 260.0)


def gen_synthetic(kind: str, seed: int, n_points: int, noise: float = 0.0,
                  outlier_fraction: float = 0.0) -> PointCloud:
    """Deterministic synthetic test cloud on a 1000 m square.

    The ground-truth height function is attached as ``cloud.truth`` and, for
    the scanlines kind, the injected outliers as the boolean mask
    ``cloud.outliers`` (exactly ``floor(outlier_fraction * n_points)`` of
    them, displaced far off the true surface).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r} (expected one of {KINDS})")
    if n_points < 100:
        raise ValueError("synthetic clouds need n_points >= 100")
    rng = np.random.default_rng(seed)
    if kind == "scanlines":
        n_lines = max(int(np.sqrt(n_points) / 2), 4)
        # scan lines at varying spacing, points dense along each line
        ys = np.sort(rng.uniform(0, 1000, n_lines))
        line_of = rng.integers(0, n_lines, n_points)
        x = rng.uniform(0, 1000, n_points)
        y = ys[line_of] + rng.normal(0.0, 0.5, n_points)
        truth = _dunes_height
    else:
        x = rng.uniform(0, 1000, n_points)
        y = rng.uniform(0, 1000, n_points)
        truth = {"dunes": _dunes_height, "peaks": _peaks_height,
                 "steps": _steps_height}[kind]
    z = truth(x, y)
    if noise > 0.0:
        z = z + rng.normal(0.0, noise, n_points)
    outliers = np.zeros(n_points, dtype=bool)
    n_outliers = int(outlier_fraction * n_points)
    if n_outliers > 0:
        ids = rng.choice(n_points, size=n_outliers, replace=False)
        z[ids] = z[ids] + rng.choice([-1.0, 1.0], n_outliers) * rng.uniform(
            30.0, 60.0, n_outliers)
        outliers[ids] = True
    cloud = PointCloud(np.c_[x, y, z])
    cloud.truth = truth
    cloud.outliers = outliers
    return cloud


def write_truth_sidecar(cloud: PointCloud, path: str) -> None:
    """Sidecar oracle for a synthetic cloud: true height and outlier flag
    per point, same order as the cloud."""
    z_true = cloud.truth(cloud.x, cloud.y)
    with open(path, "w") as fh:
        fh.write("# x y z_true is_outlier\n")
        for x, y, zt, flag in zip(cloud.x, cloud.y, z_true, cloud.outliers):
            fh.write(f"{float(x)!r} {float(y)!r} {float(zt)!r} {int(flag)}\n")
