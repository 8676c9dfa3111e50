"""Geomagnetic field providers: ingested grids and an analytic tilted dipole.

Every provider answers two questions for a surface point: the field vector
(north, east, down in nT) and whether the point is covered. Element values and
horizontal gradients are derived from the vector the same way for all
providers.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import GridGeometryError, GridParseError, OutOfCoverageError
from ..core.models import FieldSample, FieldVector, GeoBox, GeoPoint, wrap_angle
from .geo import GeoFrame

logger = logging.getLogger(__name__)

DEGENERATE_BH_NT = 1e-9
GRID_HEADER = ("lon_deg", "lat_deg", "bx_nt", "by_nt", "bz_nt")
_GEOMETRY_TAG = "# geometry"


def derive_elements(v: FieldVector) -> FieldSample:
    """Compute the seven field elements from a north/east/down vector.

    Declination uses atan2(by, bx) so westward declination keeps its sign.
    When the horizontal intensity vanishes the declination is undefined; it is
    returned as 0 with ``degenerate`` set.
    """
    bx, by, bz = float(v.bx), float(v.by), float(v.bz)
    if not (math.isfinite(bx) and math.isfinite(by) and math.isfinite(bz)):
        raise ValueError(f"non-finite field vector: {v}")
    bh = math.hypot(bx, by)
    bf = math.hypot(bx, by, bz)
    incl = math.atan2(bz, bh)
    degenerate = bh < DEGENERATE_BH_NT
    decl = 0.0 if degenerate else math.atan2(by, bx)
    return FieldSample(bf=bf, bh=bh, bx=bx, by=by, bz=bz, decl_d=decl, incl_i=incl, degenerate=degenerate)


def derive_elements_array(vectors: np.ndarray) -> Dict[str, np.ndarray]:
    """Vectorized ``derive_elements`` over an (..., 3) array of vectors."""
    bx, by, bz = vectors[..., 0], vectors[..., 1], vectors[..., 2]
    bh = np.hypot(bx, by)
    bf = np.sqrt(bx * bx + by * by + bz * bz)
    degenerate = bh < DEGENERATE_BH_NT
    decl = np.where(degenerate, 0.0, np.arctan2(by, bx))
    return {
        "BF": bf, "BH": bh, "BX": bx, "BY": by, "BZ": bz,
        "D": decl, "I": np.arctan2(bz, bh), "degenerate": degenerate,
    }


class FieldProvider(ABC):
    """Read-only source of field vectors over a coverage box."""

    @property
    @abstractmethod
    def coverage(self) -> GeoBox:
        """Box in which the provider can be sampled."""

    @abstractmethod
    def vectors(self, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
        """Field vectors (..., 3) at covered points; no coverage check."""

    def check_coverage(self, lon: float, lat: float) -> None:
        box = self.coverage
        tol = 1e-9
        if not (box.lon_min - tol <= lon <= box.lon_max + tol):
            raise OutOfCoverageError(lon, lat, "longitude")
        if not (box.lat_min - tol <= lat <= box.lat_max + tol):
            raise OutOfCoverageError(lon, lat, "latitude")

    def covers(self, lon: float, lat: float) -> bool:
        try:
            self.check_coverage(lon, lat)
        except OutOfCoverageError:
            return False
        return True

    def covers_many(self, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
        box = self.coverage
        tol = 1e-9
        lons, lats = np.asarray(lons), np.asarray(lats)
        return (
            (box.lon_min - tol <= lons) & (lons <= box.lon_max + tol)
            & (box.lat_min - tol <= lats) & (lats <= box.lat_max + tol)
        )

    def vector(self, p: GeoPoint) -> FieldVector:
        self.check_coverage(p.lon_deg, p.lat_deg)
        v = self.vectors(np.array(p.lon_deg), np.array(p.lat_deg))
        return FieldVector(float(v[0]), float(v[1]), float(v[2]))

    def sample_lonlat(self, lon: float, lat: float) -> FieldSample:
        self.check_coverage(lon, lat)
        v = self.vectors(np.array(lon), np.array(lat))
        return derive_elements(FieldVector(float(v[0]), float(v[1]), float(v[2])))


@dataclass(frozen=True, eq=False)
class FieldGrid(FieldProvider):
    """Regular lon/lat grid of field vectors, bilinearly interpolated.

    ``cells`` has shape (nlat, nlon, 3); row ``j`` is latitude
    ``origin.lat_deg + j * dlat_deg``.
    """

    origin: GeoPoint
    dlon_deg: float
    dlat_deg: float
    nlon: int
    nlat: int
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.nlon < 2 or self.nlat < 2:
            raise GridGeometryError("nlon >= 2 and nlat >= 2")
        if not (self.dlon_deg > 0 and self.dlat_deg > 0):
            raise GridGeometryError("grid spacing > 0")
        cells = np.asarray(self.cells, dtype=np.float64)
        if cells.size != self.nlon * self.nlat * 3:
            raise GridGeometryError("cells length = nlon * nlat")
        cells = cells.reshape(self.nlat, self.nlon, 3).copy()
        if not np.all(np.isfinite(cells)):
            raise GridGeometryError("all cell vectors finite")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def coverage(self) -> GeoBox:
        return GeoBox(
            self.origin.lon_deg, self.node_lon(self.nlon - 1),
            self.origin.lat_deg, self.node_lat(self.nlat - 1),
        )

    def node_lon(self, i: int) -> float:
        return self.origin.lon_deg + i * self.dlon_deg

    def node_lat(self, j: int) -> float:
        return self.origin.lat_deg + j * self.dlat_deg

    def vectors(self, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
        fx = (np.asarray(lons, dtype=np.float64) - self.origin.lon_deg) / self.dlon_deg
        fy = (np.asarray(lats, dtype=np.float64) - self.origin.lat_deg) / self.dlat_deg
        i = np.clip(np.floor(fx).astype(np.int64), 0, self.nlon - 2)
        j = np.clip(np.floor(fy).astype(np.int64), 0, self.nlat - 2)
        tx = (fx - i)[..., None]
        ty = (fy - j)[..., None]
        c = self.cells
        v00, v10 = c[j, i], c[j, i + 1]
        v01, v11 = c[j + 1, i], c[j + 1, i + 1]
        return (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)


@dataclass(frozen=True)
class DipoleFieldSpec:
    """Parameters of the analytic tilted dipole.

    The boreal geomagnetic pole sits at (90 - tilt_deg, center.lon_deg); the
    latitude of ``center`` does not enter the field.
    """

    moment_scale: float = 30000.0
    tilt_deg: float = 11.0
    center: GeoPoint = GeoPoint(-72.0, 0.0)

    def __post_init__(self):
        if not self.moment_scale > 0:
            raise ValueError(f"moment_scale must be positive: {self.moment_scale}")


class DipoleField(FieldProvider):
    """Surface field of a centered, tilted dipole, B = B0 (3 (m.r) r - m)."""

    def __init__(self, spec: DipoleFieldSpec, coverage: GeoBox = GeoBox(-180.0, 180.0, -89.0, 89.0)):
        self.spec = spec
        self._coverage = coverage
        pole_lat = math.radians(90.0 - spec.tilt_deg)
        pole_lon = math.radians(spec.center.lon_deg)
        # The dipole moment points toward the austral geomagnetic pole.
        self._m = -np.array([
            math.cos(pole_lat) * math.cos(pole_lon),
            math.cos(pole_lat) * math.sin(pole_lon),
            math.sin(pole_lat),
        ])

    @property
    def coverage(self) -> GeoBox:
        return self._coverage

    def vectors(self, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
        lam = np.radians(np.asarray(lons, dtype=np.float64))
        phi = np.radians(np.asarray(lats, dtype=np.float64))
        cl, sl = np.cos(lam), np.sin(lam)
        cp, sp = np.cos(phi), np.sin(phi)
        r = np.stack([cp * cl, cp * sl, sp], axis=-1)
        north = np.stack([-sp * cl, -sp * sl, cp], axis=-1)
        east = np.stack([-sl, cl, np.zeros_like(cl)], axis=-1)
        m = self._m
        mr = np.asarray(r @ m)
        b = self.spec.moment_scale * (3.0 * mr[..., None] * r - m)
        return np.stack([
            np.sum(b * north, axis=-1),
            np.sum(b * east, axis=-1),
            -np.sum(b * r, axis=-1),
        ], axis=-1)


def sample(provider: FieldProvider, p: GeoPoint) -> FieldSample:
    """Field elements at ``p``; raises OutOfCoverageError outside coverage."""
    return provider.sample_lonlat(p.lon_deg, p.lat_deg)


@dataclass(frozen=True)
class GradientSet:
    """Per-km (east, north) gradients of several elements at one point."""

    values: Dict[str, Tuple[float, float]]
    one_sided: bool = False

    def __getitem__(self, element: str) -> Tuple[float, float]:
        return self.values[element]


def _element_delta(element: str, a: FieldSample, b: FieldSample) -> float:
    if element == "D":
        return wrap_angle(a.decl_d - b.decl_d)
    return a.element(element) - b.element(element)


def element_gradients(
    provider: FieldProvider,
    p: GeoPoint,
    frame: GeoFrame,
    elements: Sequence[str] = ("D", "I", "BH"),
    step_km: float = 1.0,
    one_sided_fallback: bool = False,
) -> GradientSet:
    """Central-difference gradients of ``elements`` at ``p`` in units per km.

    Neighbours lie ``step_km`` east/west/north/south of ``p`` through the
    frame's km <-> degree map. With ``one_sided_fallback`` a neighbour outside
    coverage is replaced by ``p`` itself and the result is flagged.
    """
    dlon, dlat = frame.km_to_deg(step_km, step_km)
    lon, lat = p.lon_deg, p.lat_deg
    centre = None
    one_sided = False

    def probe(plon: float, plat: float) -> Tuple[FieldSample, float]:
        nonlocal centre, one_sided
        if provider.covers(plon, plat):
            return provider.sample_lonlat(plon, plat), step_km
        if not one_sided_fallback:
            provider.check_coverage(plon, plat)
        if centre is None:
            centre = provider.sample_lonlat(lon, lat)
        one_sided = True
        return centre, 0.0

    east, he = probe(lon + dlon, lat)
    west, hw = probe(lon - dlon, lat)
    north, hn = probe(lon, lat + dlat)
    south, hs = probe(lon, lat - dlat)
    if one_sided:
        logger.debug("one-sided gradient at %s", p)
    values = {}
    for element in elements:
        gx = _element_delta(element, east, west) / (he + hw) if he + hw > 0 else 0.0
        gy = _element_delta(element, north, south) / (hn + hs) if hn + hs > 0 else 0.0
        values[element] = (gx, gy)
    return GradientSet(values=values, one_sided=one_sided)


def gradient(
    provider: FieldProvider,
    p: GeoPoint,
    element: str,
    frame: GeoFrame,
    step_km: float = 1.0,
    one_sided_fallback: bool = False,
) -> Tuple[float, float]:
    """(east, north) per-km gradient of one element (D, I or BH)."""
    return element_gradients(provider, p, frame, (element,), step_km, one_sided_fallback)[element]


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise GridParseError(line, f"{column} is not a number: {text!r}")
    if not math.isfinite(value):
        raise GridParseError(line, f"{column} is not finite: {text!r}")
    return value


def _regular_axis(values: Sequence[float], name: str) -> Tuple[float, float]:
    if len(values) < 2:
        raise GridGeometryError(f"n{name} >= 2")
    steps = np.diff(values)
    if np.any(steps <= 0):
        raise GridGeometryError(f"{name} coordinates strictly increasing")
    spacing = (values[-1] - values[0]) / (len(values) - 1)
    if np.max(np.abs(steps - spacing)) > 1e-6 * spacing:
        raise GridGeometryError(f"{name} coordinates evenly spaced")
    return values[0], spacing


def load_grid(path: Union[str, Path]) -> FieldGrid:
    """Read and validate a field grid CSV.

    Rows are ``lon_deg,lat_deg,bx_nt,by_nt,bz_nt`` sorted lat-major then lon.
    Lines starting with ``#`` are comments, except for an optional
    ``# geometry`` line carrying the exact origin and spacing written by
    ``save_grid``.
    """
    geometry = None
    header_seen = False
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            text = raw.strip()
            if not text:
                continue
            if text.startswith("#"):
                if text.startswith(_GEOMETRY_TAG):
                    geometry = _parse_geometry(text, lineno)
                continue
            parts = [part.strip() for part in text.split(",")]
            if not header_seen:
                if tuple(parts) != GRID_HEADER:
                    raise GridParseError(lineno, f"expected header {','.join(GRID_HEADER)}")
                header_seen = True
                continue
            if len(parts) != len(GRID_HEADER):
                raise GridParseError(lineno, f"expected {len(GRID_HEADER)} columns, got {len(parts)}")
            rows.append((lineno, [_parse_float(t, lineno, c) for t, c in zip(parts, GRID_HEADER)]))
    if not header_seen:
        raise GridParseError(1, "missing header line")
    if not rows:
        raise GridGeometryError("at least 2x2 nodes")

    lats = []
    for _, values in rows:
        if not lats or values[1] != lats[-1]:
            lats.append(values[1])
    lons = [values[0] for _, values in rows if values[1] == lats[0]]
    nlon, nlat = len(lons), len(lats)
    if nlon * nlat != len(rows):
        raise GridGeometryError("cells length = nlon * nlat (rectangular grid)")
    for k, (lineno, values) in enumerate(rows):
        j, i = divmod(k, nlon)
        if values[0] != lons[i] or values[1] != lats[j]:
            raise GridParseError(lineno, "rows must be sorted lat-major then lon on a rectangular lattice")
    lon0, dlon = _regular_axis(lons, "lon")
    lat0, dlat = _regular_axis(lats, "lat")
    if geometry is not None:
        lon0, lat0, dlon, dlat = geometry
    cells = np.array([values[2:] for _, values in rows], dtype=np.float64)
    return FieldGrid(GeoPoint(lon0, lat0), dlon, dlat, nlon, nlat, cells)


def _parse_geometry(text: str, lineno: int) -> Tuple[float, float, float, float]:
    fields = dict(item.split("=", 1) for item in text[len(_GEOMETRY_TAG):].split() if "=" in item)
    try:
        return tuple(_parse_float(fields[k], lineno, k) for k in ("lon0", "lat0", "dlon", "dlat"))
    except KeyError as e:
        raise GridParseError(lineno, f"geometry line missing {e.args[0]}")


def save_grid(grid: FieldGrid, path: Union[str, Path]) -> None:
    """Write ``grid`` so that ``load_grid`` reproduces it bit for bit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"{_GEOMETRY_TAG} lon0={grid.origin.lon_deg!r} lat0={grid.origin.lat_deg!r} "
        f"dlon={grid.dlon_deg!r} dlat={grid.dlat_deg!r}",
        ",".join(GRID_HEADER),
    ]
    for j in range(grid.nlat):
        lat = grid.node_lat(j)
        for i in range(grid.nlon):
            bx, by, bz = (float(x) for x in grid.cells[j, i])
            lines.append(f"{grid.node_lon(i)!r},{lat!r},{bx!r},{by!r},{bz!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def grid_from_provider(provider: FieldProvider, box: GeoBox, nlon: int, nlat: int) -> FieldGrid:
    """Tabulate any provider on a regular lattice over ``box``."""
    dlon = (box.lon_max - box.lon_min) / (nlon - 1)
    dlat = (box.lat_max - box.lat_min) / (nlat - 1)
    lons = box.lon_min + np.arange(nlon) * dlon
    lats = box.lat_min + np.arange(nlat) * dlat
    lon_grid, lat_grid = np.meshgrid(lons, lats)
    return FieldGrid(box.southwest, dlon, dlat, nlon, nlat, provider.vectors(lon_grid, lat_grid))


def lattice_elements(provider: FieldProvider, box: GeoBox, nlon: int, nlat: int) -> Dict[str, np.ndarray]:
    """Element values on a regular lattice over ``box`` (arrays of shape (nlat, nlon))."""
    lons = np.linspace(box.lon_min, box.lon_max, nlon)
    lats = np.linspace(box.lat_min, box.lat_max, nlat)
    lon_grid, lat_grid = np.meshgrid(lons, lats)
    out = derive_elements_array(provider.vectors(lon_grid, lat_grid))
    out["lon"] = lon_grid
    out["lat"] = lat_grid
    return out


def reconstruct_vector(s: FieldSample) -> FieldVector:
    """Invert the element relations: components from (BF, D, I)."""
    return FieldVector(
        s.bf * math.cos(s.incl_i) * math.cos(s.decl_d),
        s.bf * math.cos(s.incl_i) * math.sin(s.decl_d),
        s.bf * math.sin(s.incl_i),
    )


def iter_lattice(box: GeoBox, nlon: int, nlat: int) -> Iterable[GeoPoint]:
    for lat in np.linspace(box.lat_min, box.lat_max, nlat):
        for lon in np.linspace(box.lon_min, box.lon_max, nlon):
            yield GeoPoint(float(lon), float(lat))
