"""Local equirectangular km <-> degree frame."""

import math
from dataclasses import dataclass
from typing import Tuple

from ..core.models import GeoBox, GeoPoint

KM_PER_DEG_LAT = 111.32


@dataclass(frozen=True)
class GeoFrame:
    """Planar frame anchored at ``origin``; longitude scaled by cos(lat0).

    x grows east, y grows north, both in km.
    """

    origin: GeoPoint
    lat0_deg: float

    @classmethod
    def for_region(cls, region: GeoBox) -> "GeoFrame":
        return cls(origin=region.southwest, lat0_deg=region.mid_lat)

    @property
    def km_per_deg_lon(self) -> float:
        return KM_PER_DEG_LAT * math.cos(math.radians(self.lat0_deg))

    @property
    def km_per_deg_lat(self) -> float:
        return KM_PER_DEG_LAT

    def to_km(self, p: GeoPoint) -> Tuple[float, float]:
        return (
            (p.lon_deg - self.origin.lon_deg) * self.km_per_deg_lon,
            (p.lat_deg - self.origin.lat_deg) * self.km_per_deg_lat,
        )

    def to_lonlat(self, x_km: float, y_km: float) -> Tuple[float, float]:
        """Degrees for a planar position, without range validation."""
        return (
            self.origin.lon_deg + x_km / self.km_per_deg_lon,
            self.origin.lat_deg + y_km / self.km_per_deg_lat,
        )

    def to_geo(self, x_km: float, y_km: float) -> GeoPoint:
        lon, lat = self.to_lonlat(x_km, y_km)
        return GeoPoint(lon, lat)

    def km_to_deg(self, dx_km: float, dy_km: float) -> Tuple[float, float]:
        return dx_km / self.km_per_deg_lon, dy_km / self.km_per_deg_lat
