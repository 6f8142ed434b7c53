"""Coordinate frames, local-level rotations, look angles and the Sagnac rotation.

ECEF positions are plain ``numpy`` arrays of shape ``(3,)`` (or ``(N, 3)``
where noted).  Geodetic positions use :class:`GeodeticPosition` with angles
in radians.
"""

import math
from typing import NamedTuple

import numpy as np

from .constants import OMEGA_E, WGS84_A, WGS84_B, WGS84_E2
from .errors import DegenerateGeometry, InvalidPropagationTime, NearSingular


class GeodeticPosition(NamedTuple):
    lat: float     # [rad]
    lon: float     # [rad]
    height: float  # [m] above the WGS-84 ellipsoid

    @classmethod
    def from_degrees(cls, lat_deg, lon_deg, height=0.0):
        return cls(math.radians(lat_deg), math.radians(lon_deg), float(height))

    def degrees(self):
        return math.degrees(self.lat), math.degrees(self.lon), self.height


def geodetic_to_ecef(g):
    """Closed-form WGS-84 geodetic to ECEF conversion."""
    lat, lon, h = g
    slat, clat = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
    return np.array([
        (n + h) * clat * math.cos(lon),
        (n + h) * clat * math.sin(lon),
        (n * (1.0 - WGS84_E2) + h) * slat,
    ])


def ecef_to_geodetic(p):
    """ECEF to WGS-84 geodetic by fixed-point iteration on latitude.

    Converges to well below a micrometre for heights from the Earth's
    surface up to GPS altitude.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    r2 = x * x + y * y
    if r2 + z * z <= 1.0:
        raise NearSingular("position within 1 m of the Earth's centre")
    rho = math.sqrt(r2)
    lon = math.atan2(y, x)
    if lon <= -math.pi:
        lon += 2.0 * math.pi

    if rho < 1e-9:
        lat = math.copysign(math.pi / 2.0, z)
        return GeodeticPosition(lat, 0.0 if rho == 0.0 else lon, abs(z) - WGS84_B)

    # Bowring's parametric start, then refine
    ep2 = WGS84_E2 / (1.0 - WGS84_E2)
    beta = math.atan2(z * WGS84_A, rho * WGS84_B)
    lat = math.atan2(z + ep2 * WGS84_B * math.sin(beta) ** 3,
                     rho - WGS84_E2 * WGS84_A * math.cos(beta) ** 3)
    for _ in range(10):
        slat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
        new = math.atan2(z + WGS84_E2 * n * slat, rho)
        if abs(new - lat) < 1e-15:
            lat = new
            break
        lat = new

    slat, clat = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
    if abs(clat) > 1e-3:
        h = rho / clat - n
    else:
        h = z / slat - n * (1.0 - WGS84_E2)
    return GeodeticPosition(lat, lon, h)


def ned_rotation(g):
    """Local-level rotation matrix; rows are the east, north and up axes in ECEF.

    ``R @ v_ecef`` gives the (east, north, up) components of ``v_ecef``.
    """
    lat, lon = g[0], g[1]
    sl, cl = math.sin(lon), math.cos(lon)
    sp, cp = math.sin(lat), math.cos(lat)
    return np.array([
        [-sl, cl, 0.0],
        [-cl * sp, -sl * sp, cp],
        [cl * cp, sl * cp, sp],
    ])


def look_angles(rot, receiver, sources):
    """Elevation and azimuth of ``sources`` (N, 3) from ``receiver``.

    ``rot`` is :func:`ned_rotation` at the receiver.  Vectorised helper
    behind :func:`elevation_azimuth`.
    """
    los = np.atleast_2d(sources) - receiver
    dist = np.sqrt(np.einsum("ij,ij->i", los, los))
    if np.any(dist < 1.0):
        raise DegenerateGeometry("source within 1 m of receiver")
    enu = los @ rot.T
    # atan2 stays well conditioned near the zenith where arcsin is not
    el = np.arctan2(enu[:, 2], np.hypot(enu[:, 0], enu[:, 1]))
    az = np.arctan2(enu[:, 0], enu[:, 1])
    az = np.where(az <= -np.pi, az + 2.0 * np.pi, az)
    az = np.where(np.abs(el - np.pi / 2.0) <= 1e-9, 0.0, az)
    return el, az


def elevation_azimuth(receiver, source):
    """Elevation in [-pi/2, pi/2] and azimuth clockwise from north in (-pi, pi]."""
    receiver = np.asarray(receiver, dtype=float)
    rot = ned_rotation(ecef_to_geodetic(receiver))
    el, az = look_angles(rot, receiver, np.asarray(source, dtype=float))
    return float(el[0]), float(az[0])


def sagnac_matrix(propagation_time):
    theta = OMEGA_E * propagation_time
    ct, st = math.cos(theta), math.sin(theta)
    return np.array([[ct, st, 0.0], [-st, ct, 0.0], [0.0, 0.0, 1.0]])


def sagnac_correct(pos_at_emission, propagation_time):
    """Rotate an emission-time ECEF position into the reception-time frame."""
    if not 0.0 <= propagation_time < 1.0:
        raise InvalidPropagationTime(
            f"propagation time {propagation_time!r} s outside [0, 1)")
    return sagnac_matrix(propagation_time) @ np.asarray(pos_at_emission, dtype=float)


def sagnac_rotate_many(positions, propagation_times):
    """Vectorised Sagnac rotation of (N, 3) positions by per-row times."""
    theta = OMEGA_E * np.asarray(propagation_times)
    ct, st = np.cos(theta), np.sin(theta)
    out = np.empty_like(positions)
    out[:, 0] = ct * positions[:, 0] + st * positions[:, 1]
    out[:, 1] = -st * positions[:, 0] + ct * positions[:, 1]
    out[:, 2] = positions[:, 2]
    return out
