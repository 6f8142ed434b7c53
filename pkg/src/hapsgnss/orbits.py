"""Ranging-source kinematics: broadcast ephemerides, a synthetic GPS-like
constellation, and HAPS platforms loitering on a horizontal circle."""

from dataclasses import dataclass
import math

import numpy as np
from scipy.optimize import brentq

from .constants import F_REL, HALF_WEEK, GPS_WEEK_SECONDS, MU, OMEGA_E
from .errors import BelowMask, KeplerNonConvergence, StaleEphemeris
from .frames import GeodeticPosition, ecef_to_geodetic, geodetic_to_ecef, ned_rotation

SATELLITE = "sat"
HAPS = "haps"

KEPLER_TOL = 1e-13
KEPLER_MAX_ITER = 30
EPHEMERIS_VALIDITY = 4 * 3600.0
DEFAULT_HAPS_HEIGHT = 20_000.0
DEFAULT_HAPS_RATE = 2.0 * math.pi / 600.0


@dataclass(frozen=True)
class EphemerisRecord:
    prn: int
    toe: float
    sqrt_a: float
    e: float
    i0: float
    omega0: float
    omega: float
    m0: float
    delta_n: float = 0.0
    i_dot: float = 0.0
    omega_dot: float = 0.0
    cuc: float = 0.0
    cus: float = 0.0
    crc: float = 0.0
    crs: float = 0.0
    cic: float = 0.0
    cis: float = 0.0
    af0: float = 0.0
    af1: float = 0.0
    af2: float = 0.0
    week: int = 0
    toc: float = None

    def __post_init__(self):
        if not 1 <= self.prn <= 32:
            raise ValueError(f"PRN {self.prn} outside 1-32")
        if not 0.0 <= self.e < 0.1:
            raise ValueError(f"PRN {self.prn}: eccentricity {self.e} outside [0, 0.1)")
        if not 2.0e7 <= self.sqrt_a ** 2 <= 3.2e7:
            raise ValueError(f"PRN {self.prn}: semi-major axis {self.sqrt_a ** 2:.0f} m "
                             "outside the GPS range")
        if self.toc is None:
            object.__setattr__(self, "toc", self.toe)


@dataclass(frozen=True)
class SourceState:
    id: str
    kind: str                 # SATELLITE or HAPS
    position: np.ndarray      # ECEF at emission time [m]
    clock_offset: float = 0.0  # [s]

    @property
    def is_haps(self):
        return self.kind == HAPS


@dataclass(frozen=True)
class HapsPlatform:
    id: str
    center: GeodeticPosition
    orbit_radius: float = 300.0
    angular_rate: float = DEFAULT_HAPS_RATE
    phase0: float = 0.0
    clock_offset: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.orbit_radius <= 400.0:
            raise ValueError(f"orbit_radius {self.orbit_radius} m outside the 400 m cylinder")
        if not 17_000.0 <= self.center.height <= 25_000.0:
            raise ValueError(f"HAPS height {self.center.height} m outside [17, 25] km")


def _wrap_week(dt):
    if dt > HALF_WEEK:
        dt -= GPS_WEEK_SECONDS
    elif dt < -HALF_WEEK:
        dt += GPS_WEEK_SECONDS
    return dt


def solve_kepler(m, e):
    """Eccentric anomaly from mean anomaly by Newton iteration."""
    big_e = m if e < 0.8 else math.pi
    for _ in range(KEPLER_MAX_ITER):
        f = big_e - e * math.sin(big_e) - m
        step = f / (1.0 - e * math.cos(big_e))
        big_e -= step
        if abs(step) < KEPLER_TOL:
            return big_e
    raise KeplerNonConvergence(f"no convergence for M={m}, e={e}")


def propagate_ephemeris(eph, t):
    """Satellite ECEF position and clock offset at GPS time-of-week ``t``."""
    tk = _wrap_week(t - eph.toe)
    if abs(tk) >= EPHEMERIS_VALIDITY:
        raise StaleEphemeris(f"PRN {eph.prn}: |t - toe| = {abs(tk):.0f} s")

    a = eph.sqrt_a ** 2
    n = math.sqrt(MU / a ** 3) + eph.delta_n
    m = eph.m0 + n * tk
    big_e = solve_kepler(m, eph.e)
    sin_e, cos_e = math.sin(big_e), math.cos(big_e)
    nu = math.atan2(math.sqrt(1.0 - eph.e ** 2) * sin_e, cos_e - eph.e)
    phi = nu + eph.omega
    s2, c2 = math.sin(2.0 * phi), math.cos(2.0 * phi)
    u = phi + eph.cus * s2 + eph.cuc * c2
    r = a * (1.0 - eph.e * cos_e) + eph.crs * s2 + eph.crc * c2
    inc = eph.i0 + eph.i_dot * tk + eph.cis * s2 + eph.cic * c2
    x_orb, y_orb = r * math.cos(u), r * math.sin(u)
    lan = eph.omega0 + (eph.omega_dot - OMEGA_E) * tk - OMEGA_E * eph.toe
    cl, sl, ci = math.cos(lan), math.sin(lan), math.cos(inc)
    pos = np.array([
        x_orb * cl - y_orb * ci * sl,
        x_orb * sl + y_orb * ci * cl,
        y_orb * math.sin(inc),
    ])

    dtc = _wrap_week(t - eph.toc)
    clock = eph.af0 + eph.af1 * dtc + eph.af2 * dtc ** 2 + F_REL * eph.e * eph.sqrt_a * sin_e
    return SourceState(f"G{eph.prn:02d}", SATELLITE, pos, clock)


@dataclass(frozen=True)
class ConstellationSpec:
    n_planes: int = 6
    sats_per_plane: int = 5
    semi_major_axis: float = 26_560_000.0
    inclination: float = math.radians(55.0)
    phasing: int = 1          # Walker F parameter
    raan0: float = 0.0
    clock_offsets: tuple = ()  # per-satellite constant dT [s], optional


def _walker_elements(spec):
    total = spec.n_planes * spec.sats_per_plane
    raan = np.empty(total)
    u0 = np.empty(total)
    k = 0
    for p in range(spec.n_planes):
        for s in range(spec.sats_per_plane):
            raan[k] = spec.raan0 + 2.0 * math.pi * p / spec.n_planes
            u0[k] = 2.0 * math.pi * (s / spec.sats_per_plane
                                     + spec.phasing * p / total)
            k += 1
    return raan, u0


def constellation_positions(spec, t):
    """ECEF positions (N, 3) of a circular Walker constellation.

    ``t`` may be a scalar or a per-satellite array, which lets callers
    evaluate every satellite at its own emission time.
    """
    raan, u0 = _walker_elements(spec)
    t = np.broadcast_to(np.asarray(t, dtype=float), raan.shape)
    a = spec.semi_major_axis
    n = math.sqrt(MU / a ** 3)
    u = u0 + n * t
    lan = raan - OMEGA_E * t
    cu, su = np.cos(u), np.sin(u)
    cl, sl = np.cos(lan), np.sin(lan)
    ci, si = math.cos(spec.inclination), math.sin(spec.inclination)
    return a * np.column_stack([cu * cl - su * ci * sl, cu * sl + su * ci * cl, su * si])


def constellation_ids(spec):
    return [f"G{k + 1:02d}" for k in range(spec.n_planes * spec.sats_per_plane)]


def synth_constellation(n_planes, sats_per_plane, a, i, t):
    """Walker-style constellation, evenly spaced in RAAN and mean anomaly."""
    if n_planes < 1 or sats_per_plane < 1:
        raise ValueError("need at least one plane and one satellite per plane")
    spec = ConstellationSpec(n_planes, sats_per_plane, a, i)
    pos = constellation_positions(spec, t)
    return [SourceState(sid, SATELLITE, p) for sid, p in zip(constellation_ids(spec), pos)]


def haps_position(h, t):
    """Position of a HAPS on its loiter circle at time ``t`` [s]."""
    center = geodetic_to_ecef(h.center)
    if h.orbit_radius == 0.0:
        return SourceState(h.id, HAPS, center, h.clock_offset)
    rot = ned_rotation(h.center)
    east, north = rot[0], rot[1]
    ang = h.phase0 + h.angular_rate * t
    pos = center + h.orbit_radius * (math.cos(ang) * north + math.sin(ang) * east)
    return SourceState(h.id, HAPS, pos, h.clock_offset)


def _ray_point_at_height(receiver, el, az, height):
    origin = geodetic_to_ecef(receiver)
    rot = ned_rotation(receiver)
    direction = rot.T @ np.array([
        math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)])

    def excess(s):
        return ecef_to_geodetic(origin + s * direction).height - height

    hi = max(height - receiver.height, 1.0)
    while excess(hi) < 0.0:
        hi *= 2.0
    s = brentq(excess, 0.0, hi, xtol=1e-6)
    return origin + s * direction


def haps_from_elevation_azimuth(receiver, elevation, azimuth, height=DEFAULT_HAPS_HEIGHT,
                                id="HAPS", orbit_radius=300.0,
                                angular_rate=DEFAULT_HAPS_RATE, clock_offset=0.0):
    """Place a HAPS so that at t=0 it is seen at (elevation, azimuth).

    The start point lies on the look ray at the requested height; the loiter
    centre sits ``orbit_radius`` further out along the horizontal azimuth, so
    the platform starts at the point of its circle nearest the receiver.
    """
    if elevation <= 0.0:
        raise BelowMask(f"elevation {math.degrees(elevation):.3f} deg is not above the horizon")
    start = _ray_point_at_height(receiver, elevation, azimuth, height)
    start_geo = ecef_to_geodetic(start)
    rot = ned_rotation(start_geo)
    receiver_ecef = geodetic_to_ecef(receiver)
    horiz = rot @ (start - receiver_ecef)
    outward = horiz[:2]
    norm = math.hypot(*outward)
    if norm < 1e-3:
        # zenith: no preferred direction, put the centre due north
        outward = np.array([0.0, 1.0])
    else:
        outward = outward / norm
    center_ecef = start + orbit_radius * (outward[0] * rot[0] + outward[1] * rot[1])
    cg = ecef_to_geodetic(center_ecef)
    center = GeodeticPosition(cg.lat, cg.lon, height)

    crot = ned_rotation(center)
    back = crot @ (start - geodetic_to_ecef(center))
    phase0 = math.atan2(back[0], back[1]) if orbit_radius > 0.0 else 0.0
    return HapsPlatform(id, center, orbit_radius, angular_rate, phase0, clock_offset)
