"""Tropospheric (Saastamoinen) and ionospheric (Klobuchar) delay models.

Both functions accept scalar or array elevations so the solver can
evaluate every satellite of an epoch in one call.
"""

from dataclasses import dataclass
import math

import numpy as np

from .constants import C
from .errors import ElevationTooLow

MIN_TROPO_ELEVATION = math.radians(5.0)
NIGHT_DELAY = 5e-9  # [s]


@dataclass(frozen=True)
class KlobucharCoefficients:
    alpha: tuple = (0.1118e-07, 0.7451e-08, -0.5961e-07, -0.5961e-07)
    beta: tuple = (0.9011e05, 0.1638e05, -0.1966e06, -0.6554e05)


@dataclass(frozen=True)
class AtmosphericDelays:
    d_trop: float = 0.0
    d_ion: float = 0.0


@dataclass(frozen=True)
class Meteo:
    pressure: float = 1013.25      # [hPa]
    temperature: float = 288.15    # [K]
    relative_humidity: float = 0.5

    @property
    def vapor_pressure(self):
        """Partial water-vapour pressure [hPa] from relative humidity (Magnus form)."""
        t = self.temperature
        return 6.108 * self.relative_humidity * math.exp((17.15 * t - 4684.0) / (t - 38.45))


def saastamoinen_delay(receiver, elevation, pressure, temperature, vapor_pressure):
    """Slant tropospheric delay [m].

    Zenith hydrostatic and wet terms of Saastamoinen's model scaled by
    ``1 / cos(z)`` with z the zenith angle.
    """
    el = np.asarray(elevation, dtype=float)
    if np.any(el < MIN_TROPO_ELEVATION - 1e-12):
        raise ElevationTooLow("Saastamoinen model used below 5 deg elevation")
    lat, h = receiver[0], receiver[2]
    cos_z = np.sin(el)
    dry = 0.0022768 * pressure / (1.0 - 0.00266 * math.cos(2.0 * lat) - 0.00028 * h / 1000.0)
    wet = 0.002277 * (1255.0 / temperature + 0.05) * vapor_pressure
    out = (dry + wet) / cos_z
    return float(out) if out.ndim == 0 else out


def klobuchar_delay(receiver, elevation, azimuth, gps_time, k):
    """L1 ionospheric delay [m] from the broadcast Klobuchar model."""
    el_sc = np.asarray(elevation, dtype=float) / math.pi
    az = np.asarray(azimuth, dtype=float)
    lat_u = receiver[0] / math.pi
    lon_u = receiver[1] / math.pi

    psi = 0.0137 / (el_sc + 0.11) - 0.022
    lat_i = np.clip(lat_u + psi * np.cos(az), -0.416, 0.416)
    lon_i = lon_u + psi * np.sin(az) / np.cos(lat_i * math.pi)
    lat_m = lat_i + 0.064 * np.cos((lon_i - 1.617) * math.pi)

    local = np.mod(4.32e4 * lon_i + gps_time, 86400.0)
    a0, a1, a2, a3 = k.alpha
    b0, b1, b2, b3 = k.beta
    amp = np.maximum(a0 + lat_m * (a1 + lat_m * (a2 + lat_m * a3)), 0.0)
    per = np.maximum(b0 + lat_m * (b1 + lat_m * (b2 + lat_m * b3)), 72000.0)
    x = 2.0 * math.pi * (local - 50400.0) / per
    obliquity = 1.0 + 16.0 * (0.53 - el_sc) ** 3

    day = NIGHT_DELAY + amp * (1.0 - x * x / 2.0 + x ** 4 / 24.0)
    delay = obliquity * np.where(np.abs(x) < 1.57, day, NIGHT_DELAY)
    out = C * delay
    return float(out) if out.ndim == 0 else out


class AtmosphereModel:
    """Delay provider shared by observation synthesis and the solver.

    HAPS sources never get an ionospheric term; in the solver they get no
    atmospheric correction at all (their simulated pseudorange already
    lumps every error into one term).
    """

    def __init__(self, klobuchar=None, meteo=None, ionosphere=True, troposphere=True):
        self.klobuchar = klobuchar or KlobucharCoefficients()
        self.meteo = meteo or Meteo()
        self.ionosphere = ionosphere
        self.troposphere = troposphere

    def satellite_delays(self, receiver, elevation, azimuth, gps_time):
        """Arrays (d_trop, d_ion) for satellites seen at ``elevation``/``azimuth``."""
        el = np.asarray(elevation, dtype=float)
        if self.troposphere:
            m = self.meteo
            trop = saastamoinen_delay(receiver, np.maximum(el, MIN_TROPO_ELEVATION),
                                      m.pressure, m.temperature, m.vapor_pressure)
        else:
            trop = np.zeros_like(el)
        if self.ionosphere:
            ion = klobuchar_delay(receiver, np.maximum(el, 0.0), azimuth, gps_time, self.klobuchar)
        else:
            ion = np.zeros_like(el)
        return np.broadcast_to(trop, el.shape).copy(), np.broadcast_to(ion, el.shape).copy()

    def delays(self, receiver, elevation, azimuth, gps_time, is_haps):
        is_haps = np.asarray(is_haps, dtype=bool)
        trop, ion = self.satellite_delays(receiver, elevation, azimuth, gps_time)
        trop[is_haps] = 0.0
        ion[is_haps] = 0.0
        return trop, ion
