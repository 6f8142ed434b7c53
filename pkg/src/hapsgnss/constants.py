"""Physical and geodetic constants (WGS-84, GPS interface values)."""

from dataclasses import dataclass
import math


@dataclass(frozen=True)
class PhysicalConstants:
    c: float = 299_792_458.0            # speed of light [m/s]
    omega_e: float = 7.2921151467e-5    # Earth rotation rate [rad/s]
    a: float = 6_378_137.0              # WGS-84 semi-major axis [m]
    f: float = 1.0 / 298.257223563      # WGS-84 flattening
    mu: float = 3.986005e14             # GPS value of GM [m^3/s^2]

    @property
    def b(self) -> float:
        return self.a * (1.0 - self.f)

    @property
    def e2(self) -> float:
        return self.f * (2.0 - self.f)


CONSTANTS = PhysicalConstants()

C = CONSTANTS.c
OMEGA_E = CONSTANTS.omega_e
WGS84_A = CONSTANTS.a
WGS84_F = CONSTANTS.f
WGS84_B = CONSTANTS.b
WGS84_E2 = CONSTANTS.e2
MU = CONSTANTS.mu

# relativistic clock correction constant, -2 sqrt(mu) / c^2 [s/m^0.5]
F_REL = -2.0 * math.sqrt(MU) / C**2

GPS_WEEK_SECONDS = 604_800.0
HALF_WEEK = 302_400.0
