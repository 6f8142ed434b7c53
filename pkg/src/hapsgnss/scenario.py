"""Observation synthesis: visibility, C/N0, stochastic errors and pseudoranges."""

from dataclasses import dataclass, replace
import math
import warnings

import numpy as np
from scipy.signal import lfilter

from .constants import C
from .errors import NoSatelliteReference
from .frames import ecef_to_geodetic, look_angles, ned_rotation, sagnac_rotate_many
from .orbits import HAPS, SATELLITE

OPEN = "open"
SUBURBAN = "suburban"
DENSE_URBAN = "dense_urban"

CN0_LOW, CN0_HIGH = 30.0, 50.0           # preset endpoints [dB-Hz]
CN0_EL_LOW, CN0_EL_HIGH = 15.0, 90.0     # [deg]


@dataclass(frozen=True)
class GaussMarkovState:
    x: float
    tau: float
    sigma: float

    def __post_init__(self):
        if self.tau <= 0.0 or self.sigma < 0.0:
            raise ValueError("Gauss-Markov process needs tau > 0 and sigma >= 0")


def gauss_markov_coefficients(dt, tau, sigma):
    """Exact discretisation: x' = phi * x + q * n with n ~ N(0, 1)."""
    phi = math.exp(-dt / tau)
    return phi, sigma * math.sqrt(1.0 - phi * phi)


def gauss_markov_step(state, dt, noise):
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    phi, q = gauss_markov_coefficients(dt, state.tau, state.sigma)
    return replace(state, x=phi * state.x + q * noise)


def gauss_markov_sequence(n, dt, tau, sigma, rng, x0=None):
    """``n`` consecutive samples, started from the stationary distribution
    unless ``x0`` is given."""
    phi, q = gauss_markov_coefficients(dt, tau, sigma)
    noise = rng.standard_normal(n)
    start = sigma * rng.standard_normal() if x0 is None else x0
    seq, _ = lfilter([q], [1.0, -phi], noise, zi=[phi * start])
    return seq


class GaussMarkovBank:
    """Independent first-order Gauss-Markov errors, one per satellite id.

    The bank is the single owner of the sequential error state; it must be
    advanced in epoch order.
    """

    def __init__(self, ids, tau, sigma, rng):
        self.tau = tau
        self.sigma = sigma
        self.ids = list(ids)
        self.x = sigma * rng.standard_normal(len(self.ids))

    def advance(self, dt, rng, tau=None, sigma=None):
        tau = self.tau if tau is None else tau
        sigma = self.sigma if sigma is None else sigma
        phi, q = gauss_markov_coefficients(dt, tau, sigma)
        self.x = phi * self.x + q * rng.standard_normal(len(self.ids))

    def values(self):
        return dict(zip(self.ids, self.x))


@dataclass(frozen=True)
class EnvironmentModel:
    name: str = SUBURBAN
    los_k: float = 0.15           # logistic slope [1/deg]
    los_el50: float = 12.0        # logistic midpoint [deg]
    sat_error_tau: float = 10.0   # [s]
    sat_error_sigma: float = 6.0  # [m]
    haps_error_std: float = 2.0   # [m]


def environment_preset(name):
    if name == SUBURBAN:
        return EnvironmentModel(SUBURBAN, 0.15, 12.0, 10.0, 6.0, 2.0)
    if name == DENSE_URBAN:
        return EnvironmentModel(DENSE_URBAN, 0.12, 35.0, 10.0, 6.0, 5.0)
    if name == OPEN:
        return EnvironmentModel(OPEN, 0.0, 0.0, 10.0, 6.0, 2.0)
    raise ValueError(f"unknown environment preset {name!r}")


def los_probability(elevation, env):
    """Probability that a source at ``elevation`` [rad] is in line of sight."""
    if env.name == OPEN:
        return 1.0
    el_deg = math.degrees(elevation)
    if el_deg >= 90.0 - 1e-9:
        return 1.0
    return 1.0 / (1.0 + math.exp(-env.los_k * (el_deg - env.los_el50)))


def satellite_cn0(elevation, jitter=0.0):
    frac = (math.degrees(elevation) - CN0_EL_LOW) / (CN0_EL_HIGH - CN0_EL_LOW)
    return CN0_LOW + (CN0_HIGH - CN0_LOW) * frac + jitter


def cn0_assign(elevation, kind, visible_sat_cn0s=(), jitter=0.0):
    """C/N0 [dB-Hz]: elevation preset for satellites, best satellite for HAPS."""
    if kind == SATELLITE:
        return satellite_cn0(elevation, jitter)
    if len(visible_sat_cn0s) == 0:
        warnings.warn("HAPS C/N0 without satellite reference, using preset maximum",
                      NoSatelliteReference, stacklevel=2)
        return CN0_HIGH
    return float(max(visible_sat_cn0s))


@dataclass(frozen=True)
class ObservationTruth:
    geometric_range: float
    clock_term: float
    error_term: float
    d_ion: float = 0.0
    d_trop: float = 0.0


@dataclass(frozen=True)
class Observation:
    source_id: str
    epoch: float
    pseudorange: float
    cn0: float = None
    truth: ObservationTruth = None


def sagnac_ranges(receiver, positions, iterations=3):
    """Geometric ranges from emission-time positions with the Earth rotated
    during signal flight.  Returns (ranges, reception-frame positions)."""
    diff = positions - receiver
    rng_ = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    for _ in range(iterations):
        rotated = sagnac_rotate_many(positions, rng_ / C)
        diff = rotated - receiver
        rng_ = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return rng_, rotated


@dataclass
class SynthesisSettings:
    """The subset of a scenario configuration that synthesis needs."""

    elevation_mask: float = math.radians(15.0)
    los_applies_to: tuple = (HAPS,)
    dense_urban_sat_cap: int = 4
    cn0_jitter_std: float = 0.0
    clock_estimation_noise: float = 0.0  # [m], HAPS only
    atmosphere: object = None


def synthesize_epoch(truth_pos, truth_clock, sources, env, cfg, rng, epoch=0.0,
                     sat_errors=None):
    """Pseudorange observations for one epoch.

    ``sources`` hold emission-time states; ``sat_errors`` maps satellite id
    to its current Gauss-Markov error [m] (zero when absent).  Random draws
    are taken for every source in a fixed order so the stream depends only
    on the inputs.
    """
    if not sources:
        raise ValueError("no ranging sources")
    sat_errors = sat_errors or {}
    truth_pos = np.asarray(truth_pos, dtype=float)
    geo = ecef_to_geodetic(truth_pos)
    rot = ned_rotation(geo)
    positions = np.array([s.position for s in sources])
    ranges, rotated = sagnac_ranges(truth_pos, positions)
    el, az = look_angles(rot, truth_pos, rotated)

    n = len(sources)
    los_draw = rng.random(n)
    jitter = rng.standard_normal(n) * cfg.cn0_jitter_std
    haps_noise = rng.standard_normal(n)
    clock_noise = rng.standard_normal()
    cap_key = rng.random(n)

    keep = []
    for k, s in enumerate(sources):
        if el[k] < cfg.elevation_mask:
            continue
        if s.kind in cfg.los_applies_to and los_draw[k] > los_probability(el[k], env):
            continue
        keep.append(k)

    sat_idx = [k for k in keep if sources[k].kind == SATELLITE]
    cap = cfg.dense_urban_sat_cap
    if env.name == DENSE_URBAN and cap is not None and len(sat_idx) > cap:
        # uniform random subset: the `cap` smallest of iid uniform keys
        chosen = sorted(sat_idx, key=lambda k: cap_key[k])[:cap]
        sat_idx = sorted(chosen)
        keep = [k for k in keep if sources[k].kind != SATELLITE or k in sat_idx]

    sat_cn0 = {k: cn0_assign(el[k], SATELLITE, jitter=jitter[k]) for k in sat_idx}
    atm = cfg.atmosphere
    if sat_idx and atm is not None:
        trop, ion = atm.satellite_delays(geo, el[sat_idx], az[sat_idx], epoch)
        delays = {k: (trop[j], ion[j]) for j, k in enumerate(sat_idx)}
    else:
        delays = {k: (0.0, 0.0) for k in sat_idx}

    out = []
    for k in keep:
        s = sources[k]
        clock_term = C * (truth_clock - s.clock_offset)
        if s.kind == SATELLITE:
            d_trop, d_ion = delays[k]
            error = d_ion + d_trop + sat_errors.get(s.id, 0.0)
            cn0 = sat_cn0[k]
        else:
            d_trop = d_ion = 0.0
            error = env.haps_error_std * haps_noise[k] + cfg.clock_estimation_noise * clock_noise
            cn0 = cn0_assign(el[k], HAPS, list(sat_cn0.values()))
        truth = ObservationTruth(float(ranges[k]), clock_term, float(error), float(d_ion), float(d_trop))
        out.append(Observation(s.id, epoch, float(ranges[k] + clock_term + error), float(cn0), truth))
    return out
