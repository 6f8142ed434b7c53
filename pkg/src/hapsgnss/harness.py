"""Campaign driver and metrics.

A campaign synthesises one observation stream per seed and then solves it
once per system variant, so every variant sharing a seed sees the same
truth trajectory and the same error realisations.
"""

from dataclasses import dataclass, field
import csv
import io
import json
import math
import re
import zlib

import numpy as np

from .constants import C
from .errors import ConfigError, EmptyInput, NoEphemeris, SingularGeometry
from .frames import GeodeticPosition, geodetic_to_ecef, look_angles, ned_rotation
from .orbits import HAPS, SATELLITE, SourceState, constellation_ids, constellation_positions, \
    haps_position, propagate_ephemeris
from .raim import solve_epoch_raim
from .rinex import select_ephemeris
from .scenario import GaussMarkovBank, Observation, sagnac_ranges, synthesize_epoch
from .solver import SINGULAR, EpochSolution, SolverConfig, _Prepared, dop_from_covariance, \
    ned_covariance, solve_epoch

# RNG stream tags; a stream is keyed by (seed, tag, ...)
_GM_STREAM, _EPOCH_STREAM, _VARIANT_STREAM = 1, 2, 3

ROW_FIELDS = ("t", "env", "truth_x", "truth_y", "truth_z", "est_x", "est_y", "est_z",
              "err3d", "hdop", "vdop", "n_sat", "n_haps", "converged", "raim_applied",
              "raim_enabled_events", "status")


@dataclass(frozen=True)
class SystemVariant:
    name: str
    use_gps: bool = True
    n_haps: int = 0
    raim: bool = False

    def __post_init__(self):
        if not 0 <= self.n_haps <= 6:
            raise ConfigError(f"variants.{self.name}", "n_haps must lie in [0, 6]")
        if not self.use_gps and self.n_haps < 4:
            raise ConfigError(f"variants.{self.name}", "a HAPS-only system needs at least 4 HAPS")

    @classmethod
    def parse(cls, text):
        """Parse names like ``gps``, ``gps+6haps``, ``4haps``, ``gps+6haps+raim``."""
        m = re.fullmatch(r"(gps)?(?:\+?(\d)haps)?(\+raim)?", text.strip().lower())
        if not m or not (m.group(1) or m.group(2)):
            raise ConfigError("variants", f"cannot parse variant {text!r}")
        return cls(text.strip().lower(), bool(m.group(1)), int(m.group(2) or 0), bool(m.group(3)))


@dataclass
class EpochRow:
    t: float
    env: str
    truth: np.ndarray
    estimate: np.ndarray
    err3d: float
    hdop: float
    vdop: float
    n_sat: int
    n_haps: int
    converged: bool
    raim_applied: bool
    raim_enabled_events: int
    status: str

    @property
    def solved(self):
        return self.converged and self.n_sat + self.n_haps >= 4


@dataclass
class CampaignResult:
    variant: SystemVariant
    seed: int
    rows: list = field(default_factory=list)

    @property
    def errors(self):
        return [r.err3d for r in self.rows if r.solved]

    @property
    def raim_enabled(self):
        return sum(r.raim_enabled_events for r in self.rows)

    def summary(self):
        errs = self.errors
        out = {
            "variant": self.variant.name, "seed": self.seed, "epochs": len(self.rows),
            "availability_pct": availability(self.rows) if self.rows else None,
            "raim_enabled": self.raim_enabled,
        }
        for q in (50, 90, 95):
            out[f"p{q}_m"] = percentile(errs, q) if errs else None
        return out


# -- metrics ----------------------------------------------------------------

def percentile(errors, q):
    """Nearest-rank percentile: the smallest value with at least q% of the
    sample at or below it."""
    if len(errors) == 0:
        raise EmptyInput("percentile of an empty sample")
    data = sorted(errors)
    rank = max(1, math.ceil(q / 100.0 * len(data) - 1e-9))
    return data[min(rank, len(data)) - 1]


def availability(rows):
    """Percentage of epochs with a converged fix from at least four sources."""
    if len(rows) == 0:
        raise EmptyInput("availability of zero epochs")
    return 100.0 * sum(1 for r in rows if r.solved) / len(rows)


def raim_enabled_ratio(result_a, result_b):
    """Total RAIM-enabled events of ``a`` over those of ``b``; NaN when ``b`` has none."""
    a = sum(r.raim_enabled for r in _as_list(result_a))
    b = sum(r.raim_enabled for r in _as_list(result_b))
    if b == 0:
        return math.nan
    return a / b


def _as_list(results):
    return results if isinstance(results, (list, tuple)) else [results]


def empirical_cdf(errors):
    data = np.sort(np.asarray(errors, dtype=float))
    return data, np.arange(1, len(data) + 1) / len(data)


def improvement(reference, candidate):
    """Relative reduction of ``candidate`` with respect to ``reference``."""
    return (reference - candidate) / reference


# -- synthesis --------------------------------------------------------------

def emission_states(cfg, receiver, t):
    """Source states at their signal emission times for a receiver at ``t``."""
    spec = cfg.constellation
    ids = constellation_ids(spec)
    tau = np.full(len(ids), 0.075)
    for _ in range(3):
        pos = constellation_positions(spec, t - tau)
        rho, _ = sagnac_ranges(receiver, pos, iterations=2)
        tau = rho / C
    pos = constellation_positions(spec, t - tau)
    clocks = spec.clock_offsets or (0.0,) * len(ids)
    states = [SourceState(i, SATELLITE, p, float(dT)) for i, p, dT in zip(ids, pos, clocks)]
    for h in cfg.haps:
        tau_h = np.linalg.norm(haps_position(h, t).position - receiver) / C
        states.append(haps_position(h, t - tau_h))
    return states


@dataclass
class SynthEpoch:
    t: float
    env: str
    truth: np.ndarray
    clock: float
    sources: dict
    observations: list


def synthesize_campaign(cfg, seed):
    """Observation stream for every epoch of ``cfg`` under ``seed``."""
    settings = cfg.synthesis_settings()
    ids = constellation_ids(cfg.constellation)
    env0 = cfg.environment_at(0.0)
    gm_rng = np.random.default_rng([seed, _GM_STREAM])
    bank = GaussMarkovBank(ids, env0.sat_error_tau, env0.sat_error_sigma, gm_rng)
    epochs = []
    for k in range(cfg.n_epochs):
        rel = k * cfg.epoch_interval
        t = cfg.start_time + rel
        env = cfg.environment_at(rel)
        if k > 0:
            bank.advance(cfg.epoch_interval, gm_rng, env.sat_error_tau, env.sat_error_sigma)
        truth = cfg.receiver.position(rel)
        clock = cfg.receiver.clock(rel)
        sources = emission_states(cfg, truth, t)
        obs = synthesize_epoch(truth, clock, sources, env, settings,
                               np.random.default_rng([seed, _EPOCH_STREAM, k]),
                               epoch=t, sat_errors=bank.values())
        epochs.append(SynthEpoch(t, env.name, truth, clock, {s.id: s for s in sources}, obs))
    return epochs


def filter_variant(observations, sources, variant, rng):
    """Observations a variant uses: GPS if enabled plus a random HAPS subset."""
    sats = [o for o in observations if sources[o.source_id].kind == SATELLITE]
    haps = [o for o in observations if sources[o.source_id].kind == HAPS]
    if len(haps) > variant.n_haps:
        pick = set(rng.choice(len(haps), variant.n_haps, replace=False).tolist())
        haps = [o for k, o in enumerate(haps) if k in pick]
    return (sats if variant.use_gps else []) + haps


def _variant_key(variant):
    return zlib.crc32(variant.name.encode())


def solve_variant(cfg, epochs, variant, seed):
    atm = cfg.atmosphere
    solver_cfg = cfg.solver_config()
    result = CampaignResult(variant, seed)
    vkey = _variant_key(variant)
    for k, ep in enumerate(epochs):
        rng = np.random.default_rng([seed, _VARIANT_STREAM, vkey, k])
        obs = filter_variant(ep.observations, ep.sources, variant, rng)
        prep = _Prepared(obs, ep.sources)
        events = 0
        try:
            sol = solve_epoch(prep, None, atm, solver_cfg)
            if variant.raim:
                sol, diag = solve_epoch_raim(prep, None, atm, solver_cfg, cfg.raim, spp=sol)
                events = diag.enabled_count
        except SingularGeometry:
            sol = EpochSolution(np.full(3, np.nan), math.nan, status=SINGULAR)
        used = sol.used_ids if sol.status != SINGULAR else []
        n_haps = sum(1 for i in used if ep.sources[i].kind == HAPS)
        err = float(np.linalg.norm(sol.position - ep.truth)) if sol.converged else math.nan
        result.rows.append(EpochRow(
            ep.t, ep.env, ep.truth, sol.position, err, sol.hdop, sol.vdop,
            len(used) - n_haps, n_haps, sol.converged, sol.raim_applied, events, sol.status))
    return result


def run_campaign(cfg, variants, seeds):
    """Results keyed by ``(variant name, seed)``, in input order."""
    out = {}
    for seed in seeds:
        epochs = synthesize_campaign(cfg, seed)
        for v in variants:
            out[(v.name, seed)] = solve_variant(cfg, epochs, v, seed)
    return out


# -- RINEX pipeline ---------------------------------------------------------

def rinex_sources(obs_epoch, nav):
    """Satellite states at emission time for one observation epoch.

    Returns (observations, sources, missing prns).  The pseudorange is the
    receiver timestamp minus the satellite emission timestamp, so the
    emission time in satellite time is ``t - p / c`` whatever the receiver
    clock; the satellite clock then converts it to GPS time.
    """
    observations, sources, missing = [], {}, []
    for rec in obs_epoch.observations:
        if not rec.valid:
            continue
        try:
            eph = select_ephemeris(nav, rec.prn, obs_epoch.t)
        except NoEphemeris:
            missing.append(rec.prn)
            continue
        t_tx = obs_epoch.t - rec.pseudorange / C
        state = propagate_ephemeris(eph, t_tx)
        state = propagate_ephemeris(eph, t_tx - state.clock_offset)
        sources[state.id] = state
        observations.append(Observation(state.id, obs_epoch.t, rec.pseudorange, rec.cn0))
    return observations, sources, missing


def run_rinex(obs, nav, sidecar=None, raim=False, truth=None, solver_cfg=None,
              raim_cfg=None, meteo=None):
    """Solve every epoch of a parsed observation file.

    HAPS rows from ``sidecar`` join the epoch they are aligned with.  With a
    ``truth`` trajectory the 3D error is filled in, otherwise it is NaN.
    """
    from .atmosphere import AtmosphereModel, KlobucharCoefficients
    from .raim import RaimConfig

    head = nav.header
    klob = None
    if head.ion_alpha and head.ion_beta:
        klob = KlobucharCoefficients(tuple(head.ion_alpha), tuple(head.ion_beta))
    atm = AtmosphereModel(klob, meteo)
    solver_cfg = solver_cfg or SolverConfig()
    raim_cfg = raim_cfg or RaimConfig()
    variant = SystemVariant("gps" + ("+haps" if sidecar else "") + ("+raim" if raim else ""),
                            True, 0, raim)
    result = CampaignResult(variant, 0)
    tolerance = 0.5 * obs.interval
    for ep in obs.epochs:
        true_pos = truth.at(ep.t)[0] if truth is not None else np.full(3, np.nan)
        events = 0
        observations, sources, _ = rinex_sources(ep, nav)
        if sidecar is not None:
            for row in sidecar.at(ep.t, tolerance):
                sources[row.haps_id] = SourceState(row.haps_id, HAPS, np.array(row.position))
                observations.append(Observation(row.haps_id, ep.t, row.pseudorange, row.cn0))
        try:
            sol = solve_epoch(observations, sources, atm, solver_cfg)
            if raim:
                sol, diag = solve_epoch_raim(observations, sources, atm, solver_cfg, raim_cfg,
                                             spp=sol)
                events = diag.enabled_count
        except SingularGeometry:
            sol = EpochSolution(np.full(3, np.nan), math.nan, status=SINGULAR)
        used = sol.used_ids if sol.status != SINGULAR else []
        n_haps = sum(1 for i in used if sources[i].kind == HAPS)
        err = float(np.linalg.norm(sol.position - true_pos)) if sol.converged else math.nan
        result.rows.append(EpochRow(
            ep.t, "rinex", true_pos, sol.position, err, sol.hdop, sol.vdop,
            len(used) - n_haps, n_haps, sol.converged, sol.raim_applied, events, sol.status))
    return result


# -- DOP map ----------------------------------------------------------------

def geometry_dop(receiver_geo, sources, mask):
    """(hdop, vdop, n_visible) of ``sources`` (N, 3) above ``mask`` at a node."""
    r = geodetic_to_ecef(receiver_geo)
    rot = ned_rotation(receiver_geo)
    el, _ = look_angles(rot, r, sources)
    vis = np.asarray(sources)[el >= mask]
    if len(vis) < 4:
        return math.nan, math.nan, len(vis)
    los = vis - r
    los /= np.linalg.norm(los, axis=1)[:, None]
    H = np.column_stack([-los, np.ones(len(vis))])
    normal = H.T @ H
    if np.linalg.cond(normal) > 1e12:
        return math.nan, math.nan, len(vis)
    Q = np.linalg.inv(normal)
    hdop, vdop = dop_from_covariance(ned_covariance(Q, receiver_geo))
    return hdop, vdop, len(vis)


def dop_grid(cfg, grid, t=0.0, include_gps=False, height=None):
    """DOP of the HAPS layout (optionally with GPS) over a lat/lon grid.

    ``grid`` is ``(lat_min, lat_max, lon_min, lon_max, step)`` in degrees.
    Returns rows ``(lat_deg, lon_deg, hdop, vdop, n_visible)``; nodes with
    fewer than four visible sources carry NaN.
    """
    lat_min, lat_max, lon_min, lon_max, step = grid
    if step <= 0 or lat_max < lat_min or lon_max < lon_min:
        raise ConfigError("grid", "expected lat_min <= lat_max, lon_min <= lon_max, step > 0")
    h = cfg.receiver.anchor.height if height is None else height
    abs_t = cfg.start_time + t
    sources = [haps_position(p, abs_t).position for p in cfg.haps]
    if include_gps:
        sources.extend(constellation_positions(cfg.constellation, abs_t))
    sources = np.array(sources)
    lats = np.arange(lat_min, lat_max + step * 0.5, step)
    lons = np.arange(lon_min, lon_max + step * 0.5, step)
    rows = []
    for lat in lats:
        for lon in lons:
            node = GeodeticPosition.from_degrees(lat, lon, h)
            hdop, vdop, n = geometry_dop(node, sources, cfg.elevation_mask)
            rows.append((round(float(lat), 9), round(float(lon), 9), hdop, vdop, n))
    return rows


# -- output -----------------------------------------------------------------

def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6f}"
    return str(x)


def rows_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in result.rows:
        w.writerow([_fmt(v) for v in (
            r.t, r.env, *r.truth, *r.estimate, r.err3d, r.hdop, r.vdop, r.n_sat, r.n_haps,
            r.converged, r.raim_applied, r.raim_enabled_events, r.status)])
    return buf.getvalue()


def cdf_csv(errors):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("err3d_m", "cdf"))
    for e, p in zip(*empirical_cdf(errors)):
        w.writerow((_fmt(e), _fmt(p)))
    return buf.getvalue()


def dopgrid_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("lat_deg", "lon_deg", "hdop", "vdop", "n_visible"))
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _rounded(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else round(obj, 6)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    return obj


def summarize(results, variants):
    """JSON-ready summary: per cell, pooled per variant, and RAIM ratios."""
    cells = [r.summary() for r in results.values()]
    pooled = {}
    for v in variants:
        runs = [r for (name, _), r in results.items() if name == v.name]
        errs = [e for r in runs for e in r.errors]
        rows = [row for r in runs for row in r.rows]
        entry = {"epochs": len(rows),
                 "availability_pct": availability(rows) if rows else None,
                 "raim_enabled": sum(r.raim_enabled for r in runs)}
        for q in (50, 90, 95):
            entry[f"p{q}_m"] = percentile(errs, q) if errs else None
        pooled[v.name] = entry
    return _rounded({"cells": cells, "variants": pooled})


def summary_json(summary):
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"
