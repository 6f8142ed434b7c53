"""Single point positioning by iterative least squares."""

from dataclasses import dataclass, field
import math

import numpy as np

from .constants import C
from .errors import DegenerateGeometry, InvalidCovariance, SingularGeometry
from .frames import GeodeticPosition, ecef_to_geodetic, geodetic_to_ecef, look_angles, \
    ned_rotation, sagnac_rotate_many
from .orbits import HAPS

OK = "ok"
UNAVAILABLE = "unavailable"
DIVERGED = "diverged"
SINGULAR = "singular"

# the mask and atmospheric models only make sense once the estimate is near
# the Earth's surface; farther away every observation is used uncorrected
NEAR_SURFACE = 100_000.0
# no receiver solution can lie this far from the Earth's centre [m]
RUNAWAY = 1e8


@dataclass
class SolverConfig:
    elevation_mask: float = math.radians(15.0)
    max_iterations: int = 20
    tolerance: float = 0.01           # [m] on |dx(1:3)|
    condition_limit: float = 1e12
    freeze_step: float = 1000.0       # [m]
    sagnac: bool = True


@dataclass
class EpochGeometry:
    H: np.ndarray
    b: np.ndarray
    rho: np.ndarray
    los: np.ndarray
    ids: list = field(default_factory=list)
    corrected: np.ndarray = None
    positions: np.ndarray = None      # reception-frame source positions


@dataclass
class LsqResult:
    dx: np.ndarray
    Q: np.ndarray

    @property
    def dt(self):
        return self.dx[3] / C


@dataclass
class EpochSolution:
    position: np.ndarray
    clock_offset: float
    Q: np.ndarray = None
    iterations: int = 0
    converged: bool = False
    hdop: float = math.nan
    vdop: float = math.nan
    residuals: dict = field(default_factory=dict)
    used_ids: list = field(default_factory=list)
    raim_applied: bool = False
    status: str = OK

    @property
    def available(self):
        return self.status in (OK, DIVERGED) and len(self.used_ids) >= 4


def correct_pseudorange(pseudorange, clock_offset, d_trop=0.0, d_ion=0.0, is_haps=False):
    """Corrected pseudorange: add the source clock, remove atmospheric delays.

    HAPS pseudoranges only get their clock term (zero by default).
    """
    if is_haps:
        return pseudorange + C * clock_offset
    return pseudorange + C * clock_offset - d_trop - d_ion


def build_geometry(est_pos, est_clock, corrected, positions, ids=None, sagnac=True):
    """Design matrix and a-priori residuals at the current estimate.

    ``positions`` are emission-time ECEF coordinates; each is rotated by the
    Earth's spin over the signal flight time, which is taken from the
    corrected pseudorange and then refined once from the geometric range.
    """
    est_pos = np.asarray(est_pos, dtype=float)
    corrected = np.asarray(corrected, dtype=float)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if sagnac:
        tau = np.clip((corrected - C * est_clock) / C, 0.0, 0.999)
        rotated = sagnac_rotate_many(positions, tau)
        diff = rotated - est_pos
        rho = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        rotated = sagnac_rotate_many(positions, np.minimum(rho / C, 0.999))
    else:
        rotated = positions
    diff = rotated - est_pos
    rho = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if np.any(rho < 1.0):
        raise DegenerateGeometry("ranging source within 1 m of the estimate")
    los = -diff / rho[:, None]
    H = np.empty((len(rho), 4))
    H[:, :3] = los
    H[:, 3] = 1.0
    b = corrected - rho - C * est_clock
    return EpochGeometry(H, b, rho, los, list(ids or []), corrected, rotated)


def _solve_normal(normal, rhs, condition_limit):
    """Cholesky solve of the normal equations; returns (dx, Q)."""
    eig = np.linalg.eigvalsh(normal)
    if eig[0] <= 0.0 or eig[-1] > condition_limit * eig[0]:
        raise SingularGeometry("normal matrix condition number above limit")
    try:
        L = np.linalg.cholesky(normal)
    except np.linalg.LinAlgError as exc:
        raise SingularGeometry(str(exc)) from exc
    Linv = np.linalg.inv(L)
    Q = Linv.T @ Linv
    return Q @ rhs, Q


def lsq_step(g, condition_limit=1e12):
    """Unweighted Gauss-Newton step via Cholesky factorisation of H'H."""
    if g.H.shape[0] < 4:
        raise SingularGeometry(f"{g.H.shape[0]} observations cannot fix 4 unknowns")
    dx, Q = _solve_normal(g.H.T @ g.H, g.H.T @ g.b, condition_limit)
    return LsqResult(dx, Q)


def ned_covariance(Q, receiver):
    """Position covariance in the local level frame (east, north, up rows of R)."""
    R = ned_rotation(receiver)
    Qs = np.asarray(Q)[:3, :3]
    out = R @ Qs @ R.T
    return 0.5 * (out + out.T)


def dop_from_covariance(q_local):
    d = np.diag(q_local)
    if np.any(d < 0.0):
        raise InvalidCovariance("negative variance on the diagonal")
    return math.sqrt(d[0] + d[1]), math.sqrt(d[2])


class _Prepared:
    """Observations matched to their sources as flat arrays."""

    def __init__(self, observations, sources):
        lookup = sources if isinstance(sources, dict) else {s.id: s for s in sources}
        obs = [o for o in observations if o.source_id in lookup]
        self.ids = [o.source_id for o in obs]
        self.epoch = obs[0].epoch if obs else 0.0
        self.p = np.array([o.pseudorange for o in obs], dtype=float)
        self.cn0 = np.array([np.nan if o.cn0 is None else o.cn0 for o in obs], dtype=float)
        srcs = [lookup[i] for i in self.ids]
        self.positions = np.array([s.position for s in srcs], dtype=float).reshape(-1, 3)
        self.dT = np.array([s.clock_offset for s in srcs], dtype=float)
        self.is_haps = np.array([s.kind == HAPS for s in srcs], dtype=bool)

    def __len__(self):
        return len(self.ids)


def corrected_pseudoranges(prep, idx, est_pos, delays_provider, cfg):
    """Corrected pseudoranges and elevations for rows ``idx`` at ``est_pos``.

    Returns (corrected, elevation) where elevation is ``None`` when the
    estimate is not yet near the surface.
    """
    p = prep.p[idx]
    dT = prep.dT[idx]
    haps = prep.is_haps[idx]
    if np.linalg.norm(est_pos) < 1.0:
        return p + C * dT, None
    geo = ecef_to_geodetic(est_pos)
    if abs(geo.height) > NEAR_SURFACE:
        return p + C * dT, None
    rot = ned_rotation(geo)
    approx = p + C * dT
    tau = np.clip(approx / C, 0.0, 0.999) if cfg.sagnac else np.zeros(len(idx))
    rotated = sagnac_rotate_many(prep.positions[idx], tau)
    el, az = look_angles(rot, est_pos, rotated)
    corrected = approx.copy()
    if delays_provider is not None:
        trop, ion = delays_provider.delays(geo, el, az, prep.epoch, haps)
        corrected -= np.where(haps, 0.0, trop + ion)
    return corrected, el


def _surface_start(prep):
    """Ellipsoid point beneath the centroid of the sources."""
    g = ecef_to_geodetic(prep.positions.mean(axis=0))
    return geodetic_to_ecef(GeodeticPosition(g.lat, g.lon, 0.0))


def solve_epoch(observations, sources, delays_provider=None, cfg=None, initial=None):
    """Iterative least-squares position and receiver clock for one epoch.

    Starts from the Earth's centre with zero clock unless ``initial``
    (position, clock) is given.  The elevation mask and the atmospheric
    corrections are re-evaluated at every iterate until the update drops
    below ``cfg.freeze_step``; after that the set of used sources is fixed.

    Sources that all sit close to the receiver (a HAPS-only system) are
    nearly collinear seen from the Earth's centre and the first step is
    meaningless; when the centre start fails the solve is restarted once
    from the ellipsoid point beneath the sources.
    """
    cfg = cfg or SolverConfig()
    prep = observations if isinstance(observations, _Prepared) else _Prepared(observations, sources)
    if initial is not None:
        return _iterate(prep, np.array(initial[0], dtype=float), float(initial[1]),
                        delays_provider, cfg)
    if len(prep) <= 3:
        return EpochSolution(np.zeros(3), 0.0, status=UNAVAILABLE, used_ids=list(prep.ids))
    try:
        sol = _iterate(prep, np.zeros(3), 0.0, delays_provider, cfg)
        if sol.status != DIVERGED and np.linalg.norm(sol.position) < RUNAWAY:
            return sol
    except (SingularGeometry, DegenerateGeometry):
        sol = None
    try:
        return _iterate(prep, _surface_start(prep), 0.0, delays_provider, cfg)
    except SingularGeometry:
        if sol is None:
            raise
        return sol


def _iterate(prep, x, clk, delays_provider, cfg):
    if len(prep) <= 3:
        return EpochSolution(x, clk, status=UNAVAILABLE, used_ids=list(prep.ids))

    all_idx = np.arange(len(prep))
    active = all_idx
    frozen = False
    converged = False
    result = geom = None
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        corrected, el = corrected_pseudoranges(prep, all_idx if not frozen else active,
                                               x, delays_provider, cfg)
        if not frozen:
            if el is not None:
                keep = el >= cfg.elevation_mask
                active = all_idx[keep]
                corrected = corrected[keep]
            else:
                active = all_idx
        if len(active) <= 3:
            return EpochSolution(x, clk, iterations=it, status=UNAVAILABLE,
                                 used_ids=[prep.ids[i] for i in active])
        geom = build_geometry(x, clk, corrected, prep.positions[active],
                              [prep.ids[i] for i in active], cfg.sagnac)
        result = lsq_step(geom, cfg.condition_limit)
        x = x + result.dx[:3]
        clk = clk + result.dt
        step = math.sqrt(float(result.dx[:3] @ result.dx[:3]))
        if step <= cfg.tolerance:
            converged = True
            break
        if step < cfg.freeze_step and el is not None:
            frozen = True

    post = geom.b - geom.H @ result.dx
    hdop, vdop = dop_from_covariance(ned_covariance(result.Q, ecef_to_geodetic(x)))
    return EpochSolution(
        position=x, clock_offset=clk, Q=result.Q, iterations=it, converged=converged,
        hdop=hdop, vdop=vdop, residuals=dict(zip(geom.ids, post.tolist())),
        used_ids=list(geom.ids), status=OK if converged else DIVERGED)
