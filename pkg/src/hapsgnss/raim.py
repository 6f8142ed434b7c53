"""C/N0-weighted least squares with modified Danish reweighting.

The a-priori variance of each pseudorange comes from its C/N0.  After
every weighted solve the normalised residuals are compared with a normal
quantile; observations above it get their a-priori variance inflated by
``exp(|w| / T)`` for the next solve, which drives their weight towards zero.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy.stats import norm

from .errors import SingularGeometry

from .solver import (DIVERGED, OK, UNAVAILABLE, EpochSolution, LsqResult, SolverConfig,
                     _Prepared, _solve_normal, build_geometry, corrected_pseudoranges,
                     solve_epoch)

RECOMPUTE = "recompute"
FIRST_ITERATION = "first_iteration"
DEFAULT_CN0 = 35.0  # [dB-Hz], used when a receiver reports none
MAX_INFLATION_EXPONENT = 300.0


@dataclass
class RaimConfig:
    alpha0: float = 0.005
    danish_T: object = "critical"     # "critical" or a positive number
    residual_std_mode: str = RECOMPUTE
    max_iterations: int = 20
    tolerance: float = 0.01
    exclusion_ratio: float = 1e-3
    default_cn0: float = DEFAULT_CN0

    @property
    def critical(self):
        return critical_value(self.alpha0)

    @property
    def T(self):
        if self.danish_T == "critical":
            return self.critical
        return float(self.danish_T)


@lru_cache(maxsize=64)
def critical_value(alpha0):
    """Two-sided standard normal quantile n_{1 - alpha0/2}."""
    return float(norm.ppf(1.0 - alpha0 / 2.0))


def cn0_variance(cn0):
    """Pseudorange variance [m^2] from C/N0 [dB-Hz]."""
    return 10.0 + 150.0 ** 2 * 10.0 ** (-np.asarray(cn0, dtype=float) / 10.0)


@dataclass
class ObservationWeights:
    prior: np.ndarray        # a-priori variances s_i [m^2]
    variances: np.ndarray    # variances used for the current solve [m^2]

    @classmethod
    def from_cn0(cls, cn0):
        s = np.atleast_1d(cn0_variance(cn0)).astype(float)
        return cls(s, s.copy())

    @property
    def sigma(self):
        return np.diag(self.variances)

    @property
    def W(self):
        return np.diag(1.0 / self.variances)

    @property
    def weights(self):
        return 1.0 / self.variances


@dataclass
class RaimDiagnostics:
    residuals: np.ndarray = None
    residual_cov: np.ndarray = None
    normalized: np.ndarray = None
    critical: float = math.nan
    alpha0: float = math.nan
    enabled_count: int = 0
    excluded_ids: list = field(default_factory=list)
    weights: dict = field(default_factory=dict)
    iterations: int = 0


def wls_step(g, w, condition_limit=1e12):
    """Weighted step: Q = (H'WH)^-1, dx = Q H'W b."""
    if g.H.shape[0] < 4:
        raise SingularGeometry(f"{g.H.shape[0]} observations cannot fix 4 unknowns")
    HW = g.H.T * (1.0 / w.variances)
    dx, Q = _solve_normal(HW @ g.H, HW @ g.b, condition_limit)
    return LsqResult(dx, Q)


def residual_covariance(g, w, dx, variances=None):
    """Residuals v = H dx - b and their covariance Sigma - H (H' Sigma^-1 H)^-1 H'.

    Sigma is the a-priori variance matrix ``diag(w.prior)`` unless
    ``variances`` overrides its diagonal.  Using the inflated variances here
    would let a down-weighted outlier normalise itself back under the
    threshold on the next pass, so the reweighting never settles.
    """
    var = w.prior if variances is None else np.asarray(variances, dtype=float)
    v = g.H @ dx - g.b
    HS = g.H.T * (1.0 / var)
    inner = np.linalg.inv(HS @ g.H)
    cov = np.diag(var) - g.H @ inner @ g.H.T
    return RaimDiagnostics(residuals=v, residual_cov=0.5 * (cov + cov.T))


def danish_update(w_bar, prior_var, critical, T):
    """Next-iteration variance of one observation."""
    a = abs(w_bar)
    if a > critical:
        # the cap keeps the variance finite; the weight is already negligible
        return prior_var * math.exp(min(a / T, MAX_INFLATION_EXPONENT))
    return prior_var


def _normalized(v, cov_diag):
    out = np.zeros_like(v)
    ok = cov_diag > 1e-12
    out[ok] = v[ok] / np.sqrt(cov_diag[ok])
    return out


def solve_epoch_raim(observations, sources, delays_provider=None, cfg=None, raim=None, spp=None):
    """Position fix refined by the C/N0-based RAIM loop.

    Returns ``(EpochSolution, RaimDiagnostics)``.  With fewer than five
    sources the plain SPP fix is returned with ``raim_applied = False``.
    """
    cfg = cfg or SolverConfig()
    raim = raim or RaimConfig()
    prep_all = observations if isinstance(observations, _Prepared) else _Prepared(observations, sources)
    if spp is None:
        spp = solve_epoch(prep_all, None, delays_provider, cfg)
    crit, T = raim.critical, raim.T
    diag = RaimDiagnostics(critical=crit, alpha0=raim.alpha0)
    if spp.status == UNAVAILABLE or len(spp.used_ids) < 5:
        return spp, diag

    index = {sid: k for k, sid in enumerate(prep_all.ids)}
    idx = np.array([index[sid] for sid in spp.used_ids])
    cn0 = prep_all.cn0[idx]
    cn0 = np.where(np.isnan(cn0), raim.default_cn0, cn0)
    weights = ObservationWeights.from_cn0(cn0)
    ids = list(spp.used_ids)

    x = spp.position.copy()
    clk = spp.clock_offset
    first_cov = None
    flagged_used = np.zeros(len(idx), dtype=bool)
    converged = False
    k = 0
    for k in range(1, raim.max_iterations + 1):
        corrected, _ = corrected_pseudoranges(prep_all, idx, x, delays_provider, cfg)
        geom = build_geometry(x, clk, corrected, prep_all.positions[idx], ids, cfg.sagnac)
        result = wls_step(geom, weights, cfg.condition_limit)
        x = x + result.dx[:3]
        clk = clk + result.dt

        step = residual_covariance(geom, weights, result.dx)
        cov_diag = np.diag(step.residual_cov)
        if raim.residual_std_mode == FIRST_ITERATION:
            if first_cov is None:
                first_cov = cov_diag
            cov_diag = first_cov
        w_bar = _normalized(step.residuals, cov_diag)
        flagged = np.abs(w_bar) > crit
        diag.enabled_count += int(flagged.sum())
        new_var = np.array([danish_update(wb, s0, crit, T)
                            for wb, s0 in zip(w_bar, weights.prior)])

        diag.residuals, diag.residual_cov, diag.normalized = step.residuals, step.residual_cov, w_bar
        small = math.sqrt(float(result.dx[:3] @ result.dx[:3])) <= raim.tolerance
        # a reweighting decided in this pass must be solved at least once
        if small and np.array_equal(flagged, flagged_used):
            converged = True
            break
        flagged_used = flagged
        weights = ObservationWeights(weights.prior, new_var)

    w = weights.weights
    med = float(np.median(w))
    diag.weights = dict(zip(ids, w.tolist()))
    diag.excluded_ids = [sid for sid, wi in zip(ids, w) if wi / med < raim.exclusion_ratio]
    diag.iterations = k
    post = geom.b - geom.H @ result.dx
    sol = EpochSolution(
        position=x, clock_offset=clk, Q=result.Q, iterations=spp.iterations + k,
        converged=converged, hdop=spp.hdop, vdop=spp.vdop,
        residuals=dict(zip(ids, post.tolist())), used_ids=ids, raim_applied=True,
        status=OK if converged else DIVERGED)
    return sol, diag
