"""Closed-form statistics of the time-variant diffusive channel.

``h(t, tau)`` is the probability that a molecule released at time ``t`` is
inside the transparent receiver ``tau`` seconds later. Its randomness comes
from the transmitter-receiver separation ``r(t)``, a 3-D Brownian motion
with coefficient ``D2`` started at ``[x0, 0, 0]``.

All functions take scalars or numpy arrays for the time arguments and
evaluate exponentials in log space.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import EffectiveDiffusion, Vec3

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
VARIANCE_RTOL = 1e-15


class DomainError(ValueError):
    """Argument outside the domain where a closed form is defined."""


class NumericalConsistencyError(ArithmeticError):
    """A computed quantity violated a mathematical bound beyond rounding."""


class HorizonError(ValueError):
    """The normalized ACF did not drop below the threshold before ``t_max``."""

    def __init__(self, eta: float, t_max: float, rho_at_horizon: float):
        super().__init__(
            f"rho(0, t) stays >= eta={eta} up to t_max={t_max:g} s "
            f"(rho(0, t_max) = {rho_at_horizon:.6g})"
        )
        self.eta = eta
        self.t_max = t_max
        self.rho_at_horizon = rho_at_horizon


class ModelValidityWarning(UserWarning):
    """Point-receiver approximation produced a 'probability' above one."""


def _scalar_or_array(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class Notation:
    """Shorthand coefficients for a release time ``t`` and delay ``tau``."""

    phi_coef: float
    lambda_of_t: float
    alpha: float
    beta_of_t: float


def notation(t: float, tau: float, eff: EffectiveDiffusion) -> Notation:
    if t <= 0 or tau <= 0 or eff.D1 <= 0 or eff.D2 <= 0:
        raise DomainError("notation needs t > 0, tau > 0, D1 > 0 and D2 > 0")
    return Notation(
        phi_coef=eff.V_obs / (FOUR_PI * eff.D1 * tau) ** 1.5,
        lambda_of_t=(FOUR_PI * eff.D2 * t) ** -1.5,
        alpha=1.0 / (4.0 * eff.D1 * tau),
        beta_of_t=1.0 / (4.0 * eff.D2 * t),
    )


def _check_tau(tau, eff: EffectiveDiffusion):
    if not tau > 0:
        raise DomainError(f"tau must be > 0, got {tau!r}")
    if not eff.D1 > 0:
        raise DomainError("D1 must be > 0: the point-source response is singular")


def log_cir_conditional(r_star, tau, eff: EffectiveDiffusion):
    r_star = np.asarray(r_star, dtype=float)
    s0 = eff.D1 * tau
    return math.log(eff.V_obs) - 1.5 * math.log(FOUR_PI * s0) - r_star**2 / (4.0 * s0)


def cir_conditional(r_star, tau: float, eff: EffectiveDiffusion):
    """Probability of observing a molecule ``tau`` after release at distance ``r_star``."""
    _check_tau(tau, eff)
    if np.any(np.asarray(r_star) < 0):
        raise DomainError("r_star must be >= 0")
    h = np.exp(log_cir_conditional(r_star, tau, eff))
    if np.any(h > 1.0):
        warnings.warn(
            "impulse response exceeds 1; receiver too large for the point-source model",
            ModelValidityWarning,
            stacklevel=2,
        )
    return _scalar_or_array(h)


def displacement_pdf(r: Vec3, t: float, r0: Vec3, eff: EffectiveDiffusion):
    """Density of the separation vector at time ``t`` given ``r(0) = r0``.

    ``r`` may carry leading batch dimensions; the last axis is xyz.
    """
    if not t > 0 or not eff.D2 > 0:
        raise DomainError("displacement_pdf needs t > 0 and D2 > 0 (deterministic otherwise)")
    d = np.asarray(r, dtype=float) - np.asarray(r0, dtype=float)
    s = eff.D2 * t
    return _scalar_or_array((FOUR_PI * s) ** -1.5 * np.exp(-np.sum(d * d, axis=-1) / (4.0 * s)))


def log_mean_cir(t, tau, x0, eff: EffectiveDiffusion):
    s = eff.D1 * tau + eff.D2 * np.asarray(t, dtype=float)
    return math.log(eff.V_obs) - 1.5 * np.log(FOUR_PI * s) - x0**2 / (4.0 * s)


def mean_cir(t, tau: float, x0: float, eff: EffectiveDiffusion):
    """Ensemble mean of ``h(t, tau)`` over the separation process."""
    _check_tau(tau, eff)
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be >= 0")
    return _scalar_or_array(np.exp(log_mean_cir(t, tau, x0, eff)))


def log_acf_equal(t1, tau, x0, eff: EffectiveDiffusion):
    s0 = eff.D1 * tau
    s2 = s0 + 2.0 * eff.D2 * np.asarray(t1, dtype=float)
    return (
        2.0 * math.log(eff.V_obs)
        - 1.5 * math.log(FOUR_PI * s0)
        - 1.5 * np.log(FOUR_PI * s2)
        - x0**2 / (2.0 * s2)
    )


def acf_equal(t1, tau: float, x0: float, eff: EffectiveDiffusion):
    """Second moment E{h(t1, tau)^2}."""
    _check_tau(tau, eff)
    if np.any(np.asarray(t1) < 0):
        raise DomainError("t1 must be >= 0")
    return _scalar_or_array(np.exp(log_acf_equal(t1, tau, x0, eff)))


def _log_acf_interior(t1, t2, tau, x0, eff: EffectiveDiffusion):
    # 0 < t1 < t2 and D2 > 0. Written with c = 4 D2 t instead of beta = 1/c so
    # nothing overflows as t1 or t2 - t1 shrinks; the powers of c cancel.
    alpha = 1.0 / (4.0 * eff.D1 * tau)
    ac1 = alpha * 4.0 * eff.D2 * np.asarray(t1, dtype=float)
    ac21 = alpha * 4.0 * eff.D2 * (np.asarray(t2, dtype=float) - t1)
    cross = ac1 / ((1.0 + ac1) * (1.0 + ac21))
    kappa = -alpha * x0**2 * (2.0 + ac21) / ((1.0 + ac1) * (1.0 + ac21) * (1.0 + cross))
    log_phi = math.log(eff.V_obs) - 1.5 * math.log(FOUR_PI * eff.D1 * tau)
    return 2.0 * log_phi + kappa - 1.5 * (np.log1p(ac1) + np.log1p(ac21) + np.log1p(cross))


def log_acf(t1, t2, tau, x0, eff: EffectiveDiffusion):
    t1, t2 = np.broadcast_arrays(np.asarray(t1, dtype=float), np.asarray(t2, dtype=float))
    if np.any(t1 < 0) or np.any(t2 < t1):
        raise ValueError("acf needs 0 <= t1 <= t2; order the times before calling")
    if eff.D2 == 0:
        return np.broadcast_to(2.0 * log_cir_conditional(x0, tau, eff), t1.shape).copy()
    out = np.empty(t1.shape)
    start = t1 == 0
    equal = (t1 == t2) & ~start
    inner = ~(start | equal)
    # r(0) is deterministic, so phi(0, t2) = h(tau | x0) * m(t2)
    out[start] = log_cir_conditional(x0, tau, eff) + log_mean_cir(t2[start], tau, x0, eff)
    out[equal] = log_acf_equal(t1[equal], tau, x0, eff)
    out[inner] = _log_acf_interior(t1[inner], t2[inner], tau, x0, eff)
    return out


def acf(t1, t2, tau: float, x0: float, eff: EffectiveDiffusion):
    """Autocorrelation E{h(t1, tau) h(t2, tau)} for ``0 <= t1 <= t2``."""
    _check_tau(tau, eff)
    return _scalar_or_array(np.exp(log_acf(t1, t2, tau, x0, eff)))


def variance(t, tau: float, x0: float, eff: EffectiveDiffusion):
    """Variance of ``h(t, tau)``; exactly zero at ``t = 0`` or for a static link."""
    _check_tau(tau, eff)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be >= 0")
    log_m = log_mean_cir(t, tau, x0, eff)
    # sigma^2 = m^2 (phi/m^2 - 1); expm1 keeps precision for small t
    excess = np.expm1(log_acf_equal(t, tau, x0, eff) - 2.0 * log_m)
    if eff.D2 == 0:
        excess = np.zeros_like(excess)
    excess = np.where(t == 0, 0.0, excess)
    if np.any(excess < -VARIANCE_RTOL):
        raise NumericalConsistencyError(
            f"negative variance (relative {excess.min():.3e}); second moment below squared mean"
        )
    return _scalar_or_array(np.exp(2.0 * log_m) * np.maximum(excess, 0.0))


def normalized_acf(t1, t2, tau: float, x0: float, eff: EffectiveDiffusion):
    """Correlation coefficient phi(t1,t2) / sqrt(phi(t1,t1) phi(t2,t2)), in (0, 1]."""
    _check_tau(tau, eff)
    t1, t2 = np.broadcast_arrays(np.asarray(t1, dtype=float), np.asarray(t2, dtype=float))
    num = log_acf(t1, t2, tau, x0, eff)
    den = 0.5 * (log_acf_equal(t1, tau, x0, eff) + log_acf_equal(t2, tau, x0, eff))
    if np.any(~np.isfinite(den)):
        raise DomainError("zero second moment in the normalization")
    rho = np.minimum(np.exp(num - den), 1.0)
    rho = np.where(t1 == t2, 1.0, rho)
    if eff.D2 == 0:
        rho = np.ones_like(rho)
    return _scalar_or_array(rho)


@dataclass(frozen=True)
class CoherenceResult:
    value: float
    monotone: bool
    eta: float


def coherence_search(
    eta: float,
    tau: float,
    x0: float,
    eff: EffectiveDiffusion,
    t_max: float,
    n_scan: int = 1000,
    rtol: float = 1e-3,
) -> CoherenceResult:
    """Find the first ``t2`` with ``rho(0, t2) < eta`` by grid scan then bisection."""
    if not 0 < eta < 1:
        raise DomainError(f"eta must lie in (0, 1), got {eta!r}")
    if not t_max > 0:
        raise DomainError(f"t_max must be > 0, got {t_max!r}")
    grid = t_max * np.arange(1, n_scan + 1) / n_scan
    rho = normalized_acf(0.0, grid, tau, x0, eff)
    below = np.flatnonzero(rho < eta)
    if below.size == 0:
        raise HorizonError(eta, t_max, float(rho[-1]))
    monotone = bool(np.all(np.diff(rho) <= 0))
    if not monotone:
        log.warning("rho(0, t) is not monotone on the scan grid; returning first crossing")
    k = int(below[0])
    lo = 0.0 if k == 0 else float(grid[k - 1])
    hi = float(grid[k])
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if normalized_acf(0.0, mid, tau, x0, eff) < eta:
            hi = mid
        else:
            lo = mid
    return CoherenceResult(value=hi, monotone=monotone, eta=eta)


def coherence_time(
    eta: float,
    tau: float,
    x0: float,
    eff: EffectiveDiffusion,
    t_max: float,
) -> float:
    return coherence_search(eta, tau, x0, eff, t_max).value


@dataclass
class ChannelStats:
    t: np.ndarray
    m: np.ndarray
    phi_diag: np.ndarray
    sigma2: np.ndarray
    rho: list = field(default_factory=list)  # (t1, t2, rho) triples
    coherence_time: Optional[float] = None
    eta: Optional[float] = None


def channel_stats(
    t_grid,
    tau: float,
    x0: float,
    eff: EffectiveDiffusion,
    pairs=(),
    eta: Optional[float] = None,
    t_max: Optional[float] = None,
) -> ChannelStats:
    t = np.asarray(t_grid, dtype=float)
    stats = ChannelStats(
        t=t,
        m=np.atleast_1d(mean_cir(t, tau, x0, eff)),
        phi_diag=np.atleast_1d(acf_equal(t, tau, x0, eff)),
        sigma2=np.atleast_1d(variance(t, tau, x0, eff)),
    )
    for t1, t2 in pairs:
        stats.rho.append((t1, t2, normalized_acf(t1, t2, tau, x0, eff)))
    if eta is not None:
        horizon = t_max if t_max is not None else float(t.max())
        stats.coherence_time = coherence_time(eta, tau, x0, eff, horizon)
        stats.eta = eta
    return stats
