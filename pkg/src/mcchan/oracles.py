"""Independent numerical oracles for the closed forms.

Nothing here uses the closed-form mean, ACF or threshold. The oracles
integrate the conditional impulse response against the displacement density
numerically, or search exhaustively.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize, stats

from . import channel
from .model import EffectiveDiffusion


def _log_box_integral(log_g, center, half_width, rtol):
    """log of the integral of exp(log_g) over a cube, shifted for stability."""
    ref = float(log_g(center[None, :])[0])
    res = integrate.cubature(
        lambda r: np.exp(log_g(r) - ref),
        center - half_width,
        center + half_width,
        rtol=rtol,
        atol=0.0,
    )
    if res.status != "converged":
        raise RuntimeError(f"cubature did not converge: {res.status}")
    return ref + math.log(res.estimate)


def _log_pdf(r, t, x0, eff: EffectiveDiffusion):
    s = eff.D2 * t
    d2 = (r[:, 0] - x0) ** 2 + r[:, 1] ** 2 + r[:, 2] ** 2
    return -1.5 * math.log(4.0 * math.pi * s) - d2 / (4.0 * s)


def _moment_log(power: int, t, tau, x0, eff, rtol):
    def log_g(r):
        dist = np.sqrt(np.sum(r * r, axis=1))
        return power * channel.log_cir_conditional(dist, tau, eff) + _log_pdf(r, t, x0, eff)

    def neg_on_axis(x):
        return -float(log_g(np.array([[x, 0.0, 0.0]]))[0])

    peak = optimize.minimize_scalar(neg_on_axis, bounds=(0.0, x0), method="bounded",
                                    options={"xatol": 1e-6 * x0})
    w = min(math.sqrt(2.0 * eff.D1 * tau / power), math.sqrt(2.0 * eff.D2 * t))
    return _log_box_integral(log_g, np.array([peak.x, 0.0, 0.0]), 12.0 * w, rtol)


def log_mean_quadrature(t, tau, x0, eff: EffectiveDiffusion, rtol=1e-10) -> float:
    """log of the integral over R^3 of h(tau | |r|) times the density of r(t)."""
    return _moment_log(1, t, tau, x0, eff, rtol)


def log_second_moment_quadrature(t, tau, x0, eff: EffectiveDiffusion, rtol=1e-10) -> float:
    """log E{h(t, tau)^2} by 3-D quadrature."""
    return _moment_log(2, t, tau, x0, eff, rtol)


def acf_separable_quadrature(t1, t2, tau, x0, eff: EffectiveDiffusion) -> float:
    """E{h(t1) h(t2)} via the Markov factorization, one 2-D integral per axis.

    With r(t1) = r0 + a z1 and r(t2) = r(t1) + b z2 (z standard normal) the
    Gaussian-shaped response factorizes over x, y and z.
    """
    alpha = 1.0 / (4.0 * eff.D1 * tau)
    peak = channel.cir_conditional(0.0, tau, eff)
    a = math.sqrt(2.0 * eff.D2 * t1)
    b = math.sqrt(2.0 * eff.D2 * (t2 - t1))

    def axis(c):
        def f(z2, z1):
            p = c + a * z1
            q = p + b * z2
            return math.exp(-alpha * (p * p + q * q) - 0.5 * (z1 * z1 + z2 * z2)) / (2.0 * math.pi)

        val, _ = integrate.dblquad(f, -12.0, 12.0, -12.0, 12.0, epsabs=0.0, epsrel=1e-12)
        return val

    return peak**2 * axis(x0) * axis(0.0) ** 2


def threshold_error(xi, lam0: float, lam1: float, P0: float, P1: float):
    """P0 Pr(N >= xi | lam0) + P1 Pr(N < xi | lam1), both tails evaluated directly."""
    xi = np.asarray(xi)
    return P0 * stats.poisson.sf(xi - 1, lam0) + P1 * stats.poisson.cdf(xi - 1, lam1)


def brute_force_threshold(lam0: float, lam1: float, P0: float, P1: float, chunk: int = 4096) -> int:
    """Exhaustive minimizer of :func:`threshold_error` over xi = 0, 1, 2, ...

    Raising the threshold from xi to xi + 1 changes the error by
    P1 p1(xi) - P0 p0(xi). The scan compares these increments in log space,
    which stays exact where the error curve itself is flat to double
    precision, and returns the first xi whose increment is non-negative.
    """
    lp0, lp1 = math.log(P0), math.log(P1)
    start = 0
    while True:
        xi = np.arange(start, start + chunk)
        up = lp1 + stats.poisson.logpmf(xi, lam1) >= lp0 + stats.poisson.logpmf(xi, lam0)
        hit = np.flatnonzero(up)
        if hit.size:
            return int(xi[hit[0]])
        start += chunk


def poisson_cdf_below_sum(xi: int, lam: float) -> float:
    """Pr(N < xi) by log-space term recursion and compensated summation."""
    if xi <= 0:
        return 0.0
    if lam == 0:
        return 1.0
    log_term = -lam
    terms = [math.exp(log_term)]
    for w in range(1, xi):
        log_term += math.log(lam) - math.log(w)
        terms.append(math.exp(log_term))
    return min(math.fsum(terms), 1.0)
