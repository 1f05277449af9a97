"""Single-sample threshold detection with a Poisson received-signal model."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .model import PhysicalConfig, derive_effective
from .sim import ObservationSeries, RelativeTrajectory

# cap for thresholds that blow up when the current-bit term vanishes
XI_CAP = 1e15


class CsiMode(enum.Enum):
    PERFECT = "perfect"
    OUTDATED = "outdated"


class ThresholdVariant(enum.Enum):
    ESTIMATED = "estimated"  # previously decided bits feed the threshold
    GENIE = "genie"  # true previous bits (analysis only)


class DegenerateModelError(ValueError):
    """lambda1 == lambda0: the observation carries no information about the bit."""


@dataclass(frozen=True)
class PoissonSignalModel:
    lambda1: float
    lambda0: float


def poisson_cdf_below(xi, lam):
    """Pr(N < xi) for N ~ Poisson(lam), via the regularized upper incomplete gamma."""
    xi = np.asarray(xi)
    lam = np.asarray(lam, dtype=float)
    out = np.where(xi > 0, special.gammaincc(np.maximum(xi, 1), lam), 0.0)
    return float(out) if out.ndim == 0 else out


def poisson_tail(xi, lam):
    """Pr(N >= xi), defined as the complement so the pair sums to one."""
    return 1.0 - poisson_cdf_below(xi, lam)


def decide(count, xi):
    out = (np.asarray(count) >= np.asarray(xi)).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def conditional_error_prob(b_j, mean, xi):
    below = poisson_cdf_below(xi, mean)
    out = np.where(np.asarray(b_j) == 1, below, 1.0 - np.asarray(below))
    return float(out) if out.ndim == 0 else out


def optimal_threshold(model: PoissonSignalModel, P0: float, P1: float) -> int:
    """Error-minimizing integer threshold for Poisson(lambda0) vs Poisson(lambda1)."""
    l1, l0 = model.lambda1, model.lambda0
    if not 0 < P1 < 1:
        raise ValueError(f"priors must be strictly inside (0, 1), got P1={P1!r}")
    if l0 <= 0:
        raise ValueError("lambda0 must be > 0 (log singularity)")
    if l1 == l0:
        raise DegenerateModelError(f"lambda1 == lambda0 == {l0!r}")
    if l1 < l0:
        raise ValueError("lambda1 must exceed lambda0")
    xi = (math.log(P0 / P1) + (l1 - l0)) / math.log1p((l1 - l0) / l0)
    return max(0, math.ceil(xi))


def threshold_array(lambda0, lambda1, P0: float, P1: float):
    """Vectorized ``optimal_threshold``.

    Returns ``(xi, ok)``; where ``ok`` is False the model is degenerate and
    ``xi`` holds the midpoint fallback ``lambda0 + (lambda1 - lambda0) / 2``
    (as a float, compared with the count directly).
    """
    l0 = np.asarray(lambda0, dtype=float)
    l1 = np.asarray(lambda1, dtype=float)
    ok = (l0 > 0) & (l1 > l0)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (math.log(P0 / P1) + (l1 - l0)) / np.log1p((l1 - l0) / l0)
    xi = np.maximum(np.ceil(np.minimum(raw, XI_CAP)), 0.0)
    xi = np.where(ok, xi, l0 + 0.5 * (l1 - l0))
    return xi, ok


def response_matrix(distances, config: PhysicalConfig) -> np.ndarray:
    """h(r_i, (j - i) T + tau_s) for release interval i and sampling interval j.

    ``distances[..., i]`` is the separation at the start of interval ``i``
    (0-based). Entries with ``i > j`` are zero.
    """
    eff = derive_effective(config)
    d = np.asarray(distances, dtype=float)
    L = d.shape[-1]
    i = np.arange(L)[:, None]
    j = np.arange(L)[None, :]
    lag = np.where(j >= i, (j - i) * config.T + config.tau_s, np.nan)
    s = eff.D1 * lag
    log_h = (
        math.log(eff.V_obs)
        - 1.5 * np.log(4.0 * math.pi * s)
        - d[..., :, None] ** 2 / (4.0 * s)
    )
    return np.where(j >= i, np.exp(np.nan_to_num(log_h, nan=-np.inf)), 0.0)


def csi_distances(csi: CsiMode, trajectories, config: PhysicalConfig) -> np.ndarray:
    """Separations the detector believes in; shape (..., L)."""
    samples = np.asarray(trajectories, dtype=float)
    if csi is CsiMode.PERFECT:
        return np.linalg.norm(samples, axis=-1)
    return np.full(samples.shape[:-1], float(np.linalg.norm(config.x0_vec)))


def _mean_received(bits, distances, j: int, config: PhysicalConfig) -> float:
    if not 1 <= j <= config.L:
        raise ValueError(f"bit index j must lie in 1..{config.L}, got {j}")
    bits = np.asarray(bits, dtype=float)[:j]
    H = response_matrix(np.asarray(distances, dtype=float)[:j], config)
    return config.N_A * float(bits @ H[:, j - 1]) + config.n_A_bar


def mean_received_perfect(bits, trajectory: RelativeTrajectory, j: int, config: PhysicalConfig) -> float:
    """Expected count in interval ``j`` (1-based) given the realized separations."""
    return _mean_received(bits, trajectory.distances, j, config)


def mean_received_outdated(bits, j: int, config: PhysicalConfig) -> float:
    """Expected count in interval ``j`` with the channel frozen at the initial distance."""
    return _mean_received(bits, np.full(config.L, config.r_0), j, config)


@dataclass(frozen=True)
class DetectionResult:
    bits: np.ndarray
    thresholds: np.ndarray
    degenerate: np.ndarray  # True where the midpoint fallback was used


def detect_batch(
    counts,
    H,
    config: PhysicalConfig,
    variant: ThresholdVariant = ThresholdVariant.ESTIMATED,
    true_bits=None,
) -> DetectionResult:
    """Sequential adaptive-threshold detection for a batch of sequences.

    ``counts`` has shape (n, L) and ``H`` (n, L, L) as produced by
    :func:`response_matrix` for the detector's CSI.
    """
    counts = np.asarray(counts)
    n, L = counts.shape
    if variant is ThresholdVariant.GENIE and true_bits is None:
        raise ValueError("genie thresholds need the transmitted bits")
    decided = np.zeros((n, L), dtype=np.int8)
    xis = np.empty((n, L))
    degenerate = np.zeros((n, L), dtype=bool)
    prev = decided if variant is ThresholdVariant.ESTIMATED else np.asarray(true_bits)
    for j in range(L):
        isi = np.einsum("ni,ni->n", prev[:, :j].astype(float), H[:, :j, j])
        lam0 = config.n_A_bar + config.N_A * isi
        lam1 = lam0 + config.N_A * H[:, j, j]
        xi, ok = threshold_array(lam0, lam1, config.P0, config.P1)
        decided[:, j] = counts[:, j] >= xi
        xis[:, j] = xi
        degenerate[:, j] = ~ok
    return DetectionResult(bits=decided, thresholds=xis, degenerate=degenerate)


def detect_sequence(
    counts: ObservationSeries,
    csi: CsiMode,
    trajectory: Optional[RelativeTrajectory],
    config: PhysicalConfig,
    variant: ThresholdVariant = ThresholdVariant.ESTIMATED,
    true_bits=None,
) -> DetectionResult:
    if csi is CsiMode.PERFECT:
        if trajectory is None:
            raise ValueError("perfect CSI needs the realized trajectory")
        samples = trajectory.samples
    else:
        samples = np.tile(config.x0_vec, (config.L, 1))
    H = response_matrix(csi_distances(csi, samples, config), config)
    tb = None if true_bits is None else np.asarray(true_bits)[None, :]
    res = detect_batch(np.asarray(counts.counts)[None, :], H[None], config, variant, tb)
    return DetectionResult(res.bits[0], res.thresholds[0], res.degenerate[0])
