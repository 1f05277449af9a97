"""Monte-Carlo expected bit-error probability under perfect and outdated CSI.

Each trial draws a separation path at bit-interval resolution, an i.i.d.
bit sequence and Poisson counts with the true (path-dependent) means. Both
CSI modes then decode the *same* counts, so their difference is estimated
with common random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._parallel import TAG_BER, RngStream, block_sizes, fsum_blocks, map_blocks
from .detection import (
    CsiMode,
    ThresholdVariant,
    csi_distances,
    detect_batch,
    poisson_cdf_below,
    response_matrix,
    threshold_array,
)
from .model import PhysicalConfig
from .sim import sample_relative_trajectories

BER_BLOCK = 500
MODES = (CsiMode.PERFECT, CsiMode.OUTDATED)


@dataclass(frozen=True)
class BerRecord:
    j: int
    pe_perfect: float
    pe_outdated: float
    gap: float
    stderr_perfect: float
    stderr_outdated: float
    trials: int


@dataclass(frozen=True)
class BerCurve:
    records: list
    pe_perfect: float  # average over j = 1..L
    pe_outdated: float

    def record(self, j: int) -> BerRecord:
        return self.records[j - 1]


@dataclass
class _Block:
    true_H: np.ndarray
    csi_H: dict
    bits: np.ndarray
    counts: np.ndarray
    means: np.ndarray


def _draw_block(config: PhysicalConfig, n: int, stream: RngStream, bit_prob: float) -> _Block:
    gen = stream.gen
    traj = sample_relative_trajectories(config, n, gen)
    bits = (gen.random((n, config.L)) < bit_prob).astype(np.int8)
    true_H = response_matrix(np.linalg.norm(traj, axis=-1), config)
    means = config.n_A_bar + config.N_A * np.einsum("ni,nij->nj", bits.astype(float), true_H)
    counts = gen.poisson(means)
    csi_H = {}
    for mode in MODES:
        if mode is CsiMode.PERFECT:
            csi_H[mode] = true_H
        else:
            d = csi_distances(mode, traj[:1], config)
            csi_H[mode] = np.broadcast_to(response_matrix(d, config), true_H.shape)
    return _Block(true_H, csi_H, bits, counts, means)


def _genie_error(block: _Block, mode: CsiMode, config: PhysicalConfig, bit_prob: float) -> np.ndarray:
    """Per-trial error probability of every bit, averaged over b_j in closed form."""
    H = block.csi_H[mode]
    L = config.L
    strict = np.triu(np.ones((L, L)), k=1)  # i < j
    diag = np.diagonal(H, axis1=1, axis2=2)
    isi = np.einsum("ni,nij->nj", block.bits.astype(float), H * strict)
    lam0 = config.n_A_bar + config.N_A * isi
    xi, ok = threshold_array(lam0, lam0 + config.N_A * diag, config.P0, config.P1)
    true_isi = np.einsum("ni,nij->nj", block.bits.astype(float), block.true_H * strict)
    true0 = config.n_A_bar + config.N_A * true_isi
    true1 = true0 + config.N_A * np.diagonal(block.true_H, axis1=1, axis2=2)
    xi_int = np.ceil(xi)  # the midpoint fallback is not an integer
    miss = poisson_cdf_below(xi_int, true1)
    false_alarm = 1.0 - poisson_cdf_below(xi_int, true0)
    return (1.0 - bit_prob) * false_alarm + bit_prob * miss


def _block_errors(
    config: PhysicalConfig,
    n: int,
    stream: RngStream,
    bit_prob: float,
    method: str,
    variant: ThresholdVariant,
) -> dict:
    block = _draw_block(config, n, stream, bit_prob)
    out = {}
    for mode in MODES:
        if method == "semianalytic":
            err = _genie_error(block, mode, config, bit_prob)
        else:
            res = detect_batch(block.counts, block.csi_H[mode], config, variant, block.bits)
            err = (res.bits != block.bits).astype(float)
        out[mode] = (err.sum(axis=0), (err * err).sum(axis=0))
    return out


def _run(
    config: PhysicalConfig,
    trials: int,
    seed: int,
    method: str,
    variant: ThresholdVariant,
    bit_prob: Optional[float],
    threads: Optional[int],
) -> dict:
    p = config.P1 if bit_prob is None else bit_prob
    sizes = block_sizes(trials, BER_BLOCK)
    parts = map_blocks(
        lambda b: _block_errors(config, sizes[b], RngStream(seed, b, TAG_BER), p, method, variant),
        len(sizes),
        threads,
    )
    result = {}
    for mode in MODES:
        s = fsum_blocks([part[mode][0] for part in parts])
        sq = fsum_blocks([part[mode][1] for part in parts])
        mean = s / trials
        var = np.maximum(sq / trials - mean**2, 0.0) * trials / max(trials - 1, 1)
        result[mode] = (mean, np.sqrt(var / trials))
    return result


def ber_curve(
    config: PhysicalConfig,
    trials: Optional[int] = None,
    seed: Optional[int] = None,
    method: str = "empirical",
    variant: ThresholdVariant = ThresholdVariant.ESTIMATED,
    bit_prob: Optional[float] = None,
    threads: Optional[int] = None,
) -> BerCurve:
    """Expected error probability for every bit interval, both CSI modes.

    ``method`` is ``"empirical"`` (simulate counts and run the detector) or
    ``"semianalytic"`` (closed-form Poisson error per realization, genie
    thresholds). ``bit_prob`` overrides the probability used to draw bits;
    the detector always uses the configured priors.
    """
    if method not in ("empirical", "semianalytic"):
        raise ValueError(f"unknown method {method!r}")
    trials = config.trials if trials is None else trials
    seed = config.seed if seed is None else seed
    res = _run(config, trials, seed, method, variant, bit_prob, threads)
    (pp, sp), (po, so) = res[CsiMode.PERFECT], res[CsiMode.OUTDATED]
    records = [
        BerRecord(
            j=j + 1,
            pe_perfect=float(pp[j]),
            pe_outdated=float(po[j]),
            gap=abs(float(po[j]) - float(pp[j])),
            stderr_perfect=float(sp[j]),
            stderr_outdated=float(so[j]),
            trials=trials,
        )
        for j in range(config.L)
    ]
    return BerCurve(
        records=records,
        pe_perfect=math.fsum(pp) / config.L,
        pe_outdated=math.fsum(po) / config.L,
    )


def _single(config, j, csi, trials, seed, method, variant, bit_prob, threads):
    if not 1 <= j <= config.L:
        raise ValueError(f"bit index j must lie in 1..{config.L}, got {j}")
    # bits after j cannot influence bit j
    short = config.replace(L=j)
    mean, se = _run(short, trials, seed, method, variant, bit_prob, threads)[csi]
    return float(mean[j - 1]), float(se[j - 1])


def expected_error_semianalytic(
    j: int,
    config: PhysicalConfig,
    csi: CsiMode,
    trials: int,
    seed: int,
    bit_prob: Optional[float] = None,
    threads: Optional[int] = None,
) -> tuple[float, float]:
    """(mean, stderr) of the error probability of bit ``j`` with genie thresholds."""
    return _single(config, j, csi, trials, seed, "semianalytic", ThresholdVariant.GENIE, bit_prob, threads)


def expected_error_empirical(
    j: int,
    config: PhysicalConfig,
    csi: CsiMode,
    trials: int,
    seed: int,
    variant: ThresholdVariant = ThresholdVariant.ESTIMATED,
    bit_prob: Optional[float] = None,
    threads: Optional[int] = None,
) -> tuple[float, float]:
    """(mean, stderr) of the detector's empirical error rate on bit ``j``."""
    return _single(config, j, csi, trials, seed, "empirical", variant, bit_prob, threads)
