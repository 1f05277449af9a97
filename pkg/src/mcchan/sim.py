"""Particle-based Brownian-motion simulation of the mobile link.

Transmitter, receiver and every signalling molecule take independent
Gaussian steps of variance ``2 D dt`` per coordinate. The receiver is
transparent: a molecule is counted whenever it lies within ``a_rx`` of the
receiver centre, and is never removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import channel
from ._parallel import (
    TAG_ACF,
    TAG_IMPULSE,
    TAG_TRAJECTORY,
    TAG_TRANSMISSION,
    RngStream,
    as_generator,
    block_sizes,
    fsum_blocks,
    map_blocks,
)
from .model import PhysicalConfig, Vec3, derive_effective

ACF_BLOCK = 4096
IMPULSE_BLOCK = 32


@dataclass(frozen=True)
class RelativeTrajectory:
    """Separation vector r(jT), j = 0..L-1, sampled at bit-interval starts."""

    samples: np.ndarray  # (L, 3)
    step: float

    @property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.samples, axis=-1)


@dataclass(frozen=True)
class ObservationSeries:
    times: np.ndarray  # observation instants (s)
    counts: np.ndarray  # molecules inside the receiver, noise included
    trajectory: Optional[RelativeTrajectory] = None


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int


def _estimate(total: float, total_sq: float, n: int) -> McEstimate:
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return McEstimate(mean=mean, stderr=math.sqrt(var / n), n=n)


def gaussian_step(pos: Vec3, D: float, dt: float, rng) -> Vec3:
    """One Brownian step: every coordinate gets an independent N(0, 2 D dt) increment."""
    pos = np.asarray(pos, dtype=float)
    if D == 0:
        return pos.copy()
    return pos + math.sqrt(2.0 * D * dt) * as_generator(rng).standard_normal(pos.shape)


def sample_relative_trajectories(config: PhysicalConfig, n: int, rng) -> np.ndarray:
    """Exact bit-interval samples of r(t) for ``n`` independent links, shape (n, L, 3)."""
    eff = derive_effective(config)
    gen = as_generator(rng)
    z = gen.standard_normal((n, config.L - 1, 3))
    out = np.empty((n, config.L, 3))
    out[:, 0] = config.x0_vec
    out[:, 1:] = config.x0_vec + math.sqrt(2.0 * eff.D2 * config.T) * np.cumsum(z, axis=1)
    return out


def sample_relative_trajectory(config: PhysicalConfig, rng) -> RelativeTrajectory:
    return RelativeTrajectory(sample_relative_trajectories(config, 1, rng)[0], config.T)


def _n_steps(duration: float, dt: float, what: str) -> int:
    k = round(duration / dt)
    if k < 0 or abs(k * dt - duration) > 1e-9 * max(duration, dt):
        raise ValueError(f"{what}={duration!r} is not a multiple of dt={dt!r}")
    return int(k)


def simulate_impulse(
    config: PhysicalConfig,
    t: float,
    rng,
    taus: Sequence[float] | None = None,
) -> ObservationSeries:
    """Release ``N_A`` molecules at the transmitter at time ``t`` and count them.

    Transmitter and receiver diffuse from time 0. Counts are recorded at the
    relative delays ``taus`` (default: the sampling offset ``tau_s``); no
    background noise is added.
    """
    gen = as_generator(rng)
    taus = np.asarray([config.tau_s] if taus is None else taus, dtype=float)
    obs_steps = [_n_steps(tau, config.dt, "tau") for tau in taus]
    if any(k < 1 for k in obs_steps):
        raise ValueError("observation delays must be > 0")
    dt = config.dt
    s_tx = math.sqrt(2.0 * config.D_tx * dt)
    s_rx = math.sqrt(2.0 * config.D_rx * dt)
    s_a = math.sqrt(2.0 * config.D_A * dt)

    n_pre = _n_steps(t, dt, "release time")
    tx = np.zeros(3)
    rx = config.x0_vec.copy()
    if n_pre:
        steps = gen.standard_normal((n_pre, 2, 3))
        tx = tx + s_tx * steps[:, 0].sum(axis=0)
        rx = rx + s_rx * steps[:, 1].sum(axis=0)

    # molecules are tracked as float32 displacements from the release point;
    # receiver coordinates are shifted to the same origin
    origin = tx.copy()
    mol = np.zeros((config.N_A, 3), dtype=np.float32)
    buf = np.empty_like(mol)
    counts = np.zeros(len(taus), dtype=np.int64)
    a2 = config.a_rx**2
    wanted = {k: i for i, k in enumerate(obs_steps)}
    for k in range(1, max(obs_steps) + 1):
        node_steps = gen.standard_normal((2, 3))
        tx = tx + s_tx * node_steps[0]
        rx = rx + s_rx * node_steps[1]
        if config.N_A:
            gen.standard_normal(dtype=np.float32, out=buf)
            buf *= np.float32(s_a)
            mol += buf
        if k in wanted:
            d = mol - (rx - origin).astype(np.float32)
            counts[wanted[k]] = int(np.count_nonzero(np.einsum("ij,ij->i", d, d) <= a2))
    return ObservationSeries(times=t + taus, counts=counts)


def impulse_ensemble(
    config: PhysicalConfig,
    t: float,
    trials: int,
    seed: int,
    taus: Sequence[float] | None = None,
    threads: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Average ``simulate_impulse`` over ``trials`` realizations.

    Returns ``(mean, stderr)`` of the observed fraction ``count / N_A`` per delay.
    """
    sizes = block_sizes(trials, IMPULSE_BLOCK)

    def run(b):
        stream = RngStream(seed, b, TAG_IMPULSE)
        counts = np.array(
            [simulate_impulse(config, t, stream, taus).counts for _ in range(sizes[b])],
            dtype=float,
        )
        return counts.sum(axis=0), (counts**2).sum(axis=0)

    parts = map_blocks(run, len(sizes), threads)
    total = fsum_blocks([p[0] for p in parts])
    total_sq = fsum_blocks([p[1] for p in parts])
    means, errs = [], []
    for s, sq in zip(total, total_sq):
        est = _estimate(s, sq, trials)
        means.append(est.mean)
        errs.append(est.stderr)
    scale = max(config.N_A, 1)
    return np.array(means) / scale, np.array(errs) / scale


def simulate_transmission(config: PhysicalConfig, bits, rng) -> ObservationSeries:
    """Particle simulation of a whole ON/OFF-keyed sequence.

    ``N_A`` molecules leave the transmitter centre at the start of every
    interval carrying a 1. Each interval is sampled once, ``tau_s`` after its
    start; earlier molecules stay in flight and cause ISI. Background noise
    enters as an independent Poisson(``n_A_bar``) count per observation.
    """
    bits = np.asarray(bits, dtype=int)
    if bits.shape != (config.L,):
        raise ValueError(f"expected {config.L} bits, got shape {bits.shape}")
    gen = as_generator(rng)
    dt = config.dt
    spi = config.steps_per_interval()
    k_s = config.steps_to_sample()
    s_tx = math.sqrt(2.0 * config.D_tx * dt)
    s_rx = math.sqrt(2.0 * config.D_rx * dt)
    s_a = math.sqrt(2.0 * config.D_A * dt)
    a2 = config.a_rx**2

    tx = np.zeros(3)
    rx = config.x0_vec.copy()
    mol = np.empty((0, 3))
    rel = np.empty((config.L, 3))
    counts = np.zeros(config.L, dtype=np.int64)
    total_steps = (config.L - 1) * spi + k_s
    for k in range(total_steps + 1):
        j, phase = divmod(k, spi)
        if phase == 0:
            rel[j] = rx - tx
            if bits[j]:
                mol = np.concatenate([mol, np.repeat(tx[None, :], config.N_A, axis=0)])
        if phase == k_s:
            d = mol - rx
            counts[j] = np.count_nonzero(np.einsum("ij,ij->i", d, d) <= a2)
        if k == total_steps:
            break
        node_steps = gen.standard_normal((2, 3))
        tx = tx + s_tx * node_steps[0]
        rx = rx + s_rx * node_steps[1]
        if len(mol):
            mol += s_a * gen.standard_normal(mol.shape)
    counts += gen.poisson(config.n_A_bar, size=config.L)
    times = np.arange(config.L) * config.T + config.tau_s
    return ObservationSeries(times=times, counts=counts, trajectory=RelativeTrajectory(rel, config.T))


def empirical_acf(
    config: PhysicalConfig,
    t1: float,
    t2: float,
    tau: float,
    trials: int,
    seed: int = 0,
    threads: int | None = None,
) -> McEstimate:
    """Monte-Carlo E{h(t1,tau) h(t2,tau)} over sampled separation paths.

    No molecules are simulated: ``h`` is the closed-form response at the
    sampled distances, and ``r(t2)`` is drawn from ``r(t1)`` by an exact
    Gaussian increment.
    """
    if t2 < t1:
        raise ValueError("empirical_acf needs t1 <= t2")
    eff = derive_effective(config)
    sizes = block_sizes(trials, ACF_BLOCK)
    s1 = math.sqrt(2.0 * eff.D2 * t1)
    s21 = math.sqrt(2.0 * eff.D2 * (t2 - t1))
    x0 = config.x0_vec

    def run(b):
        gen = RngStream(seed, b, TAG_ACF).gen
        z = gen.standard_normal((2, sizes[b], 3))
        r1 = x0 + s1 * z[0]
        r2 = r1 + s21 * z[1]
        prod = np.exp(
            channel.log_cir_conditional(np.linalg.norm(r1, axis=1), tau, eff)
            + channel.log_cir_conditional(np.linalg.norm(r2, axis=1), tau, eff)
        )
        return math.fsum(prod), math.fsum(prod * prod)

    parts = map_blocks(run, len(sizes), threads)
    return _estimate(math.fsum(p[0] for p in parts), math.fsum(p[1] for p in parts), trials)


def trajectory_stream(seed: int, block: int) -> RngStream:
    return RngStream(seed, block, TAG_TRAJECTORY)


def transmission_stream(seed: int, trial: int) -> RngStream:
    return RngStream(seed, trial, TAG_TRANSMISSION)
