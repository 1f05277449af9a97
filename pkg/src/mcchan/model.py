"""Physical/protocol parameters and derived diffusion quantities.

Everything is stored in SI base units (m, s, m^2/s). Unit conversion from
micrometres or milliseconds is the caller's job and happens before a
:class:`PhysicalConfig` is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

# Vectors are plain length-3 float arrays: [x, y, z] in metres.
Vec3 = np.ndarray


class ConfigError(ValueError):
    """Raised when a configuration value violates its invariant."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _is_multiple(value: float, step: float, rtol: float = 1e-9) -> bool:
    k = round(value / step)
    return k >= 1 and abs(k * step - value) <= rtol * value


@dataclass(frozen=True)
class PhysicalConfig:
    """All physical and protocol parameters of the link.

    Defaults reproduce the reference parameter table (bit interval 0.5 ms,
    sampling offset 0.035 ms, 30000 molecules per "1", 10 noise molecules
    on average, receiver radius 0.15 um at 1 um initial separation).
    ``D_tx`` defaults to zero; experiments sweep it.
    """

    D_A: float = 5e-9
    D_tx: float = 0.0
    D_rx: float = 1e-13
    a_rx: float = 0.15e-6
    r_0: float = 1e-6
    N_A: int = 30000
    n_A_bar: float = 10.0
    T: float = 0.5e-3
    tau_s: float = 0.035e-3
    L: int = 50
    P1: float = 0.5
    dt: float = 5e-6
    trials: int = 10000
    seed: int = 1

    def __post_init__(self):
        for name in ("D_A", "D_tx", "D_rx", "n_A_bar"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(name, f"must be finite and >= 0, got {v!r}")
        for name in ("a_rx", "r_0", "T", "dt"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(name, f"must be finite and > 0, got {v!r}")
        if self.N_A < 0 or int(self.N_A) != self.N_A:
            raise ConfigError("N_A", f"must be a non-negative integer, got {self.N_A!r}")
        if not (0 < self.tau_s <= self.T):
            raise ConfigError("tau_s", f"must satisfy 0 < tau_s <= T, got {self.tau_s!r}")
        if not (0 <= self.P1 <= 1):
            raise ConfigError("P1", f"must lie in [0, 1], got {self.P1!r}")
        if self.L < 1 or int(self.L) != self.L:
            raise ConfigError("L", f"must be an integer >= 1, got {self.L!r}")
        if self.trials < 1 or int(self.trials) != self.trials:
            raise ConfigError("trials", f"must be an integer >= 1, got {self.trials!r}")
        if not (0 <= self.seed < 2**64) or int(self.seed) != self.seed:
            raise ConfigError("seed", f"must be a 64-bit unsigned integer, got {self.seed!r}")
        # observation instants have to land on simulation step boundaries
        if not _is_multiple(self.tau_s, self.dt):
            raise ConfigError("dt", f"must divide tau_s={self.tau_s!r}")
        if not _is_multiple(self.T, self.dt):
            raise ConfigError("dt", f"must divide T={self.T!r}")

    @property
    def P0(self) -> float:
        return 1.0 - self.P1

    @property
    def x0_vec(self) -> Vec3:
        """Initial relative position r(0) = [x0, 0, 0]."""
        return np.array([self.r_0, 0.0, 0.0])

    def steps_per_interval(self) -> int:
        return int(round(self.T / self.dt))

    def steps_to_sample(self) -> int:
        return int(round(self.tau_s / self.dt))

    def replace(self, **changes) -> "PhysicalConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class EffectiveDiffusion:
    """Relative-motion coefficients and receiver volume.

    ``D1`` governs a molecule relative to the moving receiver, ``D2`` the
    transmitter-receiver separation vector.
    """

    D1: float
    D2: float
    V_obs: float


def derive_effective(config: PhysicalConfig) -> EffectiveDiffusion:
    return EffectiveDiffusion(
        D1=config.D_A + config.D_rx,
        D2=config.D_rx + config.D_tx,
        V_obs=4.0 / 3.0 * math.pi * config.a_rx**3,
    )


def reference_config(**overrides) -> PhysicalConfig:
    """Reference parameter set, optionally with some fields replaced."""
    return PhysicalConfig(**overrides)
