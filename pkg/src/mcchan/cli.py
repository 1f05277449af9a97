"""``mcchan`` command-line front end.

Commands read a flat ``key = value`` config (SI units, ``#`` comments) and
write CSV to ``--out`` or stdout. Each CSV starts with the resolved
configuration as ``#`` comment lines.

Exit codes: 0 success, 1 invalid configuration, 2 usage error,
3 numeric or oracle failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import ber, channel, oracles
from .detection import PoissonSignalModel, ThresholdVariant, optimal_threshold, poisson_cdf_below
from .model import ConfigError, PhysicalConfig, derive_effective
from .sim import empirical_acf, impulse_ensemble

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

INT_KEYS = {"N_A", "L", "trials", "seed"}
LIST_KEYS = {"t_grid", "acf_t2_grid", "dtx_sweep"}


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    physical: PhysicalConfig
    t_grid: list = field(default_factory=lambda: [k * 1e-3 for k in range(26)])
    acf_t1: float = 0.0
    acf_t2_grid: list = field(default_factory=lambda: [k * 0.1e-3 for k in range(1, 251)])
    dtx_sweep: Optional[list] = None
    t_max: Optional[float] = None
    threshold: str = "estimated"
    ber_method: str = "empirical"
    static_baseline: bool = True
    out: Optional[str] = None

    def resolved_items(self) -> list[tuple[str, str]]:
        items = [(f.name, repr(getattr(self.physical, f.name))) for f in fields(PhysicalConfig)]
        for f in fields(self):
            if f.name == "physical":
                continue
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ", ".join(repr(x) for x in v)
            items.append((f.name, str(v) if v is not None else "default"))
        return items


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in LIST_KEYS:
        return [float(x) for x in raw.split(",") if x.strip()]
    if key in INT_KEYS:
        v = float(raw)
        if v != int(v):
            raise ConfigError(key, f"expected an integer, got {raw!r}")
        return int(v)
    if key in ("threshold", "ber_method", "out"):
        return raw
    if key == "static_baseline":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(key, f"expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    return float(raw)


def parse_config_text(text: str) -> ExperimentConfig:
    phys_keys = set(PhysicalConfig.field_names())
    exp_keys = {f.name for f in fields(ExperimentConfig)} - {"physical"}
    phys, exp = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in phys_keys and key not in exp_keys:
            raise ConfigError(key, "unknown key")
        try:
            value = _parse_value(key, raw)
        except ValueError as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(key, f"cannot parse {raw!r}") from None
        (phys if key in phys_keys else exp)[key] = value
    cfg = ExperimentConfig(physical=PhysicalConfig(**phys), **exp)
    if cfg.threshold not in ("estimated", "genie"):
        raise ConfigError("threshold", "must be 'estimated' or 'genie'")
    if cfg.ber_method not in ("empirical", "semianalytic"):
        raise ConfigError("ber_method", "must be 'empirical' or 'semianalytic'")
    if cfg.dtx_sweep is not None and any(not (v > 0) for v in cfg.dtx_sweep):
        raise ConfigError("dtx_sweep", "values must be > 0")
    return cfg


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.8e}"


def render_csv(cfg: ExperimentConfig, command: str, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(f"# mcchan {command}\n")
    for k, v in cfg.resolved_items():
        buf.write(f"# {k} = {v}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _check_grid(values, name, allow_zero=True):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise UsageError(f"{name} must be a non-empty list of finite times")
    if np.any(arr < 0) or (not allow_zero and np.any(arr == 0)):
        raise UsageError(f"{name} contains invalid (negative{'' if allow_zero else ' or zero'}) times")
    if np.any(np.diff(arr) <= 0):
        raise UsageError(f"{name} must be strictly increasing")
    return arr


# ---------------------------------------------------------------- commands


def cmd_mean(cfg: ExperimentConfig, with_sim: bool = False, threads=None):
    p = cfg.physical
    grid = _check_grid(cfg.t_grid, "t_grid")
    if with_sim:
        bad = [t for t in grid if abs(round(t / p.dt) * p.dt - t) > 1e-9 * max(t, p.dt)]
        if bad:
            raise UsageError(f"t_grid values {bad} are not multiples of dt")
    rows = []
    for d_tx in cfg.dtx_sweep or [p.D_tx]:
        pc = p.replace(D_tx=d_tx)
        eff = derive_effective(pc)
        m = np.atleast_1d(channel.mean_cir(grid, pc.tau_s, pc.r_0, eff))
        var = np.atleast_1d(channel.variance(grid, pc.tau_s, pc.r_0, eff))
        for k, t in enumerate(grid):
            sim_mean = sim_se = float("nan")
            if with_sim:
                mu, se = impulse_ensemble(pc, float(t), pc.trials, pc.seed, threads=threads)
                sim_mean, sim_se = pc.N_A * mu[0], pc.N_A * se[0]
            rows.append([d_tx, t, pc.N_A * m[k], sim_mean, sim_se, var[k] / m[k] ** 2])
    header = ["D_tx", "t_s", "NA_m_analytic", "NA_m_sim", "sim_stderr", "var_norm_analytic"]
    return header, rows


def cmd_acf(cfg: ExperimentConfig):
    p = cfg.physical
    grid = _check_grid(cfg.acf_t2_grid, "acf_t2_grid")
    if cfg.acf_t1 < 0 or np.any(grid < cfg.acf_t1):
        raise UsageError("acf_t2_grid values must be >= acf_t1 >= 0")
    sweep = cfg.dtx_sweep or [0.1e-13, 1e-13, 5e-13, 20e-13, 100e-13]
    rows = []
    for d_tx in sweep:
        eff = derive_effective(p.replace(D_tx=d_tx))
        rho = np.atleast_1d(channel.normalized_acf(cfg.acf_t1, grid, p.tau_s, p.r_0, eff))
        rows.extend([d_tx, cfg.acf_t1, t2, r] for t2, r in zip(grid, rho))
    return ["D_tx", "t1_s", "t2_s", "rho"], rows


def cmd_coherence(cfg: ExperimentConfig, etas: list[float]):
    p = cfg.physical
    for eta in etas:
        if not 0 < eta < 1:
            raise UsageError(f"--eta must lie in (0, 1), got {eta}")
    t_max = cfg.t_max if cfg.t_max is not None else 100.0 * p.T
    sweep = cfg.dtx_sweep or [0.1e-13, 1e-13, 5e-13, 20e-13, 100e-13]
    rows = []
    for d_tx in sweep:
        eff = derive_effective(p.replace(D_tx=d_tx))
        for eta in etas:
            try:
                tc = channel.coherence_time(eta, p.tau_s, p.r_0, eff, t_max)
                rows.append([d_tx, eta, tc, "ok"])
            except channel.HorizonError as err:
                rows.append([d_tx, eta, float("nan"), f"horizon exceeded; rho(0,t_max)={err.rho_at_horizon:.6g}"])
    return ["D_tx", "eta", "T_c_s", "status"], rows


def cmd_ber(cfg: ExperimentConfig, threads=None):
    p = cfg.physical
    variant = ThresholdVariant(cfg.threshold)
    sweep = [(d, p.D_rx) for d in (cfg.dtx_sweep or [0.1e-13, 5e-13, 20e-13, 100e-13])]
    if cfg.static_baseline:
        sweep = [(0.0, 0.0)] + sweep
    rows = []
    for d_tx, d_rx in sweep:
        pc = p.replace(D_tx=d_tx, D_rx=d_rx)
        curve = ber.ber_curve(pc, method=cfg.ber_method, variant=variant, threads=threads)
        for r in curve.records:
            rows.append([d_tx, d_rx, r.j, r.pe_perfect, r.pe_outdated, r.gap,
                         r.stderr_perfect, r.stderr_outdated])
    header = ["D_tx", "D_rx", "j", "pe_perfect", "pe_outdated", "gap", "se_perfect", "se_outdated"]
    return header, rows


@dataclass
class CheckResult:
    name: str
    passed: bool
    deviation: float
    limit: float


def validation_checks(cfg: ExperimentConfig, trials: int = 20000, seed: int = 7) -> list[CheckResult]:
    """Oracle suite: quadrature and Monte-Carlo cross-checks of every closed form."""
    p = cfg.physical
    eff = derive_effective(p)
    tau, x0 = p.tau_s, p.r_0
    out = []
    times = [p.T, 10 * p.T, 40 * p.T]
    pairs = [(p.T, 10 * p.T), (10 * p.T, 20 * p.T), (0.0, 20 * p.T), (5 * p.T, 5 * p.T)]

    if eff.D2 > 0:
        dev = max(abs(oracles.log_mean_quadrature(t, tau, x0, eff) - math.log(channel.mean_cir(t, tau, x0, eff)))
                  for t in times)
        out.append(CheckResult("mean vs 3-D quadrature", dev <= 1e-6, dev, 1e-6))
        dev = max(abs(oracles.log_second_moment_quadrature(t, tau, x0, eff)
                      - math.log(channel.acf_equal(t, tau, x0, eff))) for t in times)
        out.append(CheckResult("second moment vs 3-D quadrature", dev <= 1e-6, dev, 1e-6))
        dev = max(abs(oracles.acf_separable_quadrature(t1, t2, tau, x0, eff) / channel.acf(t1, t2, tau, x0, eff) - 1)
                  for t1, t2 in pairs)
        out.append(CheckResult("acf vs separable quadrature", dev <= 1e-6, dev, 1e-6))
    else:
        h0 = channel.cir_conditional(x0, tau, eff)
        dev = max(
            max(abs(channel.mean_cir(t, tau, x0, eff) / h0 - 1) for t in times),
            max(abs(channel.acf(t1, t2, tau, x0, eff) / h0**2 - 1) for t1, t2 in pairs),
            max(abs(channel.variance(t, tau, x0, eff)) / h0**2 for t in times),
            max(abs(channel.normalized_acf(t1, t2, tau, x0, eff) - 1) for t1, t2 in pairs),
        )
        out.append(CheckResult("static channel equalities", dev <= 1e-12, dev, 1e-12))

    worst = 0.0
    for t1, t2 in pairs:
        est = empirical_acf(p, t1, t2, tau, trials, seed)
        exact = channel.acf(t1, t2, tau, x0, eff)
        if est.stderr > 0:
            z = abs(est.mean - exact) / est.stderr
        else:
            z = 0.0 if abs(est.mean / exact - 1) <= 1e-12 else math.inf
        worst = max(worst, z)
    out.append(CheckResult("acf vs Monte-Carlo (standard errors)", worst <= 3.0, worst, 3.0))

    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(50):
        lam0, lam1 = np.sort(rng.uniform(0.1, 100.0, 2))
        P0 = float(rng.uniform(0.05, 0.95))
        formula = optimal_threshold(PoissonSignalModel(lam1, lam0), P0, 1 - P0)
        mismatches += formula != oracles.brute_force_threshold(lam0, lam1, P0, 1 - P0)
    out.append(CheckResult("threshold vs exhaustive search (mismatches)", mismatches == 0, mismatches, 0))

    dev = max(abs(poisson_cdf_below(xi, lam) - oracles.poisson_cdf_below_sum(xi, lam))
              for xi in (1, 5, 23, 60) for lam in (0.5, 10.0, 41.0, 200.0))
    out.append(CheckResult("Poisson CDF vs log-space sum", dev <= 1e-12, dev, 1e-12))
    return out


def cmd_validate(cfg: ExperimentConfig, trials: int, seed: int) -> tuple[str, bool]:
    checks = validation_checks(cfg, trials, seed)
    lines = [
        f"{'PASS' if c.passed else 'FAIL'}  {c.name}: deviation {c.deviation:.3e} (limit {c.limit:g})"
        for c in checks
    ]
    ok = all(c.passed for c in checks)
    lines.append("all checks passed" if ok else "FAILED: " + ", ".join(c.name for c in checks if not c.passed))
    return "\n".join(lines) + "\n", ok


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcchan", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=["mean", "acf", "coherence", "ber", "validate"])
    parser.add_argument("--config", help="key = value parameter file (SI units); defaults if omitted")
    parser.add_argument("--with-sim", action="store_true", help="mean: add particle-simulation columns")
    parser.add_argument("--trials", type=int, help="Monte-Carlo realizations (overrides config)")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    parser.add_argument("--eta", type=float, action="append", help="coherence threshold; repeatable")
    parser.add_argument("--threads", type=int, help="worker threads (default: MCCHAN_THREADS or CPU count)")
    parser.add_argument("--out", help="output path (default: stdout)")
    return parser


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK

    try:
        cfg = load_config(args.config) if args.config else parse_config_text("")
        overrides = {}
        if args.trials is not None:
            overrides["trials"] = args.trials
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            cfg.physical = cfg.physical.replace(**overrides)
    except ConfigError as err:
        print(f"mcchan: invalid configuration: {err}", file=stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"mcchan: {err}", file=stderr)
        return EXIT_USAGE
    out_path = args.out or cfg.out

    try:
        if args.command == "validate":
            report, ok = cmd_validate(cfg, cfg.physical.trials if args.trials else 20000, cfg.physical.seed)
            _emit(report, out_path, stdout)
            return EXIT_OK if ok else EXIT_NUMERIC
        if args.command == "mean":
            header, rows = cmd_mean(cfg, args.with_sim, args.threads)
        elif args.command == "acf":
            header, rows = cmd_acf(cfg)
        elif args.command == "coherence":
            if not args.eta:
                raise UsageError("coherence requires --eta")
            header, rows = cmd_coherence(cfg, args.eta)
        else:
            header, rows = cmd_ber(cfg, args.threads)
    except UsageError as err:
        print(f"mcchan: {err}", file=stderr)
        return EXIT_USAGE
    except (channel.DomainError, channel.NumericalConsistencyError, FloatingPointError) as err:
        print(f"mcchan: numeric failure: {err}", file=stderr)
        return EXIT_NUMERIC
    _emit(render_csv(cfg, args.command, header, rows), out_path, stdout)
    return EXIT_OK


def _emit(text: str, path: Optional[str], stdout) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
