"""Command-line front end.

Exit codes: 0 when every requested suite passes, 1 when a suite fails,
2 on a configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, verify
from .core_model import (
    DualConfig, ModelError, ModelSpec, Torus, as_fraction, build_kernel,
    nearest_neighbor_kernel, nu_sample,
)
from .dynamics import replica_seed, simulate, simulate_dual
from .fields import test_function
from .orthopoly import (
    NoConsistentConvention, build_generating_pair, build_table, default_table,
    mean_zero_repair, resolve_convention,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
EXACT_SUITES = ("duality", "orthogonality", "recursion", "taylor", "carre_du_champ")
MC_SUITES = ("drift_scaling", "qv_replacement", "martingale", "covariance", "moments")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated run configuration (flat JSON keys)."""

    spec: ModelSpec
    d: int = 1
    L: int = 8
    R: int = 1
    kernel_weights: object = "nearest_neighbor"
    k: int = 1
    phi: dict = field(default_factory=lambda: {"kind": "sin"})
    psi: dict = field(default_factory=lambda: {"kind": "cos"})
    suite: str | None = None
    T: float = 0.1
    replicas: int = 1000
    t_list: list = field(default_factory=lambda: [0.01, 0.05, 0.1])
    n_list: list = field(default_factory=lambda: [8, 16, 32, 64])
    k_list: list = field(default_factory=lambda: [1, 2, 3])
    k_max: int = 3
    n_eta: int = 200
    samples: int = 100000
    tolerances: dict = field(default_factory=dict)
    convention: dict | None = None
    eta0: object = "stationary"
    xi0: list | None = None
    m_max: int = 6
    n_max: int = 40
    seed: int = 0
    output_dir: str = "out"
    raw: dict = field(default_factory=dict)

    KNOWN = {"sigma", "alpha", "rho", "d", "L", "R", "kernel_weights", "k", "phi", "psi", "suite",
             "T", "replicas", "t_list", "n_list", "k_list", "k_max", "n_eta", "samples",
             "tolerances", "convention", "eta0", "xi0", "m_max", "n_max", "seed", "output_dir",
             "mc_replicas"}

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - cls.KNOWN
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            spec = ModelSpec(int(raw.get("sigma", 1)), as_fraction(raw.get("alpha", 1)),
                             as_fraction(raw.get("rho", "1/2")))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model block: {exc}") from exc
        kwargs = {k: raw[k] for k in cls.KNOWN & set(raw)
                  if k not in ("sigma", "alpha", "rho", "mc_replicas")}
        cfg = cls(spec=spec, raw=dict(raw), **kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.suite is not None and self.suite not in verify.SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}; choose from {sorted(verify.SUITES)}")
        if int(self.replicas) < 2:
            raise ConfigError("replicas must be at least 2")
        if self.k < 0 or self.k_max < 0:
            raise ConfigError("field order must be nonnegative")
        if self.L <= 2 * self.R:
            raise ConfigError(f"need L > 2R (L={self.L}, R={self.R})")
        for n in self.n_list:
            if int(n) <= 2 * self.R:
                raise ConfigError(f"n_list entry {n} violates n > 2R")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        for name in ("phi", "psi"):
            try:
                test_function(getattr(self, name)).phi(np.zeros((1, self.d)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad {name} specification: {exc}") from exc

    # ------------------------------------------------------------------
    def kernel(self):
        if self.kernel_weights == "nearest_neighbor":
            return nearest_neighbor_kernel(self.d)
        raw = {}
        for entry in self.kernel_weights:
            offset, weight = entry
            key = int(offset) if self.d == 1 and not isinstance(offset, list) else tuple(offset)
            raw[key] = weight
        return build_kernel(self.d, self.R, raw)

    def torus(self, n: int | None = None) -> Torus:
        return Torus(self.d, int(n or self.L))

    def tol(self, name: str, default):
        return self.tolerances.get(name, default)

    def pair(self):
        """Generating pair from the ``convention`` override, if any."""
        conv = self.convention
        if not conv:
            return None
        order = max(self.m_max, self.k_max, self.k, 6)
        if conv.get("flip"):
            chosen = resolve_convention(self.spec)
            src = chosen.source if chosen.source in ("ansatz", "family") else "family"
            return build_generating_pair(self.spec, order, chosen.sign_e, -chosen.sign_h, src)
        src = conv.get("source", "ansatz")
        if src.startswith("repair"):
            return mean_zero_repair(self.spec, order, conv.get("e_source", "family"),
                                    int(conv.get("sign_e", 1)))
        return build_generating_pair(self.spec, order, int(conv.get("sign_e", 1)),
                                     int(conv.get("sign_h", 1)), src)


def load_config(path: str | None, seed: int | None, out: str | None) -> RunConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["output_dir"] = out
    return RunConfig.from_dict(raw)


# ----------------------------------------------------------------------------
# suite dispatch


def run_suite(name: str, cfg: RunConfig, workers: int) -> verify.SuiteReport:
    spec, phi, psi = cfg.spec, test_function(cfg.phi), test_function(cfg.psi)
    kernel = cfg.kernel()
    n_se = cfg.tol("n_se", 3.0)
    if name == "duality":
        return verify.suite_duality(spec, cfg.torus(), kernel, cfg.k_max, cfg.n_eta, seed=cfg.seed,
                                    pair=cfg.pair(), mc_replicas=int(cfg.raw.get("mc_replicas", 0)))
    if name == "orthogonality":
        return verify.suite_orthogonality(spec, max(cfg.k_max, 4), cfg.k_max, cfg.torus(),
                                          cfg.pair(), cfg.tol("gram", 1e-12),
                                          cfg.tol("tail", 1e-16), cfg.tol("ratio", 1e-10))
    if name == "recursion":
        return verify.suite_recursion(spec, cfg.m_max, cfg.n_max, cfg.pair())
    if name == "gradient":
        return verify.suite_gradient([spec], 100, cfg.k_max, cfg.torus(), phi, cfg.seed,
                                     cfg.tol("relative", 1e-8))
    if name == "carre_du_champ":
        return verify.suite_carre_du_champ([spec], cfg.k_max, seed=cfg.seed)
    if name == "taylor":
        return verify.suite_taylor(kernel, phi, cfg.n_list, cfg.tol("growth", 0.1))
    if name == "drift_scaling":
        return verify.suite_drift_scaling(spec, phi, cfg.k, cfg.n_list, cfg.T, cfg.replicas,
                                          cfg.seed, workers, kernel, cfg.tol("target", -1.0),
                                          cfg.tol("slope", 0.3))
    if name == "qv_replacement":
        return verify.suite_qv_replacement(spec, phi, cfg.k, cfg.n_list, cfg.T, cfg.replicas,
                                           cfg.seed, workers, kernel)
    if name == "martingale":
        return verify.suite_martingale(spec, phi, cfg.k, cfg.L, cfg.T, cfg.replicas, cfg.seed,
                                       workers, kernel, n_se, cfg.tol("qv_relative", 0.05))
    if name == "covariance":
        return verify.suite_covariance(spec, phi, psi, cfg.k, cfg.L, cfg.t_list, cfg.replicas,
                                       cfg.seed, workers, kernel, n_se, cfg.tol("analytic", 1e-10))
    if name == "moments":
        return verify.suite_moments(spec, phi, cfg.k_list, cfg.n_list, cfg.samples, cfg.seed,
                                    kernel, cfg.tol("slope", 0.1))
    raise ConfigError(f"unknown suite {name!r}")


def _convention_info(cfg: RunConfig) -> dict:
    pair = cfg.pair()
    if pair is None:
        pair = resolve_convention(cfg.spec)
    return pair.as_dict()


def _write_summary(out: Path, cfg: RunConfig, reports: list, command: str, elapsed: float) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": verify.SCHEMA_VERSION, "command": command, "version": __version__,
        "config": cfg.raw, "seed": cfg.seed, "convention": _convention_info(cfg),
        "suites": {r.suite: "PASS" if r.passed else "FAIL" for r in reports},
        "timing": {"elapsed_seconds": round(elapsed, 3)},
    }
    (out / "report.json").write_text(json.dumps(verify._jsonable(doc), indent=2, sort_keys=True) + "\n")


def cmd_check(cfg: RunConfig, workers: int) -> int:
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    reports = []
    for name in EXACT_SUITES:
        rep = run_suite(name, cfg, workers)
        rep.write(out / name)
        reports.append(rep)
        print(f"{name}: {'PASS' if rep.passed else 'FAIL'}")
        if name == "duality" and not rep.passed:
            print(f"  duality residual: max |residual| = {rep.summary['max_abs_residual']}")
    _write_summary(out, cfg, reports, "check", time.perf_counter() - t0)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_experiment(cfg: RunConfig, workers: int) -> int:
    if cfg.suite is None:
        raise ConfigError("experiment needs a 'suite' key")
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    rep = run_suite(cfg.suite, cfg, workers)
    rep.write(out)
    print(f"{cfg.suite}: {'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_simulate(cfg: RunConfig, workers: int) -> int:
    kernel = cfg.kernel()
    torus = cfg.torus()
    torus.check_kernel(kernel)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = replica_seed(cfg.seed, 0)
    if cfg.xi0 is not None:
        xi = DualConfig.from_sites(int(s) for s in cfg.xi0)
        try:
            xi.check(cfg.spec)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        traj = simulate_dual(cfg.spec, kernel, torus, xi, cfg.T, seed)
        path = out / "dual_trajectory.csv"
        with open(path, "w") as fh:
            fh.write("time,state\n")
            for t, s in zip(traj.times, traj.states):
                fh.write(f"{t!r},{' '.join(f'{x}:{c}' for x, c in sorted(s.items()))}\n")
    else:
        if cfg.eta0 == "stationary":
            eta = nu_sample(cfg.spec, torus, seed)
        else:
            eta = np.asarray(cfg.eta0, dtype=np.int64)
            if eta.shape != (torus.V,) or (eta < 0).any() or (
                    cfg.spec.cap is not None and (eta > cfg.spec.cap).any()):
                raise ConfigError("eta0 must list one admissible occupancy per site")
        traj = simulate(cfg.spec, kernel, torus, eta, cfg.T, 1, seed)
        path = traj.to_csv(out / "trajectory.csv")
        (out / "initial.csv").write_text("site,eta\n" + "".join(
            f"{x},{int(v)}\n" for x, v in enumerate(eta)))
    print(f"seed {cfg.seed} (replica seed {seed}); wrote {path}")
    return EXIT_OK


def cmd_dump_table(cfg: RunConfig, workers: int) -> int:
    pair = cfg.pair()
    if pair is None:
        table = default_table(cfg.spec, cfg.m_max, cfg.n_max)
    else:
        table = build_table(cfg.spec, pair, cfg.m_max, cfg.n_max)
    path = table.dump_csv(Path(cfg.output_dir) / "duality_table.csv")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_resolve(cfg: RunConfig, workers: int) -> int:
    pair = resolve_convention(cfg.spec)
    meta = pair.metadata
    doc = {"model": cfg.spec.as_dict(), "source": pair.source, "sign_e": pair.sign_e,
           "sign_h": pair.sign_h, "formula": pair.describe(),
           "lambda_reading": meta.get("lambda_reading"),
           "degree1_constant": meta.get("degree1_constant"),
           "printed_constant": meta.get("printed_constant"),
           "attempts": [{k: a[k] for k in ("source", "sign_e", "sign_h", "verdict") if k in a}
                        for a in meta.get("attempts", [])]}
    print(json.dumps(verify._jsonable(doc), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "experiment": cmd_experiment,
            "dump-table": cmd_dump_table, "resolve-convention": cmd_resolve}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualfields",
                                     description="Orthogonal-duality fluctuation fields: checks and experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="worker processes for replica fan-out")
        p.add_argument("--out", help="output directory (overrides the config)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
        return COMMANDS[args.command](cfg, args.workers)
    except (ConfigError, ModelError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoConsistentConvention, verify.ConventionUnresolved) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
