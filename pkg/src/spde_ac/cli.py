"""Command-line entry points.

Subcommands: simulate | strong-rate | weak-rate | energy-check | selftest.
Every run writes its artifacts plus a ``manifest.json`` with the resolved
parameters, seed, git describe, wall clock, and artifact checksums;
rerunning with the same config and seed reproduces identical CSV bytes.

Exit codes: 0 success; 1 check failure (selftest or energy-check);
2 configuration/validation error; 3 implicit solver non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, parse_config
from .integrator import (
    InequalityViolated,
    SchemeConfig,
    energy_ledger_check,
    initial_field,
    run,
    write_trajectory_csv,
)
from .noise import sample_path
from .rates import (
    DegenerateTable,
    ExperimentSpec,
    UnknownFunctional,
    fit_rate,
    git_describe,
    strong_error_study,
    weak_error_study,
    write_error_table_csv,
    write_study_metadata,
)
from .selftest import INJECTABLE_FAULTS, run_selftest
from .solver import NoConvergence

__all__ = ["main"]

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3

_EPILOG = """\
exit codes:
  0  success
  1  a check failed (selftest, energy-check)
  2  configuration or validation error
  3  the implicit solver did not converge

The output directory is taken from $SPDE_AC_OUT when set (it overrides
--out), else --out, else the current directory.  Bundled preset configs
(--config accepts their bare names) live in the package's presets/
directory.
"""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spde-ac",
        description=(
            "Structure-preserving time integration and Monte Carlo rate "
            "studies for a stochastically forced double-well phase field "
            "on the periodic torus."
        ),
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool = True):
        if needs_config:
            p.add_argument("--config", required=True, help="config file path or preset name")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--jobs", type=int, default=1, help="worker process cap")
        p.add_argument("--out", default=None, help="output directory (default: cwd)")

    common(sub.add_parser("simulate", help="run one trajectory, write its CSV"))
    common(sub.add_parser("strong-rate", help="coupled strong-error study and rate fit"))
    common(sub.add_parser("weak-rate", help="coupled weak-error study and rate fit"))
    common(sub.add_parser("energy-check", help="zero-noise run plus energy-ledger check"))
    st = sub.add_parser("selftest", help="run the built-in oracle suite")
    st.add_argument(
        "--inject",
        default=None,
        choices=INJECTABLE_FAULTS,
        help="test hook: deliberately miswire one check",
    )
    return parser


def _resolve_out(args) -> Path:
    out = os.environ.get("SPDE_AC_OUT") or args.out or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_config(name: str) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    stem = name if name.endswith(".cfg") else name + ".cfg"
    pkg_presets = resources.files("spde_ac") / "presets" / stem
    if pkg_presets.is_file():
        return Path(str(pkg_presets))
    raise ConfigError(f"config {name!r} is neither a file nor a bundled preset")


def _load(args) -> RunConfig:
    cfg = load_config(_resolve_config(args.config))
    if args.seed is not None:
        raw = dict(cfg.raw)
        raw["run.seed"] = args.seed
        cfg = RunConfig(raw)
    return cfg


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_manifest(out: Path, command: str, cfg: RunConfig, outputs: list[Path], t0: float, **extra):
    manifest = {
        "command": command,
        "resolved_config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.raw.items()},
        "seed": cfg.seed,
        "outputs": {
            p.name: {"path": str(p), "sha256": _sha256(p), "bytes": p.stat().st_size}
            for p in outputs
        },
        "wall_clock_s": round(time.perf_counter() - t0, 3),
        "git_describe": git_describe(),
        **extra,
    }
    target = out / "manifest.json"
    with open(target, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return target


def _cmd_simulate(args, check_ledger: bool = False) -> int:
    t0 = time.perf_counter()
    cfg = _load(args)
    out = _resolve_out(args)
    grid = cfg.grid()
    noise = cfg.noise()
    tau = cfg.scheme_tau(require_quarter=True)
    if check_ledger and noise.amplitude != 0.0:
        raise ConfigError(
            "energy-check needs zero-noise data: set noise.amplitude = 0", field="noise.amplitude"
        )
    scheme = SchemeConfig(
        tau=tau,
        num_steps=cfg.raw["scheme.steps"],
        variant=cfg.raw["scheme.variant"],
        solver=cfg.solver(),
    )
    u0 = initial_field(grid, cfg.raw["u0.preset"], cfg.raw["u0.amplitude"])
    path = sample_path(cfg.seed, noise.num_modes, tau, max(scheme.num_steps, 1))
    traj = run(scheme, u0, noise, path)

    csv_path = out / "trajectory.csv"
    write_trajectory_csv(traj, csv_path)
    ledger_ok = True
    if check_ledger:
        try:
            report = energy_ledger_check(traj, tau)
            print(
                f"energy ledger: pass (worst margin {report.worst_margin:.3e}, "
                f"max energy {report.max_energy:.6f})"
            )
        except InequalityViolated as exc:
            ledger_ok = False
            print(f"energy ledger: FAIL - {exc}")
    _write_manifest(out, args.command, cfg, [csv_path], t0)
    print(f"wrote {csv_path} ({scheme.num_steps} steps, tau={tau})")
    return EXIT_OK if ledger_ok else EXIT_CHECK_FAILED


def experiment_from_config(cfg: RunConfig, jobs: int = 1, **overrides) -> ExperimentSpec:
    """Build the coupled-study description from a parsed config."""
    kwargs = dict(
        grid=cfg.grid(),
        noise=cfg.noise(),
        T=cfg.raw["study.horizon"],
        tau_ladder=cfg.ladder(),
        tau_ref=cfg.tau_ref(),
        num_samples=cfg.raw["study.samples"],
        seed=cfg.seed,
        u0_preset=cfg.raw["u0.preset"],
        u0_amplitude=cfg.raw["u0.amplitude"],
        error_kind=cfg.raw["study.error_kind"],
        variant=cfg.raw["scheme.variant"],
        solver=cfg.solver(),
        chunk_size=cfg.raw["study.chunk_size"],
        jobs=jobs,
    )
    kwargs.update(overrides)
    return ExperimentSpec(**kwargs)


def _cmd_strong_rate(args) -> int:
    t0 = time.perf_counter()
    cfg = _load(args)
    out = _resolve_out(args)
    if len(cfg.ladder()) < 3:
        raise ConfigError(
            "rate fit needs a ladder with >= 3 entries", field="study.ladder_exponents"
        )
    spec = experiment_from_config(cfg, jobs=args.jobs)
    table = strong_error_study(spec)
    fit = fit_rate(table)
    target = 1.0 if spec.noise.is_additive else 0.5
    csv_path = out / "strong_rate.csv"
    write_error_table_csv(table, csv_path)
    meta_path = out / "strong_rate_meta.json"
    write_study_metadata(table, meta_path, fit=fit, target_slope=target)
    _write_manifest(out, args.command, cfg, [csv_path, meta_path], t0)
    print(
        f"strong rate ({spec.error_kind}, {spec.noise.variant} noise): "
        f"slope {fit.slope:.3f}, 95% CI [{fit.ci_low:.3f}, {fit.ci_high:.3f}], "
        f"r^2 {fit.r_squared:.4f}, target {target}"
    )
    return EXIT_OK


def _cmd_weak_rate(args) -> int:
    t0 = time.perf_counter()
    cfg = _load(args)
    out = _resolve_out(args)
    if len(cfg.ladder()) < 3:
        raise ConfigError(
            "rate fit needs a ladder with >= 3 entries", field="study.ladder_exponents"
        )
    spec = experiment_from_config(cfg, jobs=args.jobs)
    functional = cfg.raw["study.functional"]
    table = weak_error_study(spec, functional)
    kept, dropped = table.drop_noisy(0.25)
    if len(kept.taus) < 3:
        raise DegenerateTable(
            f"only {len(kept.taus)} rows survive the 25% relative-noise cut "
            f"(dropped taus: {dropped}); increase study.samples"
        )
    fit = fit_rate(kept)
    csv_path = out / "weak_rate.csv"
    write_error_table_csv(table, csv_path)
    meta_path = out / "weak_rate_meta.json"
    write_study_metadata(kept, meta_path, fit=fit, target_slope=1.0, functional=functional)
    _write_manifest(out, args.command, cfg, [csv_path, meta_path], t0)
    note = f" (dropped noisy taus: {dropped})" if dropped else ""
    print(
        f"weak rate (phi={functional}): slope {fit.slope:.3f}, "
        f"95% CI [{fit.ci_low:.3f}, {fit.ci_high:.3f}], r^2 {fit.r_squared:.4f}, "
        f"target 1.0{note}"
    )
    return EXIT_OK


def _cmd_selftest(args) -> int:
    ok = run_selftest(inject=args.inject)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "energy-check":
            return _cmd_simulate(args, check_ledger=True)
        if args.command == "strong-rate":
            return _cmd_strong_rate(args)
        if args.command == "weak-rate":
            return _cmd_weak_rate(args)
        return _cmd_selftest(args)
    except (ConfigError, DegenerateTable, UnknownFunctional, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    raise SystemExit(main())
