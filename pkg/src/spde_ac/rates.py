"""Monte Carlo estimation of strong and weak convergence rates.

The exact solution has no closed form, so every study measures
self-convergence: each sample simulates once at a fine reference step
tau_ref and once per ladder entry tau, all driven by the *same*
Brownian path (coarse increments are exact block sums of the fine
ones).  Coupling makes strong errors pathwise meaningful and acts as a
control variate for the weak (difference) estimator; the reference bias
is O(tau_ref) and dominated on the ladder.

Samples are independent work units keyed by (seed, sample index); a
fixed chunk size partitions them deterministically, so results are
byte-identical regardless of the worker count.
"""

from __future__ import annotations

import json
import math
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .energy import energy_gradient_values, energy_parts_values
from .integrator import initial_field, step_implicit_values, step_transformed_values
from .noise import (
    NoiseSpec,
    apply_diffusion,
    block_sum_pow2,
    sample_increments_batch,
    w32_image_check,
)
from .solver import SolverConfig
from .spectral import GridSpec, ScalarField, h1_seminorm_sq_values, l2_norm_values

__all__ = [
    "ExperimentSpec",
    "ErrorTable",
    "RateFit",
    "MomentReport",
    "DegenerateTable",
    "UnknownFunctional",
    "strong_error_study",
    "weak_error_study",
    "moment_study",
    "eval_functional",
    "fit_rate",
    "write_error_table_csv",
    "write_study_metadata",
]

STUDY_COLUMNS = ("tau", "error", "std_error", "n_samples")

_ERROR_KINDS = ("l2_at_T", "max_l2", "h1_sum")

FUNCTIONALS = ("exp_neg_l2sq", "sin_pairing", "const")


class DegenerateTable(ValueError):
    """Rate fit requested on a table with zero or non-finite rows."""


class UnknownFunctional(ValueError):
    """Functional name is not registered."""


def functional_values(name: str, values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Evaluate a smooth bounded functional, batch aware over leading axes.

    All registered functionals are C-infinity with bounded derivatives on
    L2: exp(-||u||^2), sin(<u, cos x_1>), and the constant 1.
    """
    axes = tuple(range(-grid.dim, 0))
    if name == "exp_neg_l2sq":
        sq = grid.cell_volume * np.sum(values**2, axis=axes)
        return np.exp(-sq)
    if name == "sin_pairing":
        psi = np.cos(grid.coords()[0]) * np.ones(grid.shape)
        pair = grid.cell_volume * np.sum(values * psi, axis=axes)
        return np.sin(pair)
    if name == "const":
        return np.ones(values.shape[: values.ndim - grid.dim])
    raise UnknownFunctional(f"unknown functional {name!r}; choose from {FUNCTIONALS}")


def eval_functional(name: str, u: ScalarField) -> float:
    return float(functional_values(name, u.values, u.grid))


@dataclass(frozen=True)
class ExperimentSpec:
    """Full description of one coupled rate study.

    ``chunk_size`` partitions the samples into batches and is part of the
    experiment definition: samples in one batch share implicit-solver
    iteration counts, so regrouping can move results at the solver
    tolerance level.  For a fixed spec the results are byte-identical
    across reruns and across worker counts (``jobs``).
    """

    grid: GridSpec
    noise: NoiseSpec
    T: float
    tau_ladder: tuple[float, ...]
    tau_ref: float
    num_samples: int
    seed: int
    u0_preset: str = "sin"
    u0_amplitude: float = 1.0
    error_kind: str = "l2_at_T"
    variant: str = "implicit"
    solver: SolverConfig = field(default_factory=SolverConfig)
    chunk_size: int = 250
    jobs: int = 1
    strict_ref_gap: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "tau_ladder", tuple(sorted((float(t) for t in self.tau_ladder), reverse=True))
        )
        if self.num_samples < 2:
            raise ValueError("num_samples must be >= 2")
        if self.error_kind not in _ERROR_KINDS:
            raise ValueError(f"error_kind must be one of {_ERROR_KINDS}")
        if not self.tau_ladder:
            raise ValueError("tau_ladder must not be empty")
        for tau in self.tau_ladder + (self.tau_ref,):
            self._check_dyadic(tau)
        for tau in self.tau_ladder:
            ratio = tau / self.tau_ref
            if abs(ratio - round(ratio)) > 1e-9 or not _is_pow2(round(ratio)):
                raise ValueError(
                    f"ladder entry {tau} is not a power-of-two multiple of tau_ref {self.tau_ref}"
                )
        if self.strict_ref_gap and min(self.tau_ladder) / self.tau_ref < 8.0 - 1e-9:
            raise ValueError(
                "tau_ref must be at least 8x finer than the smallest ladder entry"
            )
        if self.chunk_size < 1 or self.jobs < 1:
            raise ValueError("chunk_size and jobs must be >= 1")
        if self.variant not in ("implicit", "transformed_additive"):
            raise ValueError(f"unknown scheme variant {self.variant!r}")
        if self.variant == "transformed_additive":
            if not self.noise.is_additive:
                raise ValueError("the transformed scheme is defined for additive noise only")
            w32_image_check(self.noise, self.grid)

    def _check_dyadic(self, tau: float) -> None:
        steps = self.T / tau
        if abs(steps - round(steps)) > 1e-9 or not _is_pow2(round(steps)):
            raise ValueError(f"step size {tau} is not T / 2^j for horizon T={self.T}")

    def initial_values(self) -> np.ndarray:
        return initial_field(self.grid, self.u0_preset, self.u0_amplitude).values

    def chunks(self) -> list[tuple[int, int]]:
        edges = list(range(0, self.num_samples, self.chunk_size)) + [self.num_samples]
        return [(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _is_pow2(m: int) -> bool:
    return m >= 1 and (m & (m - 1)) == 0


@dataclass
class ErrorTable:
    """Per-tau Monte Carlo error statistics of one study (rows tau-descending)."""

    taus: np.ndarray
    errors: np.ndarray
    std_errors: np.ndarray
    num_samples: int
    kind: str
    per_sample: np.ndarray | None = None  # (N, n_taus) squared errors / differences
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.taus = np.asarray(self.taus, dtype=np.float64)
        self.errors = np.asarray(self.errors, dtype=np.float64)
        self.std_errors = np.asarray(self.std_errors, dtype=np.float64)
        if np.any(np.diff(self.taus) > 0):
            raise ValueError("rows must be sorted by tau descending")
        if np.any(self.errors < 0):
            raise ValueError("errors must be nonnegative")

    def drop_noisy(self, max_rel_se: float = 0.25) -> tuple["ErrorTable", list[float]]:
        """Remove rows whose std_error exceeds ``max_rel_se`` of the estimate."""
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(self.errors > 0, self.std_errors / self.errors, np.inf)
        keep = rel <= max_rel_se
        dropped = [float(t) for t in self.taus[~keep]]
        table = ErrorTable(
            taus=self.taus[keep],
            errors=self.errors[keep],
            std_errors=self.std_errors[keep],
            num_samples=self.num_samples,
            kind=self.kind,
            per_sample=None if self.per_sample is None else self.per_sample[:, keep],
            metadata={**self.metadata, "dropped_taus": dropped},
        )
        return table, dropped


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log2(error) against log2(tau)."""

    slope: float
    intercept: float
    r_squared: float
    ci_low: float
    ci_high: float
    num_bootstrap: int = 0

    @property
    def ci_width(self) -> float:
        return self.ci_high - self.ci_low


@dataclass(frozen=True)
class MomentReport:
    """Monte Carlo monitor of max_m E(u_m) and tau * sum ||grad E||^2."""

    num_samples: int
    mean_max_energy: float
    se_max_energy: float
    mean_dissipation: float
    se_dissipation: float


# -- batched marching ------------------------------------------------------------


def _march(
    spec: ExperimentSpec,
    u0: np.ndarray,
    increments: np.ndarray,
    tau: float,
    record_stride: int | None = None,
    ref_series: np.ndarray | None = None,
    ref_stride: int | None = None,
):
    """March a batch along given increments.

    Optionally records states every ``record_stride`` steps (returned
    stacked), or accumulates max-L2 and H1-sum errors against
    ``ref_series`` (states of the coupled reference at this run's step
    times, strided by ``ref_stride``).
    """
    grid, noise, solver = spec.grid, spec.noise, spec.solver
    n_steps = increments.shape[-2]
    u = np.broadcast_to(u0, increments.shape[:-2] + grid.shape).copy()
    w_field = np.zeros_like(u)
    recorded = []
    max_sq = 0.0
    h1_sum = 0.0
    for m in range(n_steps):
        dw = increments[..., m, :]
        if spec.variant == "implicit":
            u = step_implicit_values(u, dw, noise, grid, tau, solver)
        else:
            w_field = w_field + apply_diffusion(noise, grid, u, dw)
            u = step_transformed_values(u, w_field, grid, tau, solver)
        if record_stride and (m + 1) % record_stride == 0:
            recorded.append(u.copy())
        if ref_series is not None:
            ref = ref_series[(m + 1) * ref_stride - 1]
            diff = u - ref
            max_sq = np.maximum(max_sq, l2_norm_values(diff, grid) ** 2)
            h1_sum = h1_sum + tau * h1_seminorm_sq_values(diff, grid)
    out = {"final": u}
    if record_stride:
        out["recorded"] = np.stack(recorded) if recorded else np.empty((0,) + u.shape)
    if ref_series is not None:
        out["max_sq"] = max_sq
        out["h1_sum"] = h1_sum
    return out


def _strong_chunk(args: tuple[ExperimentSpec, int, int]) -> np.ndarray:
    """Per-sample squared errors, shape (stop-start, n_taus)."""
    spec, start, stop = args
    grid = spec.grid
    m_ref = round(spec.T / spec.tau_ref)
    inc = sample_increments_batch(
        spec.seed, range(start, stop), spec.noise.num_modes, spec.tau_ref, m_ref
    )
    u0 = spec.initial_values()

    need_series = spec.error_kind != "l2_at_T"
    min_tau = min(spec.tau_ladder)
    record_stride = round(min_tau / spec.tau_ref) if need_series else None
    ref = _march(spec, u0, inc, spec.tau_ref, record_stride=record_stride)

    sq = np.empty((stop - start, len(spec.tau_ladder)))
    for j, tau in enumerate(spec.tau_ladder):
        factor = round(tau / spec.tau_ref)
        cinc = block_sum_pow2(inc, factor, axis=1)
        if spec.error_kind == "l2_at_T":
            res = _march(spec, u0, cinc, tau)
            sq[:, j] = l2_norm_values(res["final"] - ref["final"], grid) ** 2
        else:
            stride = round(tau / min_tau)
            res = _march(spec, u0, cinc, tau, ref_series=ref["recorded"], ref_stride=stride)
            sq[:, j] = res["max_sq"] if spec.error_kind == "max_l2" else res["h1_sum"]
    return sq


def _weak_chunk(args: tuple[ExperimentSpec, str, int, int]) -> np.ndarray:
    """Coupled differences phi(u_tau) - phi(u_ref), shape (stop-start, n_taus)."""
    spec, functional, start, stop = args
    grid = spec.grid
    m_ref = round(spec.T / spec.tau_ref)
    inc = sample_increments_batch(
        spec.seed, range(start, stop), spec.noise.num_modes, spec.tau_ref, m_ref
    )
    u0 = spec.initial_values()
    phi_ref = functional_values(functional, _march(spec, u0, inc, spec.tau_ref)["final"], grid)
    diffs = np.empty((stop - start, len(spec.tau_ladder)))
    for j, tau in enumerate(spec.tau_ladder):
        factor = round(tau / spec.tau_ref)
        cinc = block_sum_pow2(inc, factor, axis=1)
        phi = functional_values(functional, _march(spec, u0, cinc, tau)["final"], grid)
        diffs[:, j] = phi - phi_ref
    return diffs


def _moment_chunk(args) -> np.ndarray:
    """(stop-start, 2): per-sample max_m E(u_m) and tau*sum ||grad E(u_m)||^2."""
    spec, tau, n_steps, start, stop = args
    grid = spec.grid
    inc = sample_increments_batch(
        spec.seed, range(start, stop), spec.noise.num_modes, tau, n_steps
    )
    u = np.broadcast_to(spec.initial_values(), (stop - start,) + grid.shape).copy()
    dir0, pot0 = energy_parts_values(u, grid)
    max_e = dir0 + pot0
    diss = np.zeros(stop - start)
    for m in range(n_steps):
        u = step_implicit_values(u, inc[:, m, :], spec.noise, grid, tau, spec.solver)
        d, p = energy_parts_values(u, grid)
        max_e = np.maximum(max_e, d + p)
        grad = energy_gradient_values(u, grid)
        diss += tau * l2_norm_values(grad, grid) ** 2
    return np.stack([max_e, diss], axis=1)


def _run_chunks(worker, payloads, jobs: int) -> list[np.ndarray]:
    if jobs == 1 or len(payloads) == 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, payloads))


# -- public studies ----------------------------------------------------------------


def strong_error_study(spec: ExperimentSpec) -> ErrorTable:
    """Coupled strong-error table over the tau ladder.

    Row estimate is the RMS of the pathwise error (L2 at T, max-in-time
    L2, or the accumulated H1 sum, per ``spec.error_kind``); std_error is
    the delta-method standard error of the RMS.
    """
    payloads = [(spec, a, b) for a, b in spec.chunks()]
    sq = np.concatenate(_run_chunks(_strong_chunk, payloads, spec.jobs), axis=0)
    errors, ses = _rms_rows(sq)
    taus = np.array(spec.tau_ladder)
    return ErrorTable(
        taus=taus,
        errors=errors,
        std_errors=ses,
        num_samples=spec.num_samples,
        kind=f"strong:{spec.error_kind}",
        per_sample=sq,
        metadata={**_meta(spec), "monotonicity_flags": _monotonicity_flags(taus, errors, ses)},
    )


def weak_error_study(spec: ExperimentSpec, functional: str) -> ErrorTable:
    """Coupled-difference weak-error table: |E[phi(u_tau) - phi(u_ref)]| per tau."""
    if functional not in FUNCTIONALS:
        raise UnknownFunctional(f"unknown functional {functional!r}; choose from {FUNCTIONALS}")
    payloads = [(spec, functional, a, b) for a, b in spec.chunks()]
    diffs = np.concatenate(_run_chunks(_weak_chunk, payloads, spec.jobs), axis=0)
    errors = np.abs(diffs.mean(axis=0))
    ses = diffs.std(axis=0, ddof=1) / math.sqrt(diffs.shape[0])
    taus = np.array(spec.tau_ladder)
    return ErrorTable(
        taus=taus,
        errors=errors,
        std_errors=ses,
        num_samples=spec.num_samples,
        kind=f"weak:{functional}",
        per_sample=diffs,
        metadata={
            **_meta(spec, functional=functional),
            "monotonicity_flags": _monotonicity_flags(taus, errors, ses),
        },
    )


def moment_study(spec: ExperimentSpec, tau: float, num_steps: int) -> MomentReport:
    """Monitor the energy moments of the implicit scheme under noise.

    Raises :class:`spde_ac.solver.NoConvergence` if any sample's implicit
    solve fails; finiteness and stability of the outputs under doubling
    the sample size are the acceptance monitors.
    """
    payloads = [(spec, tau, num_steps, a, b) for a, b in spec.chunks()]
    stats = np.concatenate(_run_chunks(_moment_chunk, payloads, spec.jobs), axis=0)
    n = stats.shape[0]
    return MomentReport(
        num_samples=n,
        mean_max_energy=float(stats[:, 0].mean()),
        se_max_energy=float(stats[:, 0].std(ddof=1) / math.sqrt(n)),
        mean_dissipation=float(stats[:, 1].mean()),
        se_dissipation=float(stats[:, 1].std(ddof=1) / math.sqrt(n)),
    )


def _monotonicity_flags(taus, errors, std_errors) -> list[dict]:
    """Rows where the error fails to decrease with tau, with a noise verdict.

    Monotonicity is expected for well-resolved studies; a violation is
    only flagged (never asserted) and marked noise-dominated when the
    relative standard error of either row exceeds 25%.
    """
    flags = []
    for j in range(len(taus) - 1):
        if errors[j] < errors[j + 1]:
            rel = max(
                std_errors[j] / errors[j] if errors[j] > 0 else np.inf,
                std_errors[j + 1] / errors[j + 1] if errors[j + 1] > 0 else np.inf,
            )
            flags.append(
                {
                    "tau_coarse": float(taus[j]),
                    "tau_fine": float(taus[j + 1]),
                    "noise_dominated": bool(rel > 0.25),
                }
            )
    return flags


def _rms_rows(sq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = sq.shape[0]
    mean_sq = sq.mean(axis=0)
    se_mean_sq = sq.std(axis=0, ddof=1) / math.sqrt(n)
    rms = np.sqrt(mean_sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        ses = np.where(rms > 0.0, se_mean_sq / (2.0 * np.maximum(rms, 1e-300)), 0.0)
    return rms, ses


def _meta(spec: ExperimentSpec, **extra) -> dict:
    payload = asdict(spec)
    payload["grid"] = {"dim": spec.grid.dim, "n": spec.grid.n}
    meta = {"spec": payload, "seed": spec.seed, **extra}
    meta["spec_hash"] = f"{hash(json.dumps(payload, sort_keys=True, default=str)) & 0xFFFFFFFF:08x}"
    return meta


# -- rate fitting ------------------------------------------------------------------


def fit_rate(table: ErrorTable, num_bootstrap: int = 1000) -> RateFit:
    """Fit log2(error) = slope * log2(tau) + intercept.

    The 95% CI on the slope comes from bootstrap resampling over Monte
    Carlo samples (rows share paths, so resampling tau rows would be
    wrong); tables without per-sample data get the degenerate CI
    (slope, slope).
    """
    if len(table.taus) < 3:
        raise DegenerateTable(f"rate fit needs >= 3 rows, got {len(table.taus)}")
    if np.any(table.errors <= 0.0) or not np.all(np.isfinite(table.errors)):
        raise DegenerateTable("rate fit needs positive finite errors in every row")
    lt = np.log2(table.taus)
    slope, intercept, r2 = _ls_fit(lt, np.log2(table.errors))

    if table.per_sample is None or num_bootstrap <= 0:
        return RateFit(slope, intercept, r2, slope, slope, 0)

    data = table.per_sample
    n = data.shape[0]
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [table.metadata.get("seed", 0), 0x626F6F74], dtype=np.uint64)))
    weak = table.kind.startswith("weak")
    slopes = []
    for _ in range(num_bootstrap):
        idx = rng.integers(0, n, size=n)
        rows = np.abs(data[idx].mean(axis=0)) if weak else np.sqrt(data[idx].mean(axis=0))
        if np.any(rows <= 0.0) or not np.all(np.isfinite(rows)):
            continue
        slopes.append(_ls_fit(lt, np.log2(rows))[0])
    if not slopes:
        return RateFit(slope, intercept, r2, slope, slope, 0)
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    lo, hi = min(lo, slope), max(hi, slope)
    return RateFit(slope, intercept, r2, float(lo), float(hi), len(slopes))


def _ls_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    a = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    fitted = a @ coef
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


# -- artifacts ---------------------------------------------------------------------


MOMENT_COLUMNS = (
    "n_samples",
    "mean_max_energy",
    "se_max_energy",
    "mean_dissipation",
    "se_dissipation",
)


def write_moment_csv(reports: list[MomentReport], filename) -> None:
    """Fixed-schema CSV for the energy-moment monitor."""
    with open(filename, "w", newline="\n") as fh:
        fh.write(",".join(MOMENT_COLUMNS) + "\n")
        for rep in reports:
            fh.write(
                f"{rep.num_samples},{rep.mean_max_energy:.17g},{rep.se_max_energy:.17g},"
                f"{rep.mean_dissipation:.17g},{rep.se_dissipation:.17g}\n"
            )


def write_error_table_csv(table: ErrorTable, filename) -> None:
    """Fixed-schema CSV: tau,error,std_error,n_samples (round-trip floats)."""
    with open(filename, "w", newline="\n") as fh:
        fh.write(",".join(STUDY_COLUMNS) + "\n")
        for tau, err, se in zip(table.taus, table.errors, table.std_errors):
            fh.write(
                f"{tau:.17g},{err:.17g},{se:.17g},{table.num_samples}\n"
            )


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def write_study_metadata(table: ErrorTable, filename, fit: RateFit | None = None, **extra) -> None:
    """Structured companion file: full experiment spec, git describe, seed."""
    payload = {
        "kind": table.kind,
        "seed": table.metadata.get("seed"),
        "spec": table.metadata.get("spec"),
        "spec_hash": table.metadata.get("spec_hash"),
        "git_describe": git_describe(),
        "rows": [
            {"tau": float(t), "error": float(e), "std_error": float(s)}
            for t, e, s in zip(table.taus, table.errors, table.std_errors)
        ],
        "num_samples": table.num_samples,
    }
    if "dropped_taus" in table.metadata:
        payload["dropped_taus"] = table.metadata["dropped_taus"]
    if fit is not None:
        payload["fit"] = {
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "ci95": [fit.ci_low, fit.ci_high],
            "num_bootstrap": fit.num_bootstrap,
        }
    payload.update(extra)
    with open(filename, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
