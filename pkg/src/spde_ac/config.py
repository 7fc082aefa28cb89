"""Flat key-value run configuration.

Format: one ``section.key = value`` per line, ``#`` comments, blank
lines ignored.  The schema is flat and diff-friendly; every key has a
default listed in :data:`SCHEMA`.  Values are scalars or comma lists.
"""

from __future__ import annotations

from dataclasses import dataclass

from .noise import NoiseSpec
from .solver import SolverConfig
from .spectral import GridSpec

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "SCHEMA"]


class ConfigError(ValueError):
    """Invalid configuration; carries the offending line/field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = f" (line {line})" if line is not None else ""
        which = f" [{field}]" if field else ""
        super().__init__(f"config error{which}{where}: {message}")


# key -> (type tag, default); tags: int, float, str, int_list
SCHEMA: dict[str, tuple[str, object]] = {
    "run.seed": ("int", 0),
    "grid.dim": ("int", 1),
    "grid.n": ("int", 64),
    "noise.variant": ("str", "additive"),
    "noise.num_modes": ("int", 8),
    "noise.decay": ("float", 2.0),
    "noise.amplitude": ("float", 0.5),
    "noise.profile": ("str", "sin"),
    "u0.preset": ("str", "sin"),
    "u0.amplitude": ("float", 1.0),
    "scheme.variant": ("str", "implicit"),
    "scheme.tau": ("float", 1.0 / 32.0),
    "scheme.steps": ("int", 64),
    "solver.tol_residual": ("float", 1e-10),
    "solver.max_iter": ("int", 100),
    "solver.method": ("str", "fixed_point"),
    "study.horizon": ("float", 0.5),
    "study.ladder_exponents": ("int_list", (4, 5, 6, 7, 8, 9)),
    "study.ref_exponent": ("int", 12),
    "study.samples": ("int", 2000),
    "study.error_kind": ("str", "l2_at_T"),
    "study.functional": ("str", "exp_neg_l2sq"),
    "study.chunk_size": ("int", 250),
}


def parse_config(text: str) -> dict[str, object]:
    """Parse config text against the schema; unknown keys are errors."""
    values: dict[str, object] = {key: default for key, (_, default) in SCHEMA.items()}
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'section.key = value'", line=lineno)
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", line=lineno, field=key)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", line=lineno, field=key)
        seen.add(key)
        values[key] = _convert(key, val, SCHEMA[key][0], lineno)
    return values


def _convert(key: str, val: str, tag: str, lineno: int):
    try:
        if tag == "int":
            return int(val)
        if tag == "float":
            return float(val)
        if tag == "int_list":
            return tuple(int(part.strip()) for part in val.split(",") if part.strip())
        return val
    except ValueError as exc:
        raise ConfigError(f"cannot parse {val!r} as {tag}", line=lineno, field=key) from exc


@dataclass(frozen=True)
class RunConfig:
    """Typed view of a parsed config file."""

    raw: dict

    @property
    def seed(self) -> int:
        return self.raw["run.seed"]

    def grid(self) -> GridSpec:
        try:
            return GridSpec(self.raw["grid.dim"], self.raw["grid.n"])
        except ValueError as exc:
            raise ConfigError(str(exc), field="grid") from exc

    def noise(self) -> NoiseSpec:
        try:
            return NoiseSpec(
                variant=self.raw["noise.variant"],
                num_modes=self.raw["noise.num_modes"],
                decay=self.raw["noise.decay"],
                amplitude=self.raw["noise.amplitude"],
                profile=self.raw["noise.profile"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc), field="noise") from exc

    def solver(self) -> SolverConfig:
        try:
            return SolverConfig(
                tol_residual=self.raw["solver.tol_residual"],
                max_iter=self.raw["solver.max_iter"],
                method=self.raw["solver.method"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc), field="solver") from exc

    def scheme_tau(self, require_quarter: bool = True) -> float:
        tau = self.raw["scheme.tau"]
        if tau >= 0.5:
            raise ConfigError(
                f"scheme.tau = {tau} violates the step-size rule tau < 1/2 "
                "(the implicit solve is well-posed only below 1/2)",
                field="scheme.tau",
            )
        if require_quarter and tau >= 0.25:
            raise ConfigError(
                f"scheme.tau = {tau} violates the energy-ledger rule tau < 1/4",
                field="scheme.tau",
            )
        if tau <= 0:
            raise ConfigError("scheme.tau must be positive", field="scheme.tau")
        return tau

    def ladder(self) -> tuple[float, ...]:
        T = self.raw["study.horizon"]
        exps = self.raw["study.ladder_exponents"]
        if not exps:
            raise ConfigError("study.ladder_exponents must be nonempty", field="study.ladder_exponents")
        return tuple(T / 2**e for e in exps)

    def tau_ref(self) -> float:
        return self.raw["study.horizon"] / 2 ** self.raw["study.ref_exponent"]


def load_config(path) -> RunConfig:
    with open(path, "r") as fh:
        return RunConfig(parse_config(fh.read()))
