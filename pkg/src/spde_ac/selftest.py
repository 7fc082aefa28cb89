"""Built-in oracle suite: fast property checks of the core estimates.

Each check is independent of the code path it validates (scalar sweeps,
finite differences, hand-built trajectories) and runs in seconds at
small sizes.  The ``inject`` hook deliberately miswires one check so the
suite's ability to detect violations is itself testable.
"""

from __future__ import annotations

import numpy as np

from .energy import energy, energy_gradient, nonlinearity_values
from .integrator import (
    SchemeConfig,
    energy_ledger_check,
    initial_field,
    run,
    step_implicit,
    step_transformed_additive,
)
from .noise import NoiseSpec, apply_diffusion, sample_path
from .solver import SolverConfig, apply_dt_tau, residual, solve_t_tau
from .spectral import (
    GridSpec,
    ScalarField,
    forward_transform,
    inverse_transform,
    l2_inner,
    l2_norm,
)

__all__ = ["run_selftest", "INJECTABLE_FAULTS"]

INJECTABLE_FAULTS = ("flip-nonlinearity-sign", "resolvent-off-by-one")

_GRID = GridSpec(1, 64)
_TOL = 1e-10


def _rng() -> np.random.Generator:
    return np.random.default_rng(20240901)


def _smooth_field(
    rng: np.random.Generator, grid: GridSpec, modes: int = 8, bias: float | None = None
) -> ScalarField:
    """Random band-limited field with O(1) amplitude.

    ``bias`` shifts the mean; the default is a small random mean.
    """
    x = grid.coords()[0]
    mean = rng.standard_normal() * 0.3 if bias is None else bias
    vals = mean * np.ones(grid.shape)
    for k in range(1, modes + 1):
        a, b = rng.standard_normal(2)
        vals = vals + ((a * np.cos(k * x) + b * np.sin(k * x)) / (1.0 + k * k)) * np.ones(
            grid.shape
        )
    return ScalarField(grid, vals)


def check_spectral_roundtrip() -> tuple[bool, str]:
    rng = _rng()
    worst = 0.0
    for _ in range(20):
        f = ScalarField(_GRID, rng.standard_normal(_GRID.shape))
        back = inverse_transform(forward_transform(f))
        scale = max(1.0, float(np.max(np.abs(f.values))))
        worst = max(worst, float(np.max(np.abs(back.values - f.values))) / scale)
    return worst < 1e-12, f"max roundtrip deviation {worst:.2e}"


def check_parseval() -> tuple[bool, str]:
    rng = _rng()
    worst = 0.0
    for _ in range(20):
        f = ScalarField(_GRID, rng.standard_normal(_GRID.shape))
        spectral = float(np.sum(np.abs(forward_transform(f).coeffs) ** 2))
        quad = l2_norm(f) ** 2
        worst = max(worst, abs(spectral - quad) / quad)
    return worst < 1e-12, f"max relative mismatch {worst:.2e}"


def check_resolvent_fractional_bound(inject: str | None = None) -> tuple[bool, str]:
    """nu^(-beta) * (1 - multiplier(nu)) <= tau^beta with constant one."""
    nu = np.unique(_GRID.nu())
    nu = nu[nu > 0]
    worst = -np.inf
    for tau in (1 / 8, 1 / 16, 1 / 32):
        if inject == "resolvent-off-by-one":
            mult = 1.0 / (1.0 + tau * (nu + 1.0))
        else:
            mult = 1.0 / (1.0 + tau * nu)
        for beta in np.linspace(0.0, 1.0, 11):
            lhs = nu ** (-beta) * (1.0 - mult)
            worst = max(worst, float(np.max(lhs)) - tau**beta)
    return worst <= 0.0, f"max excess over tau^beta: {worst:.2e}"


def check_semigroup_resolvent_distance() -> tuple[bool, str]:
    """|exp(-s) - 1/(1+s)| <= c sqrt(s): scalar sweep, c frozen at 0.16."""
    s = np.linspace(1e-6, 200.0, 20000)
    ratio = np.abs(np.exp(-s) - 1.0 / (1.0 + s)) / np.sqrt(s)
    worst = float(np.max(ratio))
    ok = worst <= 0.16
    # mode sweep on the grid at dyadic tau, same bound
    nu = np.unique(_GRID.nu())
    nu = nu[nu > 0]
    for k in range(3, 9):
        tau = 2.0**-k
        lhs = np.abs(np.exp(-tau * nu) - 1.0 / (1.0 + tau * nu))
        ok = ok and bool(np.all(lhs <= 0.16 * np.sqrt(tau * nu) + 1e-15))
    return ok, f"scalar sweep max ratio {worst:.4f}"


def check_energy_gradient() -> tuple[bool, str]:
    rng = _rng()
    worst_rel = 0.0
    ok = True
    for _ in range(5):
        u = _smooth_field(rng, _GRID)
        h = _smooth_field(rng, _GRID)
        pair = l2_inner(energy_gradient(u), h)
        errs = []
        for eps in (1e-2, 1e-3, 1e-4):
            ep = energy(ScalarField(_GRID, u.values + eps * h.values)).energy
            em = energy(ScalarField(_GRID, u.values - eps * h.values)).energy
            errs.append(abs((ep - em) / (2 * eps) - pair))
        # second-order decay: each decade of eps buys two decades of error
        # (the energy is quartic, so the central-difference error is exactly
        # quadratic in eps and the ratios sit at 100)
        for coarse, fine in zip(errs, errs[1:]):
            ok = ok and 50.0 < coarse / max(fine, 1e-300) < 200.0
        worst_rel = max(worst_rel, errs[2] / abs(pair))
    return ok and worst_rel <= 1e-6, f"relative FD error at eps=1e-4: {worst_rel:.2e}"


def check_resolvent_identity() -> tuple[bool, str]:
    """T(g) equals S(g) - tau*S(f(T(g))) up to solver tolerance."""
    from .spectral import resolvent_s_tau, to_values

    rng = _rng()
    cfg = SolverConfig()
    worst = 0.0
    for i in range(20):
        tau = (1 / 8, 1 / 16, 1 / 32)[i % 3]
        g = _smooth_field(rng, _GRID)
        v = solve_t_tau(g, tau, cfg)
        f_v = ScalarField(_GRID, nonlinearity_values(v.values, _GRID))
        rhs = resolvent_s_tau(forward_transform(g), tau).coeffs - tau * resolvent_s_tau(
            forward_transform(f_v), tau
        ).coeffs
        dev = l2_norm(ScalarField(_GRID, v.values - to_values(rhs, 1)))
        worst = max(worst, dev)
    return worst <= 10 * cfg.tol_residual, f"max identity defect {worst:.2e}"


def check_resolvent_l2_stability() -> tuple[bool, str]:
    rng = _rng()
    cfg = SolverConfig()
    worst = -np.inf
    for i in range(100):
        tau = (1 / 8, 1 / 16, 1 / 32)[i % 3]
        g = _smooth_field(rng, _GRID)
        v = solve_t_tau(g, tau, cfg)
        worst = max(worst, l2_norm(v) - l2_norm(g) / (1.0 - tau))
    return worst <= 10 * cfg.tol_residual, f"max excess over (1-tau)^-1 bound {worst:.2e}"


def check_linearized_contraction() -> tuple[bool, str]:
    # Unit contraction is a double-well-regime property: it needs enough
    # mass where f' = 3v^2 - 1 >= 0, so the base states sit near a well
    # (states crossing zero only satisfy the (1-tau)^{-1} bound, which
    # check_resolvent_l2_stability covers unconditionally).  The test
    # directions h stay fully generic.
    rng = _rng()
    cfg = SolverConfig()
    worst = -np.inf
    for i in range(50):
        tau = (1 / 8, 1 / 16, 1 / 32)[i % 3]
        well = 0.9 * float(np.sign(rng.standard_normal()) or 1.0)
        g = _smooth_field(rng, _GRID, bias=well)
        h = _smooth_field(rng, _GRID)
        w = apply_dt_tau(g, h, tau, cfg)
        worst = max(worst, l2_norm(w) - l2_norm(h))
    return worst <= 10 * cfg.tol_residual, f"max excess over unit bound {worst:.2e}"


def check_monotone_sign() -> tuple[bool, str]:
    rng = _rng()
    worst = -np.inf
    for _ in range(50):
        a = _smooth_field(rng, _GRID)
        b = _smooth_field(rng, _GRID)
        fa = nonlinearity_values(a.values, _GRID, dealias=False)
        fb = nonlinearity_values(b.values, _GRID, dealias=False)
        diff = ScalarField(_GRID, a.values - b.values)
        pair = l2_inner(ScalarField(_GRID, fa - fb), diff)
        worst = max(worst, -pair - l2_norm(diff) ** 2)
    return worst <= 1e-12, f"one-sided bound margin {worst:.2e}"


def check_energy_inequality(inject: str | None = None) -> tuple[bool, str]:
    if inject == "flip-nonlinearity-sign":
        # fault hook: march with the sign-flipped drift du/dt = Laplace(u) + f(u)
        # from above the well, where the flipped cubic feeds amplitude growth,
        # and run the same ledger; a working ledger must flag it
        from .spectral import to_coeffs, to_values

        grid = _GRID
        tau, steps = 1 / 16, 24
        u = 1.5 * initial_field(grid, "sin").values
        nu = grid.nu()
        energies = [energy(ScalarField(grid, u)).energy]
        diss = [0.0]
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(steps):
                rhs = to_coeffs(u + tau * nonlinearity_values(u, grid, dealias=False), 1)
                u = to_values(rhs / (1.0 + tau * nu), 1)
                if not np.all(np.isfinite(u)):
                    return False, "fault path: flipped drift blew up"
                energies.append(energy(ScalarField(grid, u)).energy)
                g = energy_gradient(ScalarField(grid, u))
                diss.append(l2_norm(g) ** 2)
        lhs = np.array(energies[1:]) + tau * np.cumsum(diss[1:])
        ok = bool(np.all(np.isfinite(lhs)))
        ok = ok and bool(np.all(lhs <= energies[0] + 1e-8 * (1 + abs(energies[0]))))
        return ok, "fault path: ledger on sign-flipped drift"

    noise = NoiseSpec("additive", 1, 2.0, 0.0)
    for preset, tau, steps in (("sin", 1 / 32, 64), ("tanh_pair", 1 / 8, 16), ("sin", 1 / 16, 16)):
        cfg = SchemeConfig(tau=tau, num_steps=steps, record="final_only")
        path = sample_path(0, 1, tau, steps)
        traj = run(cfg, initial_field(_GRID, preset), noise, path)
        report = energy_ledger_check(traj, tau)
        if not report.passed:
            return False, f"violated for preset {preset} at tau={tau}"
    return True, "ledger holds on zero-noise presets"


def check_transform_equivalence() -> tuple[bool, str]:
    grid = _GRID
    spec = NoiseSpec("additive", 8, 2.0, 0.5)
    tau, steps = 1 / 32, 16
    solver = SolverConfig(tol_residual=1e-11)
    worst = 0.0
    for stream in range(3):
        path = sample_path(2024, 8, tau, steps, stream=stream)
        u = initial_field(grid, "sin")
        y = u
        w = np.zeros(grid.shape)
        for m in range(steps):
            dw = path.increments[m]
            u = step_implicit(u, dw, spec, tau, solver)
            w = w + apply_diffusion(spec, grid, y.values, dw)
            y = step_transformed_additive(y, ScalarField(grid, w), tau, solver)
            worst = max(worst, l2_norm(ScalarField(grid, u.values - y.values - w)))
    return worst <= 1e-8, f"max pathwise scheme deviation {worst:.2e}"


CHECKS = (
    ("spectral-roundtrip", check_spectral_roundtrip, False),
    ("parseval", check_parseval, False),
    ("resolvent-fractional-bound", check_resolvent_fractional_bound, True),
    ("semigroup-resolvent-distance", check_semigroup_resolvent_distance, False),
    ("energy-gradient-consistency", check_energy_gradient, False),
    ("resolvent-identity", check_resolvent_identity, False),
    ("resolvent-l2-stability", check_resolvent_l2_stability, False),
    ("linearized-contraction", check_linearized_contraction, False),
    ("monotone-sign", check_monotone_sign, False),
    ("discrete-energy-inequality", check_energy_inequality, True),
    ("transform-equivalence", check_transform_equivalence, False),
)


def run_selftest(inject: str | None = None, report=print) -> bool:
    """Run the oracle suite; returns True when everything passes.

    ``inject`` miswires one named check (see :data:`INJECTABLE_FAULTS`)
    to demonstrate the suite actually detects violations.
    """
    if inject is not None and inject not in INJECTABLE_FAULTS:
        raise ValueError(f"unknown fault {inject!r}; choose from {INJECTABLE_FAULTS}")
    all_ok = True
    for name, fn, takes_inject in CHECKS:
        ok, detail = fn(inject) if takes_inject else fn()
        all_ok = all_ok and ok
        report(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
