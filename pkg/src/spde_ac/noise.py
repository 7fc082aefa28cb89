"""Truncated cylindrical Wiener process and diffusion operators.

Noise construction: the driving process is W(t) = sum_k beta_k(t) e_k
truncated to K modes.  The image fields Phi(u) e_k are built from real
trigonometric modes of the torus, enumerated in increasing frequency
|k|^2, with per-mode amplitude

    mu_k = c0 * (1 + nu_k)^(-s),

where nu_k is the Laplacian eigenvalue of the underlying frequency.
Three diffusion classes are supported:

* ``additive``:   Phi e_k = mu_k * trig_k(x), independent of the state;
* ``nemytskii``:  Phi(u) e_k = mu_k * profile(u(x)) * trig_k(x) with a
  bounded scalar profile (superposition operator);
* ``affine``:     Phi(u) e_k = alpha_k u + beta_k with
  alpha_k = mu_k cos(k.x), beta_k = mu_k sin(k.x).

Brownian increments are sampled once at the finest resolution from a
counter-based Philox generator keyed by (seed, stream); every coarser
level is an exact sum of fine increments, never resampled, so coupled
rate studies share identical randomness across step sizes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .spectral import GridSpec

__all__ = [
    "NoiseSpec",
    "WienerPath",
    "FactorMismatch",
    "sample_path",
    "coarsen",
    "block_sum_pow2",
    "apply_diffusion",
    "hs_norm_l2",
    "default_num_modes",
    "write_path",
    "read_path",
]

_VARIANTS = ("additive", "nemytskii", "affine")
_PROFILES = ("sin", "bounded_rational", "linear")

_PATH_MAGIC = b"SACW"
_PATH_HEADER = struct.Struct("<4sQQQQd")


class FactorMismatch(ValueError):
    """Coarsening factor does not evenly partition the path."""


@dataclass(frozen=True)
class NoiseSpec:
    """Parametrisation of the diffusion operator Phi.

    ``affine_offset`` scales the state-independent part beta_k of the
    affine class (0 gives purely linear noise, the default 1 the full
    alpha_k u + beta_k form).
    """

    variant: str = "additive"
    num_modes: int = 8
    decay: float = 2.0
    amplitude: float = 0.5
    profile: str = "sin"
    affine_offset: float = 1.0

    def __post_init__(self) -> None:
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}, got {self.variant!r}")
        if self.profile not in _PROFILES:
            raise ValueError(f"profile must be one of {_PROFILES}, got {self.profile!r}")
        if self.num_modes < 1:
            raise ValueError("num_modes must be >= 1")

    @property
    def is_additive(self) -> bool:
        return self.variant == "additive"


# -- trigonometric mode tables -------------------------------------------------


def _frequency_vectors(dim: int, count: int, kmax: int) -> list[tuple[int, ...]]:
    """First ``count`` canonical wavevectors sorted by (|k|^2, lexicographic).

    Canonical representative of the pair {k, -k}: first nonzero
    component positive.  Components are bounded by the resolvable band.
    """
    reps: list[tuple[int, tuple[int, ...]]] = []
    rng = range(-kmax, kmax + 1)
    if dim == 1:
        candidates = [(j,) for j in range(1, kmax + 1)]
    elif dim == 2:
        candidates = [(a, b) for a in rng for b in rng]
    else:
        candidates = [(a, b, c) for a in rng for b in rng for c in rng]
    for k in candidates:
        nonzero = next((x for x in k if x != 0), 0)
        if nonzero <= 0:
            continue
        reps.append((sum(x * x for x in k), k))
    reps.sort(key=lambda t: (t[0], t[1]))
    if count > len(reps):
        raise ValueError(f"grid resolves only {len(reps)} noise frequencies, need {count}")
    return [k for _, k in reps[:count]]


_MODE_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _mode_tables(grid: GridSpec, num_freq: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(nu, cos, sin) for the first ``num_freq`` frequencies on ``grid``.

    cos/sin have shape (num_freq, *grid.shape).
    """
    key = (grid.dim, grid.n, num_freq)
    cached = _MODE_CACHE.get(key)
    if cached is None:
        freqs = _frequency_vectors(grid.dim, num_freq, grid.n // 2)
        coords = grid.coords()
        cos_t = np.empty((num_freq,) + grid.shape)
        sin_t = np.empty((num_freq,) + grid.shape)
        nu = np.empty(num_freq)
        for i, k in enumerate(freqs):
            phase = sum(kj * xj for kj, xj in zip(k, coords))
            cos_t[i] = np.cos(phase)
            sin_t[i] = np.sin(phase)
            nu[i] = sum(x * x for x in k)
        for arr in (cos_t, sin_t, nu):
            arr.setflags(write=False)
        cached = (nu, cos_t, sin_t)
        _MODE_CACHE[key] = cached
    return cached


def mode_amplitudes(spec: NoiseSpec, grid: GridSpec) -> np.ndarray:
    """Per-mode amplitudes mu_k, length spec.num_modes."""
    if spec.variant == "affine":
        nu, _, _ = _mode_tables(grid, spec.num_modes)
    else:
        nu, _, _ = _mode_tables(grid, (spec.num_modes + 1) // 2)
        nu = np.repeat(nu, 2)[: spec.num_modes]
    return spec.amplitude * (1.0 + nu) ** (-spec.decay)


def _image_basis(spec: NoiseSpec, grid: GridSpec) -> tuple[np.ndarray, ...]:
    """Flattened (K, num_points) mode matrices entering Phi(u) dW.

    additive/nemytskii: one matrix, rows mu_k * trig_k interleaved
    [cos_1, sin_1, cos_2, ...].  affine: (alpha, beta) matrices with
    rows mu_k cos_k and mu_k sin_k.
    """
    mu = mode_amplitudes(spec, grid)
    if spec.variant == "affine":
        _, cos_t, sin_t = _mode_tables(grid, spec.num_modes)
        flat = (grid.num_points,)
        alpha = mu[:, None] * cos_t.reshape((spec.num_modes,) + flat)
        beta = spec.affine_offset * mu[:, None] * sin_t.reshape((spec.num_modes,) + flat)
        return alpha, beta
    num_freq = (spec.num_modes + 1) // 2
    _, cos_t, sin_t = _mode_tables(grid, num_freq)
    rows = np.empty((spec.num_modes, grid.num_points))
    for k in range(spec.num_modes):
        table = cos_t if k % 2 == 0 else sin_t
        rows[k] = table[k // 2].reshape(-1)
    return (mu[:, None] * rows,)


_BASIS_CACHE: dict[tuple, tuple[np.ndarray, ...]] = {}


def _basis(spec: NoiseSpec, grid: GridSpec) -> tuple[np.ndarray, ...]:
    key = (
        spec.variant,
        spec.num_modes,
        spec.decay,
        spec.amplitude,
        spec.affine_offset,
        grid.dim,
        grid.n,
    )
    out = _BASIS_CACHE.get(key)
    if out is None:
        out = _image_basis(spec, grid)
        _BASIS_CACHE[key] = out
    return out


def _profile(spec: NoiseSpec, u: np.ndarray) -> np.ndarray:
    if spec.profile == "sin":
        return np.sin(u)
    if spec.profile == "bounded_rational":
        return u / (1.0 + u**2)
    return u  # linear-growth preset


def apply_diffusion(
    spec: NoiseSpec, grid: GridSpec, u: np.ndarray, dw: np.ndarray
) -> np.ndarray:
    """Field sum_{k<=K} Phi(u) e_k * dw_k.

    ``u`` has shape (..., *grid.shape) and ``dw`` shape (..., K); leading
    axes broadcast, so a whole Monte Carlo batch is one call.
    """
    dw = np.asarray(dw, dtype=np.float64)
    if dw.shape[-1] != spec.num_modes:
        raise ValueError(f"dw has {dw.shape[-1]} entries, spec has {spec.num_modes} modes")
    lead = dw.shape[:-1]
    if spec.variant == "affine":
        alpha, beta = _basis(spec, grid)
        lin = (dw @ alpha).reshape(lead + grid.shape)
        off = (dw @ beta).reshape(lead + grid.shape)
        return u * lin + off
    (rows,) = _basis(spec, grid)
    out = (dw @ rows).reshape(lead + grid.shape)
    if spec.variant == "nemytskii":
        out = _profile(spec, u) * out
    return out


def hs_norm_l2(spec: NoiseSpec, grid: GridSpec, u: np.ndarray) -> float:
    """Hilbert-Schmidt norm (sum_k ||Phi(u) e_k||_{L2}^2)^(1/2)."""
    vol = grid.cell_volume
    if spec.variant == "affine":
        alpha, beta = _basis(spec, grid)
        flat = np.asarray(u, dtype=np.float64).reshape(-1)
        images = alpha * flat + beta
        return float(np.sqrt(vol * np.sum(images**2)))
    (rows,) = _basis(spec, grid)
    if spec.variant == "additive":
        return float(np.sqrt(vol * np.sum(rows**2)))
    prof = _profile(spec, np.asarray(u, dtype=np.float64)).reshape(-1)
    return float(np.sqrt(vol * np.sum((rows * prof) ** 2)))


def default_num_modes(grid: GridSpec, decay: float, threshold: float = 1e-8) -> int:
    """Largest K whose relative amplitude (1+nu_k)^(-s) stays >= threshold."""
    count = 0
    freqs = _frequency_vectors(grid.dim, _num_resolvable(grid), grid.n // 2)
    for k in freqs:
        nu = sum(x * x for x in k)
        if (1.0 + nu) ** (-decay) < threshold:
            break
        count += 1
    # floor at one full cos/sin frequency pair
    return max(2, 2 * count)


def _num_resolvable(grid: GridSpec) -> int:
    kmax = grid.n // 2
    if grid.dim == 1:
        return kmax
    total = (2 * kmax + 1) ** grid.dim
    return (total - 1) // 2


def w32_image_check(spec: NoiseSpec, grid: GridSpec) -> None:
    """Reject noise whose untruncated expansion leaves W^{3,2}.

    The transformed additive scheme needs sum_k mu_k^2 (1+nu_k)^3 finite
    over the full mode family, which for mu_k = c0 (1+nu)^(-s) amounts to
    the tail condition s > (dim + 6) / 4.
    """
    s_min = (grid.dim + 6) / 4.0
    if spec.decay <= s_min:
        raise ValueError(
            f"noise decay s={spec.decay} too weak for the additive-transform scheme in "
            f"dim {grid.dim}; the smooth-image sum requires s > {s_min}"
        )


# -- Brownian paths ------------------------------------------------------------


@dataclass(frozen=True)
class WienerPath:
    """Increments of the truncated Wiener process at one fixed step size.

    ``increments[m, k]`` is the Gaussian N(0, tau_fine) increment of mode
    k over step m.  Fully determined by (seed, stream); coarser paths
    come from :func:`coarsen`, never from resampling.
    """

    seed: int
    tau_fine: float
    increments: np.ndarray
    stream: int = 0

    def __post_init__(self) -> None:
        inc = np.array(self.increments, dtype=np.float64)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        if inc.ndim != 2:
            raise ValueError("increments must be (num_steps, num_modes)")

    @property
    def num_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def num_modes(self) -> int:
        return self.increments.shape[1]


def _generator(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_path(
    seed: int, num_modes: int, tau_fine: float, num_steps: int, stream: int = 0
) -> WienerPath:
    """Sample a fine-level path; bit-reproducible from (seed, stream)."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if tau_fine <= 0.0:
        raise ValueError("tau_fine must be positive")
    inc = _generator(seed, stream).standard_normal((num_steps, num_modes))
    inc *= np.sqrt(tau_fine)
    return WienerPath(seed=seed, tau_fine=tau_fine, increments=inc, stream=stream)


def sample_increments_batch(
    seed: int, streams: range, num_modes: int, tau_fine: float, num_steps: int
) -> np.ndarray:
    """Stacked increments for a contiguous block of streams: (S, M, K)."""
    out = np.empty((len(streams), num_steps, num_modes))
    root = np.sqrt(tau_fine)
    for i, stream in enumerate(streams):
        out[i] = _generator(seed, stream).standard_normal((num_steps, num_modes))
        out[i] *= root
    return out


def block_sum_pow2(increments: np.ndarray, factor: int, axis: int) -> np.ndarray:
    """Sum blocks of ``factor`` consecutive entries by repeated pairwise halving.

    Halving repeatedly (rather than one reshape-sum) makes coarsening
    associative bit-for-bit: coarsen-by-4 equals coarsen-by-2 twice.
    """
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise FactorMismatch(f"factor must be a power of two >= 1, got {factor}")
    out = np.asarray(increments)
    if out.shape[axis] % factor:
        raise FactorMismatch(
            f"factor {factor} does not divide {out.shape[axis]} steps"
        )
    out = np.moveaxis(out, axis, 0)
    while factor > 1:
        out = out[0::2] + out[1::2]
        factor //= 2
    return np.moveaxis(out, 0, axis)


def coarsen(path: WienerPath, factor: int) -> WienerPath:
    """Sum consecutive blocks of ``factor`` fine increments, mode-wise exact."""
    if factor == 1:
        return path
    return WienerPath(
        seed=path.seed,
        tau_fine=path.tau_fine * factor,
        increments=block_sum_pow2(path.increments, factor, axis=0),
        stream=path.stream,
    )


def write_path(path: WienerPath, filename) -> None:
    """Binary dump: header (magic, seed, stream, K, steps, tau_fine) + float64 body."""
    header = _PATH_HEADER.pack(
        _PATH_MAGIC, path.seed, path.stream, path.num_modes, path.num_steps, path.tau_fine
    )
    with open(filename, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(path.increments).tobytes())


def read_path(filename) -> WienerPath:
    with open(filename, "rb") as fh:
        magic, seed, stream, num_modes, num_steps, tau_fine = _PATH_HEADER.unpack(
            fh.read(_PATH_HEADER.size)
        )
        if magic != _PATH_MAGIC:
            raise ValueError(f"not a path dump: bad magic {magic!r}")
        body = np.frombuffer(fh.read(), dtype=np.float64)
    inc = body.reshape(num_steps, num_modes)
    return WienerPath(seed=seed, tau_fine=tau_fine, increments=inc, stream=stream)
