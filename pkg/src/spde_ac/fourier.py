"""Radix-2 complex FFT and spectrum padding/truncation.

The transform is implemented in-repo (power-of-two sizes only) so the
coefficient layout the whole package relies on is pinned here rather
than inherited from an external library.  Butterfly passes are
vectorised over arbitrary leading axes, which is what makes batched
Monte Carlo marching cheap.

Layout: for size ``n`` the DFT bin ``j`` carries the integer wavenumber
``k = j`` for ``j <= n//2`` and ``k = j - n`` otherwise, i.e.
``k in {-n/2+1, ..., n/2}`` with the Nyquist mode stored at ``j = n//2``.
"""

from __future__ import annotations

import numpy as np

try:  # JIT of the batched butterfly kernel; the numpy path is the fallback
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        import numba

    warnings.filterwarnings(
        "ignore", message="The TBB threading layer requires TBB version"
    )
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

__all__ = [
    "fft",
    "ifft",
    "fftn",
    "ifftn",
    "wavenumbers",
    "pad_spectrum",
    "truncate_spectrum",
]

_BITREV_CACHE: dict[int, np.ndarray] = {}
_TWIDDLE_CACHE: dict[tuple[int, bool], list[np.ndarray]] = {}


def _check_pow2(n: int) -> None:
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"transform size must be a power of two >= 2, got {n}")


def _bitrev(n: int) -> np.ndarray:
    """Bit-reversal permutation for size n."""
    perm = _BITREV_CACHE.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.intp)
        for _ in range(bits):
            rev = (rev << 1) | (idx & 1)
            idx >>= 1
        perm = rev
        _BITREV_CACHE[n] = perm
    return perm


def _twiddles(n: int, inverse: bool) -> list[np.ndarray]:
    key = (n, inverse)
    tables = _TWIDDLE_CACHE.get(key)
    if tables is None:
        sign = 2j * np.pi if inverse else -2j * np.pi
        tables = []
        size = 2
        while size <= n:
            tables.append(np.exp(sign * np.arange(size // 2) / size))
            size *= 2
        _TWIDDLE_CACHE[key] = tables
    return tables


_FLAT_TWIDDLE_CACHE: dict[tuple[int, bool], np.ndarray] = {}


def _flat_twiddles(n: int, inverse: bool) -> np.ndarray:
    """All stage twiddles packed stage-by-stage into one array of n-1 entries."""
    key = (n, inverse)
    flat = _FLAT_TWIDDLE_CACHE.get(key)
    if flat is None:
        flat = np.concatenate(_twiddles(n, inverse))
        flat.setflags(write=False)
        _FLAT_TWIDDLE_CACHE[key] = flat
    return flat


if _HAVE_NUMBA:

    @numba.njit(cache=True, inline="always")
    def _fft_one_row(src, row, bitrev, twiddle):  # pragma: no cover - via _fft_last
        n = src.shape[0]
        for j in range(n):
            row[j] = src[bitrev[j]]
        size = 2
        toff = 0
        while size <= n:
            half = size // 2
            for start in range(0, n, size):
                for i in range(half):
                    w = twiddle[toff + i]
                    a = row[start + i]
                    t = w * row[start + half + i]
                    row[start + i] = a + t
                    row[start + half + i] = a - t
            toff += half
            size *= 2

    @numba.njit(cache=True)
    def _fft_rows(x, bitrev, twiddle):  # pragma: no cover - via _fft_last
        out = np.empty_like(x)
        for r in range(x.shape[0]):
            _fft_one_row(x[r], out[r], bitrev, twiddle)
        return out

    @numba.njit(cache=True)
    def _cube_rows_1d(c, brev, twf, twi, scale_inv, scale_fwd):
        # pragma: no cover - via energy.cube_hat
        # fused pad -> inverse fft -> cube -> forward fft -> truncate (1d)
        rows, n = c.shape
        nbig = 2 * n
        half = n // 2
        out = np.empty_like(c)
        work = np.empty(nbig, dtype=np.complex128)
        spec = np.empty(nbig, dtype=np.complex128)
        for r in range(rows):
            for j in range(nbig):
                spec[j] = 0.0
            for j in range(half):
                spec[j] = c[r, j]
            for j in range(1, half):
                spec[nbig - j] = c[r, n - j]
            nyq = 0.5 * c[r, half]
            spec[half] = nyq
            spec[nbig - half] = nyq
            _fft_one_row(spec, work, brev, twi)
            for j in range(nbig):
                v = work[j].real * scale_inv
                spec[j] = v * v * v
            _fft_one_row(spec, work, brev, twf)
            for j in range(half):
                out[r, j] = work[j] * scale_fwd
            for j in range(1, half):
                out[r, n - j] = work[nbig - j] * scale_fwd
            out[r, half] = (work[half] + work[nbig - half]) * scale_fwd
        return out


def _fft_last_numpy(a: np.ndarray, inverse: bool) -> np.ndarray:
    """Ping-pong vectorised butterflies; fallback when numba is absent."""
    n = a.shape[-1]
    out = np.ascontiguousarray(a, dtype=np.complex128)[..., _bitrev(n)]
    buf = np.empty_like(out)
    scratch = np.empty(out.shape[:-1] + (n // 2,), dtype=np.complex128)
    lead = out.shape[:-1]
    for tw in _twiddles(n, inverse):
        half = tw.shape[0]
        blocks = n // (2 * half)
        v = out.reshape(lead + (blocks, 2, half))
        b = buf.reshape(lead + (blocks, 2, half))
        even = v[..., 0, :]
        odd = v[..., 1, :]
        if half == 1:
            t = odd
        else:
            t = scratch.reshape(lead + (blocks, half))
            np.multiply(odd, tw, out=t)
        np.add(even, t, out=b[..., 0, :])
        np.subtract(even, t, out=b[..., 1, :])
        out, buf = buf, out
    return out


def _fft_last(a: np.ndarray, inverse: bool) -> np.ndarray:
    """Radix-2 Cooley-Tukey along the last axis; unnormalised."""
    n = a.shape[-1]
    _check_pow2(n)
    if _HAVE_NUMBA:
        arr = np.ascontiguousarray(a, dtype=np.complex128)
        flat = arr.reshape(-1, n)
        out = _fft_rows(flat, _bitrev(n), _flat_twiddles(n, inverse))
        return out.reshape(arr.shape)
    return _fft_last_numpy(a, inverse)


def fft(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Forward DFT along ``axis``: F_k = sum_j a_j exp(-2*pi*i*j*k/n)."""
    if axis in (-1, a.ndim - 1):
        return _fft_last(a, inverse=False)
    moved = np.moveaxis(a, axis, -1)
    return np.moveaxis(_fft_last(moved, inverse=False), -1, axis)


def ifft(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse DFT along ``axis`` including the 1/n factor."""
    if axis in (-1, a.ndim - 1):
        return _fft_last(a, inverse=True) / a.shape[-1]
    moved = np.moveaxis(a, axis, -1)
    return np.moveaxis(_fft_last(moved, inverse=True) / a.shape[axis], -1, axis)


def fftn(a: np.ndarray, ndim: int) -> np.ndarray:
    """Forward DFT over the last ``ndim`` axes."""
    out = np.asarray(a, dtype=np.complex128)
    for ax in range(-ndim, 0):
        out = fft(out, axis=ax)
    return out


def ifftn(a: np.ndarray, ndim: int) -> np.ndarray:
    """Inverse DFT over the last ``ndim`` axes."""
    out = np.asarray(a, dtype=np.complex128)
    for ax in range(-ndim, 0):
        out = ifft(out, axis=ax)
    return out


def ifftn_raw(a: np.ndarray, ndim: int) -> np.ndarray:
    """Unnormalised inverse over the last ``ndim`` axes (caller scales by 1/n^d)."""
    out = np.asarray(a, dtype=np.complex128)
    for ax in range(-ndim, 0):
        if ax in (-1, out.ndim - 1):
            out = _fft_last(out, inverse=True)
        else:
            moved = np.moveaxis(out, ax, -1)
            out = np.moveaxis(_fft_last(moved, inverse=True), -1, ax)
    return out


def wavenumbers(n: int) -> np.ndarray:
    """Integer wavenumber of each DFT bin: {0,1,...,n/2,-n/2+1,...,-1}."""
    k = np.arange(n)
    return np.where(k <= n // 2, k, k - n)


def _pad_axis(c: np.ndarray, axis: int, n_to: int) -> np.ndarray:
    """Embed an n-bin spectrum into n_to bins along ``axis``.

    The Nyquist coefficient is split evenly between +n/2 and -n/2 on the
    finer grid so that real fields stay real after refinement;
    ``_truncate_axis`` folds the pair back, making truncate(pad(c)) == c.
    """
    c = np.moveaxis(c, axis, -1)
    n = c.shape[-1]
    if n_to < n or n_to % 2:
        raise ValueError(f"cannot pad spectrum of {n} bins into {n_to}")
    if n_to == n:
        return np.moveaxis(c, -1, axis)
    out = np.zeros(c.shape[:-1] + (n_to,), dtype=np.complex128)
    half = n // 2
    out[..., :half] = c[..., :half]
    if half > 1:
        out[..., n_to - (half - 1):] = c[..., half + 1:]
    nyq = 0.5 * c[..., half]
    out[..., half] = nyq
    out[..., n_to - half] = nyq
    return np.moveaxis(out, -1, axis)


def _truncate_axis(c: np.ndarray, axis: int, n_to: int) -> np.ndarray:
    """Restrict a spectrum to n_to bins along ``axis`` (adjoint of pad)."""
    c = np.moveaxis(c, axis, -1)
    n = c.shape[-1]
    if n_to > n:
        raise ValueError(f"cannot truncate spectrum of {n} bins to {n_to}")
    if n_to == n:
        return np.moveaxis(c, -1, axis)
    out = np.empty(c.shape[:-1] + (n_to,), dtype=np.complex128)
    half = n_to // 2
    out[..., :half] = c[..., :half]
    if half > 1:
        out[..., half + 1:] = c[..., n - (half - 1):]
    out[..., half] = c[..., half] + c[..., n - half]
    return np.moveaxis(out, -1, axis)


def cube_project_rows(c: np.ndarray, scale_inv: float, scale_fwd: float) -> np.ndarray | None:
    """Fused dealiased cube for 1d spectra, (..., n) -> (..., n).

    ``scale_inv``/``scale_fwd`` convert padded-grid bins to nodal values
    and back (the caller owns the coefficient convention).  Returns None
    when the JIT kernel is unavailable; callers then fall back to the
    generic pad/transform/truncate composition (identical arithmetic up
    to rounding).
    """
    if not _HAVE_NUMBA:
        return None
    n = c.shape[-1]
    nbig = 2 * n
    arr = np.ascontiguousarray(c, dtype=np.complex128)
    flat = arr.reshape(-1, n)
    out = _cube_rows_1d(
        flat,
        _bitrev(nbig),
        _flat_twiddles(nbig, False),
        _flat_twiddles(nbig, True),
        scale_inv,
        scale_fwd,
    )
    return out.reshape(arr.shape)


def pad_spectrum(c: np.ndarray, ndim: int, n_to: int) -> np.ndarray:
    """Embed the spectrum into ``n_to`` bins along each of the last ``ndim`` axes."""
    out = c
    for ax in range(-ndim, 0):
        out = _pad_axis(out, ax, n_to)
    return out


def truncate_spectrum(c: np.ndarray, ndim: int, n_to: int) -> np.ndarray:
    """Restrict the spectrum to ``n_to`` bins along each of the last ``ndim`` axes."""
    out = c
    for ax in range(-ndim, 0):
        out = _truncate_axis(out, ax, n_to)
    return out
