"""Complex-array signal processing for k-space work.

Conventions
-----------
* ``fft2``/``ifft2`` are orthonormal (``1/sqrt(N1*N2)`` both ways) and act on
  two axes, by default the last two.  Sizes must be powers of two.
* Convolution kernels have an *origin*: the kernel index that sits at lag
  zero.  The default origin is the kernel centre ``(kh // 2, kw // 2)``, so a
  kernel centred on DC in k-space leaves the image unshifted.
* ``hankel_build(x, d)`` uses ``H[i, j] = x[(i + j) mod N]``.  With this
  layout ``H(x, d) @ flip(h) == circ_conv(x, h, origin=d - 1)``.  2-D patches
  are flattened column-major over the ``d x d`` window, rows row-major over
  the signal.
"""
from __future__ import annotations

import numpy as np

RANK_TOL = 1e-6


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _check_pow2(x: np.ndarray, axes) -> None:
    for ax in axes:
        n = x.shape[ax]
        if not _is_pow2(n):
            raise ValueError(f"FFT size {n} on axis {ax} is not a power of two")


def fft2(x, axes=(-2, -1)) -> np.ndarray:
    """Orthonormal 2-D DFT over ``axes`` (power-of-two sizes only)."""
    x = np.asarray(x, dtype=np.complex128)
    _check_pow2(x, axes)
    return np.fft.fft2(x, axes=axes, norm="ortho")


def ifft2(x, axes=(-2, -1)) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    _check_pow2(x, axes)
    return np.fft.ifft2(x, axes=axes, norm="ortho")


def dft2_direct(x) -> np.ndarray:
    """O(N^2) orthonormal DFT of a 2-D array by explicit summation (reference only)."""
    x = np.asarray(x, dtype=np.complex128)
    n1, n2 = x.shape
    out = np.zeros((n1, n2), dtype=np.complex128)
    for k1 in range(n1):
        for k2 in range(n2):
            acc = 0j
            for a in range(n1):
                for b in range(n2):
                    acc += x[a, b] * np.exp(-2j * np.pi * (k1 * a / n1 + k2 * b / n2))
            out[k1, k2] = acc
    return out / np.sqrt(n1 * n2)


def pad_kernel(h, size, origin=None) -> np.ndarray:
    """Embed a small 2-D kernel into an array of ``size`` with ``origin`` at index (0, 0)."""
    h = np.asarray(h)
    kh, kw = h.shape[-2:]
    n1, n2 = size
    if kh > n1 or kw > n2:
        raise ValueError(f"kernel {h.shape[-2:]} larger than signal {tuple(size)}")
    o1, o2 = (kh // 2, kw // 2) if origin is None else origin
    rows = (np.arange(kh) - o1) % n1
    cols = (np.arange(kw) - o2) % n2
    out = np.zeros(h.shape[:-2] + (n1, n2), dtype=np.result_type(h, np.complex128))
    out[..., rows[:, None], cols[None, :]] = h
    return out


def circ_conv2(x, h, origin=None) -> np.ndarray:
    """Circular 2-D convolution of ``x`` (..., N1, N2) with a small kernel ``h``.

    Computed as ``ifft2(fft2(x) * fft2(pad(h))) * sqrt(N1 * N2)`` with the
    orthonormal transforms above.
    """
    x = np.asarray(x, dtype=np.complex128)
    n1, n2 = x.shape[-2:]
    hp = pad_kernel(h, (n1, n2), origin)
    return ifft2(fft2(x) * fft2(hp)) * np.sqrt(n1 * n2)


def circ_conv1(x, h, origin=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    n, d = x.size, h.size
    if d > n:
        raise ValueError("kernel longer than signal")
    o = d // 2 if origin is None else origin
    hp = np.zeros(n, dtype=np.complex128)
    hp[(np.arange(d) - o) % n] = h
    return np.fft.ifft(np.fft.fft(x) * np.fft.fft(hp))


def conj_reflect(k, axes=(-2, -1)) -> np.ndarray:
    """``out[k1, k2] = conj(k[-k1 mod N1, -k2 mod N2])``; equals ``fft2(conj(ifft2(k)))``."""
    k = np.asarray(k, dtype=np.complex128)
    flipped = np.flip(k, axis=axes)
    return np.roll(flipped, 1, axis=axes).conj()


def flip_kernel(h) -> np.ndarray:
    """Index reversal of a 1-D or 2-D kernel (all axes)."""
    return np.flip(np.asarray(h))


def hankel_build(x, d: int) -> np.ndarray:
    """Wrap-around Hankel lifting of a 1-D signal or a 2-D array.

    1-D: ``(N, d)`` with ``H[i, j] = x[(i + j) mod N]``.
    2-D: ``(N1*N2, d*d)``; row ``i1*N2 + i2``, column ``j1 + d*j2`` holds
    ``x[(i1 + j1) mod N1, (i2 + j2) mod N2]``.
    """
    x = np.asarray(x)
    if d < 1:
        raise ValueError("filter size d must be >= 1")
    if any(d > n for n in x.shape):
        raise ValueError(f"filter size {d} exceeds signal shape {x.shape}")
    if x.ndim == 1:
        n = x.size
        idx = (np.arange(n)[:, None] + np.arange(d)[None, :]) % n
        return x[idx]
    if x.ndim == 2:
        n1, n2 = x.shape
        i1, i2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
        j1, j2 = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
        # column-major patch order: j1 varies fastest
        j1 = j1.ravel(order="F")
        j2 = j2.ravel(order="F")
        r = (i1.ravel()[:, None] + j1[None, :]) % n1
        c = (i2.ravel()[:, None] + j2[None, :]) % n2
        return x[r, c]
    raise ValueError("hankel_build supports 1-D and 2-D signals")


def hankel_apply_kernel(h) -> np.ndarray:
    """Vector ``h_bar`` such that ``hankel_build(x, d) @ h_bar`` is a convolution with ``h``."""
    h = np.asarray(h)
    return flip_kernel(h).ravel(order="F") if h.ndim == 2 else flip_kernel(h)


def svd_small(A, max_residual: float = 1e-10):
    """Thin SVD ``A = U @ diag(s) @ Vh`` with a reconstruction check.

    Returns ``(U, s, V)`` where ``V`` has orthonormal columns (so
    ``A = U diag(s) V^H``).  Raises ``np.linalg.LinAlgError`` if the
    decomposition fails or its relative residual exceeds ``max_residual``.
    """
    A = np.asarray(A, dtype=np.complex128)
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    norm = np.linalg.norm(A)
    if norm > 0:
        resid = np.linalg.norm(A - (U * s) @ Vh) / norm
        if not resid < max_residual:
            raise np.linalg.LinAlgError(f"SVD residual {resid:.3e} exceeds {max_residual:.1e}")
    return U, s, Vh.conj().T


def numeric_rank(s, tol_rel: float = RANK_TOL) -> int:
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0 or s.max() <= 0:
        return 0
    return int(np.count_nonzero(s > tol_rel * s.max()))


def ssos(x, coil_axis: int = -1) -> np.ndarray:
    """Root sum-of-squares coil combination."""
    x = np.asarray(x)
    return np.sqrt(np.sum(np.abs(x) ** 2, axis=coil_axis))
