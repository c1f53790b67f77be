"""Synthetic multi-coil acquisitions: phantoms, coil maps, smooth phase, masks.

Array layout: images and k-space are ``(N, N)`` or coil-last ``(N, N, Nc)``;
k-space is stored in natural FFT order (DC at index 0).  Sampling masks
select phase-encode lines, i.e. rows (axis 0).  Line indices in
``SamplingMask.omega`` are *centred* indices, line ``N // 2`` being DC, which
is how masks are usually drawn; ``SamplingMask.pattern`` is the 2-D boolean
mask in FFT order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kspace import fft2, ifft2, _is_pow2

MASK_KINDS = ("random", "vd_regular", "partial_fourier", "entrywise", "full")


@dataclass
class SamplingMask:
    kind: str
    N: int
    pattern: np.ndarray
    omega: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    acs: int = 0
    R: float = 1.0

    def __post_init__(self) -> None:
        self.pattern = np.asarray(self.pattern, dtype=bool)
        self.omega = np.asarray(self.omega, dtype=int)

    @property
    def n_sampled(self) -> int:
        return int(self.pattern.sum())

    def apply(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k)
        m = self.pattern if k.ndim == 2 else self.pattern.reshape(self.pattern.shape + (1,) * (k.ndim - 2))
        return np.where(m, k, 0)

    def weights(self, n_coils: int | None = None) -> np.ndarray:
        w = self.pattern.astype(np.float64)
        return w if n_coils is None else np.repeat(w[:, :, None], n_coils, axis=2)


def centred_to_fft_index(lines, N: int) -> np.ndarray:
    return (np.asarray(lines, dtype=int) - N // 2) % N


def _acs_lines(N: int, acs: int) -> np.ndarray:
    start = N // 2 - acs // 2
    return np.arange(start, start + acs)


def _line_mask(kind: str, N: int, omega, acs: int, R: float) -> SamplingMask:
    omega = np.unique(np.asarray(omega, dtype=int))
    pattern = np.zeros((N, N), dtype=bool)
    pattern[centred_to_fft_index(omega, N), :] = True
    return SamplingMask(kind, N, pattern, omega, acs, R)


def _budget(N: int, R: float, acs: int) -> int:
    if R < 1:
        raise ValueError("acceleration R must be >= 1")
    if not 1 <= acs <= N:
        raise ValueError("acs must satisfy 1 <= acs <= N")
    budget = int(round(N / R))
    if acs > budget:
        raise ValueError(f"infeasible mask: {acs} ACS lines exceed the budget of {budget} lines")
    return budget


def mask_random(N: int, R: float, acs: int, seed: int) -> SamplingMask:
    """ACS block plus lines drawn uniformly without replacement up to ``round(N/R)``."""
    budget = _budget(N, R, acs)
    centre = _acs_lines(N, acs)
    rest = np.setdiff1d(np.arange(N), centre)
    rng = np.random.default_rng(seed)
    extra = rng.choice(rest, size=budget - acs, replace=False)
    return _line_mask("random", N, np.concatenate([centre, extra]), acs, R)


def mask_vd_regular(N: int, R: float, acs: int) -> SamplingMask:
    """ACS block plus every ``ceil((N - acs) / (round(N/R) - acs))``-th outer line."""
    budget = _budget(N, R, acs)
    centre = _acs_lines(N, acs)
    outer = np.setdiff1d(np.arange(N), centre)
    if budget == acs or outer.size == 0:
        return _line_mask("vd_regular", N, centre, acs, R)
    step = -(-(N - acs) // (budget - acs))
    return _line_mask("vd_regular", N, np.concatenate([centre, outer[::step]]), acs, R)


def mask_partial_fourier(N: int, pf_fraction: float, acs: int, R: float | None = None) -> SamplingMask:
    """Contiguous block of centred lines ``[0, round(pf_fraction * N))`` plus ACS.

    With ``R`` given and ``round(N/R)`` smaller than the block, the non-ACS
    part of the block is thinned by a regular skip to meet the budget.
    """
    if not 0.5 < pf_fraction <= 1.0:
        raise ValueError("pf_fraction must lie in (0.5, 1]")
    if not 1 <= acs <= N:
        raise ValueError("acs must satisfy 1 <= acs <= N")
    block = np.arange(int(round(pf_fraction * N)))
    centre = _acs_lines(N, acs)
    lines = np.union1d(block, centre)
    R_eff = N / lines.size
    if R is not None and R > 1:
        budget = _budget(N, R, acs)
        if budget < lines.size:
            others = np.setdiff1d(lines, centre)
            step = -(-others.size // max(budget - acs, 1))
            keep = others[::-1][::step] if budget > acs else others[:0]
            lines = np.union1d(centre, keep)
        R_eff = R
    return _line_mask("partial_fourier", N, lines, acs, R_eff)


def mask_entrywise(N: int, n_samples: int, seed: int) -> SamplingMask:
    """Uniformly random sampling of ``n_samples`` individual k-space locations."""
    if not 0 <= n_samples <= N * N:
        raise ValueError("n_samples out of range")
    rng = np.random.default_rng(seed)
    flat = np.zeros(N * N, dtype=bool)
    flat[rng.choice(N * N, size=n_samples, replace=False)] = True
    return SamplingMask("entrywise", N, flat.reshape(N, N), R=N * N / max(n_samples, 1))


def full_mask(N: int) -> SamplingMask:
    return SamplingMask("full", N, np.ones((N, N), dtype=bool), np.arange(N), N, 1.0)


def make_mask(kind: str, N: int, R: float = 1.0, acs: int = 8, seed: int = 0,
              pf_fraction: float = 9 / 16) -> SamplingMask:
    if kind == "random":
        return mask_random(N, R, acs, seed)
    if kind == "vd_regular":
        return mask_vd_regular(N, R, acs)
    if kind == "partial_fourier":
        return mask_partial_fourier(N, pf_fraction, acs, R if R > 1 else None)
    if kind == "entrywise":
        return mask_entrywise(N, int(round(N * N / R)), seed)
    if kind == "full":
        return full_mask(N)
    raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")


# phantoms and smooth maps --------------------------------------------------

def make_phantom(N: int, n_ellipses: int, seed: int, radius: float = 0.25) -> np.ndarray:
    """Piecewise-constant ellipse phantom with values in [0, 1].

    The first ellipse is a centred disc of radius ``radius * N`` at intensity
    0.7; the others are random ellipses inside it that add or remove up to 0.3.
    """
    if not _is_pow2(N):
        raise ValueError("N must be a power of two")
    if n_ellipses < 1:
        raise ValueError("n_ellipses must be >= 1")
    rng = np.random.default_rng(seed)
    c = N / 2.0
    yy, xx = np.mgrid[0:N, 0:N].astype(np.float64)
    img = np.where((yy - c) ** 2 + (xx - c) ** 2 <= (radius * N) ** 2, 0.7, 0.0)
    for _ in range(n_ellipses - 1):
        r = radius * N * np.sqrt(rng.uniform(0.0, 0.5))
        t = rng.uniform(0, 2 * np.pi)
        cy, cx = c + r * np.sin(t), c + r * np.cos(t)
        a, b = rng.uniform(0.08, 0.3, size=2) * radius * N
        rot = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(rot) + dy * np.sin(rot)
        v = -dx * np.sin(rot) + dy * np.cos(rot)
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        img = img + np.where(inside, rng.choice([-0.3, -0.2, 0.2, 0.3]), 0.0)
    return np.clip(img, 0.0, 1.0)


def gradient_support_fraction(img: np.ndarray) -> float:
    """Fraction of pixels with a nonzero forward difference along either axis."""
    gy = np.diff(img, axis=0, append=img[:1]) != 0
    gx = np.diff(img, axis=1, append=img[:, :1]) != 0
    return float(np.mean(gy | gx))


def centred_patch_mask(N: int, width: int) -> np.ndarray:
    """Boolean (N, N) mask in FFT order selecting the centred ``width x width`` frequencies."""
    f = np.fft.fftfreq(N, d=1.0 / N).astype(int)
    half = width // 2
    sel = (f >= -half) & (f <= width - 1 - half)
    return sel[:, None] & sel[None, :]


def _check_support(width: int, N: int, what: str) -> None:
    if width >= N:
        raise ValueError(f"{what} support {width} must be smaller than N={N}")
    if width < 1:
        raise ValueError(f"{what} support must be positive")


@dataclass
class CoilMaps:
    maps: np.ndarray            # (N, N, Nc), normalised
    raw: np.ndarray             # (N, N, Nc), exactly band-limited
    support: int
    leakage: float              # spectral energy outside the patch after normalisation


def make_coil_maps(N: int, n_coils: int, support_l1: int = 11, seed: int = 0,
                   floor: float = 0.2) -> CoilMaps:
    """Smooth complex sensitivities with compact k-space support.

    Random complex coefficients on the centred ``support_l1`` square are
    inverse transformed; every coil's DC coefficient is lifted by ``floor``
    times the patch RMS so the root sum of squares stays away from zero, then
    the maps are divided by that root sum of squares.
    """
    _check_support(support_l1, N, "coil")
    if support_l1 % 2 == 0:
        raise ValueError("support_l1 must be odd")
    rng = np.random.default_rng(seed)
    patch = centred_patch_mask(N, support_l1)
    f = np.fft.fftfreq(N, d=1.0 / N)
    envelope = np.exp(-(f[:, None] ** 2 + f[None, :] ** 2) / (2 * (support_l1 / 4.0) ** 2))
    spec = np.zeros((n_coils, N, N), dtype=np.complex128)
    for i in range(n_coils):
        coef = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        spec[i] = np.where(patch, coef * envelope, 0)
        rms = np.sqrt(np.mean(np.abs(spec[i][patch]) ** 2))
        spec[i, 0, 0] += floor * rms * support_l1 * np.exp(2j * np.pi * rng.uniform())
    raw = ifft2(spec)
    rss = np.sqrt(np.sum(np.abs(raw) ** 2, axis=0))
    maps = raw / rss
    out_spec = fft2(maps)
    leak = float(np.sum(np.abs(out_spec[:, ~patch]) ** 2) / np.sum(np.abs(out_spec) ** 2))
    return CoilMaps(np.moveaxis(maps, 0, -1), np.moveaxis(raw, 0, -1), support_l1, leak)


@dataclass
class PhaseMap:
    phi: np.ndarray             # (N, N) real
    support: int
    leakage: float              # energy of fft2(exp(2j*phi)) outside the patch


def make_phase(N: int, support_l2: int = 11, seed: int = 0, amplitude: float = 1.2) -> PhaseMap:
    """Smooth phase map.

    A real band-limited field is synthesised from conjugate-symmetric random
    coefficients on the centred ``support_l2`` square and scaled to peak
    magnitude ``amplitude``; ``phi`` is half the angle of ``exp(1j * field)``.
    """
    _check_support(support_l2, N, "phase")
    rng = np.random.default_rng(seed)
    patch = centred_patch_mask(N, support_l2)
    f = np.fft.fftfreq(N, d=1.0 / N)
    envelope = np.exp(-(f[:, None] ** 2 + f[None, :] ** 2) / (2 * (support_l2 / 4.0) ** 2))
    coef = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    spec = np.where(patch, coef * envelope, 0)
    spec = 0.5 * (spec + np.roll(np.flip(spec), 1, axis=(0, 1)).conj())
    field = ifft2(spec).real
    peak = np.max(np.abs(field))
    field = field * (amplitude / peak) if peak > 0 else field
    phi = 0.5 * np.angle(np.exp(1j * field))
    return PhaseMap(phi, support_l2, phase_leakage(phi, support_l2))


def phase_leakage(phi: np.ndarray, width: int) -> float:
    spec = fft2(np.exp(2j * phi))
    patch = centred_patch_mask(phi.shape[0], width)
    return float(np.sum(np.abs(spec[~patch]) ** 2) / np.sum(np.abs(spec) ** 2))


# scenes -----------------------------------------------------------------------

@dataclass
class AcquisitionScene:
    z_true: np.ndarray          # (N, N) complex
    csm: np.ndarray             # (N, N, Nc) complex
    phase_map: np.ndarray       # (N, N) real
    kspace_full: np.ndarray     # (N, N, Nc) complex
    mask: SamplingMask
    noise_sigma: float
    y: np.ndarray               # (N, N, Nc) complex, zero off the mask
    seed: int
    noise: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.z_true.shape[0]

    @property
    def n_coils(self) -> int:
        return self.csm.shape[-1]

    def reference_image(self) -> np.ndarray:
        """SSoS of the fully sampled coil images."""
        return np.sqrt(np.sum(np.abs(ifft2(self.kspace_full, axes=(0, 1))) ** 2, axis=-1))

    def zero_filled(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(ifft2(self.y, axes=(0, 1))) ** 2, axis=-1))


def assemble(magnitude, csm, phi, sigma: float, mask: SamplingMask, seed: int) -> AcquisitionScene:
    """Forward model: per-coil spectra of ``csm * z`` sampled by ``mask`` plus noise."""
    magnitude = np.asarray(magnitude, dtype=np.float64)
    csm = np.asarray(csm, dtype=np.complex128)
    if csm.ndim == 2:
        csm = csm[:, :, None]
    phi = np.asarray(phi, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if magnitude.shape != phi.shape or csm.shape[:2] != magnitude.shape or mask.pattern.shape != magnitude.shape:
        raise ValueError("shape mismatch between phantom, coil maps, phase and mask")
    z = magnitude * np.exp(1j * phi)
    kfull = fft2(csm * z[:, :, None], axes=(0, 1))
    rng = np.random.default_rng(seed)
    noise = sigma * (rng.standard_normal(kfull.shape) + 1j * rng.standard_normal(kfull.shape))
    noise = mask.apply(noise)
    y = mask.apply(kfull) + noise
    return AcquisitionScene(z, csm, phi, kfull, mask, float(sigma), y, seed, noise)


def simulate_scene(N: int = 64, n_coils: int = 4, mask: SamplingMask | None = None,
                   sigma: float = 0.0, seed: int = 0, n_ellipses: int = 6,
                   support_l1: int = 11, support_l2: int = 11,
                   phase_amplitude: float = 1.2, smooth_phase: bool = True) -> AcquisitionScene:
    """Phantom, coil maps, phase and forward model in one call, all keyed by ``seed``."""
    mag = make_phantom(N, n_ellipses, seed)
    cm = make_coil_maps(N, n_coils, support_l1, seed + 1)
    if n_coils == 1:
        # a single receive channel is taken as homogeneous
        maps = np.ones((N, N, 1), dtype=np.complex128)
    else:
        maps = cm.maps
    ph = make_phase(N, support_l2, seed + 2, phase_amplitude) if smooth_phase else PhaseMap(np.zeros((N, N)), support_l2, 0.0)
    mask = full_mask(N) if mask is None else mask
    scene = assemble(mag, maps, ph.phi, sigma, mask, seed + 3)
    scene.meta.update(coil_leakage=cm.leakage if n_coils > 1 else 0.0, phase_leakage=ph.leakage)
    return scene
