"""Empirical checks of the recovery guarantees for the tripled generator.

Quantities follow matrix-completion conventions:

* the Hankel lifting of a difference of two ``z_hat`` outputs is ``N^2 x d^2``
  for an ``N x N`` spectrum (``hankel_build`` in 2-D), so the ambient sizes in
  the bound formulas are ``N_h = N^2`` and ``d_h = d^2``;
* ``n`` is the number of sampled k-space locations;
* ``log`` is the natural logarithm.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .generator import TrainedGenerator, decode_z, generator_output, sample_latent
from .kspace import RANK_TOL, hankel_build, numeric_rank, svd_small

log = logging.getLogger(__name__)

SAMPLING_FACTOR = 5.34
DEGENERATE_NORM = 1e-12
BETA = 1.1


@dataclass
class SubspaceBasis:
    U: np.ndarray
    V: np.ndarray
    source: str = ""

    @property
    def rank(self) -> int:
        return self.U.shape[1]


def _check_orthonormal(U: np.ndarray, tol: float = 1e-8) -> None:
    r = U.shape[1]
    resid = np.max(np.abs(U.conj().T @ U - np.eye(r))) if r else 0.0
    if resid > tol:
        raise ValueError(f"columns are not orthonormal (Gram residual {resid:.2e})")


def coherence(U, n: int | None = None) -> float:
    """``(n / r) * max_i ||P_U e_i||^2`` for an orthonormal ``n x r`` basis."""
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[1] == 0:
        raise ValueError("basis must be a non-empty 2-D array")
    _check_orthonormal(U)
    n = U.shape[0] if n is None else n
    if n != U.shape[0]:
        raise ValueError(f"ambient dimension {n} does not match basis rows {U.shape[0]}")
    # ||P_U e_i||^2 equals the squared norm of row i of U
    row_energy = np.sum(np.abs(U) ** 2, axis=1)
    return float(n / U.shape[1] * row_energy.max())


def subspace_basis(H, tol: float = RANK_TOL, source: str = "") -> SubspaceBasis:
    U, s, V = svd_small(H)
    r = numeric_rank(s, tol)
    return SubspaceBasis(U[:, :r], V[:, :r], source)


class Bound(NamedTuple):
    c1: float
    sampling_ok: bool
    n_required: float


def c1_bound(n, mu0, r, N, d, beta=BETA) -> Bound:
    """The random-sampling constant and its accompanying sample-size condition.

    ``c1 = sqrt(16 n mu0 r (N + d) beta log d / (3 N^2)) - n / N`` exactly as
    written, with ``sampling_ok = n > 5.34 mu0 r (N + d) beta log d``.
    """
    if d <= 1:
        raise ValueError("d must exceed 1 (log d vanishes)")
    if n < 0 or mu0 <= 0 or r <= 0 or N <= 0 or beta <= 0:
        raise ValueError("n must be >= 0 and mu0, r, N, beta positive")
    k = mu0 * r * (N + d) * beta * math.log(d)
    c1 = math.sqrt(16.0 * n * k / (3.0 * N * N)) - n / N
    n_required = SAMPLING_FACTOR * k
    return Bound(c1, bool(n > n_required), n_required)


def lemma2_check(a: float, b: float, c: float) -> float:
    """Smallest admissible ``gamma = max(c/a - 1, 0)`` with ``b <= gamma a``.

    The inequality is asserted up to a rounding slack of ``1e-12 c``.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    if b < 0 or not math.isfinite(c) or a + b > c * (1 + 1e-15):
        raise ValueError("need b >= 0 and a + b <= c < inf")
    gamma = max(c / a - 1.0, 0.0)
    if b > gamma * a + 1e-12 * abs(c):
        raise AssertionError(f"b={b} exceeds gamma*a={gamma * a}")
    return gamma


# ---------------------------------------------------------------- sampling helpers

def _latent_shape(t: TrainedGenerator) -> tuple:
    return t.generator.latents["xi"].shape


def _radius(t: TrainedGenerator, s) -> float:
    return t.generator.latent_radius if s is None else float(s)


def _pattern(mask_or_scene) -> np.ndarray:
    m = getattr(mask_or_scene, "mask", mask_or_scene)
    return np.asarray(getattr(m, "pattern", m), dtype=bool)


def _masked(x: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """Apply an (N, N) pattern to a (B, N, N, Nc) stack."""
    return np.where(pattern[None, :, :, None], x, 0)


@dataclass
class PairStats:
    """Constants derived from one latent pair ``(xi, xi')``."""

    rank: int
    mu_U: float
    mu_V: float
    ratio: float
    degenerate: bool

    @property
    def mu0(self) -> float:
        return max(self.mu_U, self.mu_V)


def hankel_difference(t: TrainedGenerator, xi_a, xi_b, d: int) -> np.ndarray:
    dz = decode_z(t.generator, t.params, xi_a) - decode_z(t.generator, t.params, xi_b)
    return hankel_build(dz, d)


def _pair_stats(t, xi_a, xi_b, d, pattern) -> PairStats:
    H = hankel_difference(t, xi_a, xi_b, d)
    if np.linalg.norm(H) < DEGENERATE_NORM:
        rank, mu_u, mu_v = 0, math.nan, math.nan
    else:
        basis = subspace_basis(H)
        rank = basis.rank
        mu_u = coherence(basis.U)
        mu_v = coherence(basis.V)
    dG = generator_output(t.generator, t.params, xi=xi_a) - generator_output(t.generator, t.params, xi=xi_b)
    full = np.linalg.norm(dG)
    if full < DEGENERATE_NORM:
        return PairStats(rank, mu_u, mu_v, math.nan, True)
    return PairStats(rank, mu_u, mu_v, float(np.linalg.norm(_masked(dG, pattern)) / full), False)


# ---------------------------------------------------------------- rank assumption

@dataclass
class Assumption1Result:
    max_rank: int
    ranks: list[int]
    rank_cap: int
    structural_ok: bool


def assumption1_check(t: TrainedGenerator, d: int, trials: int, s: float | None = None,
                      seed: int = 0, pairs=None) -> Assumption1Result:
    """Numeric ranks of ``H(z(xi) - z(xi'), d)`` over random latent pairs in ``B(s)``.

    ``pairs`` may supply explicit ``(xi, xi')`` tuples instead of random draws.
    """
    if trials < 1 and pairs is None:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    radius = _radius(t, s)
    shape = _latent_shape(t)
    if pairs is None:
        pairs = [(sample_latent(shape, radius, rng), sample_latent(shape, radius, rng))
                 for _ in range(trials)]
    N = t.generator.N
    cap = min(N * N, d * d)
    ranks = []
    for xa, xb in pairs:
        H = hankel_difference(t, xa, xb, d)
        ranks.append(0 if np.linalg.norm(H) < DEGENERATE_NORM else subspace_basis(H).rank)
    return Assumption1Result(max(ranks), ranks, cap, all(r <= cap for r in ranks))


# ---------------------------------------------------------------- lemma 1

@dataclass
class Lemma1Result:
    ratios: list[float]
    min_ratio: float
    skipped: int
    c1: list[float]
    pass_fraction: float

    @property
    def empirical_c(self) -> float:
        return self.min_ratio


def lemma1_verify(t: TrainedGenerator, mask_or_scene, trials: int, s: float | None = None,
                  seed: int = 0, d: int | None = None, beta: float = BETA) -> Lemma1Result:
    """Masked-to-full energy ratio of generator differences in the ``xi`` slot.

    ``zeta`` and ``eta`` keep their stored values.  With ``d`` given, each
    pair also yields a ``c1`` (from its Hankel difference), and
    ``pass_fraction`` is the share of pairs with ``c1 > 0`` whose ratio
    reaches ``c1``; it is NaN when no pair has a positive ``c1``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pattern = _pattern(mask_or_scene)
    rng = np.random.default_rng(seed)
    radius = _radius(t, s)
    shape = _latent_shape(t)
    N = t.generator.N
    n = int(pattern.sum())
    ratios, c1s, skipped, hits, eligible = [], [], 0, 0, 0
    for _ in range(trials):
        xa = sample_latent(shape, radius, rng)
        xb = sample_latent(shape, radius, rng)
        if d is None:
            dG = generator_output(t.generator, t.params, xi=xa) - generator_output(t.generator, t.params, xi=xb)
            full = np.linalg.norm(dG)
            if full < DEGENERATE_NORM:
                skipped += 1
                continue
            ratios.append(float(np.linalg.norm(_masked(dG, pattern)) / full))
            continue
        st = _pair_stats(t, xa, xb, d, pattern)
        if st.degenerate:
            skipped += 1
            continue
        ratios.append(st.ratio)
        if st.rank > 0:
            c1 = c1_bound(n, st.mu0, st.rank, N * N, d * d, beta).c1
            c1s.append(c1)
            if c1 > 0:
                eligible += 1
                hits += st.ratio >= c1
    min_ratio = min(ratios) if ratios else math.nan
    frac = hits / eligible if eligible else math.nan
    return Lemma1Result(ratios, min_ratio, skipped, c1s, frac)


# ---------------------------------------------------------------- theorem bound

def bound_rhs(x_tilde_err: float, masked_err: float, noise_norm: float, c: float) -> float:
    """``||X~ - X*|| + (2 ||M(X~ - X*)|| + 4 ||n||) / c``; infinite when ``c <= 0``."""
    if not c > 0:
        return math.inf
    return x_tilde_err + (2.0 * masked_err + 4.0 * noise_norm) / c


@dataclass
class LatentSearch:
    xi: np.ndarray
    distance: float
    evaluations: int


def project_latent(t: TrainedGenerator, target: np.ndarray, radius: float, restarts: int = 64,
                   refine: int = 256, seed: int = 0) -> LatentSearch:
    """Approximate ``argmin_{xi in B(radius)} ||G(xi, zeta, eta) - target||``.

    Multi-start over ``restarts`` random draws plus the generator's own
    ``xi``, then a coordinate search (``refine`` probes, each trying
    ``+/- step`` on one latent entry, halving the step after a pass with no
    improvement).  The result is an upper estimate of the true minimum.
    """
    rng = np.random.default_rng(seed)
    shape = _latent_shape(t)

    def dist(xi):
        return float(np.linalg.norm(generator_output(t.generator, t.params, xi=xi) - target))

    best = np.array(t.generator.latents["xi"], dtype=np.float64)
    best_d = dist(best)
    evals = 1
    for _ in range(restarts):
        cand = sample_latent(shape, radius, rng)
        dc = dist(cand)
        evals += 1
        if dc < best_d:
            best, best_d = cand, dc
    step = 0.25 * radius / math.sqrt(best.size)
    order = rng.permutation(best.size)
    improved_in_pass, pos, probes = False, 0, 0
    while probes < refine and step > 1e-9 * radius:
        j = np.unravel_index(order[pos], shape)
        for sign in (1.0, -1.0):
            cand = best.copy()
            cand[j] += sign * step
            nrm = np.linalg.norm(cand)
            if nrm > radius:
                cand *= radius / nrm
            dc = dist(cand)
            evals += 1
            if dc < best_d:
                best, best_d, improved_in_pass = cand, dc, True
                break
        probes += 1
        pos += 1
        if pos == best.size:
            pos = 0
            if not improved_in_pass:
                step *= 0.5
            improved_in_pass = False
    return LatentSearch(best, best_d, evals)


@dataclass
class TrialVerdict:
    rank: int
    mu_U: float
    mu_V: float
    c1: float
    sampling_ok: bool
    ratio: float
    status: str  # "pass", "fail" or "vacuous"


@dataclass
class TheoryReport:
    r_observed: int
    mu_U: float
    mu_V: float
    mu0: float
    c1: float
    n_required: float
    n_actual: int
    lemma1_pass_fraction: float
    theorem_bound_pass_fraction: float
    c2_estimate: float
    trials: int
    seed: int
    sampling_ok: bool = False
    constant: str = "c1"
    lhs: float = math.nan
    rhs: float = math.nan
    rhs_empirical: float = math.nan
    empirical_bound_holds: bool = False
    x_tilde_error: float = math.nan
    masked_x_tilde_error: float = math.nan
    noise_norm: float = math.nan
    vacuous: bool = True
    per_trial: list[TrialVerdict] = field(default_factory=list)

    def to_text(self) -> str:
        d = asdict(self)
        d.pop("per_trial")
        return "".join(f"{k}={_fmt(v)}\n" for k, v in d.items())

    def trials_csv(self) -> str:
        lines = ["trial,rank,mu_U,mu_V,c1,sampling_ok,ratio,status"]
        for i, v in enumerate(self.per_trial):
            lines.append(f"{i},{v.rank},{_fmt(v.mu_U)},{_fmt(v.mu_V)},{_fmt(v.c1)},"
                         f"{_fmt(v.sampling_ok)},{_fmt(v.ratio)},{v.status}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def theorem_bound_verify(t: TrainedGenerator, scene, trials: int, d: int = 4,
                         beta: float = BETA, s: float | None = None, seed: int = 0,
                         restarts: int = 64, refine: int = 256) -> TheoryReport:
    """Evaluate both sides of the recovery bound for one trained generator.

    ``trials`` latent pairs estimate the constants: each pair gives a Hankel
    rank, coherences, ``c1`` and a masked-energy ratio.  The configuration
    constant uses the largest observed ``mu0`` and rank.

    * Entrywise random masks use ``c1``; a trial whose ``c1 <= 0`` or whose
      sample-size condition fails is ``vacuous``.
    * Deterministic masks (all other kinds) use the empirical constant, the
      minimum sampled ratio.

    ``X* = [x*, x*]`` is the full k-space stacked once per branch, and the
    noise term uses the matching stack of the measurement noise.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    gen = t.generator
    pattern = _pattern(scene)
    N = gen.N
    n = int(pattern.sum())
    radius = _radius(t, s)
    rng = np.random.default_rng(seed)
    shape = _latent_shape(t)

    G = generator_output(gen, t.params)
    nb = G.shape[0]
    X_star = np.stack([scene.kspace_full] * nb)
    noise = np.zeros_like(scene.kspace_full) if scene.noise is None else scene.noise
    noise_norm = float(np.linalg.norm(np.stack([noise] * nb)))
    lhs = float(np.linalg.norm(G - X_star))

    search = project_latent(t, X_star, radius, restarts, refine, seed + 1)
    X_tilde = generator_output(gen, t.params, xi=search.xi)
    xt_err = float(np.linalg.norm(X_tilde - X_star))
    m_err = float(np.linalg.norm(_masked(X_tilde - X_star, pattern)))

    stats = [_pair_stats(t, sample_latent(shape, radius, rng), sample_latent(shape, radius, rng),
                         d, pattern) for _ in range(trials)]
    valid = [st for st in stats if not st.degenerate and st.rank > 0]
    ratios = [st.ratio for st in stats if not st.degenerate]
    c_emp = min(ratios) if ratios else math.nan
    rhs_emp = bound_rhs(xt_err, m_err, noise_norm, c_emp) if ratios else math.inf

    if valid:
        r_obs = max(st.rank for st in valid)
        mu_u = max(st.mu_U for st in valid)
        mu_v = max(st.mu_V for st in valid)
        cfg = c1_bound(n, max(mu_u, mu_v), r_obs, N * N, d * d, beta)
    else:
        r_obs, mu_u, mu_v = 0, math.nan, math.nan
        cfg = Bound(math.nan, False, math.nan)

    entrywise = getattr(getattr(scene, "mask", None), "kind", "") == "entrywise"
    verdicts, hits, counted, l1_hits, l1_elig = [], 0, 0, 0, 0
    for st in stats:
        if st.degenerate or st.rank == 0:
            verdicts.append(TrialVerdict(st.rank, st.mu_U, st.mu_V, math.nan, False, st.ratio, "vacuous"))
            continue
        b = c1_bound(n, st.mu0, st.rank, N * N, d * d, beta)
        if b.c1 > 0:
            l1_elig += 1
            l1_hits += st.ratio >= b.c1
        c = b.c1 if entrywise else c_emp
        qualifies = (b.sampling_ok and b.c1 > 0) if entrywise else c_emp > 0
        if not qualifies:
            status = "vacuous"
        else:
            counted += 1
            ok = lhs <= bound_rhs(xt_err, m_err, noise_norm, c)
            hits += ok
            status = "pass" if ok else "fail"
        verdicts.append(TrialVerdict(st.rank, st.mu_U, st.mu_V, b.c1, b.sampling_ok, st.ratio, status))

    c_cfg = cfg.c1 if entrywise else c_emp
    rhs = bound_rhs(xt_err, m_err, noise_norm, c_cfg) if c_cfg == c_cfg else math.inf
    report = TheoryReport(
        r_observed=r_obs, mu_U=mu_u, mu_V=mu_v,
        mu0=max(mu_u, mu_v) if valid else math.nan,
        c1=cfg.c1, n_required=cfg.n_required, n_actual=n,
        lemma1_pass_fraction=l1_hits / l1_elig if l1_elig else math.nan,
        theorem_bound_pass_fraction=hits / counted if counted else math.nan,
        c2_estimate=c_emp, trials=trials, seed=seed,
        sampling_ok=cfg.sampling_ok, constant="c1" if entrywise else "c2_empirical",
        lhs=lhs, rhs=rhs, rhs_empirical=rhs_emp,
        empirical_bound_holds=bool(lhs <= rhs_emp),
        x_tilde_error=xt_err, masked_x_tilde_error=m_err, noise_norm=noise_norm,
        vacuous=counted == 0, per_trial=verdicts)
    log.info("bound check: lhs %.4g rhs %.4g (empirical c %.4g -> %.4g), %d/%d qualifying trials",
             lhs, rhs, c_emp, rhs_emp, counted, trials)
    return report
