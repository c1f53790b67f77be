from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kunn.generator import TrainedGenerator, generator_forward, make_generator
from kunn.phantom import SamplingMask, full_mask, mask_entrywise
from kunn.theory import (assumption1_check, bound_rhs, c1_bound, coherence, lemma1_verify,
                         lemma2_check, project_latent, subspace_basis, theorem_bound_verify)

SMALL = dict(z_arch=(3, 8), csm_arch=(3, 8, 3), phase_arch=(3, 8, 3), latent_channels=4)


def untrained(N=16, nc=2, kind="full", seed=0):
    g = make_generator(N, nc, kind=kind, seed=seed, **SMALL)
    return TrainedGenerator(g, g.init_params(), [], 0)


def empty_mask(N):
    return SamplingMask("entrywise", N, np.zeros((N, N), bool), np.array([], int), 0, math.inf)


# ---------------------------------------------------------------- coherence

def test_standard_basis_is_maximally_coherent():
    for n, r in ((8, 1), (16, 4), (64, 5)):
        assert coherence(np.eye(n)[:, :r]) == n / r


def test_dft_columns_have_unit_coherence():
    n = 64
    F = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n) / np.sqrt(n)
    for cols in ([0], [1, 5, 9], list(range(0, 64, 8))):
        assert abs(coherence(F[:, cols]) - 1.0) < 1e-10


def test_coherence_matches_projector_loop():
    rng = np.random.default_rng(0)
    n, r = 64, 4
    U, _ = np.linalg.qr(rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r)))
    P = U @ U.conj().T
    worst = 0.0
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1
        worst = max(worst, np.linalg.norm(P @ e) ** 2)
    assert abs(coherence(U) - n / r * worst) < 1e-12
    assert 1 - 1e-12 <= coherence(U) <= n / r


def test_coherence_rejects_non_orthonormal():
    with pytest.raises(ValueError, match="orthonormal"):
        coherence(np.ones((4, 2)))
    with pytest.raises(ValueError):
        coherence(np.eye(4)[:, :2], n=5)


def test_subspace_basis_is_orthonormal():
    rng = np.random.default_rng(1)
    H = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 9))
    b = subspace_basis(H)
    assert b.rank == 3
    assert np.max(np.abs(b.U.conj().T @ b.U - np.eye(3))) < 1e-10
    assert np.max(np.abs(b.V.conj().T @ b.V - np.eye(3))) < 1e-10


# ---------------------------------------------------------------- c1 and lemma 2

def test_c1_reference_value():
    b = c1_bound(64, 1.0, 2, 64, 8, 1.1)
    expected = math.sqrt(16 * 64 * 1.0 * 2 * 72 * 1.1 * math.log(8) / (3 * 64 * 64)) - 1.0
    assert b.c1 == pytest.approx(expected, rel=1e-14)
    assert b.c1 == pytest.approx(4.239143856602, abs=1e-11)
    assert b.n_required == pytest.approx(5.34 * 2 * 72 * 1.1 * math.log(8))
    assert not b.sampling_ok


def test_c1_zero_samples_and_beta_homogeneity():
    assert c1_bound(0, 1.0, 2, 64, 8).c1 == 0.0
    a = c1_bound(100, 1.3, 3, 256, 16, 1.1)
    b = c1_bound(100, 1.3, 3, 256, 16, 2.2)
    assert (b.c1 + 100 / 256) / (a.c1 + 100 / 256) == pytest.approx(math.sqrt(2), rel=1e-14)


def test_c1_requires_log_positive():
    with pytest.raises(ValueError):
        c1_bound(10, 1.0, 1, 64, 1)


def test_c1_positive_and_sampling_condition_never_coexist():
    # sampling_ok needs n > 5.34 K while c1 > 0 needs n < (16/3) K
    rng = np.random.default_rng(2)
    for _ in range(2000):
        N = int(rng.integers(4, 5000))
        d = int(rng.integers(2, 64))
        n = int(rng.integers(0, N + 1))
        b = c1_bound(n, rng.uniform(1, 10), int(rng.integers(1, 20)), N, d)
        assert not (b.sampling_ok and b.c1 > 0)


def test_lemma2_examples():
    assert lemma2_check(1, 0, 1) == 0
    assert lemma2_check(1, 2, 3) == 2
    with pytest.raises(ValueError):
        lemma2_check(0, 1, 2)


@settings(max_examples=1000, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(0, 1e6), st.floats(0, 1e6))
def test_lemma2_holds_for_admissible_triples(a, b, slack):
    c = a + b + slack
    gamma = lemma2_check(a, b, c)
    assert gamma >= 0 and b <= gamma * a + 1e-12 * c


# ---------------------------------------------------------------- assumption 1

def test_identical_latents_give_rank_zero():
    t = untrained()
    xi = t.generator.latents["xi"]
    res = assumption1_check(t, 3, 0, pairs=[(xi, xi)])
    assert res.ranks == [0] and res.max_rank == 0


def test_rank_is_capped_and_shrinks_with_radius():
    t = untrained()
    ladder = [assumption1_check(t, 3, 5, s=s, seed=4).max_rank for s in (1.0, 0.1, 0.01)]
    assert all(a >= b for a, b in zip(ladder, ladder[1:]))
    res = assumption1_check(t, 3, 5, seed=4)
    assert res.structural_ok and res.rank_cap == 9


def test_constant_decoder_gives_rank_zero():
    t = untrained()
    for k in list(t.params):
        if k.startswith("z.conv"):
            t.params[k] = np.zeros_like(t.params[k])
    assert assumption1_check(t, 3, 4, seed=1).max_rank == 0


# ---------------------------------------------------------------- lemma 1

def test_lemma1_full_and_empty_masks():
    t = untrained()
    full = lemma1_verify(t, full_mask(16), 10, seed=3)
    assert full.ratios == [1.0] * 10
    empty = lemma1_verify(t, empty_mask(16), 10, seed=3)
    assert empty.ratios == [0.0] * 10


def test_lemma1_entrywise_ratio_is_positive():
    t = untrained()
    res = lemma1_verify(t, mask_entrywise(16, 205, seed=0), 20, seed=5, d=3)
    assert 0 < res.min_ratio < 1
    assert len(res.c1) == 20
    assert math.isnan(res.pass_fraction) or 0 <= res.pass_fraction <= 1


def test_lemma1_skips_degenerate_pairs():
    t = untrained()
    for k in list(t.params):
        if k.startswith("z."):
            t.params[k] = np.zeros_like(t.params[k])
    res = lemma1_verify(t, full_mask(16), 4, seed=0)
    assert res.skipped == 4 and math.isnan(res.min_ratio)


# ---------------------------------------------------------------- theorem bound

def test_bound_rhs_linear_and_monotone():
    base = bound_rhs(1.0, 0.5, 0.2, 0.3)
    doubled = bound_rhs(1.0, 0.5, 0.4, 0.3)
    assert doubled - base == pytest.approx(4 * 0.2 / 0.3, rel=1e-14)
    assert bound_rhs(1.0, 0.5, 0.2, 0.6) <= base
    assert bound_rhs(1.0, 0.5, 0.2, 0.0) == math.inf
    assert bound_rhs(1.0, 0.5, 0.2, -1.0) == math.inf


def test_projection_recovers_own_latent():
    t = untrained(kind="sensitivity_only")
    b1, _ = generator_forward(t.generator, t.params)
    res = project_latent(t, b1[None], 1.0, restarts=4, refine=8)
    assert res.distance == 0.0
    assert 1 + 4 <= res.evaluations <= 1 + 4 + 2 * 8


def realizable_scene(t, mask):
    b1, _ = generator_forward(t.generator, t.params)
    return SimpleNamespace(mask=mask, kspace_full=b1, noise=np.zeros_like(b1))


def test_realizable_signal_gives_zero_bound():
    t = untrained(kind="sensitivity_only")
    rep = theorem_bound_verify(t, realizable_scene(t, mask_entrywise(16, 128, seed=1)), 4,
                               d=3, restarts=2, refine=4)
    assert rep.lhs == 0.0 and rep.x_tilde_error == 0.0 and rep.masked_x_tilde_error == 0.0
    assert rep.empirical_bound_holds and rep.rhs_empirical == 0.0
    assert rep.constant == "c1"


def test_entrywise_trials_with_impossible_constants_are_vacuous():
    t = untrained()
    sc = realizable_scene(t, mask_entrywise(16, 200, seed=2))
    rep = theorem_bound_verify(t, sc, 5, d=3, restarts=2, refine=4)
    assert rep.vacuous and math.isnan(rep.theorem_bound_pass_fraction)
    assert all(v.status == "vacuous" for v in rep.per_trial)
    assert rep.n_actual == 200
    assert rep.mu0 == max(rep.mu_U, rep.mu_V)
    assert rep.n_required == pytest.approx(
        5.34 * rep.mu0 * rep.r_observed * (256 + 9) * 1.1 * math.log(9))


def test_deterministic_mask_uses_empirical_constant():
    from kunn.phantom import mask_random
    t = untrained()
    sc = realizable_scene(t, mask_random(16, 2, 4, seed=0))
    rep = theorem_bound_verify(t, sc, 5, d=3, restarts=2, refine=4)
    assert rep.constant == "c2_empirical"
    assert 0 < rep.c2_estimate <= 1
    assert rep.theorem_bound_pass_fraction == 1.0
    text = rep.to_text()
    assert "c2_estimate=" in text and "vacuous=false" in text
    assert rep.trials_csv().count("\n") == 6
