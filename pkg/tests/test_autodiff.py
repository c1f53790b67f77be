from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import OP_CASES, case_attrs, op_gradient_error
from kunn.autodiff import Graph, GraphError, ParamSet, adam_step, from_complex, to_complex


def run(graph_fn):
    g = Graph()
    out = graph_fn(g)
    g.set_root(out)
    return g.forward({})


# ---------------------------------------------------------------- forward examples

def test_relu_and_add_examples():
    np.testing.assert_array_equal(run(lambda g: g.relu(g.const([-1.0, 2.0]))), [0, 2])
    np.testing.assert_array_equal(run(lambda g: g.add(g.const([1.0, 1.0]), g.const([2.0, 3.0]))), [3, 4])


def test_circular_conv_of_delta_places_kernel_at_delta():
    rng = np.random.default_rng(0)
    k = rng.standard_normal((1, 1, 3, 3))
    x = np.zeros((1, 4, 4))
    x[0, 2, 1] = 1.0
    out = run(lambda g: g.conv2d_circular(g.const(x), g.const(k)))[0]
    expected = np.zeros((4, 4))
    for a in range(3):
        for b in range(3):
            expected[(2 + a - 1) % 4, (1 + b - 1) % 4] = k[0, 0, a, b]
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_complex_mul_example():
    out = run(lambda g: g.complex_mul(g.const([1.0, 1.0]), g.const([1.0, -1.0])))
    np.testing.assert_allclose(out, [2.0, 0.0])


def test_upsample_constant_image():
    out = run(lambda g: g.upsample2x_bilinear(g.const(np.full((2, 3, 5), 0.7))))
    assert out.shape == (2, 6, 10)
    np.testing.assert_allclose(out, 0.7, atol=1e-15)


def test_upsample_matches_half_pixel_interpolation():
    x = np.arange(4.0).reshape(1, 1, 4)
    out = run(lambda g: g.upsample2x_bilinear(g.const(np.repeat(x, 2, axis=1))))[0, 0]
    np.testing.assert_allclose(out, [0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3])


def test_channel_norm_statistics():
    rng = np.random.default_rng(1)
    x = 3.0 * rng.standard_normal((4, 16, 16)) + 2.0
    out = run(lambda g: g.channel_norm(g.const(x), g.const(np.ones(4)), g.const(np.zeros(4))))
    assert np.max(np.abs(out.mean(axis=(1, 2)))) < 1e-10
    assert np.max(np.abs(out.var(axis=(1, 2)) - 1.0)) < 1e-6


def test_same_zero_conv_against_loop():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 5, 6))
    k = rng.standard_normal((3, 2, 3, 3))
    out = run(lambda g: g.conv2d_same_zero(g.const(x), g.const(k)))
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 6))
    for o in range(3):
        for i in range(5):
            for j in range(6):
                ref[o, i, j] = np.sum(k[o] * xp[:, i:i + 3, j:j + 3])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_complex_conv_against_numpy_route():
    from kunn.kspace import circ_conv2
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 8, 8))
    k = rng.standard_normal((4, 3, 3))
    out = to_complex(run(lambda g: g.complex_conv_circular(g.const(x), g.const(k))))
    xc, kc = to_complex(x), to_complex(k)
    for c in range(2):
        np.testing.assert_allclose(out[c], circ_conv2(xc[c], kc[c]), atol=1e-12)


def test_complex_conv_broadcasts_single_channel():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 8, 8))
    k = rng.standard_normal((6, 3, 3))
    out = run(lambda g: g.complex_conv_circular(g.const(x), g.const(k)))
    assert out.shape == (6, 8, 8)


def test_conj_reflect_op_matches_kspace_helper():
    from kunn.kspace import conj_reflect
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 8, 8))
    out = to_complex(run(lambda g: g.conj_reflect(g.const(x))))[0]
    np.testing.assert_array_equal(out, conj_reflect(to_complex(x)[0]))


def test_complex_pair_round_trip():
    rng = np.random.default_rng(6)
    z = rng.standard_normal((3, 4, 4)) + 1j * rng.standard_normal((3, 4, 4))
    np.testing.assert_array_equal(to_complex(from_complex(z)), z)


# ---------------------------------------------------------------- errors

def test_shape_mismatch_names_node():
    g = Graph()
    g.add(g.const(np.zeros(3)), g.const(np.zeros(4)))
    with pytest.raises(GraphError, match=r"node 2 \(add"):
        g.forward()


def test_odd_channels_rejected_by_complex_ops():
    for op in ("complex_conj", "conj_reflect"):
        g = Graph()
        getattr(g, op)(g.const(np.zeros((3, 4, 4))))
        with pytest.raises(GraphError, match="odd"):
            g.forward()


def test_backward_before_forward_fails():
    g = Graph()
    g.sum(g.param("w"))
    with pytest.raises(GraphError, match="before forward"):
        g.backward()


def test_missing_parameter_value():
    g = Graph()
    g.relu(g.param("w"))
    with pytest.raises(GraphError, match="no value"):
        g.forward({})


# ---------------------------------------------------------------- backward

def test_sum_gradient_is_ones():
    g = Graph()
    g.sum(g.param("x"))
    g.forward({"x": np.zeros((2, 3, 4))})
    np.testing.assert_array_equal(g.backward()["x"], np.ones((2, 3, 4)))


def test_relu_subgradient():
    g = Graph()
    g.sum(g.relu(g.param("x")))
    g.forward({"x": np.array([-1.0, 2.0])})
    np.testing.assert_array_equal(g.backward()["x"], [0.0, 1.0])


@pytest.mark.parametrize("op", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(op):
    for seed in range(20):
        shapes, attrs = case_attrs(op, seed)
        assert op_gradient_error(op, shapes, attrs, seed) < 1e-4, (op, seed)


def test_broadcast_complex_conv_gradient():
    err = op_gradient_error("complex_conv_circular", [(2, 8, 8), (6, 3, 3)], {}, seed=3)
    assert err < 1e-4


def test_circular_conv_gradient_is_exact_bilinear():
    for seed in range(3):
        assert op_gradient_error("conv2d_circular", [(2, 8, 8), (2, 2, 3, 3)], {}, seed) < 1e-8


def test_masked_conv_stack_gradient():
    """Masked squared loss of a small random conv stack against central differences."""
    rng = np.random.default_rng(7)
    params = {"k1": rng.standard_normal((3, 2, 3, 3)) * 0.3, "k2": rng.standard_normal((2, 3, 3, 3)) * 0.3,
              "gain": rng.random(3) + 0.5, "bias": rng.standard_normal(3)}
    x = rng.standard_normal((2, 8, 8))
    mask = (rng.random((2, 8, 8)) < 0.6).astype(float)
    target = rng.standard_normal((2, 8, 8))
    g = Graph()
    h = g.conv2d_same_zero(g.const(x), g.param("k1"))
    h = g.channel_norm(g.relu(h), g.param("gain"), g.param("bias"))
    h = g.conv2d_circular(h, g.param("k2"))
    g.sum_sq(g.masked_residual(h, mask, target))
    g.forward(params)
    grads = g.backward()
    for name, v in params.items():
        fd = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            o = v[idx]
            v[idx] = o + 1e-5
            fp = g.forward(params)[0]
            v[idx] = o - 1e-5
            fm = g.forward(params)[0]
            v[idx] = o
            fd[idx] = (fp - fm) / 2e-5
        assert np.linalg.norm(grads[name] - fd) / np.linalg.norm(fd) < 1e-4, name


def test_forward_and_backward_are_deterministic():
    rng = np.random.default_rng(8)
    k = rng.standard_normal((2, 2, 3, 3))
    x = rng.standard_normal((2, 8, 8))

    def once():
        g = Graph()
        g.sum_sq(g.conv2d_circular(g.const(x), g.param("k")))
        v = g.forward({"k": k})
        return v, g.backward()["k"]

    (v1, g1), (v2, g2) = once(), once()
    assert v1.tobytes() == v2.tobytes() and g1.tobytes() == g2.tobytes()


# ---------------------------------------------------------------- ADAM

def test_adam_first_step_hand_values():
    p = ParamSet({"t": np.array([0.0])})
    adam_step(p, {"t": np.array([1.0])}, lr=0.1)
    assert p.adam_m["t"][0] == pytest.approx(0.1, abs=1e-15)
    assert p.adam_v["t"][0] == pytest.approx(0.001, abs=1e-15)
    assert p["t"][0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert p.step_count == 1


def test_adam_zero_gradient_keeps_parameters():
    p = ParamSet({"a": np.array([1.0, -2.0]), "b": np.ones((2, 2))})
    before = p.copy()
    adam_step(p, {"a": np.zeros(2), "b": np.zeros((2, 2))}, lr=0.5)
    for k in p:
        np.testing.assert_array_equal(p[k], before[k])
    assert p.step_count == 1


def test_adam_two_steps_match_recurrence():
    g = 0.3
    p = ParamSet({"t": np.array([0.5])})
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    theta, m, v = 0.5, 0.0, 0.0
    for t in (1, 2):
        adam_step(p, {"t": np.array([g])}, lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        assert abs(p.adam_m["t"][0] - m) < 1e-12
        assert abs(p.adam_v["t"][0] - v) < 1e-12
        assert abs(p["t"][0] - theta) < 1e-12


def test_adam_rejects_bad_gradients():
    p = ParamSet({"w": np.zeros(3)})
    with pytest.raises(FloatingPointError, match="'w'"):
        adam_step(p, {"w": np.array([0.0, np.nan, 1.0])}, 0.1)
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.zeros(4)}, 0.1)
    with pytest.raises(ValueError):
        adam_step(p, {"v": np.zeros(3)}, 0.1)
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.zeros(3)}, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_adam_step_sign_is_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(6)
    g[np.abs(g) < 1e-3] = 1e-3
    p1 = ParamSet({"w": np.zeros(6)})
    p2 = ParamSet({"w": np.zeros(6)})
    adam_step(p1, {"w": g}, 0.01)
    adam_step(p2, {"w": c * g}, 0.01)
    np.testing.assert_array_equal(np.sign(p1["w"]), np.sign(p2["w"]))
