"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Graph` is a static tape of op records.  It is built once, then
evaluated with :meth:`Graph.forward` and differentiated with
:meth:`Graph.backward` as many times as needed; parameter leaves read their
current values from a :class:`ParamSet` on every forward pass.

Complex quantities are carried as real tensors whose leading channel axis
holds interleaved ``(re, im)`` pairs: channel ``2k`` is the real part and
channel ``2k + 1`` the imaginary part of complex channel ``k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NORM_EPS = 1e-6


class GraphError(RuntimeError):
    """Raised for malformed graphs, shape mismatches and misuse of the tape."""


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    name: str | None = None
    value: np.ndarray | None = None
    cache: object = None

    def label(self, idx: int) -> str:
        tag = f" '{self.name}'" if self.name else ""
        return f"node {idx} ({self.op}{tag})"


# complex pair helpers -------------------------------------------------------

def to_complex(x: np.ndarray) -> np.ndarray:
    """Interleaved (re, im) channel pairs -> complex array with half the channels."""
    if x.shape[0] % 2:
        raise GraphError(f"complex tensor needs an even leading axis, got {x.shape}")
    return x[0::2] + 1j * x[1::2]


def from_complex(z: np.ndarray) -> np.ndarray:
    out = np.empty((2 * z.shape[0],) + z.shape[1:], dtype=np.float64)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def _require_even(x: np.ndarray, what: str) -> None:
    if x.ndim < 1 or x.shape[0] % 2:
        raise GraphError(f"{what}: odd leading channel size {x.shape} for a complex op")


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise GraphError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# kernel embedding for circular convolution ----------------------------------

def _embed_kernel(k: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Place a (..., kh, kw) kernel into (..., H, W) with its centre at lag zero."""
    kh, kw = k.shape[-2:]
    H, W = size
    rows = (np.arange(kh) - kh // 2) % H
    cols = (np.arange(kw) - kw // 2) % W
    out = np.zeros(k.shape[:-2] + (H, W), dtype=k.dtype)
    out[..., rows[:, None], cols[None, :]] = k
    return out


def _extract_kernel(full: np.ndarray, kshape: tuple[int, int]) -> np.ndarray:
    kh, kw = kshape
    H, W = full.shape[-2:]
    rows = (np.arange(kh) - kh // 2) % H
    cols = (np.arange(kw) - kw // 2) % W
    return full[..., rows[:, None], cols[None, :]]


def _check_kernel_fits(x: np.ndarray, k: np.ndarray, what: str) -> None:
    if k.shape[-2] > x.shape[-2] or k.shape[-1] > x.shape[-1]:
        raise GraphError(f"{what}: kernel {k.shape[-2:]} larger than signal {x.shape[-2:]}")


# op implementations ---------------------------------------------------------
# each op: fwd(inputs, attrs) -> (value, cache); bwd(g, inputs, value, cache, attrs) -> grads

def _relu_fwd(ins, attrs):
    (x,) = ins
    return np.maximum(x, 0.0), None


def _relu_bwd(g, ins, out, cache, attrs):
    return (g * (ins[0] > 0),)


def _add_fwd(ins, attrs):
    x, y = ins
    _same_shape(x, y, "add")
    return x + y, None


def _add_bwd(g, ins, out, cache, attrs):
    return g, g


def _scale_fwd(ins, attrs):
    return attrs["a"] * ins[0], None


def _scale_bwd(g, ins, out, cache, attrs):
    return (attrs["a"] * g,)


def _sum_fwd(ins, attrs):
    return np.array([ins[0].sum()]), None


def _sum_bwd(g, ins, out, cache, attrs):
    return (np.full(ins[0].shape, g[0]),)


def _sum_sq_fwd(ins, attrs):
    x = ins[0]
    return np.array([np.vdot(x, x).real]), None


def _sum_sq_bwd(g, ins, out, cache, attrs):
    return (2.0 * g[0] * ins[0],)


def _masked_residual_fwd(ins, attrs):
    (x,) = ins
    mask, target = attrs["mask"], attrs["target"]
    _same_shape(x, mask, "masked_residual mask")
    _same_shape(x, target, "masked_residual target")
    return mask * (x - target), None


def _masked_residual_bwd(g, ins, out, cache, attrs):
    return (attrs["mask"] * g,)


def _mul_const_fwd(ins, attrs):
    (x,) = ins
    _same_shape(x, attrs["w"], "mul_const")
    return attrs["w"] * x, None


def _mul_const_bwd(g, ins, out, cache, attrs):
    return (attrs["w"] * g,)


def _crop_fwd(ins, attrs):
    (x,) = ins
    h, w = attrs["shape"]
    H, W = x.shape[-2:]
    if h > H or w > W:
        raise GraphError(f"crop: target {(h, w)} exceeds input {(H, W)}")
    r0, c0 = (H - h) // 2, (W - w) // 2
    return x[..., r0:r0 + h, c0:c0 + w].copy(), (r0, c0)


def _crop_bwd(g, ins, out, cache, attrs):
    r0, c0 = cache
    h, w = attrs["shape"]
    gx = np.zeros_like(ins[0])
    gx[..., r0:r0 + h, c0:c0 + w] = g
    return (gx,)


def _upsample_matrix(n: int) -> np.ndarray:
    # half-pixel centres, edge clamped (align_corners=False)
    m = np.zeros((2 * n, n))
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    rows = np.arange(2 * n)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def _upsample_fwd(ins, attrs):
    (x,) = ins
    uh = _upsample_matrix(x.shape[-2])
    uw = _upsample_matrix(x.shape[-1])
    return np.einsum("ij,cjk,lk->cil", uh, x, uw, optimize=True), (uh, uw)


def _upsample_bwd(g, ins, out, cache, attrs):
    uh, uw = cache
    return (np.einsum("ij,cil,lk->cjk", uh, g, uw, optimize=True),)


def _channel_norm_fwd(ins, attrs):
    x, gain, bias = ins
    if x.ndim != 3:
        raise GraphError(f"channel_norm expects (C, H, W), got {x.shape}")
    C = x.shape[0]
    if gain.shape != (C,) or bias.shape != (C,):
        raise GraphError(f"channel_norm: gain/bias must have shape ({C},)")
    mean = x.mean(axis=(1, 2), keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + NORM_EPS)
    xhat = xc * inv
    return gain[:, None, None] * xhat + bias[:, None, None], (xhat, inv)


def _channel_norm_bwd(g, ins, out, cache, attrs):
    x, gain, bias = ins
    xhat, inv = cache
    ggain = (g * xhat).sum(axis=(1, 2))
    gbias = g.sum(axis=(1, 2))
    gxhat = g * gain[:, None, None]
    gx = inv * (gxhat - gxhat.mean(axis=(1, 2), keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=(1, 2), keepdims=True))
    return gx, ggain, gbias


def _conv_same_fwd(ins, attrs):
    x, k = ins
    if x.ndim != 3 or k.ndim != 4:
        raise GraphError(f"conv2d_same_zero expects x (C,H,W), k (O,C,kh,kw); got {x.shape}, {k.shape}")
    cout, cin, kh, kw = k.shape
    if cin != x.shape[0]:
        raise GraphError(f"conv2d_same_zero: kernel expects {cin} input channels, got {x.shape[0]}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise GraphError("conv2d_same_zero: kernel dims must be odd")
    H, W = x.shape[1:]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (C, H, W, kh, kw)
    cols = win.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, H * W)
    out = (k.reshape(cout, -1) @ cols).reshape(cout, H, W)
    return out, cols


def _conv_same_bwd(g, ins, out, cache, attrs):
    x, k = ins
    cols = cache
    cout, cin, kh, kw = k.shape
    H, W = x.shape[1:]
    g2 = g.reshape(cout, H * W)
    gk = (g2 @ cols.T).reshape(k.shape)
    gcols = (k.reshape(cout, -1).T @ g2).reshape(cin, kh, kw, H, W)
    ph, pw = kh // 2, kw // 2
    gxp = np.zeros((cin, H + 2 * ph, W + 2 * pw))
    for a in range(kh):
        for b in range(kw):
            gxp[:, a:a + H, b:b + W] += gcols[:, a, b]
    return gxp[:, ph:ph + H, pw:pw + W], gk


def _conv_circ_fwd(ins, attrs):
    x, k = ins
    if x.ndim != 3 or k.ndim != 4 or k.shape[1] != x.shape[0]:
        raise GraphError(f"conv2d_circular expects x (C,H,W), k (O,C,kh,kw); got {x.shape}, {k.shape}")
    _check_kernel_fits(x, k, "conv2d_circular")
    X = np.fft.fft2(x)
    K = np.fft.fft2(_embed_kernel(k, x.shape[1:]))
    out = np.fft.ifft2(np.einsum("ocij,cij->oij", K, X)).real
    return out, (X, K)


def _conv_circ_bwd(g, ins, out, cache, attrs):
    x, k = ins
    X, K = cache
    G = np.fft.fft2(g)
    gx = np.fft.ifft2(np.einsum("ocij,oij->cij", K.conj(), G)).real
    gkf = np.fft.ifft2(G[:, None] * X.conj()[None]).real
    return gx, _extract_kernel(gkf, k.shape[-2:])


def _complex_mul_fwd(ins, attrs):
    x, y = ins
    _require_even(x, "complex_mul")
    _require_even(y, "complex_mul")
    _same_shape(x, y, "complex_mul")
    return from_complex(to_complex(x) * to_complex(y)), None


def _complex_mul_bwd(g, ins, out, cache, attrs):
    x, y = ins
    G = to_complex(g)
    return from_complex(G * to_complex(y).conj()), from_complex(G * to_complex(x).conj())


def _conj_fwd(ins, attrs):
    (x,) = ins
    _require_even(x, "complex_conj")
    out = x.copy()
    out[1::2] *= -1.0
    return out, None


def _conj_bwd(g, ins, out, cache, attrs):
    gx = g.copy()
    gx[1::2] *= -1.0
    return (gx,)


def _reflect(a: np.ndarray) -> np.ndarray:
    # a[..., (-i) mod H, (-j) mod W]
    return np.roll(a[..., ::-1, ::-1], 1, axis=(-2, -1))


def _conj_reflect_fwd(ins, attrs):
    (x,) = ins
    _require_even(x, "conj_reflect")
    out = _reflect(x).copy()
    out[1::2] *= -1.0
    return out, None


def _conj_reflect_bwd(g, ins, out, cache, attrs):
    # the map is a real orthogonal involution, so it is its own adjoint
    gx = _reflect(g).copy()
    gx[1::2] *= -1.0
    return (gx,)


def _complex_conv_fwd(ins, attrs):
    x, k = ins
    _require_even(x, "complex_conv_circular")
    _require_even(k, "complex_conv_circular")
    if x.ndim != 3 or k.ndim != 3:
        raise GraphError(f"complex_conv_circular expects 3-D tensors, got {x.shape}, {k.shape}")
    P, Q = x.shape[0] // 2, k.shape[0] // 2
    if not (P == Q or P == 1 or Q == 1):
        raise GraphError(f"complex_conv_circular: channel counts {P} and {Q} do not pair")
    _check_kernel_fits(x, k, "complex_conv_circular")
    X = np.fft.fft2(to_complex(x))
    K = np.fft.fft2(_embed_kernel(to_complex(k), x.shape[1:]))
    return from_complex(np.fft.ifft2(X * K)), (X, K)


def _complex_conv_bwd(g, ins, out, cache, attrs):
    x, k = ins
    X, K = cache
    G = np.fft.fft2(to_complex(g))
    gx = np.fft.ifft2(G * K.conj())
    gk = np.fft.ifft2(G * X.conj())
    if gx.shape[0] != X.shape[0]:
        gx = gx.sum(axis=0, keepdims=True)
    if gk.shape[0] != K.shape[0]:
        gk = gk.sum(axis=0, keepdims=True)
    return from_complex(gx), from_complex(_extract_kernel(gk, k.shape[-2:]))


OPS: dict[str, tuple[Callable, Callable]] = {
    "relu": (_relu_fwd, _relu_bwd),
    "add": (_add_fwd, _add_bwd),
    "scale": (_scale_fwd, _scale_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "sum_sq": (_sum_sq_fwd, _sum_sq_bwd),
    "masked_residual": (_masked_residual_fwd, _masked_residual_bwd),
    "mul_const": (_mul_const_fwd, _mul_const_bwd),
    "crop": (_crop_fwd, _crop_bwd),
    "upsample2x_bilinear": (_upsample_fwd, _upsample_bwd),
    "channel_norm": (_channel_norm_fwd, _channel_norm_bwd),
    "conv2d_same_zero": (_conv_same_fwd, _conv_same_bwd),
    "conv2d_circular": (_conv_circ_fwd, _conv_circ_bwd),
    "complex_mul": (_complex_mul_fwd, _complex_mul_bwd),
    "complex_conj": (_conj_fwd, _conj_bwd),
    "conj_reflect": (_conj_reflect_fwd, _conj_reflect_bwd),
    "complex_conv_circular": (_complex_conv_fwd, _complex_conv_bwd),
}


class Graph:
    """Static computation tape.

    Op constructors return integer node ids.  The last node created is the
    root unless :meth:`set_root` says otherwise.

    >>> g = Graph()
    >>> x = g.const(np.array([-1.0, 2.0]))
    >>> _ = g.relu(x)
    >>> g.forward()
    array([0., 2.])
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}
        self.root: int | None = None
        self._evaluated = False

    # leaves
    def param(self, name: str) -> int:
        if name in self.params:
            return self.params[name]
        idx = self._push(Node("param", (), name=name))
        self.params[name] = idx
        return idx

    def const(self, value, name: str | None = None) -> int:
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise GraphError("const: non-finite entries")
        value.setflags(write=False)
        return self._push(Node("const", (), name=name, value=value))

    # op constructors
    def relu(self, x: int) -> int:
        return self._op("relu", x)

    def add(self, x: int, y: int) -> int:
        return self._op("add", x, y)

    def scale(self, x: int, a: float) -> int:
        return self._op("scale", x, a=float(a))

    def sum(self, x: int) -> int:
        return self._op("sum", x)

    def sum_sq(self, x: int) -> int:
        return self._op("sum_sq", x)

    def masked_residual(self, x: int, mask, target) -> int:
        return self._op("masked_residual", x,
                        mask=np.asarray(mask, dtype=np.float64),
                        target=np.asarray(target, dtype=np.float64))

    def mul_const(self, x: int, w) -> int:
        return self._op("mul_const", x, w=np.asarray(w, dtype=np.float64))

    def crop(self, x: int, shape: tuple[int, int]) -> int:
        return self._op("crop", x, shape=tuple(shape))

    def upsample2x_bilinear(self, x: int) -> int:
        return self._op("upsample2x_bilinear", x)

    def channel_norm(self, x: int, gain: int, bias: int) -> int:
        return self._op("channel_norm", x, gain, bias)

    def conv2d_same_zero(self, x: int, kernel: int) -> int:
        return self._op("conv2d_same_zero", x, kernel)

    def conv2d_circular(self, x: int, kernel: int) -> int:
        return self._op("conv2d_circular", x, kernel)

    def complex_mul(self, x: int, y: int) -> int:
        return self._op("complex_mul", x, y)

    def complex_conj(self, x: int) -> int:
        return self._op("complex_conj", x)

    def conj_reflect(self, x: int) -> int:
        return self._op("conj_reflect", x)

    def complex_conv_circular(self, x: int, kernel: int) -> int:
        return self._op("complex_conv_circular", x, kernel)

    def set_root(self, idx: int) -> None:
        self._check_id(idx)
        self.root = idx

    # evaluation
    def forward(self, params: "ParamSet | dict | None" = None) -> np.ndarray:
        values = params.params if isinstance(params, ParamSet) else (params or {})
        if self.root is None:
            raise GraphError("empty graph")
        for idx, node in enumerate(self.nodes):
            if node.op == "const":
                continue
            if node.op == "param":
                if node.name not in values:
                    raise GraphError(f"{node.label(idx)}: no value supplied")
                node.value = np.asarray(values[node.name], dtype=np.float64)
                continue
            fwd = OPS[node.op][0]
            ins = [self.nodes[i].value for i in node.inputs]
            try:
                node.value, node.cache = fwd(ins, node.attrs)
            except GraphError as exc:
                raise GraphError(f"{node.label(idx)}: {exc}") from None
        self._evaluated = True
        return self.nodes[self.root].value

    def backward(self, seed=None) -> dict[str, np.ndarray]:
        """Gradient of ``<seed, root>`` with respect to every parameter leaf."""
        if not self._evaluated:
            raise GraphError("backward called before forward")
        root_val = self.nodes[self.root].value
        seed = np.ones_like(root_val) if seed is None else np.asarray(seed, dtype=np.float64)
        if seed.shape != root_val.shape:
            raise GraphError(f"seed shape {seed.shape} != root shape {root_val.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[self.root] = seed
        for idx in range(self.root, -1, -1):
            g = grads[idx]
            node = self.nodes[idx]
            if g is None or node.op in ("param", "const"):
                continue
            bwd = OPS[node.op][1]
            ins = [self.nodes[i].value for i in node.inputs]
            for src, gi in zip(node.inputs, bwd(g, ins, node.value, node.cache, node.attrs)):
                grads[src] = gi if grads[src] is None else grads[src] + gi
        out = {}
        for name, idx in self.params.items():
            g = grads[idx]
            out[name] = np.zeros_like(self.nodes[idx].value) if g is None else g
        return out

    def value(self, idx: int) -> np.ndarray:
        self._check_id(idx)
        return self.nodes[idx].value

    # internals
    def _op(self, op: str, *args, **attrs) -> int:
        inputs = tuple(a for a in args if isinstance(a, (int, np.integer)))
        for a in inputs:
            self._check_id(a)
        return self._push(Node(op, tuple(int(a) for a in inputs), attrs=attrs))

    def _push(self, node: Node) -> int:
        self.nodes.append(node)
        self.root = len(self.nodes) - 1
        self._evaluated = False
        return self.root

    def _check_id(self, idx: int) -> None:
        if not 0 <= idx < len(self.nodes):
            raise GraphError(f"unknown node id {idx}")


@dataclass
class ParamSet:
    """Named trainable tensors plus ADAM moment accumulators."""

    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self) -> None:
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in self.params.items()}
        for k, v in self.params.items():
            self.adam_m.setdefault(k, np.zeros_like(v))
            self.adam_v.setdefault(k, np.zeros_like(v))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self.params:
            raise KeyError(f"unknown parameter {name!r}")
        self.params[name] = np.asarray(value, dtype=np.float64)

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.params.items()},
                        {k: v.copy() for k, v in self.adam_m.items()},
                        {k: v.copy() for k, v in self.adam_v.items()},
                        self.step_count)

    def n_values(self) -> int:
        return sum(v.size for v in self.params.values())


def adam_step(params: ParamSet, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamSet:
    """One bias-corrected ADAM update; returns ``params`` with fresh arrays."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if set(grads) != set(params.params):
        raise ValueError("gradient keys do not match parameters")
    for name, g in grads.items():
        if g.shape != params.params[name].shape:
            raise ValueError(f"gradient shape mismatch for '{name}'")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
    t = params.step_count + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = beta1 * params.adam_m[name] + (1.0 - beta1) * g
        v = beta2 * params.adam_v[name] + (1.0 - beta2) * g * g
        params.adam_m[name] = m
        params.adam_v[name] = v
        params.params[name] = params.params[name] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    params.step_count = t
    return params
