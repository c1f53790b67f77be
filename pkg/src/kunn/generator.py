"""Tripled untrained k-space generator.

Three ConvDecoder-style networks map fixed random latents to

* ``z_hat``   the image spectrum (full k-space size),
* ``csm_hat`` compact coil-sensitivity spectra (one small kernel per coil),
* ``e_hat``   the compact spectrum of ``exp(2j*phi)``,

and are combined in k-space into two branches per coil::

    branch1_i = z_hat (*) csm_hat_i
    branch2_i = conj_reflect(z_hat) (*) e_hat (*) csm_hat_i

Both branches are fitted to the same measurements ``y`` on the sampling set.
Tensors inside the graph are channel-first with interleaved (re, im) pairs;
the public functions return coil-last complex arrays ``(N, N, Nc)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Graph, ParamSet, adam_step, from_complex, to_complex
from .kspace import ifft2, ssos
from .phantom import AcquisitionScene

log = logging.getLogger(__name__)

MODULES = ("z", "csm", "phase")
ABLATIONS = ("full", "sensitivity_only", "phase_only")


@dataclass(frozen=True)
class DecoderConfig:
    n_layers: int
    n_channels: int
    out_shape: tuple[int, int]
    out_channels: int = 2
    input_shape: tuple[int, int] = (4, 4)
    latent_channels: int = 32
    kernel_size: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.out_shape) < 1 or min(self.input_shape) < 1:
            raise ValueError("decoder shapes must be positive")
        if self.n_layers < 2 or self.n_channels < 1 or self.out_channels < 1:
            raise ValueError("decoder needs >= 2 layers and positive channel counts")
        if self.n_upsamples() > self.n_layers - 1:
            raise ValueError(f"{self.n_layers} layers cannot reach {self.out_shape} "
                             f"from {self.input_shape} by 2x upsampling")

    def n_upsamples(self) -> int:
        ratio = max(self.out_shape[0] / self.input_shape[0], self.out_shape[1] / self.input_shape[1])
        return max(0, math.ceil(math.log2(ratio))) if ratio > 1 else 0


def init_decoder_params(cfg: DecoderConfig, prefix: str) -> dict[str, np.ndarray]:
    """Uniform(-a, a) weights with ``a = sqrt(1/fan_in)``; unit gains, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    cin = cfg.latent_channels
    k = cfg.kernel_size
    for i in range(cfg.n_layers - 1):
        a = math.sqrt(1.0 / (cin * k * k))
        params[f"{prefix}.conv{i}"] = rng.uniform(-a, a, size=(cfg.n_channels, cin, k, k))
        params[f"{prefix}.gain{i}"] = np.ones(cfg.n_channels)
        params[f"{prefix}.bias{i}"] = np.zeros(cfg.n_channels)
        cin = cfg.n_channels
    a = math.sqrt(1.0 / cin)
    params[f"{prefix}.out"] = rng.uniform(-a, a, size=(cfg.out_channels, cin, 1, 1))
    return params


def build_decoder(graph: Graph, cfg: DecoderConfig, prefix: str, latent: int) -> int:
    """Append decoder ops to ``graph``; returns the output node id."""
    x = latent
    size = np.array(cfg.input_shape)
    ups = cfg.n_upsamples()
    for i in range(cfg.n_layers - 1):
        if i < ups:
            x = graph.upsample2x_bilinear(x)
            size = size * 2
        x = graph.conv2d_same_zero(x, graph.param(f"{prefix}.conv{i}"))
        x = graph.relu(x)
        x = graph.channel_norm(x, graph.param(f"{prefix}.gain{i}"), graph.param(f"{prefix}.bias{i}"))
    x = graph.conv2d_same_zero(x, graph.param(f"{prefix}.out"))
    if tuple(size) != tuple(cfg.out_shape):
        x = graph.crop(x, cfg.out_shape)
    return x


def sample_latent(shape, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw rescaled into the closed ball of the given radius."""
    v = rng.uniform(-1.0, 1.0, size=shape)
    n = np.linalg.norm(v)
    return v * (radius / n) if n > radius else v


def radial_weighting(N: int) -> np.ndarray:
    """``w(k) = 1 + |k| / k_max`` in FFT order."""
    f = np.fft.fftfreq(N, d=1.0 / N)
    r = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)
    return 1.0 + r / r.max()


@dataclass
class TripledGenerator:
    dec_z: DecoderConfig
    dec_csm: DecoderConfig
    dec_phase: DecoderConfig
    n_coils: int
    latents: dict[str, np.ndarray]
    enabled: frozenset = frozenset(MODULES)
    weighting: np.ndarray | None = None
    output_scale: float = 1.0
    latent_radius: float = 1.0

    def __post_init__(self) -> None:
        self.enabled = frozenset(self.enabled)
        if "z" not in self.enabled:
            raise ValueError("module 'z' is always required")
        if not self.enabled <= set(MODULES):
            raise ValueError(f"unknown modules {set(self.enabled) - set(MODULES)}")
        if "csm" not in self.enabled and self.n_coils != 1:
            raise ValueError("disabling the sensitivity module requires a single coil")
        if "csm" in self.enabled and self.dec_csm.out_channels != 2 * self.n_coils:
            raise ValueError("csm decoder must emit 2 * n_coils channels")

    @property
    def N(self) -> int:
        return self.dec_z.out_shape[0]

    def init_params(self) -> ParamSet:
        params = init_decoder_params(self.dec_z, "z")
        if "csm" in self.enabled:
            params.update(init_decoder_params(self.dec_csm, "csm"))
        if "phase" in self.enabled:
            params.update(init_decoder_params(self.dec_phase, "phase"))
        return ParamSet(params)

    def with_latents(self, **latents) -> "TripledGenerator":
        new = dict(self.latents)
        new.update(latents)
        return replace(self, latents=new)


def make_generator(N: int, n_coils: int, kind: str = "full",
                   z_arch=(6, 64), csm_arch=(4, 32, 9), phase_arch=(4, 32, 9),
                   latent_channels: int = 32, latent_radius: float = 1.0, seed: int = 0,
                   weighting: bool = False, output_scale: float = 1.0) -> TripledGenerator:
    """Desk-scale tripled generator; ``kind`` selects the ablation variant."""
    if kind not in ABLATIONS:
        raise ValueError(f"unknown ablation {kind!r}; expected one of {ABLATIONS}")
    if kind == "phase_only" and n_coils != 1:
        raise ValueError("phase_only requires a single coil")
    enabled = {"full": MODULES, "sensitivity_only": ("z", "csm"), "phase_only": ("z", "phase")}[kind]
    dz = DecoderConfig(z_arch[0], z_arch[1], (N, N), 2, latent_channels=latent_channels, seed=seed)
    dc = DecoderConfig(csm_arch[0], csm_arch[1], (csm_arch[2],) * 2, 2 * n_coils,
                       latent_channels=latent_channels, seed=seed + 1)
    dp = DecoderConfig(phase_arch[0], phase_arch[1], (phase_arch[2],) * 2, 2,
                       latent_channels=latent_channels, seed=seed + 2)
    rng = np.random.default_rng(seed + 1000)
    shape = (latent_channels,) + dz.input_shape
    latents = {name: sample_latent(shape, latent_radius, rng) for name in ("xi", "zeta", "eta")}
    w = radial_weighting(N) if weighting else None
    return TripledGenerator(dz, dc, dp, n_coils, latents, frozenset(enabled), w,
                            output_scale, latent_radius)


def ablation_variant(kind: str, N: int, n_coils: int, **kwargs) -> TripledGenerator:
    return make_generator(N, n_coils, kind=kind, **kwargs)


# graph assembly -----------------------------------------------------------------

@dataclass
class GeneratorGraph:
    graph: Graph
    ids: dict[str, int] = field(default_factory=dict)


def _checker(shape) -> np.ndarray:
    i, j = np.indices(shape[:2])
    c = 1.0 - 2.0 * ((i + j) % 2)
    return c.reshape(shape[:2] + (1,) * (len(shape) - 2))


def to_frame(k: np.ndarray) -> np.ndarray:
    """Natural-order k-space -> centred, checkerboard-demodulated frame used by the networks.

    An object centred in the image has a smooth spectrum in this frame.  The
    map is unitary, commutes with ``conj_reflect`` and turns ``a (*) b`` into
    ``to_frame(a) (*) modulate_kernel(b)``.
    """
    k = np.fft.fftshift(np.asarray(k), axes=(0, 1))
    return k * _checker(k.shape)


def from_frame(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k)
    return np.fft.ifftshift(k * _checker(k.shape), axes=(0, 1))


def modulate_kernel(h: np.ndarray) -> np.ndarray:
    """Multiply a centred (kh, kw, ...) kernel by ``(-1)**(lag1 + lag2)``; self-inverse."""
    h = np.asarray(h)
    kh, kw = h.shape[:2]
    l1 = np.arange(kh) - kh // 2
    l2 = np.arange(kw) - kw // 2
    c = 1.0 - 2.0 * ((l1[:, None] + l2[None, :]) % 2)
    return h * c.reshape((kh, kw) + (1,) * (h.ndim - 2))


def _coil_first(k: np.ndarray) -> np.ndarray:
    """(N, N, Nc) complex -> (2Nc, N, N) interleaved real."""
    return from_complex(np.moveaxis(np.asarray(k, dtype=np.complex128), -1, 0))


def _coil_last(x: np.ndarray) -> np.ndarray:
    return np.moveaxis(to_complex(x), 0, -1)


def build_graph(gen: TripledGenerator, y=None, mask=None) -> GeneratorGraph:
    """Generator graph; with ``y`` and ``mask`` the root is the masked fitting loss."""
    g = Graph()
    ids = {}
    xi = g.const(gen.latents["xi"], name="xi")
    z = build_decoder(g, gen.dec_z, "z", xi)
    if gen.output_scale != 1.0:
        z = g.scale(z, gen.output_scale)
    ids["z"] = z
    if "csm" in gen.enabled:
        csm = build_decoder(g, gen.dec_csm, "csm", g.const(gen.latents["zeta"], name="zeta"))
    else:
        csm = g.const(np.array([[[1.0]], [[0.0]]]), name="delta")
    ids["csm"] = csm
    ids["branch1"] = g.complex_conv_circular(z, csm)
    if "phase" in gen.enabled:
        e = build_decoder(g, gen.dec_phase, "phase", g.const(gen.latents["eta"], name="eta"))
        ids["phase"] = e
        zr = g.conj_reflect(z)
        ids["branch2"] = g.complex_conv_circular(g.complex_conv_circular(zr, e), csm)
    if y is not None:
        target = _coil_first(to_frame(y))
        w = _residual_weights(gen, mask, target.shape)
        loss = g.sum_sq(g.masked_residual(ids["branch1"], w, target))
        if "branch2" in ids:
            loss = g.add(loss, g.sum_sq(g.masked_residual(ids["branch2"], w, target)))
        ids["loss"] = loss
        g.set_root(loss)
    else:
        g.set_root(ids["branch1"])
    return GeneratorGraph(g, ids)


def _residual_weights(gen: TripledGenerator, mask, shape) -> np.ndarray:
    pattern = mask.pattern if hasattr(mask, "pattern") else np.asarray(mask, dtype=bool)
    w = pattern.astype(np.float64)
    if gen.weighting is not None:
        w = w * gen.weighting
    w = np.fft.fftshift(w)
    return np.broadcast_to(w, shape).copy()


def generator_forward(gen: TripledGenerator, params: ParamSet | dict):
    """Returns ``(branch1, branch2)`` as ``(N, N, Nc)`` complex arrays.

    ``branch2`` is ``None`` when the phase module is disabled.
    """
    gg = build_graph(gen)
    gg.graph.forward(params)
    b1 = from_frame(_coil_last(gg.graph.value(gg.ids["branch1"])))
    if "branch2" not in gg.ids:
        return b1, None
    gg.graph.set_root(gg.ids["branch2"])
    gg.graph.forward(params)
    return b1, from_frame(_coil_last(gg.graph.value(gg.ids["branch2"])))


def decoder_outputs(gen: TripledGenerator, params) -> dict[str, np.ndarray]:
    """Complex outputs of the enabled decoders: ``z`` (N, N), ``csm`` (k, k, Nc), ``phase`` (k, k)."""
    gg = build_graph(gen)
    root = gg.ids.get("branch2", gg.ids["branch1"])
    gg.graph.set_root(root)
    gg.graph.forward(params)
    out = {"z": from_frame(to_complex(gg.graph.value(gg.ids["z"]))[0]),
           "csm": modulate_kernel(_coil_last(gg.graph.value(gg.ids["csm"])))}
    if "phase" in gg.ids:
        out["phase"] = modulate_kernel(to_complex(gg.graph.value(gg.ids["phase"]))[0])
    return out


def decode_z(gen: TripledGenerator, params, xi: np.ndarray) -> np.ndarray:
    """``z_hat`` (N, N) in natural k-space order for an arbitrary latent ``xi``."""
    g = Graph()
    z = build_decoder(g, gen.dec_z, "z", g.const(np.asarray(xi, dtype=np.float64), name="xi"))
    if gen.output_scale != 1.0:
        z = g.scale(z, gen.output_scale)
    g.set_root(z)
    params = params.params if isinstance(params, ParamSet) else params
    g.forward({k: v for k, v in params.items() if k.startswith("z.")})
    return from_frame(to_complex(g.value(z))[0])


def generator_output(gen: TripledGenerator, params, **latents) -> np.ndarray:
    """Stacked generator output ``[branch1, branch2]`` of shape (B, N, N, Nc).

    ``B`` is 2 with the phase module and 1 without.  Keyword arguments
    override the stored latents.
    """
    g = gen.with_latents(**latents) if latents else gen
    b1, b2 = generator_forward(g, params)
    return np.stack([b1] if b2 is None else [b1, b2])


def loss(gen: TripledGenerator, params, scene: AcquisitionScene) -> float:
    gg = build_graph(gen, scene.y, scene.mask)
    return float(gg.graph.forward(params)[0])


def loss_and_grad(gen: TripledGenerator, params, scene: AcquisitionScene):
    gg = build_graph(gen, scene.y, scene.mask)
    val = float(gg.graph.forward(params)[0])
    return val, gg.graph.backward()


# training ---------------------------------------------------------------------

@dataclass
class TrainedGenerator:
    generator: TripledGenerator
    params: ParamSet
    loss_history: list[float]
    iterations: int


def data_scale(y: np.ndarray, mask) -> float:
    """RMS magnitude of the measured samples; used to set the generator output scale."""
    pattern = mask.pattern if hasattr(mask, "pattern") else np.asarray(mask, dtype=bool)
    vals = np.asarray(y)[pattern]
    return float(np.sqrt(np.mean(np.abs(vals) ** 2))) if vals.size else 1.0


def train(gen: TripledGenerator, scene: AcquisitionScene, iters: int = 1000, lr: float = 1e-4,
          params: ParamSet | None = None, callback=None) -> TrainedGenerator:
    """ADAM on all enabled decoder parameters jointly; latents stay fixed."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    params = gen.init_params() if params is None else params
    gg = build_graph(gen, scene.y, scene.mask)
    history = []
    for it in range(iters):
        val = float(gg.graph.forward(params)[0])
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        history.append(val)
        grads = gg.graph.backward()
        adam_step(params, grads, lr)
        if callback is not None:
            callback(it, val)
        if it % 100 == 0:
            log.debug("iter %d loss %.6e", it, val)
    return TrainedGenerator(gen, params, history, iters)


def reconstruct(trained: TrainedGenerator, scene: AcquisitionScene, dc: bool = True):
    """Generator k-space (branch 1) with optional hard data consistency, plus its SSoS image."""
    b1, _ = generator_forward(trained.generator, trained.params)
    k = np.where(scene.mask.pattern[:, :, None], scene.y, b1) if dc else b1
    img = ssos(ifft2(k, axes=(0, 1)), coil_axis=-1)
    return k, img
