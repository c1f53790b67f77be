"""Config-driven building blocks shared by the command line and the estimator."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .generator import (TrainedGenerator, data_scale, generator_forward, make_generator,
                        reconstruct, train)
from .io import ExperimentConfig
from .kspace import conj_reflect, ifft2
from .metrics import QualityScores, score
from .phantom import AcquisitionScene, SamplingMask, make_mask, simulate_scene

OUTPUT_FRACTION = 0.1
SCENE_FILES = ("z_true", "csm", "phase", "kspace_full", "mask", "y", "noise")


def scene_from_config(cfg: ExperimentConfig) -> AcquisitionScene:
    mask = make_mask(cfg.mask, cfg.n, cfg.r, cfg.acs, cfg.mask_seed, cfg.pf_fraction)
    return simulate_scene(cfg.n, cfg.coils, mask, cfg.sigma, cfg.seed, cfg.n_ellipses)


def save_scene(scene: AcquisitionScene, out_dir, cfg: ExperimentConfig | None = None) -> None:
    out = Path(out_dir)
    io.write_kten(out / "z_true.kten", scene.z_true)
    io.write_kten(out / "csm.kten", scene.csm)
    io.write_kten(out / "phase.kten", scene.phase_map)
    io.write_kten(out / "kspace_full.kten", scene.kspace_full)
    io.write_kten(out / "mask.kten", scene.mask.pattern.astype(np.float64))
    io.write_kten(out / "y.kten", scene.y)
    noise = np.zeros_like(scene.y) if scene.noise is None else scene.noise
    io.write_kten(out / "noise.kten", noise)
    meta = {"mask_kind": scene.mask.kind, "mask_r": float(scene.mask.R), "mask_acs": scene.mask.acs,
            "mask_lines": ",".join(str(int(v)) for v in scene.mask.omega) or "-",
            "noise_sigma": scene.noise_sigma, "seed": scene.seed}
    io.write_text(out / "meta.txt", io.metadata_text(meta))
    if cfg is not None:
        cfg.write(out / "config.txt")


def load_scene(scene_dir) -> AcquisitionScene:
    d = Path(scene_dir)
    missing = [f"{name}.kten" for name in SCENE_FILES if not (d / f"{name}.kten").is_file()]
    if missing or not (d / "meta.txt").is_file():
        raise FileNotFoundError(f"scene directory {d} lacks {', '.join(missing) or 'meta.txt'}")
    meta = io.read_metadata(d / "meta.txt")
    pattern = io.read_kten(d / "mask.kten") != 0
    lines = meta.get("mask_lines", "-")
    omega = [] if lines == "-" else [int(v) for v in lines.split(",")]
    mask = SamplingMask(meta.get("mask_kind", "entrywise"), pattern.shape[0], pattern, omega,
                        int(meta.get("mask_acs", 0)), float(meta.get("mask_r", 1.0)))
    return AcquisitionScene(
        z_true=io.read_kten(d / "z_true.kten"), csm=io.read_kten(d / "csm.kten"),
        phase_map=io.read_kten(d / "phase.kten"), kspace_full=io.read_kten(d / "kspace_full.kten"),
        mask=mask, noise_sigma=float(meta.get("noise_sigma", 0.0)), y=io.read_kten(d / "y.kten"),
        seed=int(meta.get("seed", 0)), noise=io.read_kten(d / "noise.kten"))


def generator_for(cfg: ExperimentConfig, scene: AcquisitionScene, kind: str | None = None):
    """Generator sized for ``scene`` with its output scale matched to the data."""
    kind = cfg.ablation if kind is None else kind
    if kind == "sensitivity_only" and scene.n_coils < 2:
        raise ValueError("sensitivity_only needs a multi-coil scene")
    kw = dict(kind=kind, z_arch=cfg.z_arch, csm_arch=cfg.csm_arch, phase_arch=cfg.phase_arch,
              latent_radius=cfg.latent_radius, seed=cfg.seed, weighting=cfg.weighting)
    gen = make_generator(scene.N, scene.n_coils, **kw)
    return make_generator(scene.N, scene.n_coils, output_scale=output_scale(gen, scene), **kw)


def output_scale(gen, scene: AcquisitionScene, fraction: float = OUTPUT_FRACTION) -> float:
    """Scale that makes the untrained branch-1 RMS ``fraction`` times the RMS of the samples."""
    b1, _ = generator_forward(gen, gen.init_params())
    init_rms = float(np.sqrt(np.mean(np.abs(b1) ** 2)))
    return fraction * data_scale(scene.y, scene.mask) / init_rms


@dataclass
class RunResult:
    trained: TrainedGenerator
    kspace: np.ndarray
    image: np.ndarray


def run_reconstruction(cfg: ExperimentConfig, scene: AcquisitionScene, kind: str | None = None,
                       callback=None) -> RunResult:
    gen = generator_for(cfg, scene, kind)
    trained = train(gen, scene, cfg.iters, cfg.lr, callback=callback)
    k, img = reconstruct(trained, scene, dc=cfg.dc)
    return RunResult(trained, k, img)


def write_reconstruction(res: RunResult, out_dir, cfg: ExperimentConfig) -> None:
    out = Path(out_dir)
    io.write_kten(out / "kspace_recon.kten", res.kspace)
    io.write_kten(out / "image_recon.kten", res.image)
    io.write_text(out / "loss_history.csv", io.loss_csv(res.trained.loss_history))
    cfg.write(out / "config.txt")


def conjugate_completion(scene: AcquisitionScene) -> np.ndarray:
    """Naive partial-Fourier baseline: unsampled entries filled from their mirrored samples."""
    y = scene.y
    mirror = conj_reflect(y, axes=(0, 1))
    p = scene.mask.pattern
    pm = conj_reflect(p.astype(np.complex128), axes=(0, 1)).real > 0.5
    fill = np.where((~p & pm)[:, :, None], mirror, 0)
    k = y + fill
    return np.sqrt(np.sum(np.abs(ifft2(k, axes=(0, 1))) ** 2, axis=-1))


def baseline_scores(scene: AcquisitionScene) -> dict[str, QualityScores]:
    ref = scene.reference_image()
    out = {"zero_filled": score(scene.zero_filled(), ref)}
    if scene.mask.kind == "partial_fourier":
        out["conjugate_completion"] = score(conjugate_completion(scene), ref)
    return out
