"""Untrained-network k-space reconstruction for parallel MRI, at desk scale.

Modules
-------
autodiff   reverse-mode differentiation over numpy arrays plus ADAM
kspace     orthonormal FFTs, circular convolution, Hankel lifting, SVD
phantom    synthetic scenes: phantoms, coil maps, phase, masks, noise
generator  the tripled ConvDecoder generator, its loss, training, reconstruction
theory     coherence, rank and sampling-bound checks
metrics    NMSE, PSNR, SSIM
io         KTEN tensor files and key=value configs
pipeline   config-driven glue used by the CLI
estimator  scikit-learn style wrapper
cli        the ``kunn`` command
"""
from __future__ import annotations

from .generator import (TrainedGenerator, TripledGenerator, ablation_variant, generator_forward,
                        loss, make_generator, reconstruct, train)
from .io import ExperimentConfig, read_kten, write_kten
from .metrics import nmse, psnr, ssim
from .phantom import AcquisitionScene, SamplingMask, make_mask, simulate_scene

__version__ = "0.1.0"

__all__ = [
    "AcquisitionScene", "ExperimentConfig", "SamplingMask", "TrainedGenerator", "TripledGenerator",
    "ablation_variant", "generator_forward", "loss", "make_generator", "make_mask", "nmse", "psnr",
    "read_kten", "reconstruct", "simulate_scene", "ssim", "train", "write_kten",
]
