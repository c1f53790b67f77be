"""scikit-learn style wrapper around the tripled generator."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .generator import make_generator, reconstruct, train
from .pipeline import OUTPUT_FRACTION, output_scale
from .phantom import AcquisitionScene, SamplingMask


def check_kspace(y) -> np.ndarray:
    """Coerce measurements to a finite complex (N, N, Nc) array with power-of-two N."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[:, :, None]
    if y.ndim != 3 or y.shape[0] != y.shape[1]:
        raise ValueError(f"k-space must be (N, N) or (N, N, Nc), got shape {y.shape}")
    n = y.shape[0]
    if n < 4 or n & (n - 1):
        raise ValueError(f"N must be a power of two >= 4, got {n}")
    y = y.astype(np.complex128)
    if not np.all(np.isfinite(y)):
        raise ValueError("k-space contains non-finite values")
    return y


def check_mask(mask, N: int) -> SamplingMask:
    if isinstance(mask, SamplingMask):
        if mask.N != N:
            raise ValueError(f"mask is for N={mask.N}, data has N={N}")
        return mask
    pattern = np.asarray(mask)
    if pattern.shape != (N, N):
        raise ValueError(f"mask pattern must be ({N}, {N}), got {pattern.shape}")
    if pattern.dtype != bool and not np.isin(pattern, (0, 1)).all():
        raise ValueError("mask pattern must be boolean or 0/1")
    pattern = pattern.astype(bool)
    if not pattern.any():
        raise ValueError("mask samples nothing")
    return SamplingMask("entrywise", N, pattern)


class KUNNReconstructor(BaseEstimator, TransformerMixin):
    """Fit the untrained generator to one undersampled acquisition.

    ``fit(y, mask=...)`` trains on measurements ``y`` of shape (N, N, Nc)
    given a sampling pattern.  ``transform(y)`` returns the completed k-space
    and ``predict()`` the SSoS image; both refer to the fitted acquisition.

    Examples
    --------
    >>> est = KUNNReconstructor(iters=10, z_arch=(3, 8), csm_arch=(2, 8, 3),
    ...                         phase_arch=(2, 8, 3))            # doctest: +SKIP
    >>> image = est.fit(y, mask=pattern).predict()                # doctest: +SKIP
    """

    def __init__(self, ablation="full", iters=1000, lr=1e-4, z_arch=(6, 64), csm_arch=(4, 32, 9),
                 phase_arch=(4, 32, 9), latent_radius=1.0, weighting=False, dc=True,
                 output_fraction=OUTPUT_FRACTION, seed=0):
        self.ablation = ablation
        self.iters = iters
        self.lr = lr
        self.z_arch = z_arch
        self.csm_arch = csm_arch
        self.phase_arch = phase_arch
        self.latent_radius = latent_radius
        self.weighting = weighting
        self.dc = dc
        self.output_fraction = output_fraction
        self.seed = seed

    def _scene(self, y, mask: SamplingMask) -> AcquisitionScene:
        # only y and the mask are used by training; the rest are placeholders
        N, _, nc = y.shape
        return AcquisitionScene(np.zeros((N, N), complex), np.ones((N, N, nc), complex),
                                np.zeros((N, N)), y, mask, 0.0, mask.apply(y), self.seed)

    def fit(self, X, y=None, mask=None):
        """``X`` is the measured k-space; ``mask`` the sampling pattern (all-true if omitted)."""
        kspace = check_kspace(X)
        N, _, nc = kspace.shape
        mask = check_mask(np.ones((N, N), bool) if mask is None else mask, N)
        if int(self.iters) < 1:
            raise ValueError("iters must be >= 1")
        scene = self._scene(kspace, mask)
        kw = dict(kind=self.ablation, z_arch=tuple(self.z_arch), csm_arch=tuple(self.csm_arch),
                  phase_arch=tuple(self.phase_arch), latent_radius=self.latent_radius,
                  seed=self.seed, weighting=self.weighting)
        gen = make_generator(N, nc, **kw)
        gen = make_generator(N, nc, output_scale=output_scale(gen, scene, self.output_fraction), **kw)
        self.trained_ = train(gen, scene, int(self.iters), self.lr)
        self.scene_ = scene
        self.loss_history_ = np.asarray(self.trained_.loss_history)
        self.n_coils_ = nc
        return self

    def _check_fitted(self):
        if not hasattr(self, "trained_"):
            raise NotFittedError("KUNNReconstructor is not fitted yet; call fit first")

    def transform(self, X=None):
        """Completed k-space (N, N, Nc); ``X`` is ignored (the fit is per acquisition)."""
        self._check_fitted()
        return reconstruct(self.trained_, self.scene_, dc=self.dc)[0]

    def predict(self, X=None):
        self._check_fitted()
        return reconstruct(self.trained_, self.scene_, dc=self.dc)[1]
