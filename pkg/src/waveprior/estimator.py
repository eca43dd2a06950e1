"""sklearn-style wrapper around :func:`fit_prior`.

The prior is transductive: ``fit`` learns a generator for one corrupted
clip and ``transform`` returns that clip's restoration.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .architectures import PRESETS, get_preset
from .corruption import MaskInterval
from .trainer import TrainConfig, fit_prior


def check_waveform(x, name: str = "X", min_samples: int = 1) -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array; a (1, n) row is flattened."""
    arr = np.asarray(x)
    if arr.ndim == 2 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D waveform, got shape {arr.shape}")
    arr = check_array(arr.reshape(1, -1), dtype=np.float64, input_name=name)[0]
    if arr.size < min_samples:
        raise ValueError(f"{name} has {arr.size} samples, need at least {min_samples}")
    return arr


def check_mask(mask, length: int) -> MaskInterval | None:
    if mask is None or isinstance(mask, MaskInterval):
        if mask is not None:
            mask.boolean(length)
        return mask
    start, size = (int(v) for v in mask)
    m = MaskInterval(start, size)
    m.boolean(length)
    return m


class DeepPriorRestorer(BaseEstimator, TransformerMixin):
    """Restore one waveform by fitting an untrained generator to it.

    Parameters
    ----------
    preset : str
        Architecture name from ``PRESETS``.
    epochs, lr, input_noise_std, resample_noise, perturbation_std, metric_every, seed
        Passed to :class:`TrainConfig`. Resampling is ignored when a mask
        is given.
    base_channels : int or None
        Overrides the preset's first-layer width.
    """

    def __init__(
        self,
        preset="conv-lstm",
        epochs=3000,
        lr=1e-4,
        input_noise_std=0.1,
        resample_noise=False,
        perturbation_std=None,
        metric_every=10,
        seed=0,
        base_channels=None,
    ):
        self.preset = preset
        self.epochs = epochs
        self.lr = lr
        self.input_noise_std = input_noise_std
        self.resample_noise = resample_noise
        self.perturbation_std = perturbation_std
        self.metric_every = metric_every
        self.seed = seed
        self.base_channels = base_channels

    def _config(self, inpainting: bool) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            input_noise_std=self.input_noise_std,
            resample_noise_each_epoch=self.resample_noise and not inpainting,
            perturbation_std=self.perturbation_std,
            metric_every=self.metric_every,
            checkpoint_epochs=(),
            seed=self.seed,
        )

    def fit(self, X, y=None, reference=None, mask=None):
        """Fit to corrupted waveform ``X``; ``mask`` is a MaskInterval or (start, length)."""
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; available presets: {', '.join(PRESETS)}")
        x = check_waveform(X)
        ref = None if reference is None else check_waveform(reference, "reference")
        if ref is not None and ref.size != x.size:
            raise ValueError(f"reference has {ref.size} samples, X has {x.size}")
        m = check_mask(mask, x.size)
        overrides = {} if self.base_channels is None else {"base_channels": self.base_channels}
        variant = get_preset(self.preset, **overrides)
        result = fit_prior(variant, x, self._config(m is not None), ref, m)
        self.result_ = result
        self.trace_ = result.trace
        self.output_ = result.best_output if result.best_output is not None else result.final_output
        self.n_samples_ = x.size
        return self

    def transform(self, X):
        """Restoration of the fitted clip; ``X`` must have the fitted length."""
        check_is_fitted(self, "output_")
        x = check_waveform(X)
        if x.size != self.n_samples_:
            raise ValueError(f"X has {x.size} samples; the prior was fitted to {self.n_samples_}")
        return self.output_.copy()
