"""scikit-learn style wrappers around the restoration models and degradations.

The estimators follow the usual conventions: hyperparameters are stored
verbatim by ``__init__``, learned state lives in attributes ending in ``_``,
and ``fit`` returns ``self``. Images are planar ``(C, H, W)`` arrays in [0, 1];
a batch is a 4-D array or a list of such images.

>>> from gcfs.dataio import synthetic_pairs
>>> pairs = synthetic_pairs("deblur", 4, 16, seed=0)
>>> X = [p.input for p in pairs]; y = [p.target for p in pairs]
>>> est = GCResNetDeblurrer(channels=8, gc_features=4, gc_blocks=1, total_steps=2).fit(X, y)
>>> est.predict(X).shape
(4, 3, 16, 16)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataio import DegradedPair, bicubic_downsample, make_blur_pair
from .gcfeat import GCStackConfig
from .metrics import psnr
from .models import ModelConfig, describe, param_count
from .trainer import Checkpoint, TrainConfig, load_checkpoint, predict, save_checkpoint, train
from .validation import check_images, check_pairs

__all__ = ["BlurDegrader", "BicubicDownsampler", "GCResNetDeblurrer", "GCEDSRUpscaler"]


class BlurDegrader(TransformerMixin, BaseEstimator):
    """Blur (and optionally add Gaussian noise to) each image.

    Parameters
    ----------
    kernel : {"gaussian", "box", "delta"}
    param : float or int
        Gaussian sigma or odd box width.
    noise_sigma : float
    seed : int
        Image ``i`` of a batch uses noise seed ``seed ^ i``.
    """

    def __init__(self, kernel="gaussian", param=1.5, noise_sigma=0.0, seed=0):
        self.kernel = kernel
        self.param = param
        self.noise_sigma = noise_sigma
        self.seed = seed

    def fit(self, X, y=None):
        check_images(X)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        imgs = check_images(X)
        return np.stack([make_blur_pair(img, self.kernel, self.param, self.noise_sigma, self.seed ^ i).input
                         for i, img in enumerate(imgs)])


class BicubicDownsampler(TransformerMixin, BaseEstimator):
    """Antialiased Catmull-Rom downsampling by an integer factor."""

    def __init__(self, scale=2):
        self.scale = scale

    def fit(self, X, y=None):
        check_images(X)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        return np.stack([np.clip(bicubic_downsample(img, self.scale), 0.0, 1.0) for img in check_images(X)])


class _RestorationEstimator(BaseEstimator):
    _task = "deblur"

    def _model_config(self) -> ModelConfig:  # pragma: no cover - overridden
        raise NotImplementedError

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, total_steps=self.total_steps, batch=self.batch,
                           loss=self.loss, seed=self.seed, eval_every=self.eval_every, patch=self.patch)

    def _gc_config(self) -> GCStackConfig:
        return GCStackConfig(f=self.gc_features, blocks=self.gc_blocks, degree=self.degree,
                             rho=self.rho, graph_seed=self.graph_seed, lift_project=self.gc_blocks > 0)

    def _scale(self) -> int:
        return 1

    def fit(self, X, y, X_val=None, y_val=None):
        """Train from scratch on pairs ``(X[i], y[i])``.

        ``X_val``/``y_val`` enable periodic validation PSNR in ``log_``.
        """
        cfg = self._model_config()
        xs, ys = check_pairs(X, y, self._scale())
        pairs = [DegradedPair(a, b) for a, b in zip(xs, ys)]
        val = None
        if X_val is not None:
            vx, vy = check_pairs(X_val, y_val, self._scale())
            val = [DegradedPair(a, b) for a, b in zip(vx, vy)]
        self.checkpoint_, self.log_ = train(cfg, pairs, self._train_config(), val)
        self.model_config_ = cfg
        self.n_features_in_ = 1
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        imgs = check_images(X)
        outs = [predict(self.model_config_, self.checkpoint_.tensors(), img[None])[0][0] for img in imgs]
        return np.clip(np.stack(outs), 0.0, 1.0)

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of the predictions against ``y``."""
        pred = self.predict(X)
        ys = check_images(y, "y")
        return float(np.mean([psnr(p, t) for p, t in zip(pred, ys)]))

    @property
    def n_parameters_(self) -> int:
        check_is_fitted(self, "checkpoint_")
        return param_count(self.model_config_)

    def summary(self) -> str:
        return describe(self._model_config())

    def save(self, path) -> None:
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(path, self.checkpoint_)

    @classmethod
    def from_checkpoint(cls, source):
        """Rebuild a fitted estimator from a checkpoint path or object."""
        ckpt = source if isinstance(source, Checkpoint) else load_checkpoint(source)
        mc, tc = ckpt.model_cfg, ckpt.train_cfg
        if mc.task != cls._task:
            raise ValueError(f"checkpoint holds a {mc.task!r} model, expected {cls._task!r}")
        kwargs = dict(channels=mc.channels, gc_features=mc.gc.f, gc_blocks=mc.gc.blocks,
                      degree=mc.gc.degree, rho=mc.gc.rho, graph_seed=mc.gc.graph_seed,
                      lr0=tc.lr0, total_steps=tc.total_steps, batch=tc.batch, loss=tc.loss,
                      seed=tc.seed, eval_every=tc.eval_every, patch=tc.patch)
        if cls._task == "deblur":
            kwargs.update(enc_blocks=mc.enc_blocks, dec_blocks=mc.dec_blocks, global_skip=mc.global_skip)
        else:
            kwargs.update(sr_blocks=mc.sr_blocks, scale=mc.scale)
        est = cls(**kwargs)
        est.checkpoint_, est.log_, est.model_config_, est.n_features_in_ = ckpt, [], mc, 1
        return est


class GCResNetDeblurrer(_RestorationEstimator):
    """Encoder-decoder deblurring network with a graph-convolution bottleneck.

    Parameters mirror :class:`~gcfs.models.ModelConfig`, the graph stack and
    :class:`~gcfs.trainer.TrainConfig`; ``gc_blocks=0`` removes the stack.
    """

    _task = "deblur"

    def __init__(self, channels=32, enc_blocks=3, dec_blocks=3, gc_features=8, gc_blocks=2,
                 degree=4, rho=0.9, graph_seed=0, global_skip=True, lr0=1e-3, total_steps=1500,
                 batch=4, loss="mse", seed=7, eval_every=250, patch=None):
        self.channels = channels
        self.enc_blocks = enc_blocks
        self.dec_blocks = dec_blocks
        self.gc_features = gc_features
        self.gc_blocks = gc_blocks
        self.degree = degree
        self.rho = rho
        self.graph_seed = graph_seed
        self.global_skip = global_skip
        self.lr0 = lr0
        self.total_steps = total_steps
        self.batch = batch
        self.loss = loss
        self.seed = seed
        self.eval_every = eval_every
        self.patch = patch

    def _model_config(self) -> ModelConfig:
        return ModelConfig(task="deblur", channels=self.channels, enc_blocks=self.enc_blocks,
                           dec_blocks=self.dec_blocks, gc=self._gc_config(), global_skip=self.global_skip)


class GCEDSRUpscaler(_RestorationEstimator):
    """EDSR-style super-resolution network with a graph-convolution stage."""

    _task = "sr"

    def __init__(self, scale=2, channels=32, sr_blocks=8, gc_features=8, gc_blocks=2, degree=4,
                 rho=0.9, graph_seed=0, lr0=1e-3, total_steps=1500, batch=4, loss="mse", seed=7,
                 eval_every=250, patch=None):
        self.scale = scale
        self.channels = channels
        self.sr_blocks = sr_blocks
        self.gc_features = gc_features
        self.gc_blocks = gc_blocks
        self.degree = degree
        self.rho = rho
        self.graph_seed = graph_seed
        self.lr0 = lr0
        self.total_steps = total_steps
        self.batch = batch
        self.loss = loss
        self.seed = seed
        self.eval_every = eval_every
        self.patch = patch

    def _scale(self) -> int:
        return self.scale

    def _model_config(self) -> ModelConfig:
        return ModelConfig(task="sr", channels=self.channels, sr_blocks=self.sr_blocks,
                           gc=self._gc_config(), scale=self.scale)
