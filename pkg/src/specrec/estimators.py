"""scikit-learn style wrappers around the linear and learned recovery routes."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .maxl import Objective, PatchData, TrainConfig, adapt_test_time, meta_train, pretrain
from .metrics import psnr
from .spectral import DEFAULT_RIDGE, projection_operator, system_matrix
from .synth import crop_patches
from .tinynet.net import ABLATIONS, NetConfig, init_params
from .validation import check_css, check_cube, check_illuminations, check_stack


class SubspaceRecovery(BaseEstimator, TransformerMixin):
    """Closed-form recovery ``omega * H^T (H H^T + ridge I)^-1 I`` for a known camera.

    ``fit`` only validates the camera and lights and caches the projection;
    ``transform`` maps stacks ``(N, 3M, H, W)`` to cubes ``(N, B, H, W)``.
    """

    def __init__(self, css=None, illuminations=None, omega=1.0, ridge=DEFAULT_RIDGE):
        self.css = css
        self.illuminations = illuminations
        self.omega = omega
        self.ridge = ridge

    def fit(self, X=None, y=None):
        if self.css is None or self.illuminations is None:
            raise ValueError("css and illuminations are required")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        css = check_css(self.css)
        illums = check_illuminations(self.illuminations, bands=css.shape[1])
        self.system_matrix_ = system_matrix(css, illums)
        self.projection_ = projection_operator(self.system_matrix_, self.ridge)
        self.n_illuminations_ = illums.shape[0]
        if X is not None:
            check_stack(X, self.n_illuminations_)
        return self

    def transform(self, X):
        check_is_fitted(self, "projection_")
        single = np.ndim(getattr(X, "data", X)) == 3
        x = check_stack(X, self.n_illuminations_)
        out = self.omega * np.einsum("br,nrhw->nbhw", self.projection_, x)
        return out[0] if single else out

    def reproject(self, R):
        """Stack implied by cubes ``R`` under the fitted system matrix."""
        check_is_fitted(self, "system_matrix_")
        r = check_cube(R, self.system_matrix_.shape[1])
        return np.einsum("rb,nbhw->nrhw", self.system_matrix_, r)


class SpectralRecoveryNet(BaseEstimator):
    """The learned recovery network trained by pre-training plus meta-auxiliary training.

    ``fit(X, y, css)`` takes stacks ``(N, 3M, H, W)``, true cubes
    ``(N, B, H, W)`` and the true camera of each sample ``(N, 3, B)``.
    ``predict`` adapts to every test stack with ``n_inner`` auxiliary steps
    (``adapt_steps`` overrides) before the final forward pass.
    """

    def __init__(
        self,
        illuminations=None,
        ablation="full",
        base_channels=8,
        scales=2,
        relative_ridge=1e-3,
        pretrain_lr=2e-3,
        pretrain_steps=200,
        batch_size=8,
        meta_steps=50,
        meta_batch=4,
        alpha=1e-2,
        beta=5e-5,
        n_inner=5,
        patch=16,
        stride=8,
        random_state=0,
    ):
        self.illuminations = illuminations
        self.ablation = ablation
        self.base_channels = base_channels
        self.scales = scales
        self.relative_ridge = relative_ridge
        self.pretrain_lr = pretrain_lr
        self.pretrain_steps = pretrain_steps
        self.batch_size = batch_size
        self.meta_steps = meta_steps
        self.meta_batch = meta_batch
        self.alpha = alpha
        self.beta = beta
        self.n_inner = n_inner
        self.patch = patch
        self.stride = stride
        self.random_state = random_state

    def _configs(self, m_illums: int) -> tuple[NetConfig, TrainConfig]:
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {sorted(ABLATIONS)}")
        net = NetConfig(
            m_illums=m_illums,
            scales=self.scales,
            base_channels=self.base_channels,
            patch=self.patch,
            relative_ridge=self.relative_ridge,
            **ABLATIONS[self.ablation],
        )
        train = TrainConfig(
            pretrain_lr=self.pretrain_lr,
            pretrain_steps=self.pretrain_steps,
            batch_size=self.batch_size,
            alpha=self.alpha,
            beta=self.beta,
            n_inner=self.n_inner,
            meta_steps=self.meta_steps,
            meta_batch=self.meta_batch,
            seed=self.random_state,
        )
        return net, train

    def fit(self, X, y, css):
        illums = check_illuminations(self.illuminations)
        x = check_stack(X, illums.shape[0])
        r = check_cube(y)
        css = np.asarray(css, dtype=np.float64)
        if css.ndim == 2:
            css = np.broadcast_to(css, (x.shape[0],) + css.shape)
        if r.shape[0] != x.shape[0] or css.shape[0] != x.shape[0] or r.shape[2:] != x.shape[2:]:
            raise ValueError("X, y and css must describe the same samples")
        for c in css:
            check_css(c, r.shape[1])
        net, train = self._configs(illums.shape[0])
        stacks, truths, cams = [], [], []
        for xi, ri, ci in zip(x, r, css):
            xs = crop_patches(xi, self.patch, self.stride)
            stacks.extend(xs)
            truths.extend(crop_patches(ri, self.patch, self.stride))
            cams.extend([ci] * len(xs))
        data = PatchData(np.stack(stacks), np.stack(truths), np.stack(cams))
        objective = Objective(illums, net)
        params, log = pretrain(init_params(net, self.random_state), data, objective, train)
        params, meta_log = meta_train(params, data, objective, train)
        log.extend(meta_log)
        self.net_config_ = net
        self.train_config_ = train
        self.params_ = params
        self.log_ = log
        self.objective_ = objective
        return self

    def predict(self, X, adapt_steps=None):
        check_is_fitted(self, "params_")
        single = np.ndim(getattr(X, "data", X)) == 3
        x = check_stack(X, self.net_config_.m_illums)
        n = self.n_inner if adapt_steps is None else adapt_steps
        out = np.stack([adapt_test_time(self.params_, xi, self.objective_, self.alpha, n)[0].data for xi in x])
        return out[0] if single else out

    def score(self, X, y):
        """Mean PSNR of the adapted predictions."""
        pred = self.predict(X)
        truth = check_cube(y)
        if pred.ndim == 3:
            pred = pred[None]
        return float(np.mean([psnr(p, t) for p, t in zip(pred, truth)]))
