"""Direct chunk regression baseline: same encoder, MSE on the chunk.

A unimodal head by construction, so it averages across demonstration modes
where the diffusion policy commits to one.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from ..errors import EmptyDataset
from . import base, nn
from .dataset import WindowDataset, build_windows
from .encoder import EncoderConfig, encoder_backward, encoder_forward, init_encoder

DENOISER_KIND = "bc-mlp"


class BCPolicy(BaseEstimator):

    def __init__(self, encoder: str = "state-mlp", hidden: tuple = (128,),
                 embedding_dim: int = 64, trunk_hidden: tuple = (256, 256),
                 T_o: int = 2, T_p: int = 16, T_a: int = 8, epochs: int = 100,
                 batch_size: int = 64, lr: float = 1e-3, seed: int = 0,
                 grid_field: str | None = None):
        self.encoder = encoder
        self.hidden = hidden
        self.embedding_dim = embedding_dim
        self.trunk_hidden = trunk_hidden
        self.T_o = T_o
        self.T_p = T_p
        self.T_a = T_a
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.grid_field = grid_field

    def fit(self, episodes, y=None, epoch_hook=None):
        ds = build_windows(episodes, self.T_o, self.T_p)
        return self.fit_dataset(ds, tasks=base.episode_tasks(episodes),
                                epoch_hook=epoch_hook)

    def fit_dataset(self, ds: WindowDataset, tasks=(), parent: str | None = None,
                    warm_params: nn.Params | None = None, epoch_hook=None):
        if ds.n == 0:
            raise EmptyDataset("no training windows")
        self.layout_ = ds.layout
        self.action_dim_ = ds.Y.shape[2]
        self.enc_cfg_ = EncoderConfig(self.encoder, tuple(self.hidden),
                                      self.embedding_dim, self.grid_field)
        self.obs_norm_, self.act_norm_ = base.fit_normalizers(ds)
        xn, yn = base.normalize_windows(ds, self.obs_norm_, self.act_norm_)
        d_y = yn.shape[1]

        rng = np.random.default_rng(self.seed)
        params: nn.Params = {}
        init_encoder(params, self.enc_cfg_, self.layout_, self.T_o, rng)
        nn.init_mlp(params, "den.mlp",
                    [self.embedding_dim, *self.trunk_hidden, d_y], rng)
        if warm_params is not None:
            for k in params:
                params[k] = np.asarray(warm_params[k], dtype=np.float64).copy()

        opt = nn.Adam(params, lr=self.lr)
        losses = []
        self.params_ = params
        self.loss_curve_ = losses
        self.provenance_ = {
            "tasks": sorted(tasks),
            "epochs": self.epochs,
            "parent_checkpoint": parent,
            "seed": self.seed,
        }
        for epoch in range(self.epochs):
            batch_losses = []
            for idx in base.iter_batches(ds.n, self.batch_size, rng):
                loss, grads = self.loss_and_grads(params, xn[idx], yn[idx])
                opt.step(params, grads)
                batch_losses.append(loss)
            losses.append(float(np.mean(batch_losses)))
            if epoch_hook is not None:
                epoch_hook(epoch, self)
        self.params_ = base.round_f32(params)
        return self

    def loss_and_grads(self, params: nn.Params, xn: np.ndarray, yn: np.ndarray):
        pred, cache = self._forward(params, xn)
        r = pred - yn
        loss = float(np.mean(r * r))
        grads: nn.Params = {}
        dout = (2.0 / r.size) * r
        ec, mc, e_dim = cache
        dh = nn.mlp_backward(params, mc, dout, grads)
        encoder_backward(params, self.enc_cfg_, ec, dh[:, :e_dim], grads)
        return loss, grads

    def _forward(self, params: nn.Params, xn: np.ndarray):
        emb, ec = encoder_forward(params, self.enc_cfg_, self.layout_, self.T_o, xn)
        n_layers = len(self.trunk_hidden) + 1
        pred, mc = nn.mlp_forward(params, "den.mlp", emb, n_layers)
        return pred, (ec, mc, emb.shape[1])

    def sample_chunk(self, obs_frames: np.ndarray, seed: int = 0,
                     steps: int | None = None, eta: float = 0.0) -> np.ndarray:
        """Deterministic chunk; seed/steps/eta are accepted for endpoint
        interface parity and ignored."""
        xn = self.obs_norm_.transform(
            np.asarray(obs_frames, dtype=np.float64)).reshape(1, -1)
        pred, _ = self._forward(self.params_, xn)
        y = self.act_norm_.inverse_transform(
            pred.reshape(self.T_p, self.action_dim_))
        return y.astype(np.float32)
