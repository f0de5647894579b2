"""Diffusion policy over action chunks.

Training noises normalized chunks with a linear-beta schedule and regresses
the noise with an MLP conditioned on the observation embedding and a
sinusoidal timestep feature. Sampling runs the deterministic DDIM update;
eta > 0 adds per-step noise and is exposed for experiments only.

The sampling path is pinned exactly (timestep subsequence, update equation,
noise source) so other runtimes can reproduce chunks bit-for-bit at f32
precision; see ddim_taus and ddim_core.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from ..errors import BadSamplerConfig, EmptyDataset
from ..noise_rng import NoiseRng
from . import base, nn
from .dataset import ObsLayout, WindowDataset, build_windows
from .encoder import EncoderConfig, encoder_backward, encoder_forward, init_encoder
from .schedule import NoiseSchedule, forward_noise, make_schedule

DENOISER_KIND = "ddpm-mlp"


def ddim_taus(T: int, steps: int) -> np.ndarray:
    """Decreasing timestep subsequence tau_0 > ... > tau_{S-1}.

    tau_i = floor((T-1) * (S-1-i) / (S-1) + 0.5); steps == T visits every
    timestep exactly once. floor(x + 0.5) is the pinned rounding rule (it is
    reproducible in any language, unlike banker's rounding).
    """
    if not (1 <= steps <= T):
        raise BadSamplerConfig(f"steps must be in [1, {T}], got {steps}")
    if steps == 1:
        return np.array([T - 1], dtype=np.int64)
    out = np.empty(steps, dtype=np.int64)
    for i in range(steps):
        v = (T - 1) * (steps - 1 - i) / (steps - 1)
        out[i] = math.floor(v + 0.5)
    return out


def ddim_core(schedule: NoiseSchedule, eps_fn, shape: tuple[int, ...],
              steps: int, eta: float, rng: NoiseRng) -> np.ndarray:
    """Runs the sampler from pure noise to a chunk in [-1, 1].

    Per step at timestep t with next ab' (1.0 after the last step):
      x0_hat = clip((x - sqrt(1-ab_t) eps_hat) / sqrt(ab_t), -1, 1)
      eps'   = (x - sqrt(ab_t) x0_hat) / sqrt(1-ab_t)
      sigma  = eta sqrt((1-ab')/(1-ab_t)) sqrt(1 - ab_t/ab')
      x      = sqrt(ab') x0_hat + sqrt(max(1-ab'-sigma^2, 0)) eps' + sigma z

    eps' equals eps_hat wherever the clip was inactive; recomputing it from
    the clipped x0_hat makes the update a contraction, so one hot noise
    prediction cannot feed back on itself and blow up the iterate.
    Noise draws come only from rng: the initial x, then one batch per step
    when eta > 0.
    """
    n = int(np.prod(shape))
    taus = ddim_taus(schedule.T, steps)
    x = rng.normals(n).reshape(shape)
    for i, t in enumerate(taus):
        eps_hat = eps_fn(x, int(t))
        ab_t = schedule.alpha_bars[t]
        sq_t = math.sqrt(ab_t)
        s1_t = math.sqrt(1.0 - ab_t)
        x0_hat = (x - s1_t * eps_hat) / sq_t
        np.clip(x0_hat, -1.0, 1.0, out=x0_hat)
        eps_used = (x - sq_t * x0_hat) / s1_t
        ab_next = schedule.alpha_bars[taus[i + 1]] if i + 1 < len(taus) else 1.0
        if eta > 0.0 and ab_next < 1.0:
            sigma = eta * math.sqrt((1.0 - ab_next) / (1.0 - ab_t)) \
                * math.sqrt(max(1.0 - ab_t / ab_next, 0.0))
            noise = rng.normals(n).reshape(shape)
            dir_c = math.sqrt(max(1.0 - ab_next - sigma * sigma, 0.0))
            x = math.sqrt(ab_next) * x0_hat + dir_c * eps_used + sigma * noise
        else:
            x = math.sqrt(ab_next) * x0_hat + math.sqrt(1.0 - ab_next) * eps_used
    return x


class DiffusionPolicy(BaseEstimator):
    """Chunked action policy trained by denoising score matching.

    fit() is deterministic for a given seed; weights are rounded to f32 at
    the end of training so saved checkpoints reproduce in-memory sampling.
    """

    def __init__(self, encoder: str = "state-mlp", hidden: tuple = (128,),
                 embedding_dim: int = 64, denoiser_hidden: tuple = (256, 256),
                 t_embed_dim: int = 32, T: int = 100, beta_min: float = 1e-4,
                 beta_max: float = 0.02, T_o: int = 2, T_p: int = 16,
                 T_a: int = 8, epochs: int = 100, batch_size: int = 64,
                 lr: float = 1e-3, seed: int = 0, grid_field: str | None = None):
        self.encoder = encoder
        self.hidden = hidden
        self.embedding_dim = embedding_dim
        self.denoiser_hidden = denoiser_hidden
        self.t_embed_dim = t_embed_dim
        self.T = T
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.T_o = T_o
        self.T_p = T_p
        self.T_a = T_a
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.grid_field = grid_field

    # ------------------------------------------------------------- training

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
        self.schedule_ = make_schedule(self.T, self.beta_min, self.beta_max)
        self.obs_norm_, self.act_norm_ = base.fit_normalizers(ds)
        xn, yn = base.normalize_windows(ds, self.obs_norm_, self.act_norm_)
        d_y = yn.shape[1]

        rng = np.random.default_rng(self.seed)
        params: nn.Params = {}
        init_encoder(params, self.enc_cfg_, self.layout_, self.T_o, rng)
        den_in = self.embedding_dim + self.t_embed_dim + d_y
        nn.init_mlp(params, "den.mlp", [den_in, *self.denoiser_hidden, d_y], rng)
        if warm_params is not None:
            for k in params:
                params[k] = np.asarray(warm_params[k], dtype=np.float64).copy()

        opt = nn.Adam(params, lr=self.lr)
        losses = []
        # fitted attrs point at live state so an epoch hook can snapshot
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
                t = rng.integers(0, self.T, size=idx.size)
                eps = rng.standard_normal((idx.size, d_y))
                loss, grads = self.loss_and_grads(params, xn[idx], yn[idx], t, eps)
                opt.step(params, grads)
                batch_losses.append(loss)
            losses.append(float(np.mean(batch_losses)))
            if epoch_hook is not None:
                epoch_hook(epoch, self)
        self.params_ = base.round_f32(params)
        return self

    def loss_and_grads(self, params: nn.Params, xn: np.ndarray, yn: np.ndarray,
                       t: np.ndarray, eps: np.ndarray):
        """Denoising MSE and exact gradients for explicit batch inputs.

        Exposed with every input under caller control so tests can compare
        the backward pass against finite differences.
        """
        x_t = forward_noise(self.schedule_, yn, t, eps)
        eps_hat, cache = self._denoise_forward(params, xn, x_t, t)
        r = eps_hat - eps
        loss = float(np.mean(r * r))
        grads: nn.Params = {}
        dout = (2.0 / r.size) * r
        self._denoise_backward(params, cache, dout, grads)
        return loss, grads

    def _denoise_forward(self, params: nn.Params, xn: np.ndarray,
                         x_t: np.ndarray, t: np.ndarray):
        emb, ec = encoder_forward(params, self.enc_cfg_, self.layout_, self.T_o, xn)
        temb = nn.timestep_embedding(t, self.t_embed_dim)
        h = np.concatenate([emb, temb, x_t], axis=1)
        n_layers = len(self.denoiser_hidden) + 1
        eps_hat, mc = nn.mlp_forward(params, "den.mlp", h, n_layers)
        return eps_hat, (ec, mc, emb.shape[1])

    def _denoise_backward(self, params: nn.Params, cache, dout: np.ndarray,
                          grads: nn.Params) -> None:
        ec, mc, e_dim = cache
        dh = nn.mlp_backward(params, mc, dout, grads)
        encoder_backward(params, self.enc_cfg_, ec, dh[:, :e_dim], grads)

    # ------------------------------------------------------------- sampling

    def sample_chunk(self, obs_frames: np.ndarray, seed: int = 0,
                     steps: int | None = None, eta: float = 0.0) -> np.ndarray:
        """obs_frames: (T_o, D_o) raw observations -> (T_p, A) f32 chunk."""
        xn = self.obs_norm_.transform(
            np.asarray(obs_frames, dtype=np.float64)).reshape(1, -1)
        emb, _ = encoder_forward(self.params_, self.enc_cfg_, self.layout_,
                                 self.T_o, xn)
        n_layers = len(self.denoiser_hidden) + 1

        def eps_fn(x, t):
            temb = nn.timestep_embedding(np.array([t]), self.t_embed_dim)
            h = np.concatenate([emb, temb, x], axis=1)
            out, _ = nn.mlp_forward(self.params_, "den.mlp", h, n_layers)
            return out

        if steps is None:
            steps = self.schedule_.T
        rng = NoiseRng(seed)
        d_y = self.T_p * self.action_dim_
        x = ddim_core(self.schedule_, eps_fn, (1, d_y), steps, eta, rng)
        y = self.act_norm_.inverse_transform(x.reshape(self.T_p, self.action_dim_))
        return y.astype(np.float32)


def ddim_sample(policy: DiffusionPolicy, obs_frames: np.ndarray, seed: int = 0,
                steps: int | None = None, eta: float = 0.0) -> np.ndarray:
    return policy.sample_chunk(obs_frames, seed=seed, steps=steps, eta=eta)


def finetune(parent: "DiffusionPolicy", episodes, epochs: int, seed: int,
             parent_path: str | None = None,
             lr: float | None = None) -> "DiffusionPolicy":
    """New policy warm-started from parent weights; the normalizer is refit
    on the combined dataset, so 0 epochs keeps the weights but may move the
    normalization stats."""
    ds = build_windows(episodes, parent.T_o, parent.T_p, layout=parent.layout_)
    base.check_same_layout(parent.layout_, ds.layout)
    child = DiffusionPolicy(**parent.get_params())
    child.set_params(epochs=epochs, seed=seed)
    if lr is not None:
        child.set_params(lr=lr)
    parent_tasks = parent.provenance_["tasks"] if hasattr(parent, "provenance_") else []
    tasks = sorted(set(parent_tasks) | set(base.episode_tasks(episodes)))
    child.fit_dataset(ds, tasks=tasks, parent=parent_path,
                      warm_params=parent.params_)
    return child
