"""Conditional VAE density estimation for behavior policies.

The model is the standard conditional VAE: encoder q(z | a, s) is diagonal
Gaussian, prior is N(0, I), and the decoder emits a Gaussian over actions
whose mean is tanh-squashed to the action bound and whose variance is a
fixed scalar. Log densities are always reported in raw action space with no
tanh Jacobian term; that approximation is part of the model's definition
here, and the tanh-Gaussian baseline below follows the same convention so
the two interfaces are comparable.

Three related quantities, all per-datum:

  elbo_loss        the training objective, -recon + kl_weight * analytic KL
  log_density_lb   a one-sample lower bound on log pi_beta(a | s); the
                   analytic-KL variant is the practical low-variance choice,
                   the sampled variant is the L=1 importance estimate
  iw_log_density   log-mean-exp of L importance ratios; consistent in L

With the same single noise draw, iw_log_density reduces exactly to the
sampled-KL variant of log_density_lb.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Mlp, Tensor, checkpoint
from .data import OfflineDataset, sample_batch

LOG_VAR_BOUND = 8.0


@dataclass
class CvaeModel:
    encoder: Mlp
    decoder: Mlp
    state_dim: int
    action_dim: int
    latent_dim: int
    action_bound: float
    log_var_dec: float      # ln(sigma_dec^2), fixed
    kl_weight: float

    def params(self) -> list[Tensor]:
        return self.encoder.params() + self.decoder.params()


def make_cvae(state_dim: int, action_dim: int, action_bound: float, *,
              rng: np.random.Generator, hidden: int = 64, depth: int = 3,
              latent_dim: int | None = None, sigma_dec: float = 1.0,
              kl_weight: float = 0.5) -> CvaeModel:
    """Fresh model; latent dimension defaults to twice the action dimension."""
    if latent_dim is None:
        latent_dim = 2 * action_dim
    if sigma_dec <= 0.0:
        raise ValueError(f"decoder sigma must be positive, got {sigma_dec}")
    hiddens = [hidden] * (depth - 1)
    encoder = Mlp([state_dim + action_dim] + hiddens + [2 * latent_dim],
                  rng=rng, name="cvae.enc")
    decoder = Mlp([latent_dim + state_dim] + hiddens + [action_dim],
                  rng=rng, name="cvae.dec")
    return CvaeModel(encoder=encoder, decoder=decoder, state_dim=state_dim,
                     action_dim=action_dim, latent_dim=latent_dim,
                     action_bound=float(action_bound),
                     log_var_dec=float(2.0 * np.log(sigma_dec)),
                     kl_weight=float(kl_weight))


def encode(model: CvaeModel, s: Tensor, a: Tensor) -> tuple[Tensor, Tensor]:
    """Posterior mean and log variance, the latter clamped to +-8."""
    h = model.encoder(ad.concat(s, a))
    mu = ad.slice_cols(h, 0, model.latent_dim)
    log_var = ad.clip(ad.slice_cols(h, model.latent_dim, 2 * model.latent_dim),
                      -LOG_VAR_BOUND, LOG_VAR_BOUND)
    return mu, log_var


def decode_mean(model: CvaeModel, z: Tensor, s: Tensor) -> Tensor:
    return ad.mul(ad.tanh(model.decoder(ad.concat(z, s))), model.action_bound)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))


def _recon_log_prob(model: CvaeModel, a: Tensor, z: Tensor, s: Tensor) -> Tensor:
    mean = decode_mean(model, z, s)
    return ad.sum_(ad.gaussian_log_density(a, mean, model.log_var_dec), axis=1)


def _analytic_kl(mu: Tensor, log_var: Tensor) -> Tensor:
    # KL(N(mu, sigma^2) || N(0, 1)) summed over latent dims, in closed form
    inner = ad.sub(ad.add(ad.square(mu), ad.exp(log_var)), 1.0)
    return ad.mul(ad.sum_(ad.sub(inner, log_var), axis=1), 0.5)


def _standard_normal_log_prob(z: Tensor) -> Tensor:
    zeros = Tensor(np.zeros(z.data.shape))
    return ad.sum_(ad.gaussian_log_density(z, zeros, 0.0), axis=1)


def elbo_loss(model: CvaeModel, s, a, noise: np.ndarray,
              kl_weight: float | None = None) -> Tensor:
    """Batch-mean training loss: -reconstruction + kl_weight * analytic KL."""
    s, a = _as_tensor(s), _as_tensor(a)
    w = model.kl_weight if kl_weight is None else kl_weight
    mu, log_var = encode(model, s, a)
    z = ad.gaussian_sample(mu, log_var, noise)
    recon = _recon_log_prob(model, a, z, s)
    kl = _analytic_kl(mu, log_var)
    return ad.mean(ad.add(ad.neg(recon), ad.mul(kl, w)))


def log_density_lb(model: CvaeModel, s, a, noise: np.ndarray,
                   analytic_kl: bool = True) -> Tensor:
    """Per-datum one-sample ELBO lower bound on log pi_beta(a | s).

    analytic_kl=True integrates the KL term in closed form (lower variance,
    the form used inside actor training). analytic_kl=False keeps the sampled
    log ratio, making the value identical to iw_log_density with one draw.
    """
    s, a = _as_tensor(s), _as_tensor(a)
    mu, log_var = encode(model, s, a)
    z = ad.gaussian_sample(mu, log_var, noise)
    recon = _recon_log_prob(model, a, z, s)
    if analytic_kl:
        return ad.sub(recon, _analytic_kl(mu, log_var))
    log_pz = _standard_normal_log_prob(z)
    log_qz = ad.sum_(ad.gaussian_log_density(z, mu, log_var), axis=1)
    return ad.add(recon, ad.sub(log_pz, log_qz))


def iw_log_density(model: CvaeModel, s, a, noise: np.ndarray) -> Tensor:
    """Importance-weighted log density log((1/L) sum_l p(a, z_l|s) / q(z_l|a,s)).

    noise has shape [L, B, latent_dim]; one posterior draw per importance
    sample. The estimate is a lower bound in expectation, nondecreasing in L,
    and converges to the model's true log density as L grows.
    """
    s, a = _as_tensor(s), _as_tensor(a)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim != 3:
        raise ad.ShapeError(f"iw noise must be [L, B, latent], got {noise.shape}")
    mu, log_var = encode(model, s, a)
    ratios = []
    for eps in noise:
        z = ad.gaussian_sample(mu, log_var, eps)
        recon = _recon_log_prob(model, a, z, s)
        log_pz = _standard_normal_log_prob(z)
        log_qz = ad.sum_(ad.gaussian_log_density(z, mu, log_var), axis=1)
        ratios.append(ad.add(recon, ad.sub(log_pz, log_qz)))
    return ad.logmeanexp(ratios)


@dataclass
class DensityEstimate:
    """Numpy-facing result of an importance-weighted density query."""

    values: np.ndarray
    num_samples: int

    @property
    def mean(self) -> float:
        return float(self.values.mean())


def estimate_log_density(model: CvaeModel, states: np.ndarray, actions: np.ndarray,
                         num_samples: int, rng: np.random.Generator,
                         chunk: int = 256) -> DensityEstimate:
    """Evaluation-mode iw_log_density over a large batch, chunked for memory."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    values = []
    for lo in range(0, len(states), chunk):
        hi = min(lo + chunk, len(states))
        noise = rng.standard_normal((num_samples, hi - lo, model.latent_dim))
        values.append(iw_log_density(model, states[lo:hi], actions[lo:hi], noise).data)
    return DensityEstimate(values=np.concatenate(values), num_samples=num_samples)


def train_vae(dataset: OfflineDataset, *, iters: int = 20_000, batch_size: int = 256,
              lr: float = 1e-3, lr_final: float | None = None, hidden: int = 64,
              depth: int = 3, latent_dim: int | None = None, sigma_dec: float = 1.0,
              kl_weight: float = 0.5, action_bound: float | None = None,
              seed: int = 0) -> tuple[CvaeModel, np.ndarray]:
    """Fit the CVAE to a dataset's (state, action) pairs. Returns (model, losses).

    When lr_final is given, the learning rate anneals linearly from lr to
    lr_final over the run; the late small steps settle the decoder's sharp
    mode boundaries noticeably better on multimodal data.
    """
    rng = np.random.default_rng(seed)
    if action_bound is None:
        action_bound = float(np.max(np.abs(dataset.actions)))
    model = make_cvae(dataset.state_dim, dataset.action_dim, action_bound, rng=rng,
                      hidden=hidden, depth=depth, latent_dim=latent_dim,
                      sigma_dec=sigma_dec, kl_weight=kl_weight)
    opt = ad.Adam(model.params(), lr=lr)
    losses = np.empty(iters)
    for i in range(iters):
        if lr_final is not None and iters > 1:
            opt.lr = lr + (lr_final - lr) * i / (iters - 1)
        batch = sample_batch(dataset, batch_size, rng)
        noise = rng.standard_normal((batch_size, model.latent_dim))
        with ad.Graph() as g:
            loss = elbo_loss(model, batch.states, batch.actions, noise)
        g.backward(loss)
        opt.step()
        losses[i] = loss.item()
    return model, losses


# ---------------------------------------------------------------------------
# unimodal baseline
# ---------------------------------------------------------------------------


@dataclass
class GaussianBaseline:
    """A single tanh-squashed conditional Gaussian fit by maximum likelihood."""

    net: Mlp
    state_dim: int
    action_dim: int
    action_bound: float

    def params(self) -> list[Tensor]:
        return self.net.params()


def make_gaussian_baseline(state_dim: int, action_dim: int, action_bound: float, *,
                           rng: np.random.Generator, hidden: int = 64,
                           depth: int = 3) -> GaussianBaseline:
    net = Mlp([state_dim] + [hidden] * (depth - 1) + [2 * action_dim],
              rng=rng, name="gauss")
    return GaussianBaseline(net=net, state_dim=state_dim, action_dim=action_dim,
                            action_bound=float(action_bound))


def baseline_log_density(model: GaussianBaseline, s, a) -> Tensor:
    """Per-datum log N(a; bound*tanh(mu_raw(s)), sigma(s)^2), summed over dims."""
    s, a = _as_tensor(s), _as_tensor(a)
    h = model.net(s)
    mu = ad.mul(ad.tanh(ad.slice_cols(h, 0, model.action_dim)), model.action_bound)
    log_var = ad.clip(ad.slice_cols(h, model.action_dim, 2 * model.action_dim),
                      -LOG_VAR_BOUND, LOG_VAR_BOUND)
    return ad.sum_(ad.gaussian_log_density(a, mu, log_var), axis=1)


def train_gaussian_baseline(dataset: OfflineDataset, *, iters: int = 10_000,
                            batch_size: int = 256, lr: float = 1e-3,
                            hidden: int = 64, depth: int = 3,
                            action_bound: float | None = None,
                            seed: int = 0) -> tuple[GaussianBaseline, np.ndarray]:
    rng = np.random.default_rng(seed)
    if action_bound is None:
        action_bound = float(np.max(np.abs(dataset.actions)))
    model = make_gaussian_baseline(dataset.state_dim, dataset.action_dim,
                                   action_bound, rng=rng, hidden=hidden, depth=depth)
    opt = ad.Adam(model.params(), lr=lr)
    losses = np.empty(iters)
    for i in range(iters):
        batch = sample_batch(dataset, batch_size, rng)
        with ad.Graph() as g:
            loss = ad.neg(ad.mean(baseline_log_density(model, batch.states, batch.actions)))
        g.backward(loss)
        opt.step()
        losses[i] = loss.item()
    return model, losses


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_density(path, model: CvaeModel | GaussianBaseline) -> None:
    """Write a density model to the flat parameter-checkpoint format.

    Rebuild metadata (dims, widths, the fixed decoder variance) rides along
    as reserved "meta." entries, so load_density needs nothing but the file.
    """
    if isinstance(model, GaussianBaseline):
        named = {
            "meta.family": np.asarray(1.0),
            "meta.dims": np.array([model.state_dim, model.action_dim], dtype=np.float64),
            "meta.action_bound": np.asarray(model.action_bound),
            "meta.net_widths": np.array(model.net.widths, dtype=np.float64),
        }
        named.update(checkpoint.mlp_state(model.net))
    elif isinstance(model, CvaeModel):
        named = {
            "meta.family": np.asarray(0.0),
            "meta.dims": np.array([model.state_dim, model.action_dim, model.latent_dim],
                                  dtype=np.float64),
            "meta.action_bound": np.asarray(model.action_bound),
            "meta.log_var_dec": np.asarray(model.log_var_dec),
            "meta.kl_weight": np.asarray(model.kl_weight),
            "meta.encoder_widths": np.array(model.encoder.widths, dtype=np.float64),
            "meta.decoder_widths": np.array(model.decoder.widths, dtype=np.float64),
        }
        named.update(checkpoint.mlp_state(model.encoder))
        named.update(checkpoint.mlp_state(model.decoder))
    else:
        raise TypeError(f"cannot checkpoint a {type(model).__name__}")
    checkpoint.save_params(path, named)


def _rebuilt_mlp(widths: np.ndarray, name: str,
                 state: dict[str, np.ndarray]) -> Mlp:
    net = Mlp([int(w) for w in widths], rng=np.random.default_rng(0), name=name)
    checkpoint.load_into_mlp(net, state)
    return net


def load_density(path) -> CvaeModel | GaussianBaseline:
    state = checkpoint.load_params(path)
    if "meta.family" not in state:
        raise checkpoint.CheckpointError(f"{path}: not a density checkpoint")
    if state["meta.family"] == 1.0:
        sd, adim = (int(v) for v in state["meta.dims"])
        return GaussianBaseline(
            net=_rebuilt_mlp(state["meta.net_widths"], "gauss", state),
            state_dim=sd, action_dim=adim,
            action_bound=float(state["meta.action_bound"]))
    sd, adim, ld = (int(v) for v in state["meta.dims"])
    return CvaeModel(
        encoder=_rebuilt_mlp(state["meta.encoder_widths"], "cvae.enc", state),
        decoder=_rebuilt_mlp(state["meta.decoder_widths"], "cvae.dec", state),
        state_dim=sd, action_dim=adim, latent_dim=ld,
        action_bound=float(state["meta.action_bound"]),
        log_var_dec=float(state["meta.log_var_dec"]),
        kl_weight=float(state["meta.kl_weight"]))
