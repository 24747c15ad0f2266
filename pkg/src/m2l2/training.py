"""Consistency training on consecutive chunk pairs."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import torch

from .autoencoder import M2L2Model
from .config import ConsistencyConfig, ModelConfig, TrainConfig


class NonFiniteLossError(FloatingPointError):
    pass


def n_steps(iteration: int, total_iterations: int, c: ConsistencyConfig) -> int:
    """Discretization count N(k): doubles from s0 toward s1 over training."""
    exponent = math.floor(iteration * math.log2(c.s1 / c.s0) / total_iterations)
    return min(c.s0 * 2**exponent, c.s1)


def sigma_ladder(u: torch.Tensor, c: ConsistencyConfig) -> torch.Tensor:
    """rho-warped map from u in [0, 1] to [sigma_min, sigma_max]."""
    u = torch.as_tensor(u, dtype=torch.float64)
    lo, hi = c.sigma_min ** (1 / c.rho), c.sigma_max ** (1 / c.rho)
    sigma = (lo + u * (hi - lo)) ** c.rho
    # pin the endpoints against pow round-off
    sigma = torch.where(u <= 0, torch.full_like(sigma, c.sigma_min), sigma)
    return torch.where(u >= 1, torch.full_like(sigma, c.sigma_max), sigma)


def _sample_u(shape, n: int, generator: torch.Generator, c: ConsistencyConfig) -> torch.Tensor:
    if c.noise_distribution == "uniform":
        return torch.rand(shape, generator=generator, dtype=torch.float64)
    # discretized lognormal over the N-point ladder
    grid = torch.arange(n + 1, dtype=torch.float64) / n
    log_s = torch.log(sigma_ladder(grid, c))
    cdf = torch.erf((log_s - c.lognormal_mean) / (math.sqrt(2) * c.lognormal_std))
    probs = (cdf[1:] - cdf[:-1]).clamp_min(0)
    idx = torch.multinomial(probs, math.prod(shape), replacement=True, generator=generator)
    return (idx.to(torch.float64) / n).reshape(shape)


def sample_noise_pair(iteration: int, generator: torch.Generator, shape: tuple[int, ...],
                      cfg: ModelConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Independent (sigma, sigma + delta) draws, one per element of ``shape``."""
    c = cfg.consistency
    n = n_steps(iteration, cfg.train.total_iterations, c)
    u = _sample_u(shape, n, generator, c)
    sigma = sigma_ladder(u, c)
    sigma_next = sigma_ladder(torch.clamp(u + 1.0 / n, max=1.0), c).clamp(max=c.sigma_max)
    return sigma, sigma_next


def pseudo_huber(x: torch.Tensor, y: torch.Tensor, c_factor: float = 0.00054,
                 batch_dims: int = 0) -> torch.Tensor:
    """sqrt(||x - y||^2 + c^2) - c with c = c_factor * sqrt(D).

    The norm runs over every dimension after the first ``batch_dims``; D is the
    number of elements it covers.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    dims = tuple(range(batch_dims, x.ndim))
    d = math.prod(x.shape[batch_dims:])
    c = c_factor * math.sqrt(d)
    sq = ((x - y) ** 2).sum(dim=dims) if dims else (x - y) ** 2
    return torch.sqrt(sq + c * c) - c


def learning_rate(iteration: int, t: TrainConfig) -> float:
    """Cosine decay from lr0 to lr_final over total_iterations."""
    frac = min(iteration, t.total_iterations) / t.total_iterations
    return t.lr_final + (t.lr0 - t.lr_final) * (1 + math.cos(math.pi * frac)) / 2


def step_generator(seed: int, iteration: int, stream: int = 0) -> torch.Generator:
    """Per-iteration RNG so any step can be replayed from (seed, iteration) alone."""
    return torch.Generator().manual_seed((seed * 1_000_003 + iteration) * 7 + stream)


@dataclass
class LossOutput:
    loss: torch.Tensor
    sigma: torch.Tensor
    sigma_next: torch.Tensor
    n: int
    denoised: torch.Tensor = field(repr=False)
    target: torch.Tensor = field(repr=False)


def consistency_loss(model: M2L2Model, batch: torch.Tensor, iteration: int, generator: torch.Generator,
                     sigmas: tuple[torch.Tensor, torch.Tensor] | None = None,
                     force_identical: bool = False, target: torch.Tensor | None = None) -> LossOutput:
    """Weighted Pseudo-Huber distance between the two adjacent-noise evaluations.

    ``batch`` is ``[B, 2, C, F, T]`` (compressed, temporally adjacent chunks).
    The lower-noise branch runs under ``no_grad`` with the current parameters.
    ``sigmas`` overrides the sampled levels, ``force_identical`` feeds the
    lower-noise input to both branches, and ``target`` replaces the stop-gradient
    branch with a fixed tensor; all three exist for tests.
    """
    cfg = model.cfg
    b, n = batch.shape[:2]
    latents = model.encode(batch.reshape(b * n, *batch.shape[2:]))
    cross = [lvl.reshape(b, n, *lvl.shape[1:]) for lvl in model.decode_features(latents)]
    if sigmas is None:
        sigma, sigma_next = sample_noise_pair(iteration, generator, (b, n), cfg)
    else:
        sigma, sigma_next = (torch.as_tensor(s, dtype=torch.float64).expand(b, n) for s in sigmas)
    eps = torch.randn(batch.shape, generator=generator, dtype=batch.dtype)
    dt = batch.dtype
    s_lo, s_hi = sigma.to(dt), sigma_next.to(dt)
    lvl = (..., None, None, None)
    if force_identical:
        s_hi = s_lo
    denoised = model.consistency(batch + s_hi[lvl] * eps, s_hi, cross)
    if target is None:
        with torch.no_grad():
            target = model.consistency(batch + s_lo[lvl] * eps, s_lo, [c.detach() for c in cross])
    dist = pseudo_huber(denoised, target, cfg.consistency.c_factor, batch_dims=2)
    weight = 1.0 / (sigma_next - sigma).to(dt)
    loss = (weight * dist).mean()
    if not torch.isfinite(loss):
        raise NonFiniteLossError(
            f"non-finite loss at iteration {iteration}: sigma={sigma.flatten().tolist()} "
            f"sigma_next={sigma_next.flatten().tolist()}")
    k = n_steps(iteration, cfg.train.total_iterations, cfg.consistency)
    return LossOutput(loss, sigma, sigma_next, k, denoised, target)


@dataclass
class TrainState:
    model: M2L2Model
    ema: M2L2Model
    optimizer: torch.optim.Optimizer
    iteration: int = 0

    @property
    def cfg(self) -> ModelConfig:
        return self.model.cfg


def make_optimizer(model: M2L2Model) -> torch.optim.Optimizer:
    t = model.cfg.train
    return torch.optim.RAdam(model.parameters(), lr=t.lr0, betas=(t.beta1, t.beta2))


def init_state(cfg: ModelConfig) -> TrainState:
    torch.manual_seed(cfg.train.seed)
    model = M2L2Model(cfg)
    ema = copy.deepcopy(model).requires_grad_(False)
    return TrainState(model, ema, make_optimizer(model), 0)


@torch.no_grad()
def ema_update(ema: torch.nn.Module, model: torch.nn.Module, momentum: float) -> None:
    e = list(ema.parameters())
    p = list(model.parameters())
    torch._foreach_mul_(e, momentum)
    torch._foreach_add_(e, p, alpha=1 - momentum)


def train_step(state: TrainState, batch: torch.Tensor) -> dict:
    """One optimizer step plus EMA update; advances ``state.iteration`` in place."""
    cfg = state.cfg
    k = state.iteration
    lr = learning_rate(k, cfg.train)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.model.train()
    out = consistency_loss(state.model, batch, k, step_generator(cfg.train.seed, k))
    state.optimizer.zero_grad(set_to_none=True)
    out.loss.backward()
    state.optimizer.step()
    ema_update(state.ema, state.model, cfg.train.ema_momentum)
    state.iteration += 1
    return {"iteration": k, "loss": float(out.loss.detach()), "lr": lr, "n_steps": out.n}
