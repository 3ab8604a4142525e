"""Gaussian diffusion: schedule, forward noising, reverse steps and losses.

Schedule arrays are indexed by the diffusion step ``t`` directly, with a
padding entry at index 0 (``alpha_bar[0] = 1``, ``beta[0] = 0``) so that
``t - 1`` lookups at ``t = 1`` need no special case.

Step arguments ``t`` may be a Python int or an integer tensor of shape (B,)
giving one step per batch element; coefficients broadcast over the trailing
dimensions of ``x``.  Randomness is never drawn here: callers pass noise.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidSchedule, RangeError, ShapeMismatch

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray
    log_beta_tilde_clipped: np.ndarray

    @property
    def T(self):
        return len(self.beta) - 1

    @classmethod
    def from_betas(cls, betas):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise InvalidSchedule("need at least one beta")
        if not np.all((betas > 0) & (betas < 1)):
            raise InvalidSchedule("betas must lie in (0, 1)")
        beta = np.concatenate([[0.0], betas])
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        beta_tilde = np.zeros_like(beta)
        beta_tilde[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
        # beta_tilde[1] == 0; its log is replaced by log(beta_tilde[2])
        clipped = beta_tilde.copy()
        if len(betas) > 1:
            clipped[1] = beta_tilde[2]
        else:
            clipped[1] = beta[1]
        with np.errstate(divide="ignore"):
            log_clipped = np.log(clipped)
        for a in (beta, alpha, alpha_bar, beta_tilde, log_clipped):
            a.setflags(write=False)
        return cls(beta, alpha, alpha_bar, beta_tilde, log_clipped)

    def to_dict(self):
        return {"kind": "explicit", "T": self.T}

    def check_t(self, t, lo=1):
        tt = torch.as_tensor(t)
        if tt.numel() and (int(tt.min()) < lo or int(tt.max()) > self.T):
            raise RangeError(f"step {t} outside [{lo}, {self.T}]")


def linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    if T < 1 or not 0 < beta_start <= beta_end < 1:
        raise InvalidSchedule(f"invalid linear schedule T={T}, beta in [{beta_start}, {beta_end}]")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T, dtype=np.float64))


def coef(arr, t, x):
    """Gather ``arr[t]`` and shape it to broadcast against ``x``."""
    if isinstance(t, (int, np.integer)):
        return torch.tensor(float(arr[int(t)]), dtype=x.dtype, device=x.device)
    t = torch.as_tensor(t, device=x.device).long()
    vals = torch.tensor(np.asarray(arr), dtype=x.dtype, device=x.device)[t]
    return vals.reshape(vals.shape + (1,) * (x.dim() - vals.dim()))


def _same_shape(*xs):
    s = xs[0].shape
    for x in xs[1:]:
        if x.shape != s:
            raise ShapeMismatch(f"shape mismatch: {tuple(s)} vs {tuple(x.shape)}")


def q_sample(sched, x0, t, eps):
    """Noisy sample x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    _same_shape(x0, eps)
    sched.check_t(t)
    ab = coef(sched.alpha_bar, t, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1 - ab) * eps


def predict_x0(sched, x_t, t, eps_hat):
    ab = coef(sched.alpha_bar, t, x_t)
    return (x_t - torch.sqrt(1 - ab) * eps_hat) / torch.sqrt(ab)


def posterior_mean(sched, x_t, t, eps_hat):
    """Reverse-step mean from a noise prediction."""
    _same_shape(x_t, eps_hat)
    sched.check_t(t)
    a = coef(sched.alpha, t, x_t)
    b = coef(sched.beta, t, x_t)
    ab = coef(sched.alpha_bar, t, x_t)
    return (x_t - b / torch.sqrt(1 - ab) * eps_hat) / torch.sqrt(a)


def true_posterior(sched, x0, x_t, t):
    """Mean and variance of q(x_{t-1} | x_t, x_0)."""
    ab = coef(sched.alpha_bar, t, x0)
    ab_prev = coef(sched.alpha_bar, _prev(t), x0)
    b = coef(sched.beta, t, x0)
    a = coef(sched.alpha, t, x0)
    mean = (torch.sqrt(ab_prev) * b / (1 - ab)) * x0 + (torch.sqrt(a) * (1 - ab_prev) / (1 - ab)) * x_t
    return mean, coef(sched.beta_tilde, t, x0)


def _prev(t):
    return t - 1 if isinstance(t, (int, np.integer)) else torch.as_tensor(t) - 1


def log_sigma_interp(sched, t, v):
    """log Sigma = v log beta_t + (1 - v) log beta_tilde_t, elementwise in v."""
    if torch.any(v < -1e-6) or torch.any(v > 1 + 1e-6):
        raise RangeError("variance interpolation weights must lie in [0, 1]")
    sched.check_t(t)
    log_b = torch.log(coef(sched.beta, t, v))
    log_bt = coef(sched.log_beta_tilde_clipped, t, v)
    return v * log_b + (1 - v) * log_bt


def sigma_interp(sched, t, v):
    """Learned reverse variance, between beta_tilde_t and beta_t.

    At t = 1 the posterior variance is 0, so the lower end uses
    beta_tilde_2 instead.
    """
    return torch.exp(log_sigma_interp(sched, t, v))


def squash_v(raw):
    """Map raw network outputs to interpolation weights in [0, 1]."""
    return (torch.tanh(raw) + 1) / 2


def loss_simple(eps, eps_hat):
    _same_shape(eps, eps_hat)
    return torch.mean((eps - eps_hat) ** 2)


def gaussian_kl(mean1, var1, mean2, log_var2):
    """KL(N(mean1, var1) || N(mean2, exp(log_var2))), elementwise, nats."""
    return 0.5 * (log_var2 - torch.log(var1) + (var1 + (mean1 - mean2) ** 2) * torch.exp(-log_var2) - 1.0)


def gaussian_nll(x, mean, log_var):
    return 0.5 * (LOG_2PI + log_var + (x - mean) ** 2 * torch.exp(-log_var))


def vlb_terms(sched, x0, x_t, t, eps_hat, v):
    """Per-element VLB term; reduces over nothing.

    The model mean is built from ``eps_hat`` detached, so this term only
    trains the variance.  For t > 1 it is the KL between the true posterior
    and the model step; for t = 1 the Gaussian negative log-likelihood of x0.
    """
    _same_shape(x0, x_t, eps_hat, v)
    sched.check_t(t)
    mu = posterior_mean(sched, x_t, t, eps_hat.detach())
    log_var = log_sigma_interp(sched, t, v)
    true_mean, true_var = true_posterior(sched, x0, x_t, t)
    nll = gaussian_nll(x0, mu, log_var)
    safe_var = torch.where(true_var > 0, true_var, torch.ones_like(true_var))
    kl = gaussian_kl(true_mean, safe_var, mu, log_var)
    first = coef(np.arange(len(sched.beta)) == 1, t, x0) > 0
    return torch.where(first, nll, kl)


def loss_vlb(sched, x0, x_t, t, eps_hat, v):
    """Mean VLB term over all elements, in nats."""
    return torch.mean(vlb_terms(sched, x0, x_t, t, eps_hat, v))


def loss_combined(ls, lv, lambda_vlb=1.0):
    return ls + lambda_vlb * lv


def clean_error_residual(sched, x0, eps, eps_hat, t):
    """|‖x0 - x0_hat‖² - (1 - abar)/abar ‖eps - eps_hat‖²| for one instance.

    Clean-sample error equals the noise-prediction error up to the constant
    factor (1 - abar_t)/abar_t, which is what this checks numerically.
    """
    x_t = q_sample(sched, x0, t, eps)
    x0_hat = predict_x0(sched, x_t, t, eps_hat)
    ab = float(sched.alpha_bar[int(t)])
    lhs = torch.sum((x0 - x0_hat) ** 2)
    rhs = (1 - ab) / ab * torch.sum((eps - eps_hat) ** 2)
    return torch.abs(lhs - rhs)


def ddim_timesteps(T, K):
    """K evenly spaced steps over [1, T], endpoint inclusive, descending."""
    if not 1 <= K <= T:
        raise RangeError(f"DDIM step count {K} outside [1, {T}]")
    if K == 1:
        return [T]
    grid = np.unique(np.rint(np.linspace(1, T, K)).astype(int))
    return [int(x) for x in grid[::-1]]


def ddim_step(sched, x_t, t, t_prev, eps_hat, eta=0.0, noise=None):
    """One DDIM update from step t to t_prev (0 means the clean sample)."""
    _same_shape(x_t, eps_hat)
    if not 0 <= int(t_prev) < int(t) <= sched.T:
        raise RangeError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    if not 0.0 <= eta <= 1.0:
        raise RangeError("eta must lie in [0, 1]")
    ab = float(sched.alpha_bar[int(t)])
    ab_prev = float(sched.alpha_bar[int(t_prev)])
    x0_hat = (x_t - math.sqrt(1 - ab) * eps_hat) / math.sqrt(ab)
    if eta == 0.0:
        return math.sqrt(ab_prev) * x0_hat + math.sqrt(1 - ab_prev) * eps_hat
    if noise is None:
        raise ValueError("stochastic DDIM (eta > 0) needs an explicit noise tensor")
    sigma = eta * math.sqrt((1 - ab_prev) / (1 - ab)) * math.sqrt(1 - ab / ab_prev)
    direction = math.sqrt(max(1 - ab_prev - sigma**2, 0.0)) * eps_hat
    return math.sqrt(ab_prev) * x0_hat + direction + sigma * noise


def ddpm_step(sched, x_t, t, eps_hat, v, noise):
    """Ancestral step: posterior mean plus sqrt(Sigma) noise; no noise at t = 1."""
    sched.check_t(t)
    mean = posterior_mean(sched, x_t, t, eps_hat)
    if isinstance(t, (int, np.integer)) and int(t) == 1:
        return mean
    std = torch.sqrt(sigma_interp(sched, t, v))
    mask = (coef(np.arange(len(sched.beta)) > 1, t, x_t) > 0).to(x_t.dtype)
    return mean + mask * std * noise
