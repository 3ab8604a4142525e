"""Transformer denoiser with adaptive layer norm timestep conditioning.

Each frame of the noisy window is one token.  The sparse signal of the same
frame is embedded (affine, d_s -> d_emb) and concatenated along channels
with the noisy pose before the input projection, so the sequence keeps W
tokens.  Blocks are DiT-style with AdaLN-Zero modulation from the timestep
embedding; the head emits a noise prediction and raw variance weights.
"""

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatch

COND_MODES = ("token", "timestep", "token+timestep")


@dataclass
class DenoiserConfig:
    W: int = 41
    d_x: int = 132
    d_s: int = 54
    d_emb: int = 396
    hidden: int = 384
    depth: int = 12
    heads: int = 6
    t_embed_dim: int = 384
    freq_dim: int = 256
    mlp_ratio: float = 4.0
    cond_mode: str = "token"
    input_skip: bool = False

    def __post_init__(self):
        for name in ("W", "d_x", "d_s", "d_emb", "hidden", "depth", "heads", "t_embed_dim", "freq_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        if self.cond_mode not in COND_MODES:
            raise ValueError(f"cond_mode must be one of {COND_MODES}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def toy(cls, **kw):
        base = dict(W=4, hidden=16, depth=2, heads=2, t_embed_dim=16, freq_dim=16)
        base.update(kw)
        return cls(**base)


def sinusoidal_embedding(t, dim, max_period=10000.0):
    """[cos(t f_k)..., sin(t f_k)...] with geometric frequencies f_k."""
    t = torch.as_tensor(t, dtype=torch.float64).reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def positional_table(W, dim):
    return sinusoidal_embedding(torch.arange(W), dim)


def modulate(x, shift, scale):
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class TimestepEmbedder(nn.Module):
    def __init__(self, out_dim, freq_dim):
        super().__init__()
        self.freq_dim = freq_dim
        self.mlp = nn.Sequential(nn.Linear(freq_dim, out_dim), nn.SiLU(), nn.Linear(out_dim, out_dim))

    def forward(self, t):
        dtype = self.mlp[0].weight.dtype
        return self.mlp(sinusoidal_embedding(t, self.freq_dim).to(dtype))


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, N, C = x.shape
        q, k, v = self.qkv(x).reshape(B, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) * (C // self.heads) ** -0.5
        out = att.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(B, N, C))


class DiTBlock(nn.Module):
    def __init__(self, hidden, heads, cond_dim, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(hidden, heads)
        self.norm2 = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        inner = int(hidden * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(hidden, inner), nn.GELU(approximate="tanh"), nn.Linear(inner, hidden))
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim, 6 * hidden))

    def forward(self, x, c):
        shift_msa, scale_msa, gate_msa, shift_mlp, scale_mlp, gate_mlp = self.adaLN_modulation(c).chunk(6, dim=1)
        x = x + gate_msa.unsqueeze(1) * self.attn(modulate(self.norm1(x), shift_msa, scale_msa))
        x = x + gate_mlp.unsqueeze(1) * self.mlp(modulate(self.norm2(x), shift_mlp, scale_mlp))
        return x


class FinalLayer(nn.Module):
    def __init__(self, hidden, cond_dim, out_dim):
        super().__init__()
        self.norm = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim, 2 * hidden))
        self.linear = nn.Linear(hidden, out_dim)

    def forward(self, x, c):
        shift, scale = self.adaLN_modulation(c).chunk(2, dim=1)
        return self.linear(modulate(self.norm(x), shift, scale))


class InputSkip(nn.Module):
    """Per-channel, timestep-gated copy of x_t added to the noise head.

    At large t the target noise is almost x_t itself; a narrow trunk cannot
    carry all d_x input channels through to the output, so this path does it
    directly.  Gates start at zero, keeping the zero-output initialisation.
    """

    def __init__(self, cond_dim, d_x):
        super().__init__()
        self.gate = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim, d_x))

    def forward(self, x_t, c):
        return self.gate(c).unsqueeze(1) * x_t


class Denoiser(nn.Module):
    """Noise and variance predictor for windows of local 6D rotations.

    ``forward(x_t, s, t)`` takes x_t of shape (B, W, d_x), s of shape
    (B, W, d_s) and integer steps t of shape (B,), and returns
    ``(eps_hat, v_raw)``, each (B, W, d_x).  Unbatched (W, ·) inputs are
    accepted and give unbatched outputs.
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        uses_tokens = cfg.cond_mode in ("token", "token+timestep")
        self.cond_embed = nn.Linear(cfg.d_s, cfg.d_emb) if uses_tokens else None
        in_dim = cfg.d_x + (cfg.d_emb if uses_tokens else 0)
        self.input_proj = nn.Linear(in_dim, cfg.hidden)
        self.register_buffer("pos_embed", positional_table(cfg.W, cfg.hidden).float(), persistent=False)
        self.t_embedder = TimestepEmbedder(cfg.t_embed_dim, cfg.freq_dim)
        self.pool_proj = nn.Linear(cfg.d_s, cfg.t_embed_dim) if cfg.cond_mode != "token" else None
        self.blocks = nn.ModuleList(
            [DiTBlock(cfg.hidden, cfg.heads, cfg.t_embed_dim, cfg.mlp_ratio) for _ in range(cfg.depth)]
        )
        self.final = FinalLayer(cfg.hidden, cfg.t_embed_dim, 2 * cfg.d_x)
        self.skip = InputSkip(cfg.t_embed_dim, cfg.d_x) if cfg.input_skip else None
        self.reset_parameters()

    def reset_parameters(self):
        def _basic(m):
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)

        self.apply(_basic)
        for lin in (self.t_embedder.mlp[0], self.t_embedder.mlp[2]):
            nn.init.normal_(lin.weight, std=0.02)
        # AdaLN-Zero: gates/modulations and the output head start at zero
        for blk in self.blocks:
            nn.init.zeros_(blk.adaLN_modulation[-1].weight)
            nn.init.zeros_(blk.adaLN_modulation[-1].bias)
        nn.init.zeros_(self.final.adaLN_modulation[-1].weight)
        nn.init.zeros_(self.final.adaLN_modulation[-1].bias)
        nn.init.zeros_(self.final.linear.weight)
        nn.init.zeros_(self.final.linear.bias)
        if self.skip is not None:
            nn.init.zeros_(self.skip.gate[-1].weight)
            nn.init.zeros_(self.skip.gate[-1].bias)

    def _check(self, x_t, s):
        cfg = self.cfg
        if x_t.shape[-2:] != (cfg.W, cfg.d_x) or s.shape[-2:] != (cfg.W, cfg.d_s) or x_t.shape[:-2] != s.shape[:-2]:
            raise ShapeMismatch(
                f"expected x_t (B, {cfg.W}, {cfg.d_x}) and s (B, {cfg.W}, {cfg.d_s}), "
                f"got {tuple(x_t.shape)} and {tuple(s.shape)}"
            )

    def conditioning_vector(self, s, t):
        c = self.t_embedder(t)
        if self.pool_proj is not None:
            c = c + self.pool_proj(s.mean(dim=1))
        return c

    def forward(self, x_t, s, t):
        self._check(x_t, s)
        unbatched = x_t.dim() == 2
        if unbatched:
            x_t, s = x_t[None], s[None]
        B = x_t.shape[0]
        t = torch.as_tensor(t).reshape(-1).expand(B) if torch.as_tensor(t).numel() == 1 else torch.as_tensor(t)
        dtype = self.input_proj.weight.dtype
        x_t, s = x_t.to(dtype), s.to(dtype)
        tokens = torch.cat([x_t, self.cond_embed(s)], dim=-1) if self.cond_embed is not None else x_t
        h = self.input_proj(tokens) + self.pos_embed.to(dtype)
        c = self.conditioning_vector(s, t)
        for blk in self.blocks:
            h = blk(h, c)
        out = self.final(h, c)
        eps_hat, v_raw = out.split(self.cfg.d_x, dim=-1)
        if self.skip is not None:
            eps_hat = eps_hat + self.skip(x_t, c)
        if unbatched:
            return eps_hat[0], v_raw[0]
        return eps_hat, v_raw

    def num_parameters(self):
        return sum(p.numel() for p in self.parameters())


def parameter_groups(model):
    """Named parameter groups used by gradient checks and reports."""
    groups = {}
    for name, p in model.named_parameters():
        key = name.split(".")[0]
        if key == "blocks":
            key = ".".join(name.split(".")[:2])
        groups.setdefault(key, []).append((name, p))
    return groups


def timestep_embedding(t, dim):
    """Raw sinusoidal timestep features (before the MLP) as a numpy vector."""
    return sinusoidal_embedding(t, dim)[0].numpy()
