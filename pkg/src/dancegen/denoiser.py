"""Small joint-attention denoiser over latent pose columns and music tokens.

The latent grid (C_z, W', T') is embedded cell by cell (a cell is one (w', t')
site), cells sharing a time column are concatenated into one pose token, and
the T' music tokens join the same attention stream. Rotary indices follow
rotary.py exactly: pose token (w, t) rotates as (0, w, t), music token j as
(0, 0, j) in time_shared mode or (j, 0, 0) in legacy mode, with the head dim
split into three even per-axis partitions and interleaved rotation pairs.

The output head paints a whole column of epsilon per pose token, plus a
step-conditioned scalar skip of the noisy input: at high noise the optimal
prediction is dominated by the input itself, and a learned g(tau) * z_noisy
term lets the attention trunk spend its limited rank on the structured
residual instead of approximating the identity.

Parameter budget is a hard gate (5M); count_parameters is tested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ShapeError
from .rotary import MODE_LEGACY, MODE_TIME_SHARED, RotaryConfig, assign_indices

MASK_CHANNELS = 8
PARAM_BUDGET = 5_000_000


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int  # C_z
    w_lat: int
    t_lat: int
    d_a: int = 32
    ref_cond: bool = True  # stack [z_ref || mask] onto the input channels
    indexing: str = MODE_TIME_SHARED
    c_cell: int = 96
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    mlp_ratio: float = 2.0
    pose_patch_w: int = 0  # cells per pose token along W'; 0 = full column
    rotary_base: float = 10000.0
    max_step: int = 1000  # S, for the step embedding scale
    # Query/key bias scale for the aligned-attention start (0 disables): one
    # head per block is biased so that tokens begin by attending to tokens
    # sharing their time index. Without it, nothing time-varying ever reaches
    # the value stream at the pure-noise end of the schedule (token content is
    # then exchangeable across columns and time lives only in the rotary
    # rotation of queries and keys), so gradient descent has no foothold to
    # discover the aligned music lookup on its own.
    attn_align_init: float = 2.4

    def __post_init__(self):
        if self.indexing not in (MODE_TIME_SHARED, MODE_LEGACY):
            raise ConfigurationError(f"unknown indexing mode {self.indexing!r}")
        if self.d_model % self.n_heads:
            raise ConfigurationError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        patch = self.pose_patch_w or self.w_lat
        if self.w_lat % patch:
            raise ConfigurationError(f"W'={self.w_lat} not divisible by pose_patch_w={patch}")

    @property
    def in_channels(self) -> int:
        return self.latent_channels * 2 + MASK_CHANNELS if self.ref_cond else self.latent_channels

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def patch_w(self) -> int:
        return self.pose_patch_w or self.w_lat

    @property
    def n_pose_w(self) -> int:
        return self.w_lat // self.patch_w


def step_embedding(tau: torch.Tensor, dim: int, max_step: int) -> torch.Tensor:
    """Sinusoidal embedding of the diffusion step, scaled to the schedule length."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10.0 * max_step) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    )
    args = tau.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


class RotaryTables(nn.Module):
    """Precomputed cos/sin per token for one (grid, mode) combination."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        pose_idx, music_idx = assign_indices(
            cfg.n_pose_w, cfg.t_lat, cfg.t_lat, cfg.indexing
        )
        rot = RotaryConfig(head_dim=cfg.head_dim, base=cfg.rotary_base)
        angles = rot.pair_angles(np.concatenate([pose_idx, music_idx], axis=0))
        self.register_buffer("cos", torch.from_numpy(np.cos(angles)).float(), persistent=False)
        self.register_buffer("sin", torch.from_numpy(np.sin(angles)).float(), persistent=False)

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        """Rotate (B, H, N, head_dim) by the per-token angles."""
        cos = self.cos[None, None]
        sin = self.sin[None, None]
        even, odd = x[..., 0::2], x[..., 1::2]
        out = torch.empty_like(x)
        out[..., 0::2] = even * cos - odd * sin
        out[..., 1::2] = even * sin + odd * cos
        return out


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int, mlp_ratio: float):
        super().__init__()
        self.n_heads = n_heads
        self.norm1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.norm2 = nn.LayerNorm(d_model)
        hidden = int(d_model * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(d_model, hidden), nn.GELU(), nn.Linear(hidden, d_model))

    def forward(self, x: torch.Tensor, rope: RotaryTables) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(self.norm1(x)).reshape(b, n, 3, self.n_heads, d // self.n_heads)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))  # (B, H, N, hd)
        q, k = rope.apply(q), rope.apply(k)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]), dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, n, d)
        x = x + self.proj(y)
        return x + self.mlp(self.norm2(x))


class ToyDenoiser(nn.Module):
    """Predicts epsilon for a latent grid given music tokens and the step."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        patch = cfg.patch_w
        self.cell_embed = nn.Linear(cfg.in_channels, cfg.c_cell)
        self.row_embed = nn.Parameter(torch.zeros(cfg.w_lat, cfg.c_cell))
        self.token_embed = nn.Linear(patch * cfg.c_cell, cfg.d_model)
        self.music_embed = nn.Linear(cfg.d_a, cfg.d_model)
        self.null_music = nn.Parameter(torch.zeros(cfg.d_a))
        self.step_mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_model), nn.SiLU(), nn.Linear(cfg.d_model, cfg.d_model)
        )
        self.rope = RotaryTables(cfg)
        self.blocks = nn.ModuleList(
            [Block(cfg.d_model, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.n_layers)]
        )
        self.norm_out = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, patch * cfg.latent_channels)
        self.skip_gain = nn.Linear(cfg.d_model, 1)
        nn.init.zeros_(self.skip_gain.weight)
        nn.init.ones_(self.skip_gain.bias)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        if cfg.attn_align_init > 0:
            self._aligned_attention_init(cfg.attn_align_init)

    def _aligned_attention_init(self, scale: float) -> None:
        """Bias head 0's query and key toward a shared time-partition vector.

        Two equal vectors rotated by the same angle keep their dot product, so
        the induced attention logit peaks at zero relative time: each token
        starts out attending to its own latent column and (in time_shared
        mode) its aligned music token. Head 0's query/key weights start at
        zero so the positional peak is the only logit source there (random
        content projections would otherwise drown it); gradients through the
        weights let training reshape or abandon the pattern freely.
        """
        rot = RotaryConfig(head_dim=self.cfg.head_dim, base=self.cfg.rotary_base)
        a0, a1, a2 = rot.axis_dims
        lo, hi = a0 + a1, a0 + a1 + a2  # time-axis slice of head 0's dims
        hd = self.cfg.head_dim
        with torch.no_grad():
            for block in self.blocks:
                for proj in range(2):  # query rows, then key rows
                    rows = slice(proj * self.cfg.d_model, proj * self.cfg.d_model + hd)
                    block.qkv.weight[rows] = 0.0
                    block.qkv.bias[rows] = 0.0
                    block.qkv.bias[proj * self.cfg.d_model + lo : proj * self.cfg.d_model + hi] = (
                        scale
                    )

    def forward(
        self,
        model_input: torch.Tensor,
        music_tokens: torch.Tensor,
        tau: torch.Tensor,
        music_drop: torch.Tensor | None = None,
    ) -> torch.Tensor:
        cfg = self.cfg
        b, c_in, w_lat, t_lat = model_input.shape
        if c_in != cfg.in_channels:
            raise ShapeError(f"input channel axis {c_in}, expected {cfg.in_channels}")
        if (w_lat, t_lat) != (cfg.w_lat, cfg.t_lat):
            raise ShapeError(f"grid ({w_lat},{t_lat}) != configured ({cfg.w_lat},{cfg.t_lat})")
        if music_tokens.shape != (b, cfg.t_lat, cfg.d_a):
            raise ShapeError(
                f"music tokens {tuple(music_tokens.shape)}, expected {(b, cfg.t_lat, cfg.d_a)}"
            )

        if music_drop is not None:
            music_tokens = torch.where(
                music_drop[:, None, None], self.null_music[None, None, :], music_tokens
            )

        cells = model_input.permute(0, 2, 3, 1)  # (B, W', T', C_in)
        cells = self.cell_embed(cells) + self.row_embed[None, :, None, :]
        patch, n_w = cfg.patch_w, cfg.n_pose_w
        # (B, n_w, patch, T', c_cell) -> w-major pose tokens (B, n_w * T', patch * c_cell)
        tok = cells.reshape(b, n_w, patch, t_lat, cfg.c_cell).permute(0, 1, 3, 2, 4)
        tok = tok.reshape(b, n_w * t_lat, patch * cfg.c_cell)
        pose = self.token_embed(tok)
        music = self.music_embed(music_tokens)

        cond = self.step_mlp(step_embedding(tau, cfg.d_model, cfg.max_step))
        x = torch.cat([pose, music], dim=1) + cond[:, None, :]
        for block in self.blocks:
            x = block(x, self.rope)
        pose_out = self.norm_out(x[:, : n_w * t_lat])

        paint = self.head(pose_out)  # (B, n_w * T', patch * C_z)
        paint = paint.reshape(b, n_w, t_lat, patch, cfg.latent_channels)
        paint = paint.permute(0, 4, 1, 3, 2).reshape(b, cfg.latent_channels, w_lat, t_lat)

        gain = self.skip_gain(cond)[:, :, None, None]  # (B, 1, 1, 1)
        z_noisy = model_input[:, : cfg.latent_channels]
        return paint + gain * z_noisy


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
