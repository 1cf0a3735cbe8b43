"""Latent codec: the stand-in for a frozen image autoencoder.

Both modes consume triplet groups (G, 3, W, T) and emit a latent grid whose
spatial axes are W' = W/8 and T' = T/8, so the diffusion model always sees an
8x downsampled canvas. Both are linear, deterministic, and seed-reproducible.

lossless-patch
    Pure space-to-depth: each 8x8 patch of a triplet becomes 192 channels
    (channel index = c * 64 + i * 8 + j for in-patch offsets i, j). Exact
    inverse, bit for bit; the default for end-to-end runs so codec error never
    contaminates generation metrics.

projected-4ch
    After space-to-depth, a fixed 4x192 matrix with orthonormal rows maps each
    patch vector to 4 channels per triplet, matching the channel budget of a
    real autoencoder latent. Decoding uses the transpose (the pseudo-inverse
    for orthonormal rows), which loses everything outside a 4-dim subspace;
    use measure_roundtrip to quantify that loss rather than assuming it away.

The projection matrix is derived from a 64-bit linear congruential generator
(Knuth MMIX constants: state <- state * 6364136223846793005 +
1442695040888963407 mod 2^64) feeding Box-Muller normals, then QR
orthonormalization with a positive-diagonal sign fix. This keeps the matrix
identical across platforms for a given seed without trusting any library RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .onehot import ChannelLayout, OneHotConfig, TripletGroups
from .pose import SequenceMeta

PATCH = 8
MODE_LOSSLESS = "lossless-patch"
MODE_PROJECTED = "projected-4ch"

_LCG_MUL = 6364136223846793005
_LCG_ADD = 1442695040888963407
_LCG_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class CodecConfig:
    mode: str = MODE_LOSSLESS
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (MODE_LOSSLESS, MODE_PROJECTED):
            raise ConfigurationError(f"unknown codec mode {self.mode!r}")

    @property
    def codec_id(self) -> str:
        if self.mode == MODE_LOSSLESS:
            return MODE_LOSSLESS
        return f"{MODE_PROJECTED}:seed={self.seed}"

    def channels(self, groups: int) -> int:
        return groups * (192 if self.mode == MODE_LOSSLESS else 4)


@dataclass
class LatentGrid:
    """(C_z, W', T') float32 latent plus everything needed to invert it."""

    data: np.ndarray
    codec_id: str
    layout: ChannelLayout
    onehot_config: OneHotConfig
    meta: SequenceMeta
    pad_slots: tuple[tuple[int, int], ...]

    @property
    def C_z(self) -> int:
        return self.data.shape[0]

    @property
    def W_lat(self) -> int:
        return self.data.shape[1]

    @property
    def T_lat(self) -> int:
        return self.data.shape[2]


def _lcg_normals(seed: int, count: int) -> np.ndarray:
    """Box-Muller normals from the documented 64-bit LCG."""
    state = seed & _LCG_MASK
    uniforms = []
    needed = count + (count & 1)
    for _ in range(needed):
        state = (state * _LCG_MUL + _LCG_ADD) & _LCG_MASK
        # take the high 53 bits for a double in [0, 1)
        uniforms.append((state >> 11) / float(1 << 53))
    u = np.asarray(uniforms, dtype=np.float64).reshape(-1, 2)
    r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
    theta = 2.0 * math.pi * u[:, 1]
    z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)
    return z[:count]


def projection_matrix(seed: int) -> np.ndarray:
    """The fixed (4, 192) projection with orthonormal rows for this seed."""
    raw = _lcg_normals(seed, 4 * 192).reshape(4, 192)
    q, r = np.linalg.qr(raw.T)  # q: (192, 4) orthonormal columns
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return (q * signs).T


def _space_to_depth(data: np.ndarray) -> np.ndarray:
    """(G, 3, W, T) -> (G, 192, W', T') with channel = c*64 + i*8 + j."""
    G, three, W, T = data.shape
    if W % PATCH:
        raise ShapeError(f"W axis ({W}) not divisible by patch size {PATCH}")
    if T % PATCH:
        raise ShapeError(f"T axis ({T}) not divisible by patch size {PATCH}")
    x = data.reshape(G, 3, W // PATCH, PATCH, T // PATCH, PATCH)
    x = x.transpose(0, 1, 3, 5, 2, 4)  # (G, 3, i, j, W', T')
    return x.reshape(G, 3 * PATCH * PATCH, W // PATCH, T // PATCH)


def _depth_to_space(z: np.ndarray) -> np.ndarray:
    """Exact inverse of _space_to_depth."""
    G, c192, Wp, Tp = z.shape
    x = z.reshape(G, 3, PATCH, PATCH, Wp, Tp)
    x = x.transpose(0, 1, 4, 2, 5, 3)  # (G, 3, W', i, T', j)
    return x.reshape(G, 3, Wp * PATCH, Tp * PATCH)


def encode_latent(groups: TripletGroups, cfg: CodecConfig) -> LatentGrid:
    stacked = _space_to_depth(groups.data.astype(np.float32, copy=False))
    G = stacked.shape[0]
    if cfg.mode == MODE_LOSSLESS:
        data = stacked.reshape(G * 192, stacked.shape[2], stacked.shape[3])
    else:
        proj = projection_matrix(cfg.seed).astype(np.float32)
        data = np.einsum("pc,gcwt->gpwt", proj, stacked).reshape(
            G * 4, stacked.shape[2], stacked.shape[3]
        )
    return LatentGrid(
        data=np.ascontiguousarray(data),
        codec_id=cfg.codec_id,
        layout=groups.layout,
        onehot_config=groups.config,
        meta=groups.meta,
        pad_slots=groups.pad_slots,
    )


def decode_latent(z: LatentGrid, cfg: CodecConfig) -> TripletGroups:
    if z.codec_id != cfg.codec_id:
        raise ConfigurationError(
            f"latent was encoded with {z.codec_id!r}, decoder configured as {cfg.codec_id!r}"
        )
    per_group = 192 if cfg.mode == MODE_LOSSLESS else 4
    if z.C_z % per_group:
        raise ShapeError(f"channel axis ({z.C_z}) not divisible by {per_group}")
    G = z.C_z // per_group
    grouped = z.data.reshape(G, per_group, z.W_lat, z.T_lat)
    if cfg.mode == MODE_PROJECTED:
        proj = projection_matrix(cfg.seed).astype(np.float32)
        grouped = np.einsum("pc,gpwt->gcwt", proj, grouped)
    data = _depth_to_space(grouped)
    return TripletGroups(
        data=data,
        layout=z.layout,
        config=z.onehot_config,
        meta=z.meta,
        pad_slots=z.pad_slots,
    )


def prefix_element_mask(n: int, channels: int, w_lat: int, t_lat: int) -> np.ndarray:
    """(C_z, W', T') mask of lossless-latent elements that encode frames < n.

    Lossless channels are laid out as c * 64 + i * 8 + j, so an element's
    source frame is 8 * t' + (channel % 8). Only meaningful for the lossless
    codec: the projected codec mixes all 8 in-patch frames into every channel.
    """
    if channels % 192:
        raise ConfigurationError(
            f"prefix masks need lossless channels (multiple of 192), got {channels}"
        )
    frame_offset = np.arange(channels) % PATCH
    frame = frame_offset[:, None] + PATCH * np.arange(t_lat)[None, :]  # (C_z, T')
    mask = (frame < n).astype(np.float32)
    return np.repeat(mask[:, None, :], w_lat, axis=1)


@dataclass(frozen=True)
class RoundtripReport:
    max_abs_error: float
    rms_error: float


def measure_roundtrip(groups: TripletGroups, cfg: CodecConfig) -> RoundtripReport:
    """Encode-decode a tensor and report the error instead of hiding it."""
    back = decode_latent(encode_latent(groups, cfg), cfg)
    diff = back.data.astype(np.float64) - groups.data.astype(np.float64)
    return RoundtripReport(
        max_abs_error=float(np.max(np.abs(diff))) if diff.size else 0.0,
        rms_error=float(np.sqrt(np.mean(diff * diff))) if diff.size else 0.0,
    )
