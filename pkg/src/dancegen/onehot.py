"""One-hot pose images: the bridge between joint coordinates and image space.

Each joint axis becomes one channel. A coordinate u in [0, 1] with confidence
s places a single spike of height s at bin i = floor(W * u), clamped to the
last bin so u = 1.0 stays in range. Decoding takes the per-channel argmax
(ties resolve to the lowest index), maps it back to i / W, and recovers the
confidence as the smaller of the two axis peaks, so quantization is the only
loss: |u - decode(encode(u))| <= 1/W.

Optional Gaussian softening spreads each spike over its neighborhood
(truncated beyond 3 sigma) without moving the argmax or changing the peak,
which keeps decode exact while giving the diffusion model smoother targets.

Channels are grouped into triplets of 3 for the latent codec, mirroring how
RGB channels enter an image autoencoder; when 2K is not divisible by 3 the
last channel is duplicated to fill the final triplet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .pose import PoseSequence, SequenceMeta


@dataclass(frozen=True)
class OneHotConfig:
    width: int = 512
    soften_sigma: float = 2.0

    def __post_init__(self):
        if self.width < 2:
            raise ConfigurationError(f"width must be >= 2, got {self.width}")
        if self.soften_sigma < 0:
            raise ConfigurationError(f"soften_sigma must be >= 0, got {self.soften_sigma}")


@dataclass(frozen=True)
class ChannelLayout:
    """Maps joint k to its x channel 2k and y channel 2k + 1."""

    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError(f"layout needs K >= 1, got {self.K}")

    @property
    def C(self) -> int:
        return 2 * self.K

    def c_x(self, k: int) -> int:
        return 2 * k

    def c_y(self, k: int) -> int:
        return 2 * k + 1


@dataclass
class OneHotSequence:
    """(C, W, T) float32 stack of per-axis one-hot vectors over time."""

    data: np.ndarray
    config: OneHotConfig
    layout: ChannelLayout
    meta: SequenceMeta

    def __post_init__(self):
        c, w, t = self.data.shape
        if c != self.layout.C:
            raise ShapeError(f"channel axis is {c}, layout expects C={self.layout.C}")
        if w != self.config.width:
            raise ShapeError(f"width axis is {w}, config expects W={self.config.width}")
        if t != self.meta.frame_count:
            raise ShapeError(f"time axis is {t}, meta expects T={self.meta.frame_count}")


def soften(vec: np.ndarray, sigma: float) -> np.ndarray:
    """Spread a single spike into a truncated Gaussian bump.

    Entries farther than 3 sigma from the spike stay exactly zero; the spike
    bin keeps its original value, so argmax and peak survive. sigma = 0 is the
    identity. The input must hold at most one nonzero entry.
    """
    if sigma < 0:
        raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
    vec = np.asarray(vec, dtype=np.float32)
    hot = np.flatnonzero(vec)
    if hot.size > 1:
        raise ShapeError(f"soften expects at most one nonzero entry, found {hot.size}")
    if sigma == 0 or hot.size == 0:
        return vec.copy()
    i = int(hot[0])
    out = np.zeros_like(vec)
    radius = int(math.floor(3 * sigma))
    lo, hi = max(0, i - radius), min(vec.shape[0] - 1, i + radius)
    d = np.arange(lo, hi + 1)
    out[lo : hi + 1] = vec[i] * np.exp(-((d - i) ** 2) / (2.0 * sigma * sigma))
    return out


def _hot_indices(seq: PoseSequence, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Per (channel, frame) hot bin and value, interleaved x/y per joint."""
    coords = seq.data[:, :, 0:2]  # (T, K, 2)
    conf = seq.data[:, :, 2]  # (T, K)
    idx = np.minimum(np.floor(width * coords), width - 1).astype(np.int64)
    idx = np.maximum(idx, 0)
    # (T, K, 2) -> (C, T) with channel order x0 y0 x1 y1 ...
    idx = idx.reshape(seq.T, -1).T
    val = np.repeat(conf[:, :, None], 2, axis=2).reshape(seq.T, -1).T
    return idx, val.astype(np.float32)


def encode_frame(frame: np.ndarray, cfg: OneHotConfig, layout: ChannelLayout) -> np.ndarray:
    """Encode one (K, 3) frame to a (C, W) one-hot image column."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (layout.K, 3):
        raise ShapeError(f"frame must be (K={layout.K}, 3), got {frame.shape}")
    seq = PoseSequence(SequenceMeta(fps=1.0, frame_count=1), frame[None])
    return encode_sequence(seq, cfg, layout).data[:, :, 0]


def encode_sequence(seq: PoseSequence, cfg: OneHotConfig, layout: ChannelLayout) -> OneHotSequence:
    """Encode a pose sequence to its (C, W, T) one-hot stack, softened."""
    if seq.K != layout.K:
        raise ShapeError(f"sequence has K={seq.K}, layout expects K={layout.K}")
    W, T, C = cfg.width, seq.T, layout.C
    idx, val = _hot_indices(seq, W)
    data = np.zeros((C, W, T), dtype=np.float32)
    c_grid, t_grid = np.nonzero(val > 0)
    hot = idx[c_grid, t_grid]
    sigma = cfg.soften_sigma
    if sigma == 0:
        data[c_grid, hot, t_grid] = val[c_grid, t_grid]
    else:
        radius = int(math.floor(3 * sigma))
        for d in range(-radius, radius + 1):
            pos = hot + d
            ok = (pos >= 0) & (pos < W)
            weight = math.exp(-(d * d) / (2.0 * sigma * sigma))
            data[c_grid[ok], pos[ok], t_grid[ok]] = val[c_grid[ok], t_grid[ok]] * weight
    return OneHotSequence(data=data, config=cfg, layout=layout, meta=seq.meta)


def decode_sequence(x: OneHotSequence) -> PoseSequence:
    """Invert encode_sequence up to the 1/W quantization grid.

    Coordinates come from the per-channel argmax over W; the confidence is
    min(peak_x, peak_y), so a joint whose pair of channels is all zero decodes
    to (0, 0, 0).
    """
    C, W, T = x.data.shape
    K = x.layout.K
    idx = np.argmax(x.data, axis=1)  # (C, T), ties -> lowest index
    peak = np.max(x.data, axis=1)  # (C, T)
    coords = idx.astype(np.float64) / W
    out = np.zeros((T, K, 3), dtype=np.float64)
    out[:, :, 0] = coords[0::2].T
    out[:, :, 1] = coords[1::2].T
    out[:, :, 2] = np.minimum(peak[0::2], peak[1::2]).T
    return PoseSequence(x.meta, out)


# ---------------------------------------------------------------------------
# triplet grouping for the latent codec


@dataclass
class TripletGroups:
    """(G, 3, W, T) regrouping of channels; pad_slots marks duplicated tails."""

    data: np.ndarray
    layout: ChannelLayout
    config: OneHotConfig
    meta: SequenceMeta
    pad_slots: tuple[tuple[int, int], ...]  # (group, slot) pairs that copy channel C-1

    @property
    def G(self) -> int:
        return self.data.shape[0]


def group_channels(x: OneHotSequence) -> TripletGroups:
    """Pack channels into G = ceil(C / 3) triplets in layout order.

    The last channel is duplicated into any unfilled slots of the final
    triplet; those slots are recorded so ungrouping can drop them exactly.
    """
    C, W, T = x.data.shape
    G = (C + 2) // 3
    pad = 3 * G - C
    if pad:
        tail = np.repeat(x.data[C - 1 : C], pad, axis=0)
        stacked = np.concatenate([x.data, tail], axis=0)
    else:
        stacked = x.data
    data = stacked.reshape(G, 3, W, T)
    pad_slots = tuple((G - 1, 3 - p) for p in range(pad, 0, -1))
    return TripletGroups(data=data, layout=x.layout, config=x.config, meta=x.meta, pad_slots=pad_slots)


def ungroup_channels(g: TripletGroups) -> OneHotSequence:
    """Exact inverse of group_channels: drop padded slots, restore (C, W, T)."""
    G, three, W, T = g.data.shape
    C = g.layout.C
    flat = g.data.reshape(G * 3, W, T)
    return OneHotSequence(data=flat[:C].copy(), config=g.config, layout=g.layout, meta=g.meta)
