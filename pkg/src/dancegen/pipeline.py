"""Composition helpers: pose sequences <-> scaled latent grids.

One-hot pose images are sparse, so their latents have tiny variance compared
with the unit-variance noise the diffusion process injects. A fixed gain on
the latent rebalances that. The gain must be a power of two: multiplying and
dividing float32 by 2^k is exact, so the lossless codec roundtrip stays bit
for bit even with scaling in the loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditioning import apply_pose_aware_replacement, build_reference_tensor
from .errors import ConfigurationError
from .latent import CodecConfig, LatentGrid, decode_latent, encode_latent
from .onehot import (
    ChannelLayout,
    OneHotConfig,
    OneHotSequence,
    decode_sequence,
    encode_sequence,
    group_channels,
    ungroup_channels,
)
from .pose import PoseSequence


@dataclass(frozen=True)
class PipelineConfig:
    onehot: OneHotConfig = OneHotConfig()
    codec: CodecConfig = CodecConfig()
    latent_gain: float = 8.0

    def __post_init__(self):
        gain = self.latent_gain
        if gain <= 0 or (gain != 2 ** round(np.log2(gain))):
            raise ConfigurationError(f"latent_gain must be a positive power of two, got {gain}")


def onehot_to_latent(x: OneHotSequence, cfg: PipelineConfig) -> LatentGrid:
    z = encode_latent(group_channels(x), cfg.codec)
    z.data *= np.float32(cfg.latent_gain)
    return z


def latent_to_onehot(z: LatentGrid, cfg: PipelineConfig) -> OneHotSequence:
    unscaled = LatentGrid(
        data=z.data / np.float32(cfg.latent_gain),
        codec_id=z.codec_id,
        layout=z.layout,
        onehot_config=z.onehot_config,
        meta=z.meta,
        pad_slots=z.pad_slots,
    )
    return ungroup_channels(decode_latent(unscaled, cfg.codec))


def poses_to_latent(seq: PoseSequence, cfg: PipelineConfig, layout: ChannelLayout) -> LatentGrid:
    return onehot_to_latent(encode_sequence(seq, cfg.onehot, layout), cfg)


def latent_to_poses(z: LatentGrid, cfg: PipelineConfig) -> PoseSequence:
    return decode_sequence(latent_to_onehot(z, cfg))


def reference_latent(
    ref_frame: np.ndarray,
    frame_count: int,
    cfg: PipelineConfig,
    layout: ChannelLayout,
    fps: float,
    prefix_gt: OneHotSequence | None = None,
    prefix_n: int = 0,
) -> LatentGrid:
    """Latent of the tiled reference tensor, optionally with a pose-aware prefix.

    prefix_gt supplies the one-hot columns copied over the first prefix_n
    frames (the replacement is unconditional here; training owns the coin).
    """
    ref = build_reference_tensor(ref_frame, frame_count, cfg.onehot, layout, fps=fps)
    if prefix_n and prefix_gt is not None:
        ref, _ = apply_pose_aware_replacement(ref, prefix_gt, prefix_n, heads=True)
    return onehot_to_latent(ref, cfg)
