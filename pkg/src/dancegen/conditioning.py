"""Reference pose and known-prefix conditioning for the denoiser.

The model is told two things about each sample: what the dancer looks like
(a reference pose tiled over all frames and encoded like any sequence) and
which leading frames are already decided (a binary mask). Frame f counts as
pose-aware iff f < N. Because the latent grid packs 8 frames per column, the
mask needs a phase axis: it lives in {0,1}^(8, W', T') where entry
(phase, :, col) covers frame 8 * col + phase. For q = N // 8 and r = N % 8
that means q fully-set columns plus the first r phase rows of column q.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, ShapeError
from .onehot import ChannelLayout, OneHotConfig, OneHotSequence, encode_frame
from .pose import SequenceMeta

MASK_PHASES = 8


def build_reference_tensor(
    ref_frame: np.ndarray,
    frame_count: int,
    cfg: OneHotConfig,
    layout: ChannelLayout,
    fps: float = 30.0,
) -> OneHotSequence:
    """Tile one encoded (and softened) reference frame across T columns."""
    if frame_count < 1:
        raise ConfigurationError(f"frame_count must be >= 1, got {frame_count}")
    column = encode_frame(ref_frame, cfg, layout)  # (C, W)
    data = np.repeat(column[:, :, None], frame_count, axis=2)
    return OneHotSequence(
        data=data, config=cfg, layout=layout, meta=SequenceMeta(fps=fps, frame_count=frame_count)
    )


def apply_pose_aware_replacement(
    ref_tensor: OneHotSequence, gt: OneHotSequence, n: int, heads: bool
) -> tuple[OneHotSequence, int]:
    """Swap the first n reference columns for ground truth when the coin is heads.

    The Bernoulli draw is injected as a bool so training owns the randomness.
    Returns the (possibly copied) tensor and the effective N: n on heads,
    otherwise 0. n = 0 is the identity regardless of the coin.
    """
    T = ref_tensor.meta.frame_count
    if n < 0:
        raise ConfigurationError(f"n must be >= 0, got {n}")
    if n > T:
        raise ConfigurationError(f"n={n} exceeds sequence length T={T}")
    if gt.data.shape != ref_tensor.data.shape:
        raise ShapeError(
            f"ground truth shape {gt.data.shape} does not match reference {ref_tensor.data.shape}"
        )
    if not heads or n == 0:
        return ref_tensor, 0
    data = ref_tensor.data.copy()
    data[:, :, 0:n] = gt.data[:, :, 0:n]
    return (
        OneHotSequence(data=data, config=ref_tensor.config, layout=ref_tensor.layout, meta=ref_tensor.meta),
        n,
    )


def build_mask(n: int, w_lat: int, t_lat: int) -> np.ndarray:
    """(8, W', T') float32 mask marking the first n frames as pose-aware.

    n is clamped to the 8 * T' frames the grid can express; n = 0 gives the
    all-zero (shape-only) mask. Total mass is always W' * min(n, 8 * T').
    """
    if n < 0:
        raise ConfigurationError(f"n must be >= 0, got {n}")
    if w_lat < 1 or t_lat < 1:
        raise ConfigurationError(f"mask grid must be positive, got W'={w_lat} T'={t_lat}")
    n = min(n, MASK_PHASES * t_lat)
    mask = np.zeros((MASK_PHASES, w_lat, t_lat), dtype=np.float32)
    q, r = divmod(n, MASK_PHASES)
    mask[:, :, 0:q] = 1.0
    if r:
        mask[0:r, :, q] = 1.0
    return mask


def assemble_model_input(z_noisy: np.ndarray, z_ref: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Stack [z_noisy || z_ref || mask] along channels: (2 C_z + 8, W', T')."""
    z_noisy = np.asarray(getattr(z_noisy, "data", z_noisy))
    z_ref = np.asarray(getattr(z_ref, "data", z_ref))
    if z_ref.shape != z_noisy.shape:
        raise ShapeError(
            f"reference latent shape {z_ref.shape} does not match noisy {z_noisy.shape}"
        )
    expected = (MASK_PHASES,) + z_noisy.shape[1:]
    if mask.shape != expected:
        raise ShapeError(f"mask shape {mask.shape} does not match latent grid {expected}")
    return np.concatenate([z_noisy, z_ref, mask.astype(np.float32, copy=False)], axis=0)


def mask_ascii(mask: np.ndarray) -> str:
    """Render a mask as phase rows x time columns; '#' = pose-aware."""
    if mask.ndim != 3 or mask.shape[0] != MASK_PHASES:
        raise ShapeError(f"mask must be (8, W', T'), got {mask.shape}")
    rows = []
    for phase in range(MASK_PHASES):
        row = "".join("#" if np.any(mask[phase, :, t] > 0) else "." for t in range(mask.shape[2]))
        rows.append(f"phase {phase} |{row}|")
    return "\n".join(rows)
