"""Rotary position indexing shared by pose and music tokens.

Every token gets a 3-axis integer index (a, w, t). Pose tokens at grid cell
(w, t) use (0, w, t). Music tokens support two modes:

    time_shared  music position j -> (0, 0, j), so music and pose share the
                 third axis and attention can bind "same t" positionally.
                 Requires exactly one music token per latent time column.
    legacy       music position j -> (j, 0, 0): the music order lives on an
                 axis no pose token varies on, so the time partition carries
                 zero selectivity across music tokens.

The head dimension is split into three even-sized contiguous partitions, one
per axis. Within a partition of size d_a, pair m rotates by angle
theta_m * index_axis with theta_m = base^(-2m / d_a) (base 10000), applied to
interleaved pairs (2m, 2m+1). Rotations are orthogonal, so norms are
preserved, and the dot product of two rotated vectors depends only on the
per-axis index differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError

MODE_TIME_SHARED = "time_shared"
MODE_LEGACY = "legacy"


def default_axis_split(head_dim: int) -> tuple[int, int, int]:
    """Three even partition sizes summing to head_dim (near-equal thirds).

    head_dim must itself be even; leftover pairs go to the earlier axes.
    """
    if head_dim < 6 or head_dim % 2:
        raise ConfigurationError(f"head_dim must be even and >= 6, got {head_dim}")
    base = (head_dim // 3) & ~1
    parts = [base, base, base]
    rem = head_dim - 3 * base
    i = 0
    while rem > 0:
        parts[i] += 2
        rem -= 2
        i = (i + 1) % 3
    return tuple(parts)


@dataclass(frozen=True)
class RotaryConfig:
    head_dim: int = 48
    base: float = 10000.0
    axis_dims: tuple[int, int, int] | None = None

    def __post_init__(self):
        dims = self.axis_dims if self.axis_dims is not None else default_axis_split(self.head_dim)
        if len(dims) != 3 or any(d % 2 or d < 0 for d in dims):
            raise ConfigurationError(f"axis_dims must be three even sizes, got {dims}")
        if sum(dims) != self.head_dim:
            raise ConfigurationError(f"axis_dims {dims} do not sum to head_dim {self.head_dim}")
        object.__setattr__(self, "axis_dims", tuple(dims))

    def pair_angles(self, idx: np.ndarray) -> np.ndarray:
        """Angles per rotation pair for indices (..., 3) -> (..., head_dim/2)."""
        idx = np.asarray(idx, dtype=np.float64)
        if idx.shape[-1] != 3:
            raise ShapeError(f"index last axis must be 3, got {idx.shape}")
        chunks = []
        for axis, d_axis in enumerate(self.axis_dims):
            if d_axis == 0:
                continue
            m = np.arange(d_axis // 2, dtype=np.float64)
            theta = self.base ** (-2.0 * m / d_axis)
            chunks.append(idx[..., axis : axis + 1] * theta)
        return np.concatenate(chunks, axis=-1)


def assign_indices(
    n_pose_w: int, n_time: int, n_music: int, mode: str
) -> tuple[np.ndarray, np.ndarray]:
    """Index triples for a (n_pose_w x n_time) pose grid plus music tokens.

    Pose tokens are ordered w-major: token w * n_time + t sits at cell (w, t).
    """
    if mode not in (MODE_TIME_SHARED, MODE_LEGACY):
        raise ConfigurationError(f"unknown indexing mode {mode!r}")
    if n_pose_w < 1 or n_time < 1 or n_music < 1:
        raise ConfigurationError("token grid sizes must be >= 1")
    if mode == MODE_TIME_SHARED and n_music != n_time:
        raise ConfigurationError(
            f"time_shared indexing needs one music token per latent column: "
            f"n_music={n_music}, T'={n_time}"
        )
    w_grid, t_grid = np.meshgrid(np.arange(n_pose_w), np.arange(n_time), indexing="ij")
    pose = np.stack([np.zeros_like(w_grid), w_grid, t_grid], axis=-1).reshape(-1, 3)
    music = np.zeros((n_music, 3), dtype=np.int64)
    j = np.arange(n_music)
    if mode == MODE_TIME_SHARED:
        music[:, 2] = j
    else:
        music[:, 0] = j
    return pose.astype(np.int64), music


def rotary_rotate(vec: np.ndarray, idx: np.ndarray, cfg: RotaryConfig) -> np.ndarray:
    """Rotate (..., head_dim) vectors by their (..., 3) indices."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape[-1] != cfg.head_dim:
        raise ShapeError(f"vector last axis {vec.shape[-1]} != head_dim {cfg.head_dim}")
    angles = cfg.pair_angles(idx)
    cos, sin = np.cos(angles), np.sin(angles)
    x = vec[..., 0::2]
    y = vec[..., 1::2]
    out = np.empty_like(vec)
    out[..., 0::2] = x * cos - y * sin
    out[..., 1::2] = x * sin + y * cos
    return out


def _unit_vector(head_dim: int) -> np.ndarray:
    return np.full(head_dim, 1.0 / np.sqrt(head_dim))


def cross_affinity(pose_idx: np.ndarray, music_idx: np.ndarray, cfg: RotaryConfig) -> np.ndarray:
    """(P, M) dot products between identically-initialized rotated unit vectors.

    A purely positional diagnostic: content is the all-ones unit vector, so
    structure in the result comes from the indexing scheme alone.
    """
    u = _unit_vector(cfg.head_dim)
    pose_rot = rotary_rotate(np.broadcast_to(u, (len(pose_idx), cfg.head_dim)), pose_idx, cfg)
    music_rot = rotary_rotate(np.broadcast_to(u, (len(music_idx), cfg.head_dim)), music_idx, cfg)
    return pose_rot @ music_rot.T


def cross_affinity_parts(
    pose_idx: np.ndarray, music_idx: np.ndarray, cfg: RotaryConfig
) -> np.ndarray:
    """(P, M, 3) per-axis-partition contributions to cross_affinity."""
    u = _unit_vector(cfg.head_dim)
    pose_rot = rotary_rotate(np.broadcast_to(u, (len(pose_idx), cfg.head_dim)), pose_idx, cfg)
    music_rot = rotary_rotate(np.broadcast_to(u, (len(music_idx), cfg.head_dim)), music_idx, cfg)
    out = np.zeros((len(pose_idx), len(music_idx), 3))
    start = 0
    for axis, d_axis in enumerate(cfg.axis_dims):
        sl = slice(start, start + d_axis)
        out[:, :, axis] = pose_rot[:, sl] @ music_rot[:, sl].T
        start += d_axis
    return out
