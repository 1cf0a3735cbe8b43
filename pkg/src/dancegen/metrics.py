"""Pose-space evaluation: kinetic FID, diversity, and beat alignment.

All metrics run on decoded 2D pose sequences, never on latents, so they see
exactly what a viewer of the rendered skeleton would see.

Kinetic features summarize a clip as the per-joint, per-axis mean squared
velocity (units: normalized screen per second, squared), giving a 2K vector
ordered x0, y0, x1, y1, ... Frames where a joint is invisible at either end
of the finite difference are excluded from that joint's average.

Dance beats are the moments the body pauses: local minima of the smoothed
mean joint speed that sit below the series median. Beat alignment scores
each music beat by its distance to the nearest dance beat through a Gaussian
kernel, so a sequence that pauses on every musical beat scores near 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .pose import PoseSequence

EIG_TOLERANCE = -1e-6
BAS_SIGMA_S = 0.1
SPEED_SMOOTH_WINDOW = 5


def kinetic_features(seq: PoseSequence) -> np.ndarray:
    """(2K,) mean squared velocity per joint axis; invisible endpoints excluded."""
    if seq.T < 2:
        raise ValueError(f"kinetic features need at least 2 frames, got {seq.T}")
    vel = np.diff(seq.data[:, :, 0:2], axis=0) * seq.meta.fps  # (T-1, K, 2)
    valid = (seq.data[:-1, :, 2] > 0) & (seq.data[1:, :, 2] > 0)  # (T-1, K)
    sq = vel**2
    counts = valid.sum(axis=0)  # (K,)
    sums = np.where(valid[:, :, None], sq, 0.0).sum(axis=0)  # (K, 2)
    means = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], 0.0)
    return means.reshape(-1)


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureStats":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 2:
            raise ValueError(f"need (n >= 2, dim) feature matrix, got {features.shape}")
        mean = features.mean(axis=0)
        cov = np.cov(features, rowvar=False)
        cov = np.atleast_2d(cov)
        return cls(mean=mean, cov=cov)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below EIG_TOLERANCE are a hard numerical failure; small
    negatives above it are rounding debris and clip to zero.
    """
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    if np.min(vals) < EIG_TOLERANCE:
        raise NumericalError(f"matrix has eigenvalue {np.min(vals):.3e} below {EIG_TOLERANCE:.0e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between two Gaussian fits, clipped to be >= 0."""
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"feature dims differ: {a.mean.shape} vs {b.mean.shape}")
    diff = a.mean - b.mean
    root_a = _sqrtm_psd(a.cov)
    cross = _sqrtm_psd(root_a @ b.cov @ root_a)
    fid = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return max(fid, 0.0)


def diversity(features: np.ndarray) -> float:
    """Mean pairwise Euclidean distance between feature vectors."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < 2:
        raise ValueError(f"diversity needs at least 2 feature vectors, got {n}")
    total = 0.0
    for i in range(n - 1):
        total += float(np.sum(np.linalg.norm(features[i + 1 :] - features[i], axis=1)))
    return total / (n * (n - 1) / 2)


def mean_joint_speed(seq: PoseSequence) -> np.ndarray:
    """(T-1,) mean speed over joints visible at both ends; 0 when none are."""
    disp = np.linalg.norm(np.diff(seq.data[:, :, 0:2], axis=0), axis=2) * seq.meta.fps
    valid = (seq.data[:-1, :, 2] > 0) & (seq.data[1:, :, 2] > 0)
    counts = valid.sum(axis=1)
    sums = np.where(valid, disp, 0.0).sum(axis=1)
    return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)


def _smooth_same_length(series: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; edge windows shrink instead of zero-padding."""
    kernel = np.ones(window)
    sums = np.convolve(series, kernel, mode="same")
    counts = np.convolve(np.ones_like(series), kernel, mode="same")
    return sums / counts


def detect_dance_beats(seq: PoseSequence, window: int = SPEED_SMOOTH_WINDOW) -> np.ndarray:
    """Beat timestamps in seconds: smoothed-speed local minima below the median.

    The speed sample at index i covers the step from frame i to i+1, so its
    timestamp is the midpoint (i + 0.5) / fps. A strictly falling or rising
    series end counts as a minimum too: a dancer frozen on the first or last
    frame is pausing there even though the sample has only one neighbor.
    """
    if seq.T < 3:
        return np.zeros(0, dtype=np.float64)
    speed = _smooth_same_length(mean_joint_speed(seq), window)
    gate = np.median(speed)
    inner = np.arange(1, len(speed) - 1)
    is_min = (speed[inner] < speed[inner - 1]) & (speed[inner] <= speed[inner + 1])
    idx = list(inner[is_min & (speed[inner] < gate)])
    if speed[0] < speed[1] and speed[0] < gate:
        idx.insert(0, 0)
    if speed[-1] < speed[-2] and speed[-1] < gate:
        idx.append(len(speed) - 1)
    return (np.asarray(idx, dtype=np.float64) + 0.5) / seq.meta.fps


def validate_beats(beats: np.ndarray) -> np.ndarray:
    beats = np.asarray(beats, dtype=np.float64)
    if beats.ndim != 1:
        raise ValueError(f"beat list must be 1-D, got shape {beats.shape}")
    if len(beats) > 1 and np.any(np.diff(beats) <= 0):
        raise ValueError("beat list must be strictly increasing")
    return beats


def beat_align_score(
    music_beats: np.ndarray, dance_beats: np.ndarray, sigma_s: float = BAS_SIGMA_S
) -> float:
    """Mean Gaussian affinity from each music beat to its nearest dance beat.

    An empty dance beat list scores 0 (a motionless dancer aligns with
    nothing); an empty music beat list is a caller error.
    """
    music = validate_beats(music_beats)
    if len(music) == 0:
        raise ValueError("music beat list must be non-empty")
    dance = validate_beats(dance_beats)
    if len(dance) == 0:
        return 0.0
    d2 = (music[:, None] - dance[None, :]) ** 2
    nearest = d2.min(axis=1)
    return float(np.mean(np.exp(-nearest / (2.0 * sigma_s * sigma_s))))


def beat_spacing_change_point(beats: np.ndarray) -> tuple[float, float]:
    """Fit a two-regime constant model to inter-beat intervals.

    Returns (change_time_seconds, strength) where the change time is the beat
    at which the second regime starts and strength is the fraction of
    interval variance explained by the split. Needs at least 4 beats.
    """
    beats = validate_beats(beats)
    if len(beats) < 4:
        raise ValueError(f"change-point fit needs >= 4 beats, got {len(beats)}")
    gaps = np.diff(beats)
    n = len(gaps)
    total_sse = float(np.sum((gaps - gaps.mean()) ** 2))
    best_k, best_sse = 1, np.inf
    for k in range(1, n):
        left, right = gaps[:k], gaps[k:]
        sse = float(np.sum((left - left.mean()) ** 2) + np.sum((right - right.mean()) ** 2))
        if sse < best_sse:
            best_k, best_sse = k, sse
    strength = 0.0 if total_sse == 0 else 1.0 - best_sse / total_sse
    return float(beats[best_k]), strength
