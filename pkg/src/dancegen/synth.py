"""Synthetic rhythm-locked corpus.

Each clip is a toy dancer: K joints at seeded base positions, each sweeping
along a seeded direction as base_j + dir_j * A_j * sin(2*pi*t/P + phi_j).
Phases are restricted to {pi/2, 3*pi/2} so every joint sits at a motion
extreme exactly when t is a multiple of P/2; mean joint speed therefore dips
at those frames, and the ground-truth beat list is t = m * P / 2 converted to
seconds. Beat timing is the one property the whole pipeline is judged on, so
it is built into the data by construction rather than estimated.

Music tokens are derived from the beat list alone (not from P), so they stay
meaningful for spliced or irregular beat grids: token t' covers frame 8*t'
and encodes (sin, cos) of the beat phase - the angle that advances by pi per
beat interval - followed by a one-hot tempo bucket over the local beat
interval and seeded Gaussian jitter in the remaining dims. For a uniform
grid the beat phase equals the oscillator phase 2*pi*t/P, which makes joint
offsets linear in the cos component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .pose import PoseSequence, SequenceMeta

TOKEN_DIM = 32
TEMPO_BUCKETS = 8
# tempo buckets cover local beat intervals of [12, 44) frames in 4-frame steps
BUCKET_LO_FRAMES = 12.0
BUCKET_STEP_FRAMES = 4.0
NOISE_SCALE = 0.1


@dataclass(frozen=True)
class SynthConfig:
    K: int = 8
    fps: float = 30.0
    period: float = 16.0  # oscillation period P in frames; beats land every P/2
    amplitude: float = 0.26  # peak joint excursion in normalized coordinates
    proportion: float = 1.0  # skeleton limb-length multiplier
    screen_scale: float = 1.0  # overall on-screen size multiplier
    occlusion_rate: float = 0.0
    d_a: int = TOKEN_DIM
    seed: int = 0

    def __post_init__(self):
        if self.period < 4:
            raise ConfigurationError(f"period must be >= 4 frames, got {self.period}")
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")
        if not 0.0 <= self.occlusion_rate < 1.0:
            raise ConfigurationError(f"occlusion_rate must be in [0, 1), got {self.occlusion_rate}")
        if self.d_a < 2 + TEMPO_BUCKETS:
            raise ConfigurationError(
                f"d_a must fit sin/cos plus {TEMPO_BUCKETS} tempo buckets, got {self.d_a}"
            )


def synth_pose_sequence(cfg: SynthConfig, frame_count: int) -> tuple[PoseSequence, np.ndarray]:
    """Generate (poses, ground-truth beat seconds) for one clip."""
    if frame_count < 1:
        raise ConfigurationError(f"frame_count must be >= 1, got {frame_count}")
    rng = np.random.default_rng(cfg.seed)
    # Proportioned skeleton around screen center, kept away from the borders.
    # The anchor spread is deliberately smaller than the swing amplitude so
    # most of a clip's positional variance is rhythmic rather than anatomical:
    # a learner that resolves the skeleton still has to track the beat to
    # place joints, instead of being able to explain frames by anatomy alone.
    base = 0.5 + rng.uniform(-1.0, 1.0, size=(cfg.K, 2)) * 0.12 * cfg.proportion * cfg.screen_scale
    amp = cfg.amplitude * cfg.screen_scale * rng.uniform(0.8, 1.2, size=(cfg.K, 1))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=cfg.K)
    direction = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    phase = rng.choice([0.5 * math.pi, 1.5 * math.pi], size=(cfg.K, 1))

    t = np.arange(frame_count, dtype=np.float64)[:, None, None]
    osc = np.sin(2.0 * math.pi * t / cfg.period + phase[None, :, :])  # (T, K, 1)
    coords = base[None] + direction[None] * amp[None] * osc
    coords = np.clip(coords, 0.0, 1.0)

    conf = np.ones((frame_count, cfg.K), dtype=np.float64)
    if cfg.occlusion_rate > 0:
        conf[rng.random((frame_count, cfg.K)) < cfg.occlusion_rate] = 0.0

    data = np.concatenate([coords, conf[:, :, None]], axis=2)
    seq = PoseSequence(SequenceMeta(fps=cfg.fps, frame_count=frame_count), data)

    n_beats = int(math.floor((frame_count - 1) / (cfg.period / 2.0))) + 1
    beats = np.arange(n_beats, dtype=np.float64) * (cfg.period / 2.0) / cfg.fps
    return seq, beats


def _beat_phase(times_s: np.ndarray, beats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Beat phase (advances by pi per interval) and local interval at each time.

    Times outside the beat range extrapolate with the nearest interval.
    """
    if len(beats) < 2:
        raise ConfigurationError(f"need at least two beats to define phase, got {len(beats)}")
    intervals = np.diff(beats)
    if np.any(intervals <= 0):
        raise ConfigurationError("beat list must be strictly increasing")
    seg = np.clip(np.searchsorted(beats, times_s, side="right") - 1, 0, len(beats) - 2)
    local = intervals[seg]
    phase = math.pi * (seg + (times_s - beats[seg]) / local)
    return phase, local


def synth_music_tokens(
    beats: np.ndarray, t_lat: int, d_a: int = TOKEN_DIM, fps: float = 30.0, seed: int = 0
) -> np.ndarray:
    """(T', d_a) tokens: [sin phase, cos phase, tempo one-hot, seeded noise]."""
    if t_lat < 1:
        raise ConfigurationError(f"t_lat must be >= 1, got {t_lat}")
    if d_a < 2 + TEMPO_BUCKETS:
        raise ConfigurationError(f"d_a too small for sin/cos + tempo buckets: {d_a}")
    beats = np.asarray(beats, dtype=np.float64)
    times = np.arange(t_lat, dtype=np.float64) * 8.0 / fps  # chunk-start frames
    phase, local = _beat_phase(times, beats)
    tokens = np.zeros((t_lat, d_a), dtype=np.float32)
    tokens[:, 0] = np.sin(phase)
    tokens[:, 1] = np.cos(phase)
    bucket = np.clip(
        np.floor((local * fps - BUCKET_LO_FRAMES) / BUCKET_STEP_FRAMES).astype(int),
        0,
        TEMPO_BUCKETS - 1,
    )
    tokens[np.arange(t_lat), 2 + bucket] = 1.0
    n_noise = d_a - 2 - TEMPO_BUCKETS
    if n_noise > 0:
        rng = np.random.default_rng(seed)
        tokens[:, 2 + TEMPO_BUCKETS :] = rng.normal(0.0, NOISE_SCALE, size=(t_lat, n_noise))
    return tokens


@dataclass
class TempoShiftSample:
    """Two clips butted together: a sharp tempo (and dancer) change mid-stream."""

    poses: PoseSequence
    beats: np.ndarray
    tokens: np.ndarray
    splice_frame: int


def tempo_shift_concat(
    cfg_a: SynthConfig, cfg_b: SynthConfig, t_each: int, token_seed: int = 0
) -> TempoShiftSample:
    """Concatenate two independently generated clips at frame t_each."""
    if t_each % 4:
        raise ConfigurationError(f"t_each must be a multiple of 4 for token alignment, got {t_each}")
    if cfg_a.fps != cfg_b.fps or cfg_a.K != cfg_b.K:
        raise ConfigurationError("tempo shift halves must share fps and K")
    seq_a, beats_a = synth_pose_sequence(cfg_a, t_each)
    seq_b, beats_b = synth_pose_sequence(cfg_b, t_each)
    data = np.concatenate([seq_a.data, seq_b.data], axis=0)
    poses = PoseSequence(SequenceMeta(fps=cfg_a.fps, frame_count=2 * t_each), data)
    beats = np.concatenate([beats_a, beats_b + t_each / cfg_a.fps])
    tokens = synth_music_tokens(beats, (2 * t_each) // 8, cfg_a.d_a, cfg_a.fps, seed=token_seed)
    return TempoShiftSample(poses=poses, beats=beats, tokens=tokens, splice_frame=t_each)


@dataclass
class CorpusSample:
    poses: PoseSequence
    beats: np.ndarray
    tokens: np.ndarray
    config: SynthConfig


# Periods are twice a prime number of frames so that no two tempos share a
# harmonic: beat grids m·P/2 for different corpus tempos coincide only at rare
# common multiples, which keeps the mismatched-tempo alignment score low and
# makes tempo classes genuinely distinguishable.  Every tempo has beat spacing
# inside the bucket range and at least two full cycles in a 256-frame clip.
CORPUS_PERIODS = (26.0, 34.0, 46.0, 58.0, 74.0, 94.0)


def make_corpus(n: int, base: SynthConfig, frame_count: int, seed: int = 0) -> list[CorpusSample]:
    """n clips with varied tempo, size, and seeds; tokens included."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        cfg = replace(
            base,
            period=float(CORPUS_PERIODS[int(rng.integers(len(CORPUS_PERIODS)))]),
            amplitude=base.amplitude * float(rng.uniform(0.8, 1.2)),
            proportion=float(rng.uniform(0.85, 1.15)),
            screen_scale=float(rng.uniform(0.9, 1.1)),
            seed=int(rng.integers(2**31)),
        )
        poses, beats = synth_pose_sequence(cfg, frame_count)
        tokens = synth_music_tokens(
            beats, frame_count // 8, cfg.d_a, cfg.fps, seed=int(rng.integers(2**31))
        )
        out.append(CorpusSample(poses=poses, beats=beats, tokens=tokens, config=cfg))
    return out
