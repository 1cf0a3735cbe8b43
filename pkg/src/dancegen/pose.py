"""2D pose sequences and the filters that keep them usable.

A pose frame is K keypoints of (x, y, s): coordinates normalized to [0, 1]
and a confidence s in [0, 1], with s = 0 meaning the joint is invisible in
that frame. Sequences carry frame-rate metadata because every downstream
timestamp (beats, seams) is expressed in seconds.

Also home to the plain-text pose stream format:

    #pose2d v1 K=<K> fps=<r>
    x0 y0 s0 x1 y1 s1 ... (3K floats per line, one line per frame)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FileFormatError, SequenceRejected

POSE_STREAM_HEADER = "#pose2d v1"


@dataclass(frozen=True)
class Keypoint2D:
    x: float
    y: float
    s: float


@dataclass(frozen=True)
class HandGroup:
    """One hand: the wrist joint id and the joint ids scaled around it."""

    wrist: int
    members: tuple[int, ...]


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint naming plus optional hand groups and bone edges."""

    joint_names: tuple[str, ...]
    hand_groups: tuple[HandGroup, ...] = ()
    edge_list: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        k = len(self.joint_names)
        seen: set[int] = set()
        for group in self.hand_groups:
            if not (0 <= group.wrist < k):
                raise ConfigurationError(f"hand wrist id {group.wrist} out of range for K={k}")
            if group.wrist in group.members:
                raise ConfigurationError(f"wrist {group.wrist} listed as its own hand member")
            for m in group.members:
                if not (0 <= m < k):
                    raise ConfigurationError(f"hand member id {m} out of range for K={k}")
                if m in seen:
                    raise ConfigurationError(f"joint {m} appears in more than one hand group")
                seen.add(m)
        for a, b in self.edge_list:
            if not (0 <= a < k and 0 <= b < k):
                raise ConfigurationError(f"edge ({a},{b}) out of range for K={k}")

    @property
    def K(self) -> int:
        return len(self.joint_names)


@dataclass(frozen=True)
class SequenceMeta:
    """Frame rate and length; duration is derived so T = round(fps * duration)."""

    fps: float
    frame_count: int

    def __post_init__(self):
        if self.fps <= 0:
            raise ConfigurationError(f"fps must be positive, got {self.fps}")
        if self.frame_count < 0:
            raise ConfigurationError(f"frame_count must be >= 0, got {self.frame_count}")

    @property
    def duration(self) -> float:
        return self.frame_count / self.fps


@dataclass
class PoseSequence:
    """T frames of K joints, stored as a (T, K, 3) float array of (x, y, s)."""

    meta: SequenceMeta
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ConfigurationError(f"pose data must be (T, K, 3), got {self.data.shape}")
        if self.data.shape[0] != self.meta.frame_count:
            raise ConfigurationError(
                f"meta says {self.meta.frame_count} frames, data has {self.data.shape[0]}"
            )

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def K(self) -> int:
        return self.data.shape[1]

    def frame(self, t: int) -> np.ndarray:
        return self.data[t]

    def keypoint(self, t: int, k: int) -> Keypoint2D:
        x, y, s = self.data[t, k]
        return Keypoint2D(float(x), float(y), float(s))


def sequence_from_frames(frames: np.ndarray, fps: float) -> PoseSequence:
    frames = np.asarray(frames, dtype=np.float64)
    return PoseSequence(SequenceMeta(fps=fps, frame_count=frames.shape[0]), frames)


@dataclass(frozen=True)
class Violation:
    frame: int
    joint: int
    field: str
    message: str


def validate_sequence(seq: PoseSequence, skeleton: SkeletonSpec | None = None) -> list[Violation]:
    """Collect range violations instead of raising on the first one.

    An all-zero frame is valid (fully occluded). A sequence whose joint count
    disagrees with the skeleton yields a single joint_count violation.
    """
    out: list[Violation] = []
    if skeleton is not None and seq.K != skeleton.K:
        out.append(
            Violation(-1, -1, "joint_count", f"sequence has K={seq.K}, skeleton expects K={skeleton.K}")
        )
    names = ("x", "y", "s")
    for axis in range(3):
        vals = seq.data[:, :, axis]
        bad = np.argwhere((vals < 0.0) | (vals > 1.0) | ~np.isfinite(vals))
        for t, k in bad:
            out.append(
                Violation(int(t), int(k), names[axis], f"{names[axis]}={vals[t, k]:.6g} outside [0, 1]")
            )
    out.sort(key=lambda v: (v.frame, v.joint))
    return out


# ---------------------------------------------------------------------------
# hand scaling


@dataclass
class HandScaleResult:
    seq: PoseSequence
    clamp_flags: np.ndarray  # (T, K) bool, True where the scaled joint hit [0, 1]


def scale_hands(seq: PoseSequence, skeleton: SkeletonSpec, factor: float) -> HandScaleResult:
    """Scale hand joints outward from their wrist along the wrist->joint ray.

    Wrist positions and confidences never move. Scaled coordinates are clamped
    back into [0, 1]; the returned flags mark exactly the joints whose x or y
    was clamped, because the inverse transform is only exact where no clamp
    fired.
    """
    if factor <= 0:
        raise ConfigurationError(f"hand scale factor must be positive, got {factor}")
    if not skeleton.hand_groups:
        raise ConfigurationError("skeleton defines no hand groups")
    data = seq.data.copy()
    flags = np.zeros((seq.T, seq.K), dtype=bool)
    for group in skeleton.hand_groups:
        wrist = seq.data[:, group.wrist, 0:2]  # (T, 2)
        for m in group.members:
            scaled = wrist + factor * (seq.data[:, m, 0:2] - wrist)
            clamped = np.clip(scaled, 0.0, 1.0)
            flags[:, m] = np.any(scaled != clamped, axis=1)
            data[:, m, 0:2] = clamped
    return HandScaleResult(PoseSequence(seq.meta, data), flags)


def unscale_hands(seq: PoseSequence, skeleton: SkeletonSpec, factor: float) -> PoseSequence:
    """Inverse of scale_hands; exact on joints whose clamp flag was unset."""
    if factor <= 0:
        raise ConfigurationError(f"hand scale factor must be positive, got {factor}")
    if not skeleton.hand_groups:
        raise ConfigurationError("skeleton defines no hand groups")
    data = seq.data.copy()
    for group in skeleton.hand_groups:
        wrist = seq.data[:, group.wrist, 0:2]
        for m in group.members:
            data[:, m, 0:2] = wrist + (seq.data[:, m, 0:2] - wrist) / factor
    return PoseSequence(seq.meta, data)


# ---------------------------------------------------------------------------
# invisibility handling


def interpolate_invisible(
    seq: PoseSequence, max_gap: int = 8, max_invisible_fraction: float = 0.5
) -> PoseSequence:
    """Fill short invisibility gaps by linear interpolation.

    A gap is fillable when the same joint is visible at both ends and the
    visible endpoints are at most max_gap frames apart. Interpolated joints
    get the smaller endpoint confidence. If, after filling, more than
    max_invisible_fraction of all (frame, joint) entries are still invisible
    the sequence is rejected.
    """
    if max_gap < 1:
        raise ConfigurationError(f"max_gap must be >= 1, got {max_gap}")
    data = seq.data.copy()
    T = seq.T
    for k in range(seq.K):
        s = seq.data[:, k, 2]
        visible = np.flatnonzero(s > 0.0)
        if visible.size < 2:
            continue
        for a, b in zip(visible[:-1], visible[1:]):
            if b - a <= 1 or b - a > max_gap:
                continue
            pa, pb = seq.data[a, k], seq.data[b, k]
            s_fill = min(pa[2], pb[2])
            for t in range(a + 1, b):
                w = (t - a) / (b - a)
                data[t, k, 0] = (1.0 - w) * pa[0] + w * pb[0]
                data[t, k, 1] = (1.0 - w) * pa[1] + w * pb[1]
                data[t, k, 2] = s_fill
    fraction = float(np.mean(data[:, :, 2] == 0.0)) if T else 0.0
    if fraction > max_invisible_fraction:
        raise SequenceRejected(
            f"invisible fraction {fraction:.3f} exceeds {max_invisible_fraction:.3f}", fraction
        )
    return PoseSequence(seq.meta, data)


# ---------------------------------------------------------------------------
# shot-change segmentation and frame-rate gate


def inter_frame_diff(seq: PoseSequence) -> np.ndarray:
    """Mean Euclidean displacement over joints visible in both frames.

    Returns (T-1,) values; +inf where the two frames share no visible joint,
    which forces a cut there.
    """
    a, b = seq.data[:-1], seq.data[1:]
    both = (a[:, :, 2] > 0.0) & (b[:, :, 2] > 0.0)
    dist = np.linalg.norm(a[:, :, 0:2] - b[:, :, 0:2], axis=2)
    counts = both.sum(axis=1)
    sums = np.where(both, dist, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore"):
        out = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)
    return out


def segment_by_shot_change(
    seq: PoseSequence, diff_threshold: float, min_len: int = 256
) -> list[PoseSequence]:
    """Cut where the inter-frame difference spikes, keep runs >= min_len.

    The cut lands between t and t+1 whenever diff(t, t+1) > diff_threshold;
    short runs are dropped entirely, so the surviving segments concatenate to
    a subsequence of the input.
    """
    if seq.T == 0:
        return []
    diffs = inter_frame_diff(seq)
    cut_after = np.flatnonzero(diffs > diff_threshold)
    starts = [0] + [int(i) + 1 for i in cut_after]
    ends = [int(i) + 1 for i in cut_after] + [seq.T]
    out = []
    for a, b in zip(starts, ends):
        if b - a >= min_len:
            out.append(
                PoseSequence(SequenceMeta(fps=seq.meta.fps, frame_count=b - a), seq.data[a:b].copy())
            )
    return out


def check_frame_rate(meta: SequenceMeta, lo: float = 20.0, hi: float = 60.0) -> bool:
    """Accept a clip iff lo <= fps <= hi (bounds inclusive)."""
    return lo <= meta.fps <= hi


# ---------------------------------------------------------------------------
# pose stream files


def write_pose_stream(path, seq: PoseSequence) -> None:
    with open(path, "w") as fh:
        fh.write(f"{POSE_STREAM_HEADER} K={seq.K} fps={seq.meta.fps:g}\n")
        for t in range(seq.T):
            fh.write(" ".join(f"{v:.9g}" for v in seq.data[t].reshape(-1)) + "\n")


def read_pose_stream(path, expect_k: int | None = None) -> PoseSequence:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(POSE_STREAM_HEADER):
            raise FileFormatError(f"{path}: bad pose stream header {header!r}")
        fields = dict(part.split("=", 1) for part in header.split()[2:])
        try:
            k = int(fields["K"])
            fps = float(fields["fps"])
        except (KeyError, ValueError) as exc:
            raise FileFormatError(f"{path}: malformed header fields {header!r}") from exc
        if expect_k is not None and k != expect_k:
            raise FileFormatError(f"{path}: stream has K={k}, expected K={expect_k}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != 3 * k:
                raise FileFormatError(
                    f"{path}:{lineno}: expected {3 * k} floats per frame, got {len(vals)}"
                )
            rows.append([float(v) for v in vals])
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), k, 3)
    return PoseSequence(SequenceMeta(fps=fps, frame_count=len(rows)), data)


def read_skeleton_json(path) -> SkeletonSpec:
    """Load a SkeletonSpec from JSON: joint_names, hand_groups, edge_list."""
    with open(path) as fh:
        raw = json.load(fh)
    try:
        groups = tuple(
            HandGroup(wrist=int(g["wrist"]), members=tuple(int(m) for m in g["members"]))
            for g in raw.get("hand_groups", [])
        )
        return SkeletonSpec(
            joint_names=tuple(str(n) for n in raw["joint_names"]),
            hand_groups=groups,
            edge_list=tuple((int(a), int(b)) for a, b in raw.get("edge_list", [])),
        )
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"{path}: malformed skeleton json") from exc
