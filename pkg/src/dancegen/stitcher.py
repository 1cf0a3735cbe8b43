"""Segment-and-stitch long-horizon generation.

Fixed-length segments are sampled left to right. The first segment gets a
shape-only reference (one pose tiled across time); every later segment gets a
pose-aware reference whose first N frames are the previously generated
overlap, re-encoded, with the condition mask flagging exactly those frames.
Overlapping frames are resolved later-wins: the overlap exists to condition
the new segment, not to blend.

An inpainting-style ablation is included for models trained without the
reference channels: the overlap is clamped in latent space at every sampler
step instead of being provided as conditioning input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .conditioning import build_mask
from .denoiser import DenoiserConfig
from .diffusion import NoiseSchedule, SampleConfig, sample_batch
from .errors import ConfigurationError, ShapeError
from .latent import LatentGrid, prefix_element_mask
from .onehot import ChannelLayout, OneHotSequence, encode_sequence
from .pipeline import (
    PipelineConfig,
    latent_to_poses,
    onehot_to_latent,
    reference_latent,
)
from .pose import PoseSequence, SequenceMeta, sequence_from_frames

MODE_SHAPE_ONLY = "shape-only"
MODE_POSE_AWARE = "pose-aware"

COND_REFERENCE = "reference"
COND_INPAINT = "inpaint"


@dataclass(frozen=True)
class SegmentPlan:
    start: int
    n_ref: int  # pose-aware prefix length; 0 for the shape-only segment

    @property
    def mode(self) -> str:
        return MODE_POSE_AWARE if self.n_ref > 0 else MODE_SHAPE_ONLY


@dataclass(frozen=True)
class StitchPlan:
    t_total: int
    segment_len: int
    n_ov: int
    segments: tuple[SegmentPlan, ...]
    truncation_note: str | None = None

    def covered(self) -> int:
        return max(s.start + self.segment_len for s in self.segments)


def plan_segments(
    t_total: int, segment_len: int = 256, n_ov: int = 16, chunk: int = 8
) -> StitchPlan:
    """Segment starts at multiples of (L - N_ov); the tail is end-aligned.

    The final segment starts at t_total - L (rounded up to a multiple of
    `chunk` so every start stays chunk-aligned for arbitrary t_total), so the
    plan covers at least t_total frames and the extra tail is dropped at the
    end; its reference prefix is the (possibly enlarged) overlap with its
    predecessor, clamped to L/2.
    """
    if segment_len < 1:
        raise ConfigurationError(f"segment_len must be >= 1, got {segment_len}")
    if not 0 <= n_ov < segment_len:
        raise ConfigurationError(f"need 0 <= n_ov < segment_len, got n_ov={n_ov}")
    if chunk < 1:
        raise ConfigurationError(f"chunk must be >= 1, got {chunk}")
    if t_total < segment_len:
        return StitchPlan(
            t_total=t_total,
            segment_len=segment_len,
            n_ov=n_ov,
            segments=(SegmentPlan(start=0, n_ref=0),),
            truncation_note=(
                f"requested {t_total} frames < segment_len {segment_len}; "
                f"one segment generated, keep the first {t_total} frames"
            ),
        )
    segments = [SegmentPlan(start=0, n_ref=0)]
    stride = segment_len - n_ov
    while segments[-1].start + segment_len < t_total:
        candidate = segments[-1].start + stride
        prev_end = segments[-1].start + segment_len
        tail = -(-(t_total - segment_len) // chunk) * chunk
        if candidate + segment_len <= t_total:
            segments.append(SegmentPlan(start=candidate, n_ref=n_ov))
        elif tail < prev_end:
            segments.append(
                SegmentPlan(start=tail, n_ref=min(prev_end - tail, segment_len // 2))
            )
        else:
            # the aligned tail would start at or past the generated frames;
            # take one more stride step instead (it covers t_total, with the
            # spare tail frames dropped by the caller)
            segments.append(SegmentPlan(start=candidate, n_ref=n_ov))
    return StitchPlan(
        t_total=t_total, segment_len=segment_len, n_ov=n_ov, segments=tuple(segments)
    )


# ---------------------------------------------------------------------------
# seam statistics


@dataclass(frozen=True)
class SeamRow:
    index: int
    start: int
    n_ref: int
    max_joint_disp: float


@dataclass(frozen=True)
class SeamReport:
    rows: tuple[SeamRow, ...]
    max_seam_disp: float
    median_intra_disp: float

    @property
    def ratio(self) -> float:
        if self.median_intra_disp == 0:
            return float("inf") if self.max_seam_disp > 0 else 0.0
        return self.max_seam_disp / self.median_intra_disp


def _transition_disp(data: np.ndarray) -> np.ndarray:
    """Per-transition max-over-joints displacement, (T-1,)."""
    d = np.linalg.norm(np.diff(data[..., :2], axis=0), axis=-1)
    return d.max(axis=1)


def seam_report(poses: PoseSequence, plan: StitchPlan) -> SeamReport:
    disp = _transition_disp(poses.data)
    seam_transitions = set()
    rows = []
    for i, seg in enumerate(plan.segments):
        if i == 0 or seg.start == 0:
            continue
        t = seg.start - 1  # transition t -> t+1 crosses the ownership boundary
        seam_transitions.add(t)
        rows.append(
            SeamRow(
                index=i,
                start=seg.start,
                n_ref=seg.n_ref,
                max_joint_disp=float(disp[t]),
            )
        )
    intra = [disp[t] for t in range(len(disp)) if t not in seam_transitions]
    return SeamReport(
        rows=tuple(rows),
        max_seam_disp=float(max((r.max_joint_disp for r in rows), default=0.0)),
        median_intra_disp=float(np.median(intra)) if intra else 0.0,
    )


def write_seam_csv(path, report: SeamReport) -> None:
    with open(path, "w") as fh:
        fh.write("seam,start,n_ref,max_joint_disp\n")
        for r in report.rows:
            fh.write(f"{r.index},{r.start},{r.n_ref},{r.max_joint_disp:.8g}\n")
        fh.write(
            f"# max_seam_disp={report.max_seam_disp:.8g} "
            f"median_intra_disp={report.median_intra_disp:.8g}\n"
        )


# ---------------------------------------------------------------------------
# generation


@dataclass
class StitchResult:
    poses: PoseSequence
    plan: StitchPlan
    report: SeamReport


def _prefix_onehot(
    frames: np.ndarray, length: int, cfg: PipelineConfig, layout: ChannelLayout, fps: float
) -> OneHotSequence:
    """Encode n overlap frames and tile them out to a full-length tensor.

    Only the first n columns are ever read back (the pose-aware replacement
    and the inpainting clamp both stop at n); tiling just satisfies shapes.
    """
    n = frames.shape[0]
    seq = sequence_from_frames(frames, fps=fps)
    enc = encode_sequence(seq, cfg.onehot, layout)
    reps = -(-length // n)
    data = np.tile(enc.data, (1, 1, reps))[:, :, :length]
    return OneHotSequence(
        data=data,
        config=enc.config,
        layout=layout,
        meta=SequenceMeta(fps=fps, frame_count=length),
    )


def generate_long(
    denoiser,
    den_cfg: DenoiserConfig,
    pipe: PipelineConfig,
    layout: ChannelLayout,
    ref_frame: np.ndarray,
    music_tokens: np.ndarray,
    t_total: int,
    sched: NoiseSchedule,
    scfg: SampleConfig,
    plan: StitchPlan | None = None,
    conditioning: str = COND_REFERENCE,
    fps: float = 30.0,
) -> StitchResult:
    """Sample a T_total-frame sequence as overlapping stitched segments."""
    if conditioning not in (COND_REFERENCE, COND_INPAINT):
        raise ConfigurationError(f"unknown conditioning mode {conditioning!r}")
    if conditioning == COND_REFERENCE and not den_cfg.ref_cond:
        raise ConfigurationError("reference stitching needs a model trained with ref_cond")
    if conditioning == COND_INPAINT and den_cfg.ref_cond:
        raise ConfigurationError("inpainting ablation needs a model trained without ref_cond")
    if plan is None:
        plan = plan_segments(t_total)
    seg_len = plan.segment_len
    if seg_len % 8:
        raise ConfigurationError(f"segment_len must be divisible by 8, got {seg_len}")
    for seg in plan.segments:
        if seg.start % 8:
            raise ConfigurationError(
                f"segment start {seg.start} not chunk-aligned; pick n_ov with "
                f"(segment_len - n_ov) divisible by 8"
            )
    t_lat_seg = seg_len // 8
    needed_tokens = (max(plan.covered(), t_total) + 7) // 8
    if music_tokens.shape[0] < needed_tokens:
        raise ShapeError(
            f"need {needed_tokens} music tokens to cover the plan, got {music_tokens.shape[0]}"
        )

    gen = torch.Generator().manual_seed(scfg.seed)
    out = np.zeros((plan.covered(), layout.K, 3), dtype=np.float64)
    for seg in plan.segments:
        start = seg.start
        tok = music_tokens[start // 8 : start // 8 + t_lat_seg]
        music = torch.from_numpy(np.asarray(tok, dtype=np.float32))[None]
        prefix_frames = out[start : start + seg.n_ref] if seg.n_ref else None

        if conditioning == COND_REFERENCE:
            prefix_gt = (
                _prefix_onehot(prefix_frames, seg_len, pipe, layout, fps)
                if prefix_frames is not None
                else None
            )
            z_ref = reference_latent(
                ref_frame, seg_len, pipe, layout, fps,
                prefix_gt=prefix_gt, prefix_n=seg.n_ref,
            )
            mask = build_mask(seg.n_ref, z_ref.W_lat, z_ref.T_lat)
            cond = torch.from_numpy(np.concatenate([z_ref.data, mask], axis=0))[None]
            template = z_ref
            known_latent = known_mask = None
        else:
            # shape template for the latent geometry (data unused)
            template = reference_latent(ref_frame, seg_len, pipe, layout, fps)
            cond = None
            known_latent = known_mask = None
            if prefix_frames is not None:
                prefix = _prefix_onehot(prefix_frames, seg_len, pipe, layout, fps)
                z_known = onehot_to_latent(prefix, pipe)
                known_latent = torch.from_numpy(z_known.data)[None]
                km = prefix_element_mask(
                    seg.n_ref, template.C_z, template.W_lat, template.T_lat
                )
                known_mask = torch.from_numpy(km)[None]

        sampled = sample_batch(
            denoiser,
            cond,
            music,
            scfg,
            sched,
            (template.C_z, template.W_lat, template.T_lat),
            generator=gen,
            known_latent=known_latent,
            known_mask=known_mask,
        )
        z = LatentGrid(
            data=sampled[0].numpy().astype(np.float32),
            codec_id=template.codec_id,
            layout=layout,
            onehot_config=template.onehot_config,
            meta=SequenceMeta(fps=fps, frame_count=seg_len),
            pad_slots=template.pad_slots,
        )
        seg_poses = latent_to_poses(z, pipe)
        out[start : start + seg_len] = seg_poses.data  # later segment wins

    poses = PoseSequence(
        meta=SequenceMeta(fps=fps, frame_count=t_total), data=out[:t_total].copy()
    )
    return StitchResult(poses=poses, plan=plan, report=seam_report(poses, plan))
