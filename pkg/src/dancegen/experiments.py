"""Reusable experiment protocols for the learning-based quality gates.

Three drivers live here so the runnable scripts and the acceptance tests
always measure the same thing:

- ``run_binding``: train the denoiser on the rhythm corpus, sample on
  held-out music, and score beat alignment of the generated dances against
  the conditioning music's beats versus a derangement of the evaluation set
  (every clip scored against some *other* clip's beats).
- ``run_indexing_ablation``: time-shared vs legacy rotary indexing, probed
  with spliced two-tempo music: a model that actually reads the music
  time-aligned should switch its dance tempo where the music does.
- ``run_stitch_ablation``: reference-conditioned stitching vs an
  inpainting-style clamping ablation on 3-segment long sequences, compared
  by the worst per-seam joint displacement.

``cached_train`` backs all of them with checkpoint caching keyed by the
full configuration digest, so repeated invocations (tests, then scripts)
train each model once per configuration.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .conditioning import build_mask
from .diffusion import (
    SampleConfig,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    make_schedule,
    sample_batch,
    save_checkpoint,
    train,
)
from .errors import ConfigurationError
from .latent import LatentGrid
from .metrics import beat_align_score, beat_spacing_change_point, detect_dance_beats
from .onehot import ChannelLayout
from .pipeline import latent_to_poses, poses_to_latent, reference_latent
from .pose import PoseSequence
from .rotary import MODE_LEGACY
from .stitcher import COND_INPAINT, COND_REFERENCE, plan_segments, generate_long
from .synth import (
    CORPUS_PERIODS,
    SynthConfig,
    make_corpus,
    synth_music_tokens,
    synth_pose_sequence,
    tempo_shift_concat,
)

# ---------------------------------------------------------------------------
# the shared training recipe


def binding_recipe(steps: int = 2000, seed: int = 0, **overrides) -> TrainConfig:
    """Training recipe used by all three experiment drivers.

    Concentrates half of each batch in the noise band where music is the only
    readable source of swing phase, keeps conditioning dropout low so most
    updates see the music, and uses a moderate learning rate that lets the
    small attention circuits settle.
    """
    kwargs = dict(
        steps=steps,
        seed=seed,
        latent_gain=1.0,
        tau_skew=3.0,
        tau_focus_frac=0.5,
        cond_drop_prob=0.1,
        lr=1e-3,
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# corpus specification and checkpoint caching


@dataclass(frozen=True)
class CorpusSpec:
    """Everything needed to rebuild a training corpus deterministically."""

    n: int = 500
    frame_count: int = 256
    joints: int = 8
    fps: float = 30.0
    seed: int = 0

    def build(self):
        base = SynthConfig(K=self.joints, fps=self.fps)
        return make_corpus(self.n, base, self.frame_count, seed=self.seed)


def config_digest(*parts) -> str:
    """Stable short digest of reprs; frozen dataclasses repr deterministically."""
    h = hashlib.sha256("|".join(repr(p) for p in parts).encode()).hexdigest()
    return h[:16]


def cached_train(spec: CorpusSpec, cfg: TrainConfig, cache_dir=None, log=None) -> TrainResult:
    """Train on the spec'd corpus, or load a previous identical run from disk."""
    if cache_dir is not None:
        ckpt = Path(cache_dir) / f"den_{config_digest(spec, cfg)}"
        if (ckpt / "manifest.txt").exists():
            if log:
                log(f"loading cached checkpoint {ckpt.name}")
            return load_checkpoint(ckpt)
    if log:
        log(f"building corpus (n={spec.n}, T={spec.frame_count}, K={spec.joints})")
    corpus = spec.build()
    if log:
        log(f"training {cfg.steps} steps")
        train_log = lambda step, loss: log(f"  step {step} loss {loss:.5f}")
    else:
        train_log = None
    result = train(corpus, cfg, log=train_log)
    if cache_dir is not None:
        save_checkpoint(result, ckpt)
        if log:
            log(f"saved checkpoint {ckpt.name}")
    return result


# ---------------------------------------------------------------------------
# shared sampling helpers


def _shape_reference(sample_poses, pipe, layout, fps):
    """Shape-only conditioning channels (reference latent + all-zero mask)."""
    ref = reference_latent(sample_poses.data[0], sample_poses.T, pipe, layout, fps)
    mask = build_mask(0, ref.W_lat, ref.T_lat)
    chans = np.concatenate([ref.data, mask], axis=0).astype(np.float32)
    return ref, chans


def _decode_batch(out, templates, layout, pipe):
    seqs = []
    for i, tmpl in enumerate(templates):
        grid = LatentGrid(
            data=out[i].numpy().astype(np.float32),
            codec_id=tmpl.codec_id,
            layout=layout,
            onehot_config=tmpl.onehot_config,
            meta=tmpl.meta,
            pad_slots=tmpl.pad_slots,
        )
        seqs.append(latent_to_poses(grid, pipe))
    return seqs


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        raise ConfigurationError("a derangement needs at least 2 items")
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            return p


# ---------------------------------------------------------------------------
# experiment 1: music binding (train + sample + beat alignment gap)


@dataclass(frozen=True)
class BindingConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    train: TrainConfig = field(default_factory=binding_recipe)
    sample: SampleConfig = field(
        default_factory=lambda: SampleConfig(guidance=4.0, n_steps=50, seed=11)
    )
    n_eval: int = 32
    eval_seed: int = 7000
    shuffle_seed: int = 5


@dataclass(frozen=True)
class BindingReport:
    bas_true: float
    bas_shuffled: float
    gap: float
    per_clip: tuple[tuple[float, float], ...]  # (true, shuffled) per eval clip
    train_wall_s: float
    total_wall_s: float
    param_count: int
    final_loss: float

    def summary(self) -> str:
        return (
            f"BAS(true)={self.bas_true:.3f} BAS(shuffled)={self.bas_shuffled:.3f} "
            f"gap={self.gap:+.3f} params={self.param_count} "
            f"train={self.train_wall_s:.0f}s total={self.total_wall_s:.0f}s"
        )


def run_binding(cfg: BindingConfig, cache_dir=None, log=None) -> BindingReport:
    """Train (or load), sample on held-out music, and score the alignment gap."""
    t0 = time.time()
    result = cached_train(cfg.corpus, cfg.train, cache_dir=cache_dir, log=log)
    den = result.denoiser
    den.eval()

    pipe = cfg.train.pipeline()
    layout = ChannelLayout(cfg.corpus.joints)
    sched = make_schedule(cfg.train.S, cfg.train.schedule_kind)
    eval_corpus = make_corpus(
        cfg.n_eval,
        SynthConfig(K=cfg.corpus.joints, fps=cfg.corpus.fps),
        cfg.corpus.frame_count,
        seed=cfg.eval_seed,
    )
    if log:
        log(f"sampling {cfg.n_eval} held-out clips (guidance={cfg.sample.guidance})")
    conds, musics, templates = [], [], []
    for s in eval_corpus:
        tmpl, chans = _shape_reference(s.poses, pipe, layout, cfg.corpus.fps)
        conds.append(chans)
        musics.append(s.tokens.astype(np.float32))
        templates.append(tmpl)
    cond = torch.from_numpy(np.stack(conds)) if cfg.train.ref_cond else None
    music = torch.from_numpy(np.stack(musics))
    shape = (templates[0].C_z, templates[0].W_lat, templates[0].T_lat)
    out = sample_batch(den, cond, music, cfg.sample, sched, shape)
    decoded = _decode_batch(out, templates, layout, pipe)

    perm = _derangement(cfg.n_eval, np.random.default_rng(cfg.shuffle_seed))
    per_clip = []
    for i, seq in enumerate(decoded):
        dance = detect_dance_beats(seq)
        true_bas = beat_align_score(eval_corpus[i].beats, dance)
        shuf_bas = beat_align_score(eval_corpus[perm[i]].beats, dance)
        per_clip.append((float(true_bas), float(shuf_bas)))
    bas_true = float(np.mean([p[0] for p in per_clip]))
    bas_shuf = float(np.mean([p[1] for p in per_clip]))
    report = BindingReport(
        bas_true=bas_true,
        bas_shuffled=bas_shuf,
        gap=bas_true - bas_shuf,
        per_clip=tuple(per_clip),
        train_wall_s=result.wall_seconds,
        total_wall_s=time.time() - t0,
        param_count=result.param_count,
        final_loss=float(result.loss_curve[-1, 1]) if len(result.loss_curve) else float("nan"),
    )
    if log:
        log(report.summary())
    return report


# ---------------------------------------------------------------------------
# experiment 2: indexing ablation on spliced two-tempo music


@dataclass(frozen=True)
class SpliceRow:
    seed: int
    ts_change_frame: float
    ts_strength: float
    ts_hit: bool
    legacy_change_frame: float
    legacy_strength: float
    legacy_hit: bool
    success: bool  # time-shared tracks the splice AND legacy does not
    bas_ts: float
    bas_legacy: float


@dataclass(frozen=True)
class IndexingAblationReport:
    rows: tuple[SpliceRow, ...]
    n_success: int
    n_seeds: int
    bas_time_shared: float
    bas_legacy: float
    passed: bool

    def summary(self) -> str:
        return (
            f"splice tracked by time-shared only: {self.n_success}/{self.n_seeds}; "
            f"BAS time-shared={self.bas_time_shared:.3f} legacy={self.bas_legacy:.3f}"
        )


@dataclass(frozen=True)
class IndexingAblationConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    train: TrainConfig = field(default_factory=binding_recipe)  # time-shared arm
    sample: SampleConfig = field(
        default_factory=lambda: SampleConfig(guidance=4.0, n_steps=50, seed=0)
    )
    n_seeds: int = 10
    t_each: int = 128  # half-length; total clip is 2*t_each = model geometry
    seed0: int = 9000
    slow_period: float = 94.0
    fast_period: float = 26.0
    max_offset_frames: float = 8.0
    min_strength: float = 0.5
    min_success: int = 7


def _change_point_hit(
    dance_beats: np.ndarray,
    splice_frame: int,
    fps: float,
    max_offset: float,
    min_strength: float,
) -> tuple[float, float, bool]:
    """(change_frame, strength, within-window-and-strong) for one sample."""
    if len(dance_beats) < 4:
        return float("nan"), 0.0, False
    t_change, strength = beat_spacing_change_point(dance_beats)
    frame = t_change * fps
    hit = strength >= min_strength and abs(frame - splice_frame) <= max_offset
    return float(frame), float(strength), bool(hit)


def run_indexing_ablation(
    cfg: IndexingAblationConfig, cache_dir=None, log=None
) -> IndexingAblationReport:
    """Tempo-splice tracking: time-shared vs legacy music indexing."""
    ts_cfg = cfg.train
    legacy_cfg = replace(cfg.train, indexing=MODE_LEGACY)
    ts_model = cached_train(cfg.corpus, ts_cfg, cache_dir=cache_dir, log=log)
    legacy_model = cached_train(cfg.corpus, legacy_cfg, cache_dir=cache_dir, log=log)
    ts_model.denoiser.eval()
    legacy_model.denoiser.eval()

    pipe = cfg.train.pipeline()
    layout = ChannelLayout(cfg.corpus.joints)
    sched = make_schedule(cfg.train.S, cfg.train.schedule_kind)
    fps = cfg.corpus.fps
    if 2 * cfg.t_each != cfg.corpus.frame_count:
        raise ConfigurationError(
            f"splice clip length {2 * cfg.t_each} must equal the trained "
            f"geometry {cfg.corpus.frame_count}"
        )

    rows = []
    for i in range(cfg.n_seeds):
        seed = cfg.seed0 + i
        half_a = SynthConfig(K=cfg.corpus.joints, fps=fps, period=cfg.slow_period, seed=seed)
        half_b = SynthConfig(
            K=cfg.corpus.joints, fps=fps, period=cfg.fast_period, seed=seed + 100_000
        )
        splice = tempo_shift_concat(half_a, half_b, cfg.t_each, token_seed=seed)
        tmpl, chans = _shape_reference(splice.poses, pipe, layout, fps)
        cond = torch.from_numpy(chans)[None] if cfg.train.ref_cond else None
        music = torch.from_numpy(splice.tokens.astype(np.float32))[None]
        scfg = replace(cfg.sample, seed=cfg.sample.seed + i)
        shape = (tmpl.C_z, tmpl.W_lat, tmpl.T_lat)

        detected = {}
        for name, model in (("ts", ts_model), ("legacy", legacy_model)):
            out = sample_batch(model.denoiser, cond, music, scfg, sched, shape)
            seq = _decode_batch(out, [tmpl], layout, pipe)[0]
            detected[name] = detect_dance_beats(seq)
        ts_frame, ts_strength, ts_hit = _change_point_hit(
            detected["ts"], splice.splice_frame, fps, cfg.max_offset_frames, cfg.min_strength
        )
        lg_frame, lg_strength, lg_hit = _change_point_hit(
            detected["legacy"], splice.splice_frame, fps, cfg.max_offset_frames, cfg.min_strength
        )
        row = SpliceRow(
            seed=seed,
            ts_change_frame=ts_frame,
            ts_strength=ts_strength,
            ts_hit=ts_hit,
            legacy_change_frame=lg_frame,
            legacy_strength=lg_strength,
            legacy_hit=lg_hit,
            success=ts_hit and not lg_hit,
            bas_ts=beat_align_score(splice.beats, detected["ts"]),
            bas_legacy=beat_align_score(splice.beats, detected["legacy"]),
        )
        rows.append(row)
        if log:
            log(
                f"seed {seed}: ts change@{ts_frame:.0f} (s={ts_strength:.2f}, hit={ts_hit}) "
                f"legacy change@{lg_frame:.0f} (s={lg_strength:.2f}, hit={lg_hit})"
            )
    n_success = sum(r.success for r in rows)
    bas_ts = float(np.mean([r.bas_ts for r in rows]))
    bas_legacy = float(np.mean([r.bas_legacy for r in rows]))
    report = IndexingAblationReport(
        rows=tuple(rows),
        n_success=n_success,
        n_seeds=cfg.n_seeds,
        bas_time_shared=bas_ts,
        bas_legacy=bas_legacy,
        passed=n_success >= cfg.min_success and bas_ts >= bas_legacy,
    )
    if log:
        log(report.summary())
    return report


# ---------------------------------------------------------------------------
# experiment 3: stitching ablation (reference conditioning vs inpainting)


@dataclass(frozen=True)
class StitchRow:
    seed: int
    ref_max_seam: float
    inpaint_max_seam: float
    ref_ratio: float
    inpaint_ratio: float
    success: bool  # reference arm strictly smoother at the worst seam


@dataclass(frozen=True)
class StitchAblationReport:
    rows: tuple[StitchRow, ...]
    n_success: int
    n_seeds: int
    passed: bool

    def summary(self) -> str:
        return f"reference beats inpainting on {self.n_success}/{self.n_seeds} paired seeds"


@dataclass(frozen=True)
class StitchAblationConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    train: TrainConfig = field(default_factory=binding_recipe)  # reference arm (ref_cond=True)
    sample: SampleConfig = field(
        default_factory=lambda: SampleConfig(guidance=2.0, n_steps=50, seed=0)
    )
    n_seeds: int = 10
    t_total: int = 736
    n_overlap: int = 16
    seed0: int = 4000
    min_success: int = 8


def run_stitch_ablation(
    cfg: StitchAblationConfig, cache_dir=None, log=None
) -> StitchAblationReport:
    """Seam quality of reference-conditioned vs inpainting-style stitching."""
    if not cfg.train.ref_cond:
        raise ConfigurationError("the stitch ablation's base recipe must have ref_cond=True")
    ref_model = cached_train(cfg.corpus, cfg.train, cache_dir=cache_dir, log=log)
    inpaint_model = cached_train(
        cfg.corpus, replace(cfg.train, ref_cond=False), cache_dir=cache_dir, log=log
    )
    ref_model.denoiser.eval()
    inpaint_model.denoiser.eval()

    pipe = cfg.train.pipeline()
    layout = ChannelLayout(cfg.corpus.joints)
    sched = make_schedule(cfg.train.S, cfg.train.schedule_kind)
    fps = cfg.corpus.fps
    seg_len = cfg.corpus.frame_count
    plan = plan_segments(cfg.t_total, segment_len=seg_len, n_ov=cfg.n_overlap)

    rows = []
    for i in range(cfg.n_seeds):
        seed = cfg.seed0 + i
        period = float(CORPUS_PERIODS[i % len(CORPUS_PERIODS)])
        music_src = SynthConfig(K=cfg.corpus.joints, fps=fps, period=period, seed=seed)
        src_poses, beats = synth_pose_sequence(music_src, cfg.t_total)
        tokens = synth_music_tokens(beats, cfg.t_total // 8, music_src.d_a, fps, seed=seed)
        scfg = replace(cfg.sample, seed=cfg.sample.seed + i)

        results = {}
        for name, model, mode in (
            ("ref", ref_model, COND_REFERENCE),
            ("inpaint", inpaint_model, COND_INPAINT),
        ):
            results[name] = generate_long(
                model.denoiser,
                model.denoiser_config,
                pipe,
                layout,
                src_poses.data[0],
                tokens,
                cfg.t_total,
                sched,
                scfg,
                plan=plan,
                conditioning=mode,
                fps=fps,
            )
        ref_rep = results["ref"].report
        inp_rep = results["inpaint"].report
        row = StitchRow(
            seed=seed,
            ref_max_seam=ref_rep.max_seam_disp,
            inpaint_max_seam=inp_rep.max_seam_disp,
            ref_ratio=ref_rep.ratio,
            inpaint_ratio=inp_rep.ratio,
            success=ref_rep.max_seam_disp < inp_rep.max_seam_disp,
        )
        rows.append(row)
        if log:
            log(
                f"seed {seed}: max seam disp reference={row.ref_max_seam:.4f} "
                f"inpainting={row.inpaint_max_seam:.4f}"
            )
    n_success = sum(r.success for r in rows)
    report = StitchAblationReport(
        rows=tuple(rows),
        n_success=n_success,
        n_seeds=cfg.n_seeds,
        passed=n_success >= cfg.min_success,
    )
    if log:
        log(report.summary())
    return report
