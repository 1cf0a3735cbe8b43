"""Variance-preserving diffusion: schedules, training loop, ancestral sampler.

The forward process is Z_tau = alpha_tau * Z + sigma_tau * eps with
alpha^2 + sigma^2 = 1 (both derived from one alpha_bar table, so the identity
holds by construction at every step). The model is trained to predict eps
with plain MSE; conditioning rides along as extra input channels (reference
latent + pose-aware mask) and music tokens, with classifier-free guidance
enabled by randomly swapping the music for a learned null token.

Optimization uses AdamW, i.e. Adam moment estimates with decoupled weight
decay: for each parameter p with gradient g,
    m <- beta1 * m + (1 - beta1) * g
    v <- beta2 * v + (1 - beta2) * g^2
    p <- p - lr * (m_hat / (sqrt(v_hat) + eps_adam) + weight_decay * p)
where m_hat, v_hat are bias-corrected. The learning rate warms up linearly
then follows a half-cosine down to 10% of peak. Fixed seeds make the loss
curve bit-reproducible on a machine for a given thread count.
"""

from __future__ import annotations

import math
import re
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .conditioning import build_mask
from .container import read_manifest, read_tensor, write_manifest, write_tensor
from .denoiser import DenoiserConfig, ToyDenoiser, count_parameters
from .errors import ConfigurationError, NumericalError, ShapeError
from .latent import CodecConfig, LatentGrid
from .onehot import ChannelLayout, OneHotConfig, OneHotSequence, encode_sequence
from .pipeline import PipelineConfig, poses_to_latent, reference_latent
from .pose import PoseSequence, SequenceMeta
from .rotary import MODE_TIME_SHARED
from .synth import CorpusSample

SCHEDULE_COSINE = "cosine"
SCHEDULE_LINEAR = "linear"


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha_bar[tau] for tau in 0..S, with alpha_bar[0] = 1 (no noise)."""

    kind: str
    S: int
    alpha_bar: np.ndarray

    def alpha(self, tau) -> np.ndarray:
        return np.sqrt(self.alpha_bar[tau])

    def sigma(self, tau) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar[tau])


def make_schedule(S: int = 1000, kind: str = SCHEDULE_COSINE) -> NoiseSchedule:
    if S < 1:
        raise ConfigurationError(f"schedule needs S >= 1, got {S}")
    tau = np.arange(S + 1, dtype=np.float64)
    if kind == SCHEDULE_COSINE:
        s = 0.008
        f = np.cos((tau / S + s) / (1.0 + s) * math.pi / 2.0) ** 2
        alpha_bar = f / f[0]
    elif kind == SCHEDULE_LINEAR:
        # DDPM betas calibrated for S=1000, rescaled for other S
        scale = 1000.0 / S
        betas = np.linspace(1e-4 * scale, 0.02 * scale, S)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    else:
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    alpha_bar = np.clip(alpha_bar, 1e-8, 1.0)
    alpha_bar[0] = 1.0
    return NoiseSchedule(kind=kind, S=S, alpha_bar=alpha_bar)


def forward_noise(z: np.ndarray, tau: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Z_tau = alpha_tau * Z + sigma_tau * eps."""
    if not 1 <= tau <= sched.S:
        raise ConfigurationError(f"tau must be in 1..{sched.S}, got {tau}")
    if eps.shape != z.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match z {z.shape}")
    return sched.alpha(tau) * z + sched.sigma(tau) * eps


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class TrainConfig:
    # data / pipeline
    onehot_width: int = 32
    soften_sigma: float = 1.0
    codec_mode: str = "lossless-patch"
    codec_seed: int = 0
    latent_gain: float = 8.0
    # model
    c_cell: int = 96
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    mlp_ratio: float = 2.0
    pose_patch_w: int = 0
    attn_align_init: float = 2.4
    indexing: str = MODE_TIME_SHARED
    ref_cond: bool = True
    # diffusion
    S: int = 1000
    schedule_kind: str = SCHEDULE_COSINE
    # conditioning
    cond_drop_prob: float = 0.3
    replace_prob: float = 0.5
    ref_prefix_n: int = 16
    # training-step distribution: density proportional to tau^tau_skew, so 0
    # is uniform and larger values spend more batches at the noisy end of the
    # schedule, where the conditioning signal is the only way to tell samples
    # apart (the low-noise end barely needs it and trains quickly regardless).
    tau_skew: float = 0.0
    # On top of the skewed draw, divert this fraction of every batch to a
    # uniform draw over [tau_focus_lo, tau_focus_hi]. Music carries weight in
    # the loss only in the band where the noisy latent still reveals the
    # skeleton but no longer reveals the swing phase; concentrating steps
    # there makes that weight a usable gradient signal instead of a rounding
    # error.
    tau_focus_frac: float = 0.0
    tau_focus_lo: int = 840
    tau_focus_hi: int = 975
    # optimization
    steps: int = 2000
    batch_size: int = 16
    lr: float = 2e-3
    weight_decay: float = 0.02
    warmup_steps: int = 100
    final_lr_ratio: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    seed: int = 0
    threads: int = 1
    cache_latents: bool = True

    def __post_init__(self):
        if self.tau_skew < 0:
            raise ConfigurationError(f"tau_skew must be >= 0, got {self.tau_skew}")
        if not 0.0 <= self.tau_focus_frac <= 1.0:
            raise ConfigurationError(
                f"tau_focus_frac must be in [0, 1], got {self.tau_focus_frac}"
            )
        if not 1 <= self.tau_focus_lo <= self.tau_focus_hi <= self.S:
            raise ConfigurationError(
                f"tau focus band [{self.tau_focus_lo}, {self.tau_focus_hi}] "
                f"must satisfy 1 <= lo <= hi <= S={self.S}"
            )

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            onehot=OneHotConfig(width=self.onehot_width, soften_sigma=self.soften_sigma),
            codec=CodecConfig(mode=self.codec_mode, seed=self.codec_seed),
            latent_gain=self.latent_gain,
        )


@dataclass(frozen=True)
class SampleConfig:
    guidance: float = 2.0
    n_steps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.guidance < 0:
            raise ConfigurationError(f"guidance must be >= 0, got {self.guidance}")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")


# ---------------------------------------------------------------------------
# loss


def denoising_loss(
    denoiser: nn.Module,
    z_clean: torch.Tensor,
    cond_channels: torch.Tensor | None,
    music: torch.Tensor,
    tau: torch.Tensor,
    eps: torch.Tensor,
    sched: NoiseSchedule,
    music_drop: torch.Tensor | None = None,
) -> torch.Tensor:
    """MSE between predicted and true eps at the given steps.

    Deterministic given its inputs; train() supplies the randomness. The
    conditioning channels (reference latent + mask), when present, are
    concatenated after the noised latent.
    """
    ab = torch.from_numpy(sched.alpha_bar).to(z_clean.dtype)
    a = ab[tau].sqrt().view(-1, *([1] * (z_clean.ndim - 1)))
    s = (1.0 - ab[tau]).sqrt().view(-1, *([1] * (z_clean.ndim - 1)))
    z_tau = a * z_clean + s * eps
    model_in = z_tau if cond_channels is None else torch.cat([z_tau, cond_channels], dim=1)
    eps_hat = denoiser(model_in, music, tau, music_drop=music_drop)
    return torch.mean((eps - eps_hat) ** 2)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    denoiser: ToyDenoiser
    denoiser_config: DenoiserConfig
    config: TrainConfig
    loss_curve: np.ndarray  # (steps, 2): step index, loss
    wall_seconds: float
    param_count: int
    joints: int  # K of the training corpus (not derivable from channel counts)


class _CorpusEncoder:
    """Per-sample encode pipeline with optional clean-latent caching."""

    def __init__(self, corpus: list[CorpusSample], cfg: TrainConfig):
        if not corpus:
            raise ConfigurationError("corpus is empty")
        self.corpus = corpus
        self.cfg = cfg
        self.pipe = cfg.pipeline()
        k = corpus[0].poses.K
        self.layout = ChannelLayout(k)
        self.T = corpus[0].poses.T
        if self.T % 8:
            raise ShapeError(f"clip length {self.T} not divisible by 8")
        self.t_lat = self.T // 8
        self.w_lat = cfg.onehot_width // 8
        self.fps = corpus[0].poses.meta.fps
        for s in corpus:
            if s.poses.K != k or s.poses.T != self.T:
                raise ShapeError("corpus clips must share K and T")
        self.music = torch.from_numpy(np.stack([s.tokens for s in corpus])).float()
        self._cache: list[torch.Tensor | None] = [None] * len(corpus)

    @property
    def latent_channels(self) -> int:
        groups = (self.layout.C + 2) // 3
        return self.pipe.codec.channels(groups)

    def clean_latent(self, i: int) -> torch.Tensor:
        if self._cache[i] is None:
            z = poses_to_latent(self.corpus[i].poses, self.pipe, self.layout)
            t = torch.from_numpy(z.data)
            if not self.cfg.cache_latents:
                return t
            self._cache[i] = t
        return self._cache[i]

    def reference_channels(self, i: int, ref_frame_idx: int, eff_n: int) -> torch.Tensor:
        """[z_ref || mask] channels for sample i with an effective prefix of eff_n."""
        sample = self.corpus[i]
        ref_frame = sample.poses.data[ref_frame_idx]
        prefix_gt = None
        if eff_n > 0:
            chunk_frames = ((eff_n + 7) // 8) * 8
            prefix_seq = PoseSequence(
                SequenceMeta(fps=self.fps, frame_count=chunk_frames),
                sample.poses.data[:chunk_frames],
            )
            prefix_gt = encode_sequence(prefix_seq, self.pipe.onehot, self.layout)
        z_ref = reference_latent(
            ref_frame,
            self.T,
            self.pipe,
            self.layout,
            self.fps,
            prefix_gt=self._pad_prefix(prefix_gt) if prefix_gt is not None else None,
            prefix_n=eff_n,
        )
        mask = build_mask(eff_n, self.w_lat, self.t_lat)
        return torch.cat([torch.from_numpy(z_ref.data), torch.from_numpy(mask)], dim=0)

    def _pad_prefix(self, prefix: OneHotSequence) -> OneHotSequence:
        # reference_latent replaces [:n] columns; it needs a gt tensor at full T.
        # Only the first n columns are read, so tile the prefix out to T cheaply.
        data = prefix.data
        if data.shape[2] < self.T:
            reps = -(-self.T // data.shape[2])
            data = np.tile(data, (1, 1, reps))[:, :, : self.T]
        return OneHotSequence(
            data=data,
            config=prefix.config,
            layout=prefix.layout,
            meta=SequenceMeta(fps=self.fps, frame_count=self.T),
        )


def train(corpus: list[CorpusSample], cfg: TrainConfig, log=None) -> TrainResult:
    """Train a ToyDenoiser on a synthetic corpus; deterministic per seed."""
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 1)

    enc = _CorpusEncoder(corpus, cfg)
    den_cfg = DenoiserConfig(
        latent_channels=enc.latent_channels,
        w_lat=enc.w_lat,
        t_lat=enc.t_lat,
        d_a=corpus[0].tokens.shape[1],
        ref_cond=cfg.ref_cond,
        indexing=cfg.indexing,
        c_cell=cfg.c_cell,
        d_model=cfg.d_model,
        n_layers=cfg.n_layers,
        n_heads=cfg.n_heads,
        mlp_ratio=cfg.mlp_ratio,
        pose_patch_w=cfg.pose_patch_w,
        attn_align_init=cfg.attn_align_init,
        max_step=cfg.S,
    )
    model = ToyDenoiser(den_cfg)
    sched = make_schedule(cfg.S, cfg.schedule_kind)
    opt = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.lr,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )

    def lr_at(step: int) -> float:
        if step < cfg.warmup_steps:
            return (step + 1) / cfg.warmup_steps
        span = max(cfg.steps - cfg.warmup_steps, 1)
        progress = (step - cfg.warmup_steps) / span
        lo = cfg.final_lr_ratio
        return lo + (1.0 - lo) * 0.5 * (1.0 + math.cos(math.pi * progress))

    curve = np.zeros((cfg.steps, 2), dtype=np.float64)
    t0 = time.time()
    n = len(corpus)
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=cfg.batch_size)
        z_clean = torch.stack([enc.clean_latent(int(i)) for i in idx])
        cond = None
        if cfg.ref_cond:
            conds = []
            for i in idx:
                ref_frame_idx = int(rng.integers(enc.T))
                heads = bool(rng.random() < cfg.replace_prob)
                eff_n = cfg.ref_prefix_n if heads and cfg.ref_prefix_n > 0 else 0
                conds.append(enc.reference_channels(int(i), ref_frame_idx, eff_n))
            cond = torch.stack(conds)
        music = enc.music[idx]
        # inverse-CDF draw of tau with density ~ tau^tau_skew (uniform at 0)
        u = rng.random(cfg.batch_size)
        tau_f = np.ceil(cfg.S * u ** (1.0 / (1.0 + cfg.tau_skew)))
        tau_f = np.clip(tau_f, 1, cfg.S)
        if cfg.tau_focus_frac > 0.0:
            in_band = rng.random(cfg.batch_size) < cfg.tau_focus_frac
            tau_f = np.where(
                in_band,
                rng.integers(cfg.tau_focus_lo, cfg.tau_focus_hi + 1, size=cfg.batch_size),
                tau_f,
            )
        tau = torch.from_numpy(tau_f.astype(np.int64))
        eps = torch.randn(z_clean.shape, generator=gen)
        drop = torch.from_numpy(rng.random(cfg.batch_size) < cfg.cond_drop_prob)

        for group in opt.param_groups:
            group["lr"] = cfg.lr * lr_at(step)
        opt.zero_grad()
        loss = denoising_loss(model, z_clean, cond, music, tau, eps, sched, music_drop=drop)
        if not torch.isfinite(loss):
            raise NumericalError(f"loss became non-finite at step {step}")
        loss.backward()
        opt.step()
        loss_val = float(loss.detach())
        curve[step] = (step, loss_val)
        if log is not None and (step % 100 == 0 or step == cfg.steps - 1):
            log(step, loss_val)

    return TrainResult(
        denoiser=model,
        denoiser_config=den_cfg,
        config=cfg,
        loss_curve=curve,
        wall_seconds=time.time() - t0,
        param_count=count_parameters(model),
        joints=enc.layout.K,
    )


# ---------------------------------------------------------------------------
# sampling


def guided_eps(
    denoiser: nn.Module,
    model_in: torch.Tensor,
    music: torch.Tensor,
    tau: torch.Tensor,
    guidance: float,
) -> torch.Tensor:
    """Classifier-free guided prediction, affine in the guidance weight."""
    if guidance == 1.0:
        return denoiser(model_in, music, tau, music_drop=None)
    uncond = denoiser(model_in, music, tau, music_drop=torch.ones(len(model_in), dtype=torch.bool))
    if guidance == 0.0:
        return uncond
    cond = denoiser(model_in, music, tau, music_drop=None)
    return uncond + guidance * (cond - uncond)


def sampling_steps(S: int, n_steps: int) -> list[int]:
    """Descending step indices with uniform stride, always ending near 1."""
    taus = np.unique(np.round(np.linspace(S, 1, min(n_steps, S))).astype(int))[::-1]
    return [int(t) for t in taus]


def sample_batch(
    denoiser: nn.Module,
    cond_channels: torch.Tensor | None,
    music: torch.Tensor,
    scfg: SampleConfig,
    sched: NoiseSchedule,
    latent_shape: tuple[int, int, int],
    generator: torch.Generator | None = None,
    known_latent: torch.Tensor | None = None,
    known_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Ancestral sampling (eta = 1) over a uniformly-strided step subset.

    known_latent/known_mask enable inpainting: after every update, elements
    where the mask is 1 are overwritten with the forward-noised known latent
    at the new step, so the free region must stay consistent with the clamp.
    """
    if generator is None:
        generator = torch.Generator().manual_seed(scfg.seed)
    batch = music.shape[0]
    ab = sched.alpha_bar
    taus = sampling_steps(sched.S, scfg.n_steps)
    x = torch.randn((batch,) + latent_shape, generator=generator)
    if known_latent is not None:
        noise = torch.randn(x.shape, generator=generator)
        a0, s0 = math.sqrt(ab[taus[0]]), math.sqrt(1.0 - ab[taus[0]])
        x = torch.where(known_mask > 0, a0 * known_latent + s0 * noise, x)
    with torch.no_grad():
        for hi, lo in zip(taus, list(taus[1:]) + [0]):
            tau_t = torch.full((batch,), hi, dtype=torch.int64)
            model_in = x if cond_channels is None else torch.cat([x, cond_channels], dim=1)
            eps_hat = guided_eps(denoiser, model_in, music, tau_t, scfg.guidance)
            ab_hi, ab_lo = float(ab[hi]), float(ab[lo])
            var = (1.0 - ab_lo) / (1.0 - ab_hi) * (1.0 - ab_hi / ab_lo)
            var = max(var, 0.0)
            coef_x = math.sqrt(ab_lo / ab_hi)
            coef_eps = math.sqrt(max(1.0 - ab_lo - var, 0.0)) - coef_x * math.sqrt(1.0 - ab_hi)
            x = coef_x * x + coef_eps * eps_hat
            if var > 0:
                x = x + math.sqrt(var) * torch.randn(x.shape, generator=generator)
            if known_latent is not None:
                if lo == 0:
                    x = torch.where(known_mask > 0, known_latent, x)
                else:
                    noise = torch.randn(x.shape, generator=generator)
                    a_lo, s_lo = math.sqrt(ab_lo), math.sqrt(1.0 - ab_lo)
                    x = torch.where(known_mask > 0, a_lo * known_latent + s_lo * noise, x)
    return x


def sample(
    denoiser: nn.Module,
    z_ref: LatentGrid | None,
    mask: np.ndarray | None,
    music_tokens: np.ndarray,
    scfg: SampleConfig,
    sched: NoiseSchedule,
    template: LatentGrid,
) -> LatentGrid:
    """Single-sequence convenience wrapper returning a LatentGrid.

    template supplies the latent geometry and decode metadata (codec id,
    layout, pad slots); z_ref and mask may be None for an unconditional
    model.
    """
    cond = None
    if z_ref is not None:
        if mask is None:
            raise ConfigurationError("mask is required when a reference latent is given")
        cond = torch.from_numpy(
            np.concatenate([z_ref.data, mask.astype(np.float32)], axis=0)
        )[None]
    music = torch.from_numpy(np.asarray(music_tokens, dtype=np.float32))[None]
    shape = (template.C_z, template.W_lat, template.T_lat)
    out = sample_batch(denoiser, cond, music, scfg, sched, shape)
    return LatentGrid(
        data=out[0].numpy().astype(np.float32),
        codec_id=template.codec_id,
        layout=template.layout,
        onehot_config=template.onehot_config,
        meta=template.meta,
        pad_slots=template.pad_slots,
    )


# ---------------------------------------------------------------------------
# checkpoints and loss curves


def save_loss_curve(path, curve: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for step, loss in curve:
            fh.write(f"{int(step)},{loss:.8g}\n")


def load_loss_curve(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "step,loss":
            raise ConfigurationError(f"{path}: expected 'step,loss' header, got {header!r}")
        for line in fh:
            if line.strip():
                step, loss = line.split(",")
                rows.append((int(step), float(loss)))
    return np.asarray(rows, dtype=np.float64)


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def save_checkpoint(result: TrainResult, ckpt_dir) -> None:
    """One P2DT tensor per parameter plus a key=value manifest."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    entries: dict[str, str] = {"format": "dancegen-checkpoint-v1"}
    state = result.denoiser.state_dict()
    for name, tensor in state.items():
        fname = f"param__{_sanitize(name)}.p2dt"
        write_tensor(ckpt_dir / fname, tensor.detach().numpy())
        entries[f"tensor.{name}"] = fname
    for f in fields(DenoiserConfig):
        entries[f"denoiser.{f.name}"] = repr(getattr(result.denoiser_config, f.name))
    for f in fields(TrainConfig):
        entries[f"train.{f.name}"] = repr(getattr(result.config, f.name))
    entries["param_count"] = str(result.param_count)
    entries["wall_seconds"] = f"{result.wall_seconds:.3f}"
    entries["joints"] = str(result.joints)
    write_manifest(ckpt_dir / "manifest.txt", entries)
    save_loss_curve(ckpt_dir / "loss_curve.csv", result.loss_curve)


def _parse_literal(raw: str):
    import ast

    return ast.literal_eval(raw)


def load_checkpoint(ckpt_dir) -> TrainResult:
    ckpt_dir = Path(ckpt_dir)
    entries = read_manifest(ckpt_dir / "manifest.txt")
    if entries.get("format") != "dancegen-checkpoint-v1":
        raise ConfigurationError(f"{ckpt_dir}: not a dancegen checkpoint")
    if "joints" not in entries:
        # K is not derivable from channel counts (triplet padding), so a
        # checkpoint without it cannot be decoded
        raise ConfigurationError(f"{ckpt_dir}: checkpoint manifest missing 'joints'")
    den_kwargs = {
        f.name: _parse_literal(entries[f"denoiser.{f.name}"])
        for f in fields(DenoiserConfig)
        if f"denoiser.{f.name}" in entries
    }
    train_kwargs = {
        f.name: _parse_literal(entries[f"train.{f.name}"])
        for f in fields(TrainConfig)
        if f"train.{f.name}" in entries
    }
    den_cfg = DenoiserConfig(**den_kwargs)
    model = ToyDenoiser(den_cfg)
    state = {}
    for key, fname in entries.items():
        if key.startswith("tensor."):
            state[key[len("tensor.") :]] = torch.from_numpy(read_tensor(ckpt_dir / fname))
    model.load_state_dict(state)
    curve_path = ckpt_dir / "loss_curve.csv"
    curve = load_loss_curve(curve_path) if curve_path.exists() else np.zeros((0, 2))
    return TrainResult(
        denoiser=model,
        denoiser_config=den_cfg,
        config=TrainConfig(**train_kwargs),
        loss_curve=curve,
        wall_seconds=float(entries.get("wall_seconds", "0")),
        param_count=int(entries.get("param_count", "0")),
        joints=int(entries["joints"]),
    )
