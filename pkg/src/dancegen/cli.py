"""Command-line front end.

Subcommands bind the library into a deployment flow: encode/decode pose
streams, synthesize a corpus, train, sample, stitch long sequences, evaluate
directories, render SVG skeletons, and inspect masks/affinity. Every run
writes a key=value manifest snapshotting the resolved configuration and
hashing the artifacts it produced, so identical manifests mean rerunnable
outputs.

Configuration precedence: command-line flags > --config file (flat
key=value, keys matching flag names) > built-in defaults.

Exit codes: 0 success, 2 validation/configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .conditioning import build_mask, mask_ascii
from .container import read_manifest, read_tensor, write_manifest, write_tensor
from .diffusion import (
    SampleConfig,
    TrainConfig,
    load_checkpoint,
    make_schedule,
    sample,
    save_checkpoint,
    train,
)
from .errors import (
    ConfigurationError,
    FileFormatError,
    NumericalError,
    SequenceRejected,
    ShapeError,
)
from .metrics import (
    FeatureStats,
    beat_align_score,
    detect_dance_beats,
    diversity,
    frechet_distance,
    kinetic_features,
)
from .onehot import (
    ChannelLayout,
    OneHotConfig,
    OneHotSequence,
    decode_sequence,
    encode_sequence,
)
from .pipeline import latent_to_poses, reference_latent
from .pose import (
    SequenceMeta,
    read_pose_stream,
    read_skeleton_json,
    scale_hands,
    unscale_hands,
    write_pose_stream,
)
from .render import render_sequence
from .rotary import (
    MODE_LEGACY,
    MODE_TIME_SHARED,
    RotaryConfig,
    assign_indices,
    cross_affinity,
    cross_affinity_parts,
)
from .stitcher import COND_REFERENCE, generate_long, plan_segments, write_seam_csv
from .synth import CorpusSample, SynthConfig, make_corpus

_UNSET = object()


def _onoff(raw: str) -> bool:
    low = str(raw).strip().lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise ConfigurationError(f"expected on|off, got {raw!r}")


def _load_config_file(path) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FileFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


class Command:
    """One subcommand: declared options, precedence merge, manifest plumbing."""

    def __init__(self, name: str, help_text: str, run):
        self.name = name
        self.help = help_text
        self.run = run
        self.options: list[tuple[str, type, object, str]] = []

    def opt(self, flag: str, typ, default, help_text: str):
        self.options.append((flag, typ, default, help_text))
        return self

    def register(self, subparsers) -> None:
        p = subparsers.add_parser(self.name, help=self.help)
        p.add_argument("--config", default=None, help="flat key=value config file")
        for flag, typ, default, help_text in self.options:
            kind = str if typ is bool else typ
            p.add_argument(
                f"--{flag}", type=kind, default=_UNSET, help=f"{help_text} (default {default})"
            )
        p.set_defaults(_command=self)

    def resolve(self, args) -> dict:
        file_values = _load_config_file(args.config) if args.config else {}
        resolved = {}
        for flag, typ, default, _ in self.options:
            key = flag.replace("-", "_")
            coerce = _onoff if typ is bool else typ
            raw = getattr(args, key)
            if raw is not _UNSET:
                resolved[key] = _onoff(raw) if typ is bool else raw
            elif key in file_values:
                resolved[key] = coerce(file_values[key])
            else:
                resolved[key] = default
        return resolved


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_run_manifest(target, command: str, cfg: dict, inputs: list, outputs: list) -> None:
    target = Path(target)
    if target.is_dir():
        path = target / "run_manifest.txt"
    else:
        path = target.with_name(target.name + ".run.txt")
    entries = {"command": command, "version": __version__}
    for key, val in cfg.items():
        entries[f"cfg.{key}"] = str(val)
    for i, item in enumerate(inputs):
        entries[f"input.{i}"] = str(item)
    for i, item in enumerate(outputs):
        entries[f"output.{i}"] = str(item)
        p = Path(item)
        if p.is_file():
            entries[f"sha256.{p.name}"] = _sha256(p)
    write_manifest(path, entries)


def _maybe_skeleton(cfg):
    return read_skeleton_json(cfg["skeleton"]) if cfg["skeleton"] else None


# ---------------------------------------------------------------------------
# encode / decode


def _cmd_encode(cfg) -> int:
    seq = read_pose_stream(cfg["in"])
    skeleton = _maybe_skeleton(cfg)
    if cfg["hand_scale"] != 1.0:
        if skeleton is None or not skeleton.hand_groups:
            raise ConfigurationError("--hand-scale needs --skeleton with hand_groups")
        seq = scale_hands(seq, skeleton, cfg["hand_scale"]).seq
    oh_cfg = OneHotConfig(width=cfg["width"], soften_sigma=cfg["soften_sigma"])
    onehot = encode_sequence(seq, oh_cfg, ChannelLayout(seq.K))
    write_tensor(cfg["out"], onehot.data)
    _write_run_manifest(
        cfg["out"], "encode", {**cfg, "fps": seq.meta.fps}, [cfg["in"]], [cfg["out"]]
    )
    return 0


def _resolve_decode_fps(cfg) -> float:
    if cfg["fps"] > 0:
        return cfg["fps"]
    sibling = Path(cfg["in"]).with_name(Path(cfg["in"]).name + ".run.txt")
    if sibling.is_file():
        entries = read_manifest(sibling)
        if "cfg.fps" in entries:
            return float(entries["cfg.fps"])
    return 30.0


def _cmd_decode(cfg) -> int:
    data = read_tensor(cfg["in"])
    if data.ndim != 3 or data.shape[0] % 2:
        raise ShapeError(f"one-hot tensor must be (2K, W, T), got {data.shape}")
    fps = _resolve_decode_fps(cfg)
    onehot = OneHotSequence(
        data=data,
        config=OneHotConfig(width=data.shape[1], soften_sigma=cfg["soften_sigma"]),
        layout=ChannelLayout(data.shape[0] // 2),
        meta=SequenceMeta(fps=fps, frame_count=data.shape[2]),
    )
    seq = decode_sequence(onehot)
    if cfg["hand_scale"] != 1.0:
        skeleton = _maybe_skeleton(cfg)
        if skeleton is None or not skeleton.hand_groups:
            raise ConfigurationError("--hand-scale needs --skeleton with hand_groups")
        seq = unscale_hands(seq, skeleton, cfg["hand_scale"])
    write_pose_stream(cfg["out"], seq)
    _write_run_manifest(cfg["out"], "decode", {**cfg, "fps": fps}, [cfg["in"]], [cfg["out"]])
    return 0


# ---------------------------------------------------------------------------
# synth


def _write_corpus(out_dir: Path, corpus: list[CorpusSample]) -> list[Path]:
    written = []
    entries = {"count": str(len(corpus))}
    for i, s in enumerate(corpus):
        stem = f"sample_{i:04d}"
        poses_path = out_dir / f"{stem}.poses.txt"
        beats_path = out_dir / f"{stem}.beats.csv"
        tokens_path = out_dir / f"{stem}.tokens.p2dt"
        write_pose_stream(poses_path, s.poses)
        with open(beats_path, "w") as fh:
            fh.write("beat_s\n")
            for b in s.beats:
                fh.write(f"{b:.8g}\n")
        write_tensor(tokens_path, s.tokens.astype(np.float32))
        c = s.config
        entries[f"sample.{i}"] = (
            f"period={c.period:g} amplitude={c.amplitude:g} proportion={c.proportion:g} "
            f"screen_scale={c.screen_scale:g} occlusion_rate={c.occlusion_rate:g} "
            f"seed={c.seed} fps={c.fps:g} K={c.K} d_a={c.d_a}"
        )
        written += [poses_path, beats_path, tokens_path]
    write_manifest(out_dir / "corpus.txt", entries)
    written.append(out_dir / "corpus.txt")
    return written


def read_corpus_dir(corpus_dir) -> list[CorpusSample]:
    corpus_dir = Path(corpus_dir)
    entries = read_manifest(corpus_dir / "corpus.txt")
    count = int(entries["count"])
    corpus = []
    for i in range(count):
        fields = dict(
            kv.split("=", 1) for kv in entries[f"sample.{i}"].split()
        )
        config = SynthConfig(
            K=int(fields["K"]),
            fps=float(fields["fps"]),
            period=float(fields["period"]),
            amplitude=float(fields["amplitude"]),
            proportion=float(fields["proportion"]),
            screen_scale=float(fields["screen_scale"]),
            occlusion_rate=float(fields["occlusion_rate"]),
            d_a=int(fields["d_a"]),
            seed=int(fields["seed"]),
        )
        stem = corpus_dir / f"sample_{i:04d}"
        poses = read_pose_stream(f"{stem}.poses.txt")
        with open(f"{stem}.beats.csv") as fh:
            header = fh.readline().strip()
            if header != "beat_s":
                raise FileFormatError(f"{stem}.beats.csv: expected beat_s header")
            beats = np.array([float(line) for line in fh if line.strip()])
        tokens = read_tensor(f"{stem}.tokens.p2dt")
        corpus.append(CorpusSample(poses=poses, beats=beats, tokens=tokens, config=config))
    return corpus


def _cmd_synth(cfg) -> int:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    base = SynthConfig(K=cfg["k"], fps=cfg["fps"])
    corpus = make_corpus(cfg["count"], base, frame_count=cfg["frames"], seed=cfg["seed"])
    written = _write_corpus(out_dir, corpus)
    _write_run_manifest(out_dir, "synth", cfg, [], written)
    return 0


# ---------------------------------------------------------------------------
# train / sample / stitch


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(
        onehot_width=cfg["width"],
        soften_sigma=cfg["soften_sigma"],
        codec_mode=cfg["codec"],
        codec_seed=cfg["codec_seed"],
        latent_gain=cfg["latent_gain"],
        c_cell=cfg["c_cell"],
        d_model=cfg["d_model"],
        n_layers=cfg["n_layers"],
        n_heads=cfg["n_heads"],
        indexing=cfg["indexing"],
        ref_cond=cfg["ref_cond"],
        S=cfg["diffusion_steps"],
        schedule_kind=cfg["schedule"],
        cond_drop_prob=cfg["cond_drop"],
        replace_prob=cfg["replace_prob"],
        tau_skew=cfg["tau_skew"],
        ref_prefix_n=cfg["ref_prefix_n"],
        steps=cfg["steps"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        seed=cfg["seed"],
        threads=cfg["threads"],
    )


def _cmd_train(cfg) -> int:
    if cfg["corpus_dir"]:
        corpus = read_corpus_dir(cfg["corpus_dir"])
        inputs = [cfg["corpus_dir"]]
    else:
        corpus = make_corpus(
            cfg["samples"], SynthConfig(K=cfg["k"], fps=cfg["fps"]),
            frame_count=cfg["frames"], seed=cfg["corpus_seed"],
        )
        inputs = []
    tcfg = _train_config(cfg)
    result = train(
        corpus, tcfg,
        log=lambda s, l: print(f"step {s:6d}  loss {l:.4f}", flush=True),
    )
    out_dir = Path(cfg["out_dir"])
    save_checkpoint(result, out_dir)
    print(
        f"trained {result.param_count} params in {result.wall_seconds:.1f}s; "
        f"final loss {result.loss_curve[-1, 1]:.4f}"
    )
    _write_run_manifest(out_dir, "train", cfg, inputs, [out_dir / "manifest.txt"])
    return 0


def _reference_from_flags(cfg, pipe, layout, frame_count, fps):
    if not cfg["ref"]:
        raise ConfigurationError("this model needs --ref <pose stream> for its reference frame")
    ref_seq = read_pose_stream(cfg["ref"], expect_k=layout.K)
    idx = cfg["ref_frame"]
    if not 0 <= idx < ref_seq.T:
        raise ConfigurationError(f"--ref-frame {idx} out of range for {ref_seq.T} frames")
    return reference_latent(ref_seq.data[idx], frame_count, pipe, layout, fps)


def _cmd_sample(cfg) -> int:
    result = load_checkpoint(cfg["ckpt"])
    den_cfg = result.denoiser_config
    tcfg = result.config
    pipe = tcfg.pipeline()
    layout = ChannelLayout(result.joints)
    tokens = read_tensor(cfg["music"])
    if tokens.ndim != 2 or tokens.shape != (den_cfg.t_lat, den_cfg.d_a):
        raise ShapeError(
            f"music tokens must be ({den_cfg.t_lat}, {den_cfg.d_a}) for this model, "
            f"got {tokens.shape}"
        )
    frame_count = den_cfg.t_lat * 8
    fps = cfg["fps"]
    sched = make_schedule(tcfg.S, tcfg.schedule_kind)
    scfg = SampleConfig(guidance=cfg["guidance"], n_steps=cfg["sample_steps"], seed=cfg["seed"])
    if den_cfg.ref_cond:
        z_ref = _reference_from_flags(cfg, pipe, layout, frame_count, fps)
        mask = build_mask(0, z_ref.W_lat, z_ref.T_lat)
        template = z_ref
    else:
        z_ref = mask = None
        template = reference_latent(
            np.full((layout.K, 3), 0.5), frame_count, pipe, layout, fps
        )
    torch.set_num_threads(tcfg.threads)
    z_hat = sample(result.denoiser, z_ref, mask, tokens, scfg, sched, template)
    seq = latent_to_poses(z_hat, pipe)
    write_pose_stream(cfg["out"], seq)
    _write_run_manifest(
        cfg["out"], "sample", cfg, [cfg["ckpt"], cfg["music"]], [cfg["out"]]
    )
    return 0


def _cmd_stitch(cfg) -> int:
    result = load_checkpoint(cfg["ckpt"])
    den_cfg = result.denoiser_config
    tcfg = result.config
    pipe = tcfg.pipeline()
    layout = ChannelLayout(result.joints)
    tokens = read_tensor(cfg["music"])
    seg_len = den_cfg.t_lat * 8
    if cfg["segment_len"] and cfg["segment_len"] != seg_len:
        raise ConfigurationError(
            f"--segment-len {cfg['segment_len']} does not match the checkpoint's {seg_len}"
        )
    plan = plan_segments(cfg["frames"], seg_len, cfg["overlap"])
    fps = cfg["fps"]
    if not cfg["ref"]:
        raise ConfigurationError("stitching needs --ref <pose stream>")
    ref_seq = read_pose_stream(cfg["ref"], expect_k=layout.K)
    idx = cfg["ref_frame"]
    if not 0 <= idx < ref_seq.T:
        raise ConfigurationError(f"--ref-frame {idx} out of range for {ref_seq.T} frames")
    sched = make_schedule(tcfg.S, tcfg.schedule_kind)
    scfg = SampleConfig(guidance=cfg["guidance"], n_steps=cfg["sample_steps"], seed=cfg["seed"])
    torch.set_num_threads(tcfg.threads)
    res = generate_long(
        result.denoiser, den_cfg, pipe, layout, ref_seq.data[idx], tokens,
        cfg["frames"], sched, scfg, plan=plan, conditioning=cfg["conditioning"], fps=fps,
    )
    write_pose_stream(cfg["out"], res.poses)
    outputs = [cfg["out"]]
    if cfg["seam_csv"]:
        write_seam_csv(cfg["seam_csv"], res.report)
        outputs.append(cfg["seam_csv"])
    print(
        f"{len(res.plan.segments)} segments; max seam disp {res.report.max_seam_disp:.5f}, "
        f"median intra {res.report.median_intra_disp:.5f}"
    )
    _write_run_manifest(cfg["out"], "stitch", cfg, [cfg["ckpt"], cfg["music"]], outputs)
    return 0


# ---------------------------------------------------------------------------
# eval / render / mask / affinity


def _pose_files(directory) -> list[Path]:
    directory = Path(directory)
    files = sorted(directory.glob("*.poses.txt")) or sorted(directory.glob("*.txt"))
    files = [f for f in files if not f.name.endswith(".run.txt")]
    if not files:
        raise ConfigurationError(f"no pose streams found in {directory}")
    return files


def _cmd_eval(cfg) -> int:
    gen_files = _pose_files(cfg["gen_dir"])
    ref_files = _pose_files(cfg["ref_dir"])
    gen_feats = np.stack([kinetic_features(read_pose_stream(f)) for f in gen_files])
    ref_feats = np.stack([kinetic_features(read_pose_stream(f)) for f in ref_files])
    fid = frechet_distance(FeatureStats.fit(gen_feats), FeatureStats.fit(ref_feats))
    div_gen = diversity(gen_feats)
    div_ref = diversity(ref_feats)
    rows = [("fid", fid), ("div_gen", div_gen), ("div_ref", div_ref)]
    if cfg["beats_dir"]:
        beats_dir = Path(cfg["beats_dir"])
        scores = []
        for f in gen_files:
            stem = f.name.replace(".poses.txt", "").replace(".txt", "")
            beats_path = beats_dir / f"{stem}.beats.csv"
            if not beats_path.is_file():
                raise ConfigurationError(f"no beats file {beats_path} for {f.name}")
            with open(beats_path) as fh:
                fh.readline()
                beats = np.array([float(line) for line in fh if line.strip()])
            scores.append(beat_align_score(beats, detect_dance_beats(read_pose_stream(f))))
        rows.append(("bas", float(np.mean(scores))))
    with open(cfg["out"], "w") as fh:
        fh.write("metric,value\n")
        for name, value in rows:
            fh.write(f"{name},{value:.8g}\n")
    for name, value in rows:
        print(f"{name} = {value:.6g}")
    _write_run_manifest(cfg["out"], "eval", cfg, [cfg["gen_dir"], cfg["ref_dir"]], [cfg["out"]])
    return 0


def _cmd_render(cfg) -> int:
    seq = read_pose_stream(cfg["in"])
    skeleton = _maybe_skeleton(cfg)
    if skeleton is None or not skeleton.edge_list:
        print("warning: no edge list; rendering joints only", file=sys.stderr)
    paths = render_sequence(seq, cfg["out_dir"], skeleton, size=cfg["size"])
    _write_run_manifest(cfg["out_dir"], "render", cfg, [cfg["in"]], paths[:1])
    print(f"rendered {len(paths)} frames to {cfg['out_dir']}")
    return 0


def _cmd_mask(cfg) -> int:
    mask = build_mask(cfg["n"], cfg["w_lat"], cfg["t_lat"])
    print(mask_ascii(mask))
    print(f"sum={mask.sum():g} (expect {cfg['w_lat'] * min(cfg['n'], 8 * cfg['t_lat'])})")
    return 0


def _cmd_affinity(cfg) -> int:
    rcfg = RotaryConfig()
    pose_idx, music_idx = assign_indices(1, cfg["t_lat"], cfg["t_lat"], cfg["mode"])
    aff = cross_affinity(pose_idx, music_idx, rcfg)
    argmax = aff.argmax(axis=1)
    hits = int((argmax == np.arange(cfg["t_lat"])).sum())
    print(f"mode={cfg['mode']}  argmax(affinity[t]) == t for {hits}/{cfg['t_lat']} pose times")
    parts = cross_affinity_parts(pose_idx, music_idx, rcfg)
    time_var = float(parts[:, :, 2].var(axis=1).max())
    print(f"max over pose times of time-partition variance across music: {time_var:.3g}")
    return 0


# ---------------------------------------------------------------------------
# registry


def _build_commands() -> list[Command]:
    enc = Command("encode", "pose stream -> one-hot tensor", _cmd_encode)
    enc.opt("in", str, None, "input pose stream")
    enc.opt("out", str, None, "output .p2dt tensor")
    enc.opt("width", int, 512, "one-hot width W")
    enc.opt("soften-sigma", float, 2.0, "Gaussian softening sigma (0 = hard)")
    enc.opt("hand-scale", float, 1.0, "big-hand factor applied before encoding")
    enc.opt("skeleton", str, "", "skeleton JSON (hand groups/edges)")

    dec = Command("decode", "one-hot tensor -> pose stream", _cmd_decode)
    dec.opt("in", str, None, "input .p2dt tensor")
    dec.opt("out", str, None, "output pose stream")
    dec.opt("soften-sigma", float, 2.0, "sigma recorded for provenance")
    dec.opt("fps", float, 0.0, "frame rate (0 = from sibling manifest, else 30)")
    dec.opt("hand-scale", float, 1.0, "big-hand factor to invert after decoding")
    dec.opt("skeleton", str, "", "skeleton JSON (hand groups)")

    syn = Command("synth", "write a synthetic rhythm-locked corpus", _cmd_synth)
    syn.opt("out-dir", str, None, "corpus directory")
    syn.opt("count", int, 16, "number of clips")
    syn.opt("frames", int, 256, "frames per clip")
    syn.opt("k", int, 8, "joints per frame")
    syn.opt("fps", float, 30.0, "frame rate")
    syn.opt("seed", int, 0, "base seed")

    tr = Command("train", "train the toy denoiser", _cmd_train)
    tr.opt("corpus-dir", str, "", "corpus directory (empty = synthesize in memory)")
    tr.opt("out-dir", str, None, "checkpoint directory")
    tr.opt("samples", int, 500, "synthesized corpus size when no corpus-dir")
    tr.opt("frames", int, 256, "frames per synthesized clip")
    tr.opt("k", int, 8, "joints per synthesized clip")
    tr.opt("fps", float, 30.0, "synthesized frame rate")
    tr.opt("corpus-seed", int, 0, "seed for the synthesized corpus")
    tr.opt("width", int, 32, "one-hot width W for training")
    tr.opt("soften-sigma", float, 1.0, "softening sigma for training targets")
    tr.opt("codec", str, "lossless-patch", "latent codec mode")
    tr.opt("codec-seed", int, 0, "projection seed for projected-4ch")
    tr.opt("latent-gain", float, 8.0, "power-of-two latent scale")
    tr.opt("c-cell", int, 96, "per-cell embedding width")
    tr.opt("d-model", int, 256, "transformer width")
    tr.opt("n-layers", int, 4, "transformer depth")
    tr.opt("n-heads", int, 4, "attention heads")
    tr.opt("indexing", str, MODE_TIME_SHARED, "time_shared | legacy")
    tr.opt("ref-cond", bool, True, "reference conditioning on|off")
    tr.opt("diffusion-steps", int, 1000, "schedule length S")
    tr.opt("schedule", str, "cosine", "cosine | linear")
    tr.opt("cond-drop", float, 0.3, "music dropout probability")
    tr.opt("tau-skew", float, 0.0, "bias training steps toward high noise (0 = uniform)")
    tr.opt("replace-prob", float, 0.5, "pose-aware prefix probability")
    tr.opt("ref-prefix-n", int, 16, "pose-aware prefix length")
    tr.opt("steps", int, 2000, "optimizer steps")
    tr.opt("batch-size", int, 16, "batch size")
    tr.opt("lr", float, 2e-3, "peak learning rate")
    tr.opt("seed", int, 0, "training seed")
    tr.opt("threads", int, 1, "torch threads")

    sa = Command("sample", "sample one sequence from a checkpoint", _cmd_sample)
    sa.opt("ckpt", str, None, "checkpoint directory")
    sa.opt("music", str, None, "music tokens .p2dt (T', d_a)")
    sa.opt("out", str, None, "output pose stream")
    sa.opt("ref", str, "", "reference pose stream")
    sa.opt("ref-frame", int, 0, "frame index inside --ref")
    sa.opt("guidance", float, 2.0, "CFG weight g")
    sa.opt("sample-steps", int, 50, "sampler steps")
    sa.opt("seed", int, 0, "sampling seed")
    sa.opt("fps", float, 30.0, "output frame rate")

    st = Command("stitch", "segment-and-stitch a long sequence", _cmd_stitch)
    st.opt("ckpt", str, None, "checkpoint directory")
    st.opt("music", str, None, "music tokens .p2dt covering the plan")
    st.opt("frames", int, None, "total frames T")
    st.opt("out", str, None, "output pose stream")
    st.opt("ref", str, "", "reference pose stream")
    st.opt("ref-frame", int, 0, "frame index inside --ref")
    st.opt("segment-len", int, 0, "segment length (0 = from checkpoint)")
    st.opt("overlap", int, 16, "overlap N between segments")
    st.opt("conditioning", str, COND_REFERENCE, "reference | inpaint")
    st.opt("guidance", float, 2.0, "CFG weight g")
    st.opt("sample-steps", int, 50, "sampler steps")
    st.opt("seed", int, 0, "sampling seed")
    st.opt("fps", float, 30.0, "output frame rate")
    st.opt("seam-csv", str, "", "write per-seam displacement rows here")

    ev = Command("eval", "FID/DIV/BAS between pose directories", _cmd_eval)
    ev.opt("gen-dir", str, None, "generated pose streams")
    ev.opt("ref-dir", str, None, "reference pose streams")
    ev.opt("out", str, None, "report CSV")
    ev.opt("beats-dir", str, "", "per-sample beats CSVs for BAS")

    re_ = Command("render", "pose stream -> SVG frames", _cmd_render)
    re_.opt("in", str, None, "input pose stream")
    re_.opt("out-dir", str, None, "output directory")
    re_.opt("skeleton", str, "", "skeleton JSON with edge_list")
    re_.opt("size", int, 512, "canvas size in px")

    ma = Command("mask", "print a condition mask as ASCII", _cmd_mask)
    ma.opt("n", int, 16, "pose-aware frame count N")
    ma.opt("w-lat", int, 4, "latent width W'")
    ma.opt("t-lat", int, 32, "latent time T'")

    af = Command("affinity", "rotary cross-affinity diagnostic", _cmd_affinity)
    af.opt("t-lat", int, 32, "latent time T'")
    af.opt("mode", str, MODE_TIME_SHARED, f"{MODE_TIME_SHARED} | {MODE_LEGACY}")

    return [enc, dec, syn, tr, sa, st, ev, re_, ma, af]


def _required_check(cfg: dict, command: Command) -> None:
    for flag, _, default, _ in command.options:
        key = flag.replace("-", "_")
        if default is None and cfg[key] is None:
            raise ConfigurationError(f"{command.name}: --{flag} is required")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dancegen", description="music-conditioned 2D dance pose generation toolkit"
    )
    parser.add_argument("--version", action="version", version=f"dancegen {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for command in _build_commands():
        command.register(subparsers)
    args = parser.parse_args(argv)
    command: Command = args._command
    try:
        cfg = command.resolve(args)
        _required_check(cfg, command)
        return command.run(cfg)
    except (ConfigurationError, ShapeError, FileFormatError, SequenceRejected) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
