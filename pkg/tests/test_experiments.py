"""Plumbing tests for the experiment drivers (tiny models, fast settings).

The real quality gates run in test_acceptance.py at full scale; here we pin
the mechanics: caching, shuffling, change-point classification, and report
structure.
"""

import numpy as np
import pytest

import dancegen.experiments as X
from dancegen.diffusion import SampleConfig
from dancegen.errors import ConfigurationError
from dancegen.experiments import (
    BindingConfig,
    CorpusSpec,
    IndexingAblationConfig,
    StitchAblationConfig,
    _change_point_hit,
    _derangement,
    binding_recipe,
    cached_train,
    config_digest,
    run_binding,
    run_indexing_ablation,
    run_stitch_ablation,
)


def tiny_train(**overrides):
    kwargs = dict(
        steps=3,
        batch_size=2,
        warmup_steps=1,
        c_cell=4,
        d_model=32,
        n_layers=1,
        n_heads=2,
        onehot_width=16,
        latent_gain=1.0,
        seed=0,
    )
    kwargs.update(overrides)
    return binding_recipe(**kwargs)


TINY_CORPUS = CorpusSpec(n=4, frame_count=128, joints=2, seed=3)


# ---------------------------------------------------------------------------
# digest + cache


def test_config_digest_stable_and_sensitive():
    a = config_digest(TINY_CORPUS, tiny_train())
    b = config_digest(TINY_CORPUS, tiny_train())
    c = config_digest(TINY_CORPUS, tiny_train(seed=1))
    assert a == b
    assert a != c
    assert len(a) == 16


def test_cached_train_roundtrip(tmp_path, monkeypatch):
    spec = TINY_CORPUS
    cfg = tiny_train()
    first = cached_train(spec, cfg, cache_dir=tmp_path)
    ckpts = list(tmp_path.glob("den_*/manifest.txt"))
    assert len(ckpts) == 1

    def boom(*a, **k):  # the second call must load, not retrain
        raise AssertionError("train() called despite existing cache")

    monkeypatch.setattr(X, "train", boom)
    second = cached_train(spec, cfg, cache_dir=tmp_path)
    for k, v in first.denoiser.state_dict().items():
        np.testing.assert_array_equal(v.numpy(), second.denoiser.state_dict()[k].numpy())
    assert second.joints == spec.joints


def test_cached_train_distinguishes_configs(tmp_path):
    cached_train(TINY_CORPUS, tiny_train(), cache_dir=tmp_path)
    cached_train(TINY_CORPUS, tiny_train(indexing="legacy"), cache_dir=tmp_path)
    assert len(list(tmp_path.glob("den_*"))) == 2


# ---------------------------------------------------------------------------
# shuffling + change-point helpers


def test_derangement_has_no_fixed_points():
    rng = np.random.default_rng(0)
    for n in (2, 3, 8, 50):
        p = _derangement(n, rng)
        assert sorted(p) == list(range(n))
        assert not np.any(p == np.arange(n))


def test_derangement_needs_two():
    with pytest.raises(ConfigurationError):
        _derangement(1, np.random.default_rng(0))


def test_change_point_hit_on_synthetic_splice():
    fps = 30.0
    # spacing 13 frames for 5 beats, then 23 frames: change at beat index 5
    first = np.arange(5) * 13.0
    second = first[-1] + 23.0 * np.arange(1, 5)
    beats = np.concatenate([first, second]) / fps
    splice_frame = int(first[-1])  # the fitted regime boundary is that beat
    frame, strength, hit = _change_point_hit(beats, splice_frame, fps, 8.0, 0.5)
    assert hit
    assert abs(frame - splice_frame) <= 8.0
    assert strength > 0.9


def test_change_point_no_hit_on_constant_tempo():
    beats = np.arange(12) * 17.0 / 30.0
    frame, strength, hit = _change_point_hit(beats, 100, 30.0, 8.0, 0.5)
    assert not hit


def test_change_point_too_few_beats():
    frame, strength, hit = _change_point_hit(np.array([0.1, 0.5, 0.9]), 10, 30.0, 8.0, 0.5)
    assert not hit and np.isnan(frame)


# ---------------------------------------------------------------------------
# driver plumbing at tiny scale


def test_run_binding_report_structure(tmp_path):
    cfg = BindingConfig(
        corpus=TINY_CORPUS,
        train=tiny_train(),
        sample=SampleConfig(guidance=2.0, n_steps=5, seed=11),
        n_eval=3,
        eval_seed=77,
    )
    report = run_binding(cfg, cache_dir=tmp_path)
    assert len(report.per_clip) == 3
    assert report.gap == pytest.approx(report.bas_true - report.bas_shuffled)
    assert 0.0 <= report.bas_true <= 1.0
    assert 0.0 <= report.bas_shuffled <= 1.0
    assert report.param_count > 0
    assert "BAS(true)" in report.summary()


def test_run_indexing_ablation_structure(tmp_path):
    cfg = IndexingAblationConfig(
        corpus=TINY_CORPUS,
        train=tiny_train(),
        sample=SampleConfig(guidance=2.0, n_steps=5, seed=0),
        n_seeds=2,
        t_each=64,
        min_success=1,
    )
    report = run_indexing_ablation(cfg, cache_dir=tmp_path)
    assert len(report.rows) == 2
    assert report.n_success == sum(r.success for r in report.rows)
    assert all(r.success == (r.ts_hit and not r.legacy_hit) for r in report.rows)
    assert np.isfinite(report.bas_time_shared) and np.isfinite(report.bas_legacy)
    # both trained models land in the cache: time_shared + legacy
    assert len(list(tmp_path.glob("den_*"))) == 2


def test_run_indexing_ablation_rejects_geometry_mismatch(tmp_path):
    cfg = IndexingAblationConfig(
        corpus=TINY_CORPUS,
        train=tiny_train(),
        n_seeds=1,
        t_each=32,  # 2*32 != 128-frame training geometry
    )
    with pytest.raises(ConfigurationError):
        run_indexing_ablation(cfg, cache_dir=tmp_path)


def test_run_stitch_ablation_structure(tmp_path):
    cfg = StitchAblationConfig(
        corpus=TINY_CORPUS,
        train=tiny_train(),
        sample=SampleConfig(guidance=1.0, n_steps=5, seed=0),
        n_seeds=2,
        t_total=320,
        n_overlap=16,
        min_success=1,
    )
    report = run_stitch_ablation(cfg, cache_dir=tmp_path)
    assert len(report.rows) == 2
    assert all(r.ref_max_seam >= 0 and r.inpaint_max_seam >= 0 for r in report.rows)
    assert report.passed == (report.n_success >= 1)
    # reference arm + inpainting arm checkpoints
    assert len(list(tmp_path.glob("den_*"))) == 2


def test_run_stitch_ablation_requires_ref_recipe(tmp_path):
    cfg = StitchAblationConfig(
        corpus=TINY_CORPUS,
        train=tiny_train(ref_cond=False),
        n_seeds=1,
    )
    with pytest.raises(ConfigurationError):
        run_stitch_ablation(cfg, cache_dir=tmp_path)
