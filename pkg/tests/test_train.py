import math

import pytest
import torch

import unrain as u
from unrain.train import (
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    load_derain_generator,
    lr_schedule,
    parse_flat_text,
    read_config_file,
    save_checkpoint,
    setup_training,
    train,
    train_step,
    write_config_file,
)

TINY = dict(total_iters=10, base_channels=8, resblocks=2, train_size=32, checkpoint_every=5)


def tiny_state(**kw):
    args = dict(TINY)
    args.update(kw)
    return setup_training(TrainConfig(**args))


def rand_batch(size=32):
    torch.manual_seed(123)
    return torch.rand(1, size, size, 3), torch.rand(1, size, size, 3)


# -- schedule -----------------------------------------------------------------

def test_lr_constant_then_linear():
    lr0 = 2e-4
    for step in range(50):
        assert lr_schedule(step, 100, 50, lr0) == lr0
    assert lr_schedule(50, 100, 50, lr0) == lr0
    assert math.isclose(lr_schedule(75, 100, 50, lr0), lr0 / 2)
    assert math.isclose(lr_schedule(99, 100, 50, lr0), lr0 * 0.02)
    assert lr_schedule(99, 100, 50, lr0) > 0.0


def test_lr_schedule_bounds():
    with pytest.raises(ValueError):
        lr_schedule(-1, 100, 50, 1e-4)
    with pytest.raises(ValueError):
        lr_schedule(100, 100, 50, 1e-4)


def test_lr_no_decay_phase():
    assert lr_schedule(99, 100, 100, 3e-4) == 3e-4


# -- config -------------------------------------------------------------------

def test_config_defaults_match_training_recipe():
    cfg = TrainConfig()
    assert cfg.lr == 2e-4 and (cfg.beta1, cfg.beta2) == (0.5, 0.999)
    assert (cfg.w1, cfg.w2, cfg.w3, cfg.w4) == (1.0, 5.0, 1.0, 0.5)
    assert cfg.batch_size == 1
    assert cfg.effective_decay_start == cfg.total_iters // 2


def test_config_validation_errors():
    bad = [
        dict(total_iters=-1),
        dict(decay_start=3000),  # beyond total_iters
        dict(lr=0.0),
        dict(beta1=1.0),
        dict(batch_size=0),
        dict(train_size=30),  # not divisible by 4
        dict(train_size=8),
        dict(w2=-1.0),
        dict(lum_gamma=1.0),
        dict(base_channels=2),
        dict(resblocks=0),
        dict(checkpoint_every=0),
        dict(sample_every=-1),
    ]
    for kw in bad:
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


def test_config_weights_apply_ablations():
    cfg = TrainConfig(no_bgm=True, no_lum=True)
    w = cfg.weights
    assert (w.w1, w.w2, w.w3, w.w4) == (1.0, 0.0, 0.0, 0.5)


def test_config_network_resolution():
    assert TrainConfig(train_size=64).network_config.num_resblocks_gc == 6
    assert TrainConfig(train_size=256).network_config.num_resblocks_gc == 9
    cfg = TrainConfig(train_size=64, resblocks=4, base_channels=16)
    assert cfg.network_config.num_resblocks_gc == 4
    assert cfg.network_config.base_channels == 16


def test_config_flat_roundtrip():
    cfg = TrainConfig(total_iters=123, decay_start=7, no_bgm=True, lr=1e-3, resblocks=3)
    flat = cfg.to_flat()
    assert all(isinstance(v, str) for v in flat.values())
    assert TrainConfig.from_mapping(flat) == cfg
    # auto sentinel for unset optionals
    assert TrainConfig().to_flat()["decay_start"] == "auto"
    assert TrainConfig.from_mapping({"decay_start": "auto"}).decay_start is None


def test_config_unknown_key_is_named():
    with pytest.raises(ConfigError, match="total_itres"):
        TrainConfig.from_mapping({"total_itres": "10"})


def test_config_value_parsing():
    assert TrainConfig.from_mapping({"no_rgm": "YES"}).no_rgm is True
    assert TrainConfig.from_mapping({"no_rgm": "0"}).no_rgm is False
    with pytest.raises(ConfigError, match="no_rgm"):
        TrainConfig.from_mapping({"no_rgm": "maybe"})
    with pytest.raises(ConfigError, match="lr"):
        TrainConfig.from_mapping({"lr": "fast"})


def test_config_hash_tracks_content():
    assert TrainConfig().config_hash == TrainConfig().config_hash
    assert TrainConfig().config_hash != TrainConfig(seed=1).config_hash
    assert len(TrainConfig().config_hash) == 12


def test_flat_text_parsing():
    text = "# comment\n\n a = 1 \nb=two\n"
    assert parse_flat_text(text) == {"a": "1", "b": "two"}
    with pytest.raises(ConfigError, match="3"):
        parse_flat_text("a=1\nb=2\nnot a pair\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_flat_text("a=1\na=2\n")


def test_config_file_roundtrip(tmp_path):
    cfg = TrainConfig(total_iters=77, no_rgm=True)
    write_config_file(cfg, tmp_path / "run.cfg")
    assert TrainConfig.from_mapping(read_config_file(tmp_path / "run.cfg")) == cfg


# -- stepping -------------------------------------------------------------------

def test_step_returns_finite_bundle_and_increments():
    state = tiny_state()
    r, c = rand_batch()
    bundle = train_step(state, r, c)
    assert state.iteration == 1
    for name in ("guid_r", "guid_b", "lum_adv_g", "cyc", "total_g", "d_c", "d_s"):
        assert math.isfinite(getattr(bundle, name))
    expected = (bundle.guid_r + 5 * bundle.guid_b + bundle.lum_adv_g + 0.5 * bundle.cyc)
    assert math.isclose(bundle.total_g, expected, rel_tol=1e-5)


def test_step_is_deterministic_across_fresh_setups():
    r, c = rand_batch()
    bundles = []
    for _ in range(2):
        state = tiny_state(seed=5)
        bundles.append([train_step(state, r, c) for _ in range(3)])
    for b1, b2 in zip(*bundles):
        assert abs(b1.total_g - b2.total_g) < 1e-9
        assert abs(b1.d_c - b2.d_c) < 1e-9


def snapshot(net):
    return {k: v.clone() for k, v in net.state_dict().items()}


def changed(before, net):
    after = net.state_dict()
    return any(not torch.equal(before[k], after[k]) for k in before)


def test_full_step_updates_all_networks():
    state = tiny_state()
    r, c = rand_batch()
    snaps = {k: snapshot(n) for k, n in state.nets.named_nets().items()}
    train_step(state, r, c)
    for name, net in state.nets.named_nets().items():
        assert changed(snaps[name], net), name


def test_no_lum_freezes_clean_discriminator():
    state = tiny_state(no_lum=True)
    r, c = rand_batch()
    before = snapshot(state.nets.d_c)
    for _ in range(3):
        bundle = train_step(state, r, c)
    assert not changed(before, state.nets.d_c)
    assert bundle.d_c == 0.0 and bundle.lum_adv_g == 0.0


def test_no_rgm_freezes_streak_discriminator():
    state = tiny_state(no_rgm=True)
    r, c = rand_batch()
    before = snapshot(state.nets.d_s)
    bundle = train_step(state, r, c)
    assert not changed(before, state.nets.d_s)
    assert bundle.d_s == 0.0 and bundle.guid_r == 0.0


def test_benchmark_variant_trains_generators_only():
    state = tiny_state(no_rgm=True, no_bgm=True, no_lum=True)
    r, c = rand_batch()
    before_dc, before_ds = snapshot(state.nets.d_c), snapshot(state.nets.d_s)
    before_gc = snapshot(state.nets.g_c)
    bundle = train_step(state, r, c)
    assert not changed(before_dc, state.nets.d_c)
    assert not changed(before_ds, state.nets.d_s)
    assert changed(before_gc, state.nets.g_c)
    assert bundle.guid_r == bundle.guid_b == bundle.lum_adv_g == 0.0
    assert math.isclose(bundle.total_g, 0.5 * bundle.cyc, rel_tol=1e-6)


def test_divergence_raises_with_component_dump():
    state = tiny_state(no_rgm=True, no_lum=True)
    r, c = rand_batch()
    r[0, 0, 0, 0] = float("nan")
    with pytest.raises(TrainingDiverged, match="guid_b"):
        train_step(state, r, c)


# -- checkpointing ----------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    state = tiny_state()
    r, c = rand_batch()
    train_step(state, r, c)
    save_checkpoint(state, tmp_path / "ck")
    loaded = load_checkpoint(tmp_path / "ck")
    assert loaded.iteration == 1
    assert loaded.cfg == state.cfg
    for name, net in state.nets.named_nets().items():
        other = loaded.nets.named_nets()[name].state_dict()
        assert all(torch.equal(v, other[k]) for k, v in net.state_dict().items())


def test_checkpoint_rejects_wrong_arch_version(tmp_path):
    state = tiny_state()
    save_checkpoint(state, tmp_path / "ck")
    meta = (tmp_path / "ck" / "meta.txt").read_text()
    (tmp_path / "ck" / "meta.txt").write_text(
        meta.replace("arch_version=", "arch_version=other-")
    )
    with pytest.raises(ValueError, match="architecture"):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_missing_meta(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path)


def test_generator_only_loading(tmp_path):
    state = tiny_state()
    save_checkpoint(state, tmp_path / "ck")
    net = load_derain_generator(tmp_path / "ck")
    assert not net.training
    x = torch.rand(1, 32, 32, 3)
    with torch.no_grad():
        expected = state.nets.g_c(x)
    assert torch.allclose(net(x), expected, atol=1e-7)


# -- training loop ------------------------------------------------------------------

def make_corpus(tmp_path, n=3):
    from unrain.data import write_manifest

    stems = []
    for i in range(n):
        clean = u.random_clean_image(32, i)
        rainy, _ = u.synthesize_rain(clean, u.SyntheticRainSpec(seed=i))
        u.save_image(clean, tmp_path / "gt" / f"i{i}.png")
        u.save_image(rainy, tmp_path / "rainy" / f"i{i}.png")
        stems.append(f"i{i}")
    write_manifest(tmp_path / "train.list", stems)
    return u.UnpairedDataset.from_root(tmp_path, seed=3)


def test_train_loop_writes_logs_and_checkpoints(tmp_path):
    ds = make_corpus(tmp_path / "corpus")
    cfg = TrainConfig(total_iters=4, base_channels=8, resblocks=2, train_size=32,
                      checkpoint_every=2, sample_every=2, seed=1)
    state = train(cfg, ds, tmp_path / "run")
    assert state.iteration == 4
    lines = (tmp_path / "run" / "losses.csv").read_text().strip().splitlines()
    assert lines[0].split(",")[0] == "iteration"
    assert len(lines) == 1 + 4
    assert (tmp_path / "run" / "ckpt_0000002").is_dir()
    assert (tmp_path / "run" / "ckpt_0000004").is_dir()
    assert (tmp_path / "run" / "samples" / "iter_0000002.png").is_file()
    assert (tmp_path / "run" / "config.cfg").is_file()


def test_train_zero_iters_saves_initial_state(tmp_path):
    ds = make_corpus(tmp_path / "corpus")
    cfg = TrainConfig(total_iters=0, base_channels=8, resblocks=2, train_size=32)
    state = train(cfg, ds, tmp_path / "run")
    assert state.iteration == 0
    assert (tmp_path / "run" / "ckpt_0000000" / "g_c.pt").is_file()
    assert not (tmp_path / "run" / "losses.csv").exists()


def test_resume_matches_uninterrupted_run(tmp_path):
    ds = make_corpus(tmp_path / "corpus")
    kw = dict(total_iters=6, base_channels=8, resblocks=2, train_size=32,
              checkpoint_every=3, seed=2)
    full = train(TrainConfig(**kw), ds, tmp_path / "full")
    resumed = train(None, ds, tmp_path / "resumed",
                    resume=tmp_path / "full" / "ckpt_0000003")
    ref = full.nets.g_c.state_dict()
    got = resumed.nets.g_c.state_dict()
    assert all(torch.equal(ref[k], got[k]) for k in ref)
    assert resumed.iteration == 6


def test_resume_config_conflict(tmp_path):
    ds = make_corpus(tmp_path / "corpus")
    cfg = TrainConfig(total_iters=2, base_channels=8, resblocks=2, train_size=32,
                      checkpoint_every=2)
    train(cfg, ds, tmp_path / "run")
    other = TrainConfig(total_iters=2, base_channels=8, resblocks=2, train_size=32,
                        checkpoint_every=2, seed=9)
    with pytest.raises(ConfigError, match="conflicts"):
        train(other, ds, tmp_path / "run2", resume=tmp_path / "run" / "ckpt_0000002")


def test_train_requires_config_or_resume(tmp_path):
    ds = make_corpus(tmp_path / "corpus")
    with pytest.raises(ConfigError):
        train(None, ds, tmp_path / "run")
