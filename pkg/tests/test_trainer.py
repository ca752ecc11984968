import json
import math

import numpy as np
import pytest
import torch

import transfuse.trainer as trainer_mod
from transfuse.checkpoint import load_checkpoint, read_checkpoint
from transfuse.data import scan_dataset
from transfuse.destruct import TransformSpec
from transfuse.loss import LossConfig
from transfuse.errors import ConfigError, EmptyDataset, NumericalError
from transfuse.model import ModelConfig, PatchConfig, TransFuseNet, count_parameters
from transfuse.trainer import (
    TrainConfig,
    TrainLog,
    desk_config,
    lr_at,
    moving_average,
    full_config,
    train,
)
from synth import write_set

TINY_MODEL = ModelConfig(cnn_channels=4, token_dim_global=16, token_dim_local=8, trans_channels=2,
                         depth=1, heads=2, patch=PatchConfig(16, 8, 4))


def tiny_config(**kw):
    base = dict(epochs=3, batch_size=2, learning_rate=1e-3, image_size=16, checkpoint_every=1,
                transform_spec=TransformSpec(n_subregions=2, subregion_size=4), model_cfg=TINY_MODEL)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def manifest(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    write_set(d, 4, 16)
    return scan_dataset(d, 16)


def test_cosine_schedule():
    assert lr_at(0, 100, 1e-3) == 1e-3
    assert lr_at(50, 100, 1e-3) == pytest.approx(5e-4)
    assert lr_at(100, 100, 1e-3) == pytest.approx(0, abs=1e-18)
    steps = [lr_at(s, 40, 1.0) for s in range(41)]
    assert all(a >= b for a, b in zip(steps, steps[1:]))
    with pytest.raises(ConfigError):
        lr_at(101, 100, 1e-3)


def test_moving_average():
    np.testing.assert_allclose(moving_average(np.arange(5.0), 2), [0.5, 1.5, 2.5, 3.5])
    assert moving_average([1.0], 20).size == 0


def test_presets():
    p = full_config()
    assert (p.epochs, p.batch_size, p.learning_rate, p.weight_decay, p.image_size) == (70, 64, 1e-4, 5e-4, 256)
    assert p.model_cfg.patch == PatchConfig(256, 16, 4)
    d = desk_config()
    assert d.image_size == 64 and d.model_cfg.patch == PatchConfig(64, 8, 4)
    assert d.model_cfg.depth == 2 and d.max_steps <= 500
    assert d.model_cfg.token_dim_global * 2 == ModelConfig().token_dim_global
    assert TrainConfig(image_size=32, model_cfg=TINY_MODEL).model_cfg.patch.image_size == 32


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(schedule="step")
    with pytest.raises(ConfigError):
        TrainConfig(disabled=("blur",))


def test_training_writes_artifacts(manifest, tmp_path):
    out = tmp_path / "run"
    res = train(manifest, tiny_config(), out)
    assert len(res.log.records) == 6  # 3 epochs x 2 batches
    assert [r["step"] for r in res.log.records] == list(range(6))
    assert all(math.isfinite(r["loss"]) for r in res.log.records)
    for name in ("checkpoint.npz", "ckpt_epoch0001.npz", "ckpt_epoch0003.npz",
                 "train_log.jsonl", "timing.jsonl", "train_config.json"):
        assert (out / name).is_file(), name
    assert TrainLog.read(out).records == res.log.records
    assert json.loads((out / "train_config.json").read_text())["batch_size"] == 2
    meta, _ = read_checkpoint(out / "checkpoint.npz")
    assert meta["extra"]["step"] == 6
    loaded = load_checkpoint(out / "checkpoint.npz")
    x = torch.rand(1, 1, 16, 16)
    with torch.no_grad():
        assert torch.equal(loaded(x), res.model(x))


def test_max_steps_and_determinism(manifest, tmp_path):
    a = train(manifest, tiny_config(max_steps=4), tmp_path / "a")
    b = train(manifest, tiny_config(max_steps=4), tmp_path / "b")
    c = train(manifest, tiny_config(max_steps=4, seed=1), tmp_path / "c")
    assert len(a.log.records) == 4
    assert a.log.records[-1]["lr"] == pytest.approx(lr_at(3, 4, 1e-3))
    for name in ("train_log.jsonl", "checkpoint.npz"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert a.log.losses != c.log.losses


def test_loss_decreases_on_tiny_problem(manifest):
    res = train(manifest, tiny_config(epochs=40, learning_rate=3e-3, grad_clip=1.0,
                                      loss_cfg=LossConfig(tv_normalize=True)))
    losses = res.log.losses
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])


def test_nan_aborts_and_keeps_last_good(manifest, tmp_path, monkeypatch):
    real = trainer_mod.loss_components
    calls = {"n": 0}

    def poisoned(out, ref, cfg):
        calls["n"] += 1
        total, *rest = real(out, ref, cfg)
        return (total * float("nan") if calls["n"] == 3 else total), *rest

    monkeypatch.setattr(trainer_mod, "loss_components", poisoned)
    with pytest.raises(NumericalError, match="step 2"):
        train(manifest, tiny_config(), tmp_path / "run")
    model = load_checkpoint(tmp_path / "run" / "checkpoint_lastgood.npz")
    assert all(torch.isfinite(p).all() for p in model.parameters())


def test_empty_and_mismatched_manifest(manifest):
    with pytest.raises(ConfigError):
        train(manifest, tiny_config(image_size=32, model_cfg=TINY_MODEL.with_image_size(32)))
    manifest.entries.clear()
    with pytest.raises(EmptyDataset):
        train(manifest, tiny_config())


def test_ablations(manifest):
    no_t = train(manifest, tiny_config(max_steps=2, model_cfg=ModelConfig(**{**TINY_MODEL.__dict__, "transformer": False})))
    assert not any("transformer" in k for k in no_t.model.state_dict())
    assert count_parameters(no_t.model) < count_parameters(TransFuseNet(TINY_MODEL))
    res = train(manifest, tiny_config(max_steps=2, disabled=("nl", "ns")))
    assert res.log.records
    assert tiny_config(disabled=("nl", "ns")).effective_transform_spec.probabilities == (0.0, 0.6, 0.0)
