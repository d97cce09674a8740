"""
InteRACT 意圖預測系統 - 訓練測試
"""
import csv
import dataclasses

import numpy as np
import pytest

from interact.dataset_io import PairedPoseDataset, SynthConfig, build_paired_set, gen_conflict_reach, gen_teleop_sessions, make_windows
from interact import training
from interact.diff_core import ParameterStore
from interact.errors import (
    AlignmentError, CheckpointCorruptError, CheckpointShapeError, CheckpointVersionError, ConfigError,
)
from interact.model import InteractModel, ModelConfig
from interact.pose_core import PoseTrajectory, human_layout
from interact.training import (
    METRICS_HEADER, LossWeights, LRSchedule, OptimizerState, TrainConfig, adam_step, load_checkpoint, loss_align,
    loss_pred, loss_total, lr_at, run_stage, save_checkpoint,
)
from interact.verification import random_batch, tiny_config


def _splits(n_train=3, seed=0, horizon=4):
    eps = gen_conflict_reach(SynthConfig(seed=seed, n_frames=60), n_train + 1, 'robot')
    windows = [make_windows(ep, stride=6, horizon=horizon) for ep in eps]
    return {'train': [w for ws in windows[:-1] for w in ws], 'val': windows[-1]}


def _pairs(rng, k=5):
    return PairedPoseDataset(rng.normal(scale=0.3, size=(k, 6)), rng.normal(scale=0.3, size=(k, 27)))


class TestLosses:
    def test_uniform_offset(self):
        truth = PoseTrajectory(human_layout(), np.zeros((1, 27)))
        pred = PoseTrajectory(human_layout(), np.full((1, 27), 0.1))
        assert loss_pred(pred, truth) == pytest.approx(0.27)

    def test_mean_over_frames(self):
        pred = np.zeros((2, 27))
        pred[0, 0] = np.sqrt(0.2)
        pred[1, 0] = np.sqrt(0.4)
        value = loss_pred(PoseTrajectory(human_layout(), pred), PoseTrajectory(human_layout(), np.zeros((2, 27))))
        assert value == pytest.approx(0.3)

    def test_total(self):
        assert loss_total(1.0, 0.5, 0.5) == pytest.approx(1.10)
        assert loss_total(1.0, 0.5, 0.5, LossWeights(1.0, 0.0, 0.0)) == pytest.approx(1.0)

    def test_negative_weight(self):
        with pytest.raises(ConfigError):
            LossWeights(lambda_h=-0.1)

    def test_align_range_and_gradient_scope(self, rng):
        model = InteractModel(tiny_config())
        loss = loss_align(model, _pairs(rng), 'hist')
        assert 0.0 <= loss.item() <= 2.0
        loss.backward()
        touched = {name for name, t in model.parameters() if t.grad is not None}
        assert touched == {'embed.hist_human.weight', 'embed.hist_human.bias',
                           'embed.hist_robot.weight', 'embed.hist_robot.bias'}

    def test_align_is_translation_invariant(self, rng):
        model = InteractModel(tiny_config())
        pairs = _pairs(rng)
        v = np.array([1.5, -2.0, 0.5])
        moved = PairedPoseDataset(pairs.robot + np.tile(v, 2), pairs.human + np.tile(v, 9))
        assert loss_align(model, moved, 'fut').item() == pytest.approx(loss_align(model, pairs, 'fut').item(), abs=1e-12)

    def test_align_errors(self, rng):
        model = InteractModel(tiny_config())
        with pytest.raises(AlignmentError):
            loss_align(model, [], 'hist')
        with pytest.raises(AlignmentError):
            loss_align(model, _pairs(rng), 'now')
        model.store['embed.hist_robot.weight'].data[:] = 0.0
        model.store['embed.hist_robot.bias'].data[:] = 0.0
        with pytest.raises(AlignmentError, match='zero-norm'):
            loss_align(model, _pairs(rng), 'hist')

    def test_align_accepts_pose_pairs(self, rng):
        model = InteractModel(tiny_config())
        pairs = _pairs(rng)
        assert loss_align(model, pairs.pairs, 'hist').item() == pytest.approx(loss_align(model, pairs, 'hist').item())


class TestOptimizer:
    def _store(self, value):
        store = ParameterStore(np.float64)
        store.add('w', np.array([value]))
        return store

    def test_first_adam_step(self):
        store = self._store(1.0)
        state = adam_step(store, {'w': np.array([1.0])}, OptimizerState(weight_decay=0.0), lr=0.1)
        assert store['w'].data[0] == pytest.approx(0.9000000, abs=1e-7)
        assert state.step == 1

    def test_weight_decay_joins_gradient(self):
        store = self._store(2.0)
        state = OptimizerState(weight_decay=0.5)
        adam_step(store, {'w': np.array([0.0])}, state, lr=0.1)
        np.testing.assert_allclose(state.m['w'], [0.1 * 1.0])

    def test_frozen_parameters_do_not_move(self):
        store = self._store(1.0)
        adam_step(store, {'w': np.array([1.0])}, OptimizerState(), lr=0.1, frozen=['w'])
        assert store['w'].data[0] == 1.0

    def test_schedule(self):
        schedule = LRSchedule(3e-4)
        assert lr_at(schedule, 0) == pytest.approx(3e-4)
        assert lr_at(schedule, 20) == pytest.approx(3e-5)
        assert lr_at(schedule, 41) == pytest.approx(3e-8)

    def test_schedule_needs_increasing_milestones(self):
        with pytest.raises(ConfigError):
            LRSchedule(1e-3, (10, 10))


class TestRunStage:
    def test_metrics_and_best_epoch(self, tmp_path):
        metrics_path = str(tmp_path / 'metrics.csv')
        cfg = TrainConfig(stage='pretrain', epochs=2, batch_size=8, base_lr=1e-3, metrics_path=metrics_path)
        result = run_stage(InteractModel(tiny_config()), _splits(), cfg)
        assert [m.epoch for m in result.metrics] == [0, 1]
        assert result.best_val_fde == min(m.val_fde for m in result.metrics)
        with open(metrics_path, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        assert rows[0] == METRICS_HEADER
        assert len(rows) == 3

    def test_best_epoch_keeps_matching_optimizer_state(self, monkeypatch):
        scripted = iter([0.5, 0.2, 0.4, 0.5, 0.2])

        def fake_validate(model, batch, batch_size=256):
            return 0.0, next(scripted)

        monkeypatch.setattr(training, 'validate', fake_validate)
        splits = _splits()
        longer = run_stage(InteractModel(tiny_config()), splits, TrainConfig(epochs=3, batch_size=8, seed=5))
        shorter = run_stage(InteractModel(tiny_config()), splits, TrainConfig(epochs=2, batch_size=8, seed=5))
        assert longer.best_epoch == shorter.best_epoch == 1
        assert longer.optimizer.step == shorter.optimizer.step
        assert longer.rng_state == shorter.rng_state
        a, b = longer.model.state_dict(), shorter.model.state_dict()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])
            np.testing.assert_array_equal(longer.optimizer.m[name], shorter.optimizer.m[name])
            np.testing.assert_array_equal(longer.optimizer.v[name], shorter.optimizer.v[name])

    def test_same_seed_same_weights(self):
        cfg = TrainConfig(epochs=1, batch_size=8, seed=3)
        a = run_stage(InteractModel(tiny_config()), _splits(), cfg).model.state_dict()
        b = run_stage(InteractModel(tiny_config()), _splits(), cfg).model.state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_finetune_with_alignment(self):
        paired = build_paired_set(gen_teleop_sessions(SynthConfig(seed=2, n_frames=60), 1)[0])
        cfg = TrainConfig(stage='finetune', epochs=1, batch_size=8, align_enabled=True,
                          paired_set=paired, align_subsample=16)
        model = InteractModel(dataclasses.replace(tiny_config(), variant='InteRACT_Align'))
        result = run_stage(model, _splits(), cfg)
        assert np.isfinite(result.metrics[0].train_loss)

    def test_freeze_human_embeddings(self):
        model = InteractModel(tiny_config())
        before = model.store['embed.hist_human.weight'].data.copy()
        run_stage(model, {'train': _splits()['train']}, TrainConfig(epochs=1, batch_size=8, freeze_human_embeddings=True))
        np.testing.assert_array_equal(model.store['embed.hist_human.weight'].data, before)

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            TrainConfig(stage='posttrain')
        with pytest.raises(ConfigError):
            TrainConfig(stage='pretrain', align_enabled=True, paired_set=PairedPoseDataset(np.zeros((1, 6)), np.zeros((1, 27))))
        with pytest.raises(ConfigError):
            TrainConfig(stage='finetune', align_enabled=True)
        with pytest.raises(ConfigError):
            run_stage(InteractModel(tiny_config()), {'train': []}, TrainConfig())

    @pytest.mark.slow
    def test_loss_goes_down(self):
        cfg = TrainConfig(epochs=30, batch_size=8, base_lr=3e-3, milestones=(20,))
        result = run_stage(InteractModel(tiny_config()), _splits(n_train=4), cfg)
        assert result.metrics[-1].train_loss < 0.5 * result.metrics[0].train_loss


class TestCheckpoint:
    @pytest.mark.parametrize('precision', ['float32', 'float64'])
    def test_roundtrip(self, tmp_path, rng, precision):
        model = InteractModel(ModelConfig(horizon=4, embed_dim=8, layers=1, heads=2, seed=1, precision=precision))
        batch = random_batch(rng, 2, 4)
        model.zero_grad()
        model.forward_batch(batch).sum().backward()
        state = OptimizerState()
        adam_step(model.store, None, state, 1e-3)
        path = save_checkpoint(model, None, str(tmp_path / 'm.ckpt'), optimizer=state, epoch=7, stage='pretrain')
        ckpt = load_checkpoint(path)
        assert ckpt.config == model.config
        assert ckpt.epoch == 7
        assert ckpt.stage == 'pretrain'
        assert ckpt.config_hash == model.config.config_hash()
        assert ckpt.optimizer.step == 1
        for name, tensor in model.parameters():
            np.testing.assert_array_equal(ckpt.params[name], tensor.data)
            np.testing.assert_array_equal(ckpt.optimizer.m[name], state.m[name])
            assert ckpt.params[name].dtype == np.dtype(precision)
            assert ckpt.optimizer.v[name].dtype == np.dtype(precision)
        rebuilt = ckpt.build_model()
        assert rebuilt.config.precision == precision
        np.testing.assert_array_equal(rebuilt.forward_batch(batch).data, model.forward_batch(batch).data)

    def test_flipped_byte(self, tmp_path):
        path = save_checkpoint(InteractModel(tiny_config()), None, str(tmp_path / 'm.ckpt'))
        data = bytearray((tmp_path / 'm.ckpt').read_bytes())
        data[len(data) // 2] ^= 0xFF
        (tmp_path / 'm.ckpt').write_bytes(bytes(data))
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = save_checkpoint(InteractModel(tiny_config()), None, str(tmp_path / 'm.ckpt'))
        data = (tmp_path / 'm.ckpt').read_bytes()
        (tmp_path / 'm.ckpt').write_bytes(data[:-100])
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / 'x.ckpt').write_bytes(b'hello')
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(str(tmp_path / 'x.ckpt'))

    def test_future_version(self, tmp_path):
        path = save_checkpoint(InteractModel(tiny_config()), None, str(tmp_path / 'm.ckpt'))
        data = bytearray((tmp_path / 'm.ckpt').read_bytes())
        data[8:12] = (99).to_bytes(4, 'little')
        (tmp_path / 'm.ckpt').write_bytes(bytes(data))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_shape_mismatch(self, tmp_path):
        path = save_checkpoint(InteractModel(tiny_config()), None, str(tmp_path / 'm.ckpt'))
        other = InteractModel(ModelConfig(horizon=4, embed_dim=12, layers=1, heads=2))
        with pytest.raises(CheckpointShapeError):
            load_checkpoint(path, other)
