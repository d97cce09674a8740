"""
InteRACT 意圖預測系統 - 模型測試
"""
import dataclasses

import numpy as np
import pytest

from interact.dataset_io import stack_scenes
from interact.errors import ConfigError, LayoutError
from interact.model import (
    VARIANTS, InteractModel, ModelConfig, build_query, encode_context, parameter_count, predict_batch,
    predict_intent, variant_spec,
)
from interact.pose_core import Pose, PoseTrajectory, center_scene, translate_window
from interact.verification import check_model_gradient, random_batch, random_window, tiny_config


def _model(variant='InteRACT', seed=0, **overrides):
    return InteractModel(dataclasses.replace(tiny_config(seed), variant=variant, **overrides))


def _replace_partner(window, rng, history=False, action=False):
    layout = window.partner_history.layout
    partner = window.partner_history
    if history:
        partner = PoseTrajectory(layout, partner.frames + rng.normal(size=partner.frames.shape))
    pose = window.partner_future_action
    if action:
        pose = Pose(layout, pose.coords + rng.normal(size=pose.coords.shape))
    return dataclasses.replace(window, partner_history=partner, partner_future_action=pose)


class TestConfig:
    @pytest.mark.parametrize('cfg', [
        ModelConfig(),
        ModelConfig(horizon=4, embed_dim=8, layers=1, heads=2),
        ModelConfig(horizon=6, embed_dim=12, layers=2, heads=3, ffn_ratio=2),
    ])
    def test_parameter_count_closed_form(self, cfg):
        assert InteractModel(cfg).num_parameters() == parameter_count(cfg)

    def test_count_independent_of_heads(self):
        assert parameter_count(ModelConfig(heads=2)) == parameter_count(ModelConfig(heads=8))

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            ModelConfig(embed_dim=30, heads=4)
        with pytest.raises(ConfigError):
            ModelConfig(variant='Oracle')
        with pytest.raises(ConfigError):
            ModelConfig(precision='float16')
        with pytest.raises(ConfigError):
            ModelConfig(layers=0)

    def test_variant_lookup_is_case_insensitive(self):
        assert variant_spec('interact_align').name == 'InteRACT_Align'
        assert ModelConfig(variant='marginal').variant == 'Marginal'

    def test_variant_table(self):
        assert not VARIANTS['Marginal'].uses_partner_history
        assert not VARIANTS['MarginalHist'].conditional
        assert VARIANTS['InteRACT'].conditional
        assert VARIANTS['InteRACT_Align'].align_enabled
        assert not VARIANTS['OnlyFineTuned'].pretrained

    def test_hash_ignores_precision(self):
        base = ModelConfig(seed=3)
        assert base.config_hash() == dataclasses.replace(base, precision='float64').config_hash()
        assert base.config_hash() != dataclasses.replace(base, layers=2).config_hash()

    def test_dict_roundtrip(self):
        cfg = tiny_config(5)
        assert ModelConfig.from_dict({**cfg.to_dict(), 'unused': 1}) == cfg


class TestForward:
    def test_output_shape(self, rng):
        for partner in ('robot', 'human'):
            batch = random_batch(rng, 3, 4, partner)
            assert _model()(batch).shape == (3, 4, 27)

    def test_default_model_predicts_fifteen_frames(self, rng):
        traj = predict_intent(InteractModel(ModelConfig()), random_window(rng))
        assert traj.frames.shape == (15, 27)
        assert np.all(np.isfinite(traj.frames))

    def test_same_seed_same_parameters(self):
        a, b = _model(seed=4).state_dict(), _model(seed=4).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_precision_initialised_identically(self):
        lo = InteractModel(ModelConfig(seed=1, precision='float32')).state_dict()
        hi = InteractModel(ModelConfig(seed=1, precision='float64')).state_dict()
        for name in lo:
            np.testing.assert_array_equal(lo[name], hi[name].astype(np.float32))

    def test_width_mismatch(self, rng):
        batch = random_batch(rng, 2, 5)
        with pytest.raises(LayoutError):
            _model()(batch)

    def test_translation_equivariance(self, rng):
        model = _model()
        for _ in range(5):
            window = random_window(rng, horizon=4)
            v = rng.uniform(-5.0, 5.0, size=3)
            moved = predict_intent(model, translate_window(window, v)).joints()
            np.testing.assert_allclose(moved, predict_intent(model, window).joints() + v, atol=1e-9)

    def test_batch_matches_single_window(self, rng):
        model = _model()
        windows = [random_window(rng, horizon=4) for _ in range(3)]
        batch = predict_batch(model, stack_scenes(windows), batch_size=2)
        for i, window in enumerate(windows):
            np.testing.assert_allclose(batch[i], predict_intent(model, window).frames, atol=1e-10)


class TestVariants:
    def test_marginal_ignores_partner(self, rng):
        model = _model('Marginal')
        window = random_window(rng, horizon=4)
        other = _replace_partner(window, rng, history=True, action=True)
        np.testing.assert_array_equal(predict_intent(model, window).frames, predict_intent(model, other).frames)

    def test_marginal_hist_ignores_action_only(self, rng):
        model = _model('MarginalHist')
        window = random_window(rng, horizon=4)
        same = predict_intent(model, _replace_partner(window, rng, action=True)).frames
        np.testing.assert_array_equal(predict_intent(model, window).frames, same)
        changed = predict_intent(model, _replace_partner(window, rng, history=True)).frames
        assert np.abs(changed - same).max() > 1e-9

    def test_interact_depends_on_action(self, rng):
        model = _model('InteRACT')
        window = random_window(rng, horizon=4)
        changed = predict_intent(model, _replace_partner(window, rng, action=True)).frames
        assert np.abs(changed - predict_intent(model, window).frames).max() > 1e-9

    def test_with_variant_shares_parameters(self, rng):
        model = _model('InteRACT')
        weight = model.store['head.weight']
        model.with_variant('Marginal')
        assert model.variant.name == 'Marginal'
        assert model.config.variant == 'Marginal'
        assert model.store['head.weight'] is weight

    def test_astype(self):
        model = _model().astype('float32')
        assert model.dtype == np.float32
        assert model.config.precision == 'float32'
        with pytest.raises(ConfigError):
            model.astype('int8')


class TestGradient:
    def test_stacked_layers_pass_gradient_check(self):
        result = check_model_gradient(seed=3)
        assert result['success'], result['detail']
        assert result['max_error'] <= result['tolerance']

    def test_gradient_reaches_second_layer(self, rng):
        model = InteractModel(tiny_config(layers=2))
        batch = random_batch(rng, 2, 4)
        model.forward_batch(batch).sum().backward()
        second = [name for name, t in model.parameters() if '.1.' in name]
        assert second
        assert all(model.store[name].grad is not None for name in second)


class TestEncodingAndQuery:
    def test_memory_rows(self, rng):
        centered, _ = center_scene(random_window(rng, horizon=4))
        assert encode_context(_model('InteRACT'), centered).rows == 12
        assert encode_context(_model('Marginal'), centered).rows == 8

    def test_query_source(self, rng):
        centered, _ = center_scene(random_window(rng, horizon=4))
        model = _model()
        conditional = build_query(model, VARIANTS['InteRACT'], centered)
        assert conditional.raw is centered.partner_future_action
        assert conditional.embedding.shape == (1, 8)
        marginal = build_query(model, VARIANTS['Marginal'], centered)
        np.testing.assert_array_equal(marginal.raw.coords, centered.human_history.frames[-1])

    def test_embedding_per_agent_kind(self):
        model = _model()
        assert model.embedding_names('robot') == [
            'embed.hist_robot.weight', 'embed.hist_robot.bias', 'embed.fut_robot.weight', 'embed.fut_robot.bias',
        ]
        with pytest.raises(LayoutError):
            model.embedding('hist', 'dog')
