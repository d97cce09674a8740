"""
InteRACT 意圖預測系統 - 資料集輸入輸出測試
"""
import json

import numpy as np
import pytest

from interact.dataset_io import (
    AgentTrack, Episode, PairedPoseDataset, SplitSpec, SynthConfig, build_paired_set, compose_synthetic_pair,
    episode_to_dict, extract_agent, gen_conflict_reach, gen_handover, gen_teleop_sessions, load_episode,
    load_paired_set, make_windows, min_interagent_distance, min_jerk, read_dataset, resample,
    save_episode, save_paired_set, scene_from_dict, scene_to_dict, split_episodes, stack_windows,
    write_dataset,
)
from interact.errors import DatasetError, PlacementError, SchemaError, SplitError
from interact.pose_core import human_layout, robot_layout
from interact.retarget import retarget_trajectory


def _human_track(rng, n, name='human', offset=(0.0, 0.0, 0.0)):
    frames = rng.normal(scale=0.1, size=(n, 9, 3)) + np.asarray(offset)
    return AgentTrack(name, human_layout(), frames.reshape(n, -1))


def _two_agent(rng, n, partner='robot', ep_id='ep', task='conflict_reach'):
    if partner == 'robot':
        other = AgentTrack('robot', robot_layout(), rng.normal(size=(n, 6)))
    else:
        other = _human_track(rng, n, 'partner', (0.0, 1.0, 0.0))
    return Episode(ep_id, task, 15.0, [_human_track(rng, n), other], 'procedural')


def _write_json(path, doc):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f)
    return str(path)


def _minimal_doc(n=2):
    return {
        'id': 'clip',
        'task': 'walk',
        'frame_hz': 15.0,
        'source': 'recorded',
        'agents': [{
            'name': 'human',
            'kind': 'human',
            'joint_names': list(human_layout().joint_names),
            'frames': [[0.1 * t] * 27 for t in range(n)],
        }],
    }


class TestLoading:
    def test_minimal_file(self, tmp_path):
        ep = load_episode(_write_json(tmp_path / 'clip.json', _minimal_doc()))
        assert ep.num_frames == 2
        assert ep.agents[0].kind == 'human'

    def test_unequal_frame_counts(self, tmp_path):
        doc = _minimal_doc(3)
        doc['agents'].append({
            'name': 'robot', 'kind': 'robot', 'joint_names': list(robot_layout().joint_names),
            'frames': [[0.0] * 6, [0.0] * 6],
        })
        with pytest.raises(SchemaError, match='3 vs 2'):
            load_episode(_write_json(tmp_path / 'bad.json', doc))

    def test_nan_names_field_and_frame(self, tmp_path):
        doc = _minimal_doc(4)
        doc['agents'][0]['frames'][2][5] = float('nan')
        with pytest.raises(SchemaError) as info:
            load_episode(_write_json(tmp_path / 'nan.json', doc))
        assert info.value.frame == 2
        assert 'agents[0].frames' in str(info.value)

    def test_unknown_layout(self, tmp_path):
        doc = _minimal_doc()
        doc['agents'][0]['joint_names'][0] = 'pelvis'
        with pytest.raises(SchemaError, match='joint_names'):
            load_episode(_write_json(tmp_path / 'layout.json', doc))

    def test_wrong_row_width(self, tmp_path):
        doc = _minimal_doc()
        doc['agents'][0]['frames'][1] = [0.0] * 26
        with pytest.raises(SchemaError) as info:
            load_episode(_write_json(tmp_path / 'width.json', doc))
        assert info.value.frame == 1

    def test_missing_key(self, tmp_path):
        doc = _minimal_doc()
        del doc['source']
        with pytest.raises(SchemaError, match='source'):
            load_episode(_write_json(tmp_path / 'missing.json', doc))

    def test_non_numeric_coordinate(self, tmp_path):
        doc = _minimal_doc(5)
        doc['agents'][0]['frames'][3][0] = 'oops'
        with pytest.raises(SchemaError) as info:
            load_episode(_write_json(tmp_path / 'text.json', doc))
        assert info.value.frame == 3
        assert info.value.field == 'agents[0].frames'

    def test_boolean_coordinate(self, tmp_path):
        doc = _minimal_doc(3)
        doc['agents'][0]['frames'][1][4] = True
        with pytest.raises(SchemaError) as info:
            load_episode(_write_json(tmp_path / 'bool.json', doc))
        assert info.value.frame == 1

    @pytest.mark.parametrize('agent', [5, 'human', None, [1, 2]])
    def test_agent_entry_not_an_object(self, tmp_path, agent):
        doc = _minimal_doc()
        doc['agents'][0] = agent
        with pytest.raises(SchemaError, match=r'agents\[0\]'):
            load_episode(_write_json(tmp_path / 'agent.json', doc))

    def test_frames_not_a_list(self, tmp_path):
        doc = _minimal_doc()
        doc['agents'][0]['frames'] = {'0': [0.0] * 27}
        with pytest.raises(SchemaError, match='frames'):
            load_episode(_write_json(tmp_path / 'frames.json', doc))

    @pytest.mark.parametrize('frame_hz', ['fast', True, -15.0])
    def test_bad_frame_rate(self, tmp_path, frame_hz):
        doc = _minimal_doc()
        doc['frame_hz'] = frame_hz
        with pytest.raises(SchemaError, match='frame_hz'):
            load_episode(_write_json(tmp_path / 'hz.json', doc))

    def test_meta_not_an_object(self, tmp_path):
        doc = _minimal_doc()
        doc['meta'] = [1, 2]
        with pytest.raises(SchemaError, match='meta'):
            load_episode(_write_json(tmp_path / 'meta.json', doc))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{"id": "x", ', encoding='utf-8')
        with pytest.raises(SchemaError, match='invalid JSON'):
            load_episode(str(path))

    def test_save_load_save_is_byte_identical(self, tmp_path, rng):
        ep = _two_agent(rng, 20)
        ep.metadata = {'partner_commit_frame': 7}
        first = save_episode(ep, str(tmp_path / 'a.json'))
        second = save_episode(load_episode(first), str(tmp_path / 'b.json'))
        assert (tmp_path / 'a.json').read_bytes() == (tmp_path / 'b.json').read_bytes()
        assert load_episode(second).metadata == {'partner_commit_frame': 7}

    def test_dataset_directory(self, tmp_path, rng):
        splits = {'train': [_two_agent(rng, 30, ep_id=f"e{i}") for i in range(3)],
                  'val': [_two_agent(rng, 30, ep_id='v')], 'test': [_two_agent(rng, 30, ep_id='t')]}
        write_dataset(str(tmp_path / 'ds'), splits)
        back = read_dataset(str(tmp_path / 'ds'))
        assert [ep.id for ep in back['train']] == ['e0', 'e1', 'e2']
        assert [ep.id for ep in back['test']] == ['t']
        np.testing.assert_array_equal(back['val'][0].agents[1].frames, splits['val'][0].agents[1].frames)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError, match='manifest'):
            read_dataset(str(tmp_path))


class TestResample:
    def test_same_rate_is_identity(self, rng):
        ep = _two_agent(rng, 12)
        out = resample(ep, 15.0)
        np.testing.assert_array_equal(out.agents[0].frames, ep.agents[0].frames)

    def test_ramp_stays_on_ramp(self):
        n = 31
        t = np.arange(n) / 30.0
        frames = np.tile((2.0 * t - 1.0)[:, None], (1, 27))
        ep = Episode('ramp', 'walk', 30.0, [AgentTrack('human', human_layout(), frames)])
        out = resample(ep, 15.0)
        grid = np.linspace(0.0, 1.0, out.num_frames)
        np.testing.assert_allclose(out.agents[0].frames[:, 0], 2.0 * grid - 1.0, atol=1e-12)

    def test_frame_count_and_endpoints(self, rng):
        n = 8 * 120 + 1
        frames = rng.normal(size=(n, 27))
        ep = Episode('mocap', 'walk', 120.0, [AgentTrack('human', human_layout(), frames)])
        out = resample(ep, 15.0)
        assert out.num_frames == 121
        assert out.frame_hz == 15.0
        np.testing.assert_array_equal(out.agents[0].frames[0], frames[0])
        np.testing.assert_array_equal(out.agents[0].frames[-1], frames[-1])

    def test_bad_rate(self, rng):
        with pytest.raises(DatasetError):
            resample(_two_agent(rng, 5), 0.0)


class TestWindows:
    def test_counts(self, rng):
        ep = _two_agent(rng, 450)
        assert len(make_windows(ep, stride=1)) == 421
        assert len(make_windows(ep, stride=15)) == 29
        assert make_windows(_two_agent(rng, 29), stride=1) == []

    def test_window_contents(self, rng):
        ep = _two_agent(rng, 40)
        w = make_windows(ep, stride=5)[1]
        assert w.start_frame == 5
        assert w.episode_id == 'ep'
        assert w.task == 'conflict_reach'
        np.testing.assert_array_equal(w.scene.human_history.frames, ep.agents[0].frames[5:20])
        np.testing.assert_array_equal(w.scene.target_future.frames, ep.agents[0].frames[20:35])
        np.testing.assert_array_equal(w.scene.partner_future_action.coords, ep.agents[1].frames[34])
        assert w.scene.partner_kind == 'robot'

    def test_single_agent_is_rejected(self, rng):
        ep = Episode('solo', 'walk', 15.0, [_human_track(rng, 40)])
        with pytest.raises(DatasetError, match='compose_synthetic_pair'):
            make_windows(ep)

    def test_requires_canonical_rate(self, rng):
        ep = _two_agent(rng, 40)
        ep.frame_hz = 30.0
        with pytest.raises(DatasetError, match='resample'):
            make_windows(ep)

    def test_both_directions(self, rng):
        ep = _two_agent(rng, 40, partner='human')
        assert len(make_windows(ep, 5, both_directions=True)) == 2 * len(make_windows(ep, 5))

    def test_stack_windows_centres_on_last_upper_back(self, rng):
        windows = make_windows(_two_agent(rng, 40), stride=5)
        batch = stack_windows(windows)
        assert batch.human_history.shape == (len(windows), 15, 27)
        assert batch.partner_history.shape == (len(windows), 15, 6)
        expected = np.stack([w.scene.human_history.frames[-1, 0:3] for w in windows])
        np.testing.assert_array_equal(batch.offsets, expected)
        np.testing.assert_allclose(batch.human_history[:, -1, 0:3], 0.0, atol=1e-15)


class TestSplits:
    def _episodes(self, rng, n):
        return [_two_agent(rng, 2, ep_id=f"ep{i:03d}") for i in range(n)]

    def test_270_episodes(self, rng):
        splits = split_episodes(self._episodes(rng, 270), SplitSpec(seed=3))
        assert [len(splits[k]) for k in ('train', 'val', 'test')] == [216, 27, 27]

    def test_ten_episodes(self, rng):
        splits = split_episodes(self._episodes(rng, 10))
        assert [len(splits[k]) for k in ('train', 'val', 'test')] == [8, 1, 1]

    def test_deterministic_and_disjoint(self, rng):
        eps = self._episodes(rng, 50)
        a = split_episodes(eps, SplitSpec(seed=7))
        b = split_episodes(eps, SplitSpec(seed=7))
        ids = {k: [e.id for e in v] for k, v in a.items()}
        assert ids == {k: [e.id for e in v] for k, v in b.items()}
        assert not set(ids['train']) & set(ids['val'])
        assert not set(ids['train']) & set(ids['test'])
        assert not set(ids['val']) & set(ids['test'])
        assert sum(len(v) for v in ids.values()) == 50

    def test_too_few(self, rng):
        with pytest.raises(SplitError):
            split_episodes(self._episodes(rng, 9))

    def test_bad_ratios(self):
        with pytest.raises(SplitError):
            SplitSpec((8, 0, 2))


class TestSyntheticPair:
    def _clips(self, rng):
        a = Episode('a', 'walk', 15.0, [_human_track(rng, 40)])
        b = Episode('b', 'walk', 15.0, [_human_track(rng, 35)])
        return a, b

    def test_deterministic(self, rng, tmp_path):
        a, b = self._clips(rng)
        cfg = SynthConfig(seed=5)
        first = compose_synthetic_pair(a, b, cfg)
        second = compose_synthetic_pair(a, b, cfg)
        save_episode(first, str(tmp_path / '1.json'))
        save_episode(second, str(tmp_path / '2.json'))
        assert (tmp_path / '1.json').read_bytes() == (tmp_path / '2.json').read_bytes()

    def test_min_separation_by_brute_force(self, rng):
        a, b = self._clips(rng)
        cfg = SynthConfig(seed=1, min_separation=0.5)
        ep = compose_synthetic_pair(a, b, cfg)
        assert ep.num_frames == 35
        assert ep.source == 'synthetic_pair'
        pa = ep.agents[0].frames.reshape(35, 9, 3)
        pb = ep.agents[1].frames.reshape(35, 9, 3)
        worst = min(np.linalg.norm(pa[t, i] - pb[t, j]) for t in range(35) for i in range(9) for j in range(9))
        assert worst >= 0.5
        assert worst == pytest.approx(min_interagent_distance(pa, pb), abs=1e-12)

    def test_infeasible_placement(self, rng):
        a, b = self._clips(rng)
        with pytest.raises(PlacementError):
            compose_synthetic_pair(a, b, SynthConfig(min_separation=5.0, workspace_radius=0.5))

    def test_extract_agent(self, rng):
        ep = _two_agent(rng, 10, partner='human')
        clip = extract_agent(ep, 'partner')
        assert len(clip.agents) == 1
        np.testing.assert_array_equal(clip.agents[0].frames, ep.agents[1].frames)


class TestProcedural:
    def test_targets_are_opposite(self):
        eps = gen_conflict_reach(SynthConfig(seed=2), 20)
        for ep in eps:
            assert ep.metadata['human_target'] == 1 - ep.metadata['partner_target']
            assert ep.metadata['human_onset_frame'] > ep.metadata['partner_commit_frame']
            ep.validate()

    def test_choices_are_balanced(self):
        eps = gen_conflict_reach(SynthConfig(seed=4), 60)
        share = np.mean([ep.metadata['partner_target'] for ep in eps])
        assert abs(share - 0.5) <= 0.05

    def test_same_seed_same_set(self):
        a = gen_conflict_reach(SynthConfig(seed=9), 4, 'robot')
        b = gen_conflict_reach(SynthConfig(seed=9), 4, 'robot')
        for x, y in zip(a, b):
            assert episode_to_dict(x) == episode_to_dict(y)
        assert a[0].agents[1].layout == robot_layout()

    def test_hand_reaches_object(self):
        cfg = SynthConfig(seed=0)
        ep = gen_conflict_reach(cfg, 1, partner_choices=[0])[0]
        hand = ep.agent('partner').frames[-1, human_layout().joint_slice('r_hand')]
        np.testing.assert_allclose(hand, cfg.objects[0], atol=0.01)

    def test_history_ambiguous_before_onset(self):
        cfg = SynthConfig(seed=6)
        left = gen_conflict_reach(cfg, 3, partner_choices=[0, 0, 0])
        right = gen_conflict_reach(cfg, 3, partner_choices=[1, 1, 1])
        for a, b in zip(left, right):
            onset = min(a.metadata['human_onset_frame'], b.metadata['human_onset_frame'])
            np.testing.assert_array_equal(a.agent('human').frames[:onset], b.agent('human').frames[:onset])

    def test_min_jerk_boundary_conditions(self):
        step = 1e-4
        assert min_jerk(np.array([0.0]))[0] == 0.0
        assert min_jerk(np.array([1.0]))[0] == 1.0
        v0 = (min_jerk(np.array([step])) - min_jerk(np.array([0.0])))[0] / step
        v1 = (min_jerk(np.array([1.0])) - min_jerk(np.array([1.0 - step])))[0] / step
        assert abs(v0) <= 1e-6
        assert abs(v1) <= 1e-6

    def test_needs_two_objects(self):
        with pytest.raises(DatasetError):
            gen_conflict_reach(SynthConfig(objects=((0.0, 0.0, 1.0),)), 2)

    def test_handover_task_key(self):
        eps = gen_handover(SynthConfig(seed=1), 4)
        assert {ep.task for ep in eps} == {'handover'}
        for ep in eps:
            assert ep.metadata['human_target'] == ep.metadata['partner_target']


class TestPairedSet:
    def test_one_pair_per_frame(self):
        ep = gen_teleop_sessions(SynthConfig(seed=3), 1)[0]
        paired = build_paired_set(ep)
        assert len(paired) == ep.num_frames
        human = ep.first_of_kind('human').trajectory(ep.frame_hz)
        np.testing.assert_allclose(paired.robot, retarget_trajectory(human).frames, atol=1e-12)

    def test_retargets_when_robot_missing(self, rng):
        ep = gen_teleop_sessions(SynthConfig(seed=3), 1)[0]
        human_only = Episode(ep.id, ep.task, ep.frame_hz, [ep.first_of_kind('human')])
        np.testing.assert_allclose(build_paired_set(human_only).robot, build_paired_set(ep).robot, atol=1e-12)

    def test_empty_episode(self):
        ep = Episode('empty', 'teleop', 15.0, [AgentTrack('teleoperator', human_layout(), np.zeros((0, 27)))])
        assert len(build_paired_set(ep)) == 0

    def test_frame_mismatch(self, rng):
        ep = Episode('bad', 'teleop', 15.0, [_human_track(rng, 5), AgentTrack('robot', robot_layout(), np.zeros((4, 6)))])
        with pytest.raises(DatasetError):
            build_paired_set(ep)

    def test_file_roundtrip(self, tmp_path):
        paired = build_paired_set(gen_teleop_sessions(SynthConfig(seed=1), 1)[0])
        back = load_paired_set(save_paired_set(paired, str(tmp_path / 'pairs.json')))
        np.testing.assert_array_equal(back.robot, paired.robot)
        np.testing.assert_array_equal(back.human, paired.human)

    def test_concat(self):
        a = PairedPoseDataset(np.zeros((2, 6)), np.zeros((2, 27)), ['a'])
        b = PairedPoseDataset(np.ones((3, 6)), np.ones((3, 27)), ['b'])
        both = PairedPoseDataset.concat([a, b])
        assert len(both) == 5
        assert both.source_episode_ids == ['a', 'b']


class TestWindowPayload:
    def test_roundtrip(self, rng):
        scene = make_windows(_two_agent(rng, 30), stride=1)[0].scene
        back = scene_from_dict(json.loads(json.dumps(scene_to_dict(scene))))
        np.testing.assert_array_equal(back.human_history.frames, scene.human_history.frames)
        np.testing.assert_array_equal(back.partner_future_action.coords, scene.partner_future_action.coords)
        assert back.partner_kind == 'robot'

    def test_bad_action_width(self, rng):
        doc = scene_to_dict(make_windows(_two_agent(rng, 30), stride=1)[0].scene)
        doc['partner_future_action'] = [0.0] * 5
        with pytest.raises(SchemaError, match='partner_future_action'):
            scene_from_dict(doc)

    def test_missing_history(self):
        with pytest.raises(SchemaError, match='human_history'):
            scene_from_dict({'partner_history': [[0.0] * 6], 'partner_future_action': [0.0] * 6})
