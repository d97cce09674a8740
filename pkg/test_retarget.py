"""
InteRACT 意圖預測系統 - 人機姿態對應測試
"""
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from interact.errors import DegenerateBoneError, LayoutError
from interact.pose_core import Pose, PoseTrajectory, human_layout, robot_layout
from interact.retarget import EEPose, MarkerLayout, ee_to_marker_pose, hand_frame, minimal_rotation, retarget_trajectory


def _human_pose(wrist, hand, side='right', base=None):
    coords = np.zeros(27) if base is None else base.copy()
    layout = human_layout()
    coords[layout.joint_slice(f'{side[0]}_wrist')] = wrist
    coords[layout.joint_slice(f'{side[0]}_hand')] = hand
    return Pose(layout, coords)


def _random_human(rng):
    coords = rng.normal(scale=0.3, size=27)
    layout = human_layout()
    wrist = coords[layout.joint_slice('r_wrist')]
    coords[layout.joint_slice('r_hand')] = wrist + 0.08 * rng.normal(size=3) + np.array([0.05, 0.0, 0.0])
    return Pose(layout, coords)


class TestHandFrame:
    def test_bone_along_y(self):
        ee = hand_frame(_human_pose([0.0, 0.0, 0.0], [0.0, 0.1, 0.0]))
        np.testing.assert_allclose(ee.position, [0.0, 0.1, 0.0])
        np.testing.assert_allclose(ee.orientation, [0.70711, 0.0, 0.0, 0.70711], atol=1e-5)

    def test_bone_along_rest_direction_is_identity(self):
        ee = hand_frame(_human_pose([1.0, 2.0, 3.0], [1.2, 2.0, 3.0]))
        np.testing.assert_allclose(ee.orientation, [1.0, 0.0, 0.0, 0.0], atol=1e-12)

    def test_antiparallel_bone(self):
        ee = hand_frame(_human_pose([0.0, 0.0, 0.0], [-0.1, 0.0, 0.0]))
        np.testing.assert_allclose(ee.rotation().apply([1.0, 0.0, 0.0]), [-1.0, 0.0, 0.0], atol=1e-12)

    def test_rest_axis_maps_onto_bone(self, rng):
        for _ in range(20):
            direction = rng.normal(size=3)
            q = minimal_rotation(direction)
            rotated = EEPose(np.zeros(3), q).rotation().apply([1.0, 0.0, 0.0])
            np.testing.assert_allclose(rotated, direction / np.linalg.norm(direction), atol=1e-12)

    def test_no_roll_about_bone(self, rng):
        direction = rng.normal(size=3)
        rotvec = Rotation.from_quat(np.roll(minimal_rotation(direction), -1)).as_rotvec()
        assert abs(rotvec[0]) <= 1e-9
        assert abs(rotvec @ direction) <= 1e-9

    def test_left_side(self):
        ee = hand_frame(_human_pose([0.0, 0.0, 0.0], [0.0, 0.0, 0.2], side='left'), side='left')
        np.testing.assert_allclose(ee.position, [0.0, 0.0, 0.2])

    def test_degenerate_bone(self):
        with pytest.raises(DegenerateBoneError):
            hand_frame(_human_pose([0.3, 0.3, 0.3], [0.3, 0.3, 0.3]))

    def test_bad_side(self):
        with pytest.raises(LayoutError):
            hand_frame(_human_pose([0.0, 0.0, 0.0], [0.1, 0.0, 0.0]), side='middle')

    def test_needs_human_pose(self):
        with pytest.raises(LayoutError):
            hand_frame(Pose(robot_layout(), np.zeros(6)))


class TestMarkers:
    def test_identity(self):
        pose = ee_to_marker_pose(EEPose(np.zeros(3), [1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(pose.coords, [0.0, 0.0, 0.0, -0.1, 0.0, 0.0], atol=1e-12)

    def test_quarter_turn(self):
        p = np.array([0.4, -0.2, 1.0])
        s = np.sqrt(0.5)
        pose = ee_to_marker_pose(EEPose(p, [s, 0.0, 0.0, s]))
        np.testing.assert_allclose(pose.coords[0:3], p, atol=1e-12)
        np.testing.assert_allclose(pose.coords[3:6], p + [0.0, -0.1, 0.0], atol=1e-12)

    def test_marker_distance_is_rigid(self, rng):
        layout = MarkerLayout()
        for _ in range(50):
            q = rng.normal(size=4)
            pose = ee_to_marker_pose(EEPose(rng.normal(size=3), q), layout)
            gap = np.linalg.norm(pose.coords[0:3] - pose.coords[3:6])
            assert gap == pytest.approx(layout.marker_distance, abs=1e-9)

    def test_orientation_is_normalised(self):
        ee = EEPose(np.zeros(3), [-2.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(ee.orientation, [1.0, 0.0, 0.0, 0.0])

    def test_coincident_markers_rejected(self):
        with pytest.raises(LayoutError):
            MarkerLayout(np.zeros(3), np.zeros(3))


class TestRetargetTrajectory:
    def test_frame_by_frame(self, rng):
        poses = [_random_human(rng) for _ in range(6)]
        traj = PoseTrajectory(human_layout(), np.stack([p.coords for p in poses]), 30.0)
        robot = retarget_trajectory(traj)
        assert robot.layout == robot_layout()
        assert robot.frame_hz == 30.0
        for i, pose in enumerate(poses):
            np.testing.assert_allclose(robot.frames[i], ee_to_marker_pose(hand_frame(pose)).coords)

    def test_translation_equivariant(self, rng):
        traj = PoseTrajectory(human_layout(), np.stack([_random_human(rng).coords for _ in range(5)]))
        v = np.array([0.5, -1.0, 0.25])
        shifted = PoseTrajectory(human_layout(), traj.frames + np.tile(v, 9))
        np.testing.assert_allclose(
            retarget_trajectory(shifted).frames, retarget_trajectory(traj).frames + np.tile(v, 2), atol=1e-12,
        )

    def test_degenerate_frame_is_reported(self, rng):
        frames = np.stack([_random_human(rng).coords for _ in range(4)])
        layout = human_layout()
        frames[2, layout.joint_slice('r_hand')] = frames[2, layout.joint_slice('r_wrist')]
        with pytest.raises(DegenerateBoneError) as info:
            retarget_trajectory(PoseTrajectory(layout, frames))
        assert info.value.frame == 2
