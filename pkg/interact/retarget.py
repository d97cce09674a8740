"""
InteRACT 意圖預測系統 - 人類到機器人的姿態對應
人類手部位置 → 末端執行器位置；手腕→手部骨骼方向 → 末端執行器姿態 (無滾轉最小旋轉)
"""
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateBoneError, LayoutError
from .pose_core import Pose, PoseTrajectory, robot_layout

REST_BONE_DIRECTION = np.array([1.0, 0.0, 0.0])
MIN_BONE_LENGTH = 1e-3


@dataclass(frozen=True)
class EEPose:
    position: np.ndarray
    orientation: np.ndarray  # (w, x, y, z)

    def __post_init__(self):
        position = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        q = q / np.linalg.norm(q)
        if q[0] < 0:
            q = -q
        object.__setattr__(self, 'position', position)
        object.__setattr__(self, 'orientation', q)

    def rotation(self) -> Rotation:
        w, x, y, z = self.orientation
        # scipy 使用純量在後的順序
        return Rotation.from_quat([x, y, z, w])


@dataclass(frozen=True)
class MarkerLayout:
    hand_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    wrist_offset: np.ndarray = field(default_factory=lambda: np.array([-0.10, 0.0, 0.0]))

    def __post_init__(self):
        hand = np.asarray(self.hand_offset, dtype=np.float64).reshape(3)
        wrist = np.asarray(self.wrist_offset, dtype=np.float64).reshape(3)
        if np.allclose(hand, wrist):
            raise LayoutError("marker offsets must be distinct")
        object.__setattr__(self, 'hand_offset', hand)
        object.__setattr__(self, 'wrist_offset', wrist)

    @property
    def marker_distance(self) -> float:
        return float(np.linalg.norm(self.hand_offset - self.wrist_offset))


def _arm_joints(side: str) -> Tuple[str, str]:
    if side not in ('left', 'right'):
        raise LayoutError(f"side must be 'left' or 'right', got '{side}'")
    prefix = side[0]
    return f"{prefix}_wrist", f"{prefix}_hand"


def minimal_rotation(direction: np.ndarray) -> np.ndarray:
    """把 +x 轉到 direction 的最短旋轉，回傳 (w, x, y, z)"""
    u = direction / np.linalg.norm(direction)
    dot = float(REST_BONE_DIRECTION @ u)
    if dot < -1.0 + 1e-12:
        # 反向：繞 +z 轉 180 度
        return np.array([0.0, 0.0, 0.0, 1.0])
    axis = np.cross(REST_BONE_DIRECTION, u)
    q = np.array([1.0 + dot, axis[0], axis[1], axis[2]])
    return q / np.linalg.norm(q)


def hand_frame(human_pose: Pose, side: str = 'right') -> EEPose:
    if human_pose.layout.agent_kind != 'human':
        raise LayoutError("hand_frame needs a human pose")
    wrist_name, hand_name = _arm_joints(side)
    layout = human_pose.layout
    wrist = human_pose.coords[layout.joint_slice(wrist_name)]
    hand = human_pose.coords[layout.joint_slice(hand_name)]
    bone = hand - wrist
    length = float(np.linalg.norm(bone))
    if length < MIN_BONE_LENGTH:
        raise DegenerateBoneError(f"{side} wrist-hand bone is {length * 1000:.3f} mm long")
    return EEPose(hand.copy(), minimal_rotation(bone))


def ee_to_marker_pose(ee: EEPose, layout: MarkerLayout = MarkerLayout()) -> Pose:
    points = ee.rotation().apply(np.stack([layout.hand_offset, layout.wrist_offset])) + ee.position
    return Pose(robot_layout(), points.reshape(-1))


def retarget_trajectory(human: PoseTrajectory, side: str = 'right',
                        layout: MarkerLayout = MarkerLayout()) -> PoseTrajectory:
    frames = np.empty((human.T, robot_layout().total_dim))
    for i in range(human.T):
        try:
            ee = hand_frame(human.pose_at(i), side)
        except DegenerateBoneError as exc:
            raise DegenerateBoneError(str(exc), frame=i) from None
        frames[i] = ee_to_marker_pose(ee, layout).coords
    return PoseTrajectory(robot_layout(), frames, human.frame_hz)
