"""
InteRACT 意圖預測系統 - 姿態核心
關節佈局、姿態/軌跡型別、時間軸 DCT/IDCT、場景平移與位移誤差指標
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import LayoutError, ShapeError

# 1 秒 = 15 幀
CANONICAL_HZ = 15.0
FORECAST_HORIZON = 15

HUMAN_JOINTS = (
    'upper_back',
    'l_shoulder', 'r_shoulder',
    'l_elbow', 'r_elbow',
    'l_wrist', 'r_wrist',
    'l_hand', 'r_hand',
)
ROBOT_JOINTS = ('ee_hand_point', 'ee_wrist_point')
ROOT_JOINT = 'upper_back'


@dataclass(frozen=True)
class JointLayout:
    """一個代理人的關節命名佈局 (human: d=27，robot: j=6)"""

    agent_kind: str
    joint_names: Tuple[str, ...]
    dims_per_joint: int = 3

    def __post_init__(self):
        expected = {'human': HUMAN_JOINTS, 'robot': ROBOT_JOINTS}.get(self.agent_kind)
        if expected is None:
            raise LayoutError(f"unknown agent kind '{self.agent_kind}'")
        if tuple(self.joint_names) != expected:
            raise LayoutError(
                f"unknown {self.agent_kind} layout {list(self.joint_names)}, expected {list(expected)}"
            )
        if self.dims_per_joint != 3:
            raise LayoutError(f"dims_per_joint must be 3, got {self.dims_per_joint}")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def total_dim(self) -> int:
        return self.dims_per_joint * self.num_joints

    def joint_index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise LayoutError(f"joint '{name}' not in {self.agent_kind} layout") from None

    def joint_slice(self, name: str) -> slice:
        i = self.joint_index(name)
        return slice(3 * i, 3 * i + 3)


@lru_cache(maxsize=None)
def human_layout() -> JointLayout:
    return JointLayout('human', HUMAN_JOINTS)


@lru_cache(maxsize=None)
def robot_layout() -> JointLayout:
    return JointLayout('robot', ROBOT_JOINTS)


def layout_for(kind: str, joint_names: Optional[Sequence[str]] = None) -> JointLayout:
    """依代理人種類取得佈局；給定關節名稱時必須完全一致"""
    if joint_names is None:
        if kind == 'human':
            return human_layout()
        if kind == 'robot':
            return robot_layout()
        raise LayoutError(f"unknown agent kind '{kind}'")
    return JointLayout(kind, tuple(joint_names))


def layout_for_width(width: int) -> JointLayout:
    if width == human_layout().total_dim:
        return human_layout()
    if width == robot_layout().total_dim:
        return robot_layout()
    raise LayoutError(f"no joint layout has total_dim {width}")


@dataclass(frozen=True)
class Pose:
    layout: JointLayout
    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64).reshape(-1)
        if coords.shape[0] != self.layout.total_dim:
            raise ShapeError(
                f"pose has {coords.shape[0]} coordinates, layout needs {self.layout.total_dim}"
            )
        if not np.all(np.isfinite(coords)):
            raise ShapeError("pose coordinates must be finite")
        object.__setattr__(self, 'coords', coords)

    def joints(self) -> np.ndarray:
        return self.coords.reshape(-1, 3)


@dataclass(frozen=True)
class PoseTrajectory:
    layout: JointLayout
    frames: np.ndarray
    frame_hz: float = CANONICAL_HZ

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames.reshape(1, -1)
        if frames.ndim != 2 or frames.shape[1] != self.layout.total_dim:
            raise ShapeError(
                f"trajectory frames shape {frames.shape} does not match total_dim {self.layout.total_dim}"
            )
        if frames.shape[0] < 1:
            raise ShapeError("trajectory needs at least one frame")
        if not np.all(np.isfinite(frames)):
            bad = int(np.argwhere(~np.isfinite(frames))[0, 0])
            raise ShapeError(f"non-finite coordinate at frame {bad}")
        object.__setattr__(self, 'frames', frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def joints(self) -> np.ndarray:
        """(T, J, 3) 檢視"""
        return self.frames.reshape(self.T, -1, 3)

    def pose_at(self, index: int) -> Pose:
        return Pose(self.layout, self.frames[index])


@dataclass(frozen=True)
class SceneWindow:
    """情境 φ：人類與夥伴的歷史、夥伴未來動作，以及 (訓練/評估時) 目標未來"""

    human_history: PoseTrajectory
    partner_history: PoseTrajectory
    partner_future_action: Pose
    target_future: Optional[PoseTrajectory] = None

    def __post_init__(self):
        if self.human_history.layout.agent_kind != 'human':
            raise LayoutError("human_history must use the human layout")
        if self.partner_future_action.layout != self.partner_history.layout:
            raise LayoutError("partner future action layout differs from partner history layout")
        T = self.human_history.T
        if self.partner_history.T != T:
            raise ShapeError(f"human history has {T} frames, partner history {self.partner_history.T}")
        trajectories = [self.human_history, self.partner_history]
        if self.target_future is not None:
            if self.target_future.T != T:
                raise ShapeError(f"target has {self.target_future.T} frames, history {T}")
            if self.target_future.layout != self.human_history.layout:
                raise LayoutError("target_future must use the human layout")
            trajectories.append(self.target_future)
        rates = {traj.frame_hz for traj in trajectories}
        if len(rates) != 1:
            raise ShapeError(f"trajectories disagree on frame_hz: {sorted(rates)}")

    @property
    def horizon(self) -> int:
        return self.human_history.T

    @property
    def partner_kind(self) -> str:
        return self.partner_history.layout.agent_kind


@dataclass(frozen=True)
class SceneOffset:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(translation)):
            raise ShapeError("scene offset must be finite")
        object.__setattr__(self, 'translation', translation)


# ---------------------------------------------------------------------------
# DCT / IDCT
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def dct_matrix(T: int) -> np.ndarray:
    """正交 DCT-II 矩陣 M[k, t] = α_k cos(π(2t+1)k / 2T)"""
    if T < 1:
        raise ShapeError(f"DCT length must be >= 1, got {T}")
    k = np.arange(T)[:, None]
    t = np.arange(T)[None, :]
    m = np.cos(np.pi * (2 * t + 1) * k / (2 * T))
    alpha = np.full((T, 1), np.sqrt(2.0 / T))
    alpha[0, 0] = np.sqrt(1.0 / T)
    m = alpha * m
    m.setflags(write=False)
    return m


def dct_apply(x: np.ndarray) -> np.ndarray:
    """沿倒數第二軸 (時間) 做 DCT；支援批次維度"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return dct_matrix(x.shape[0]) @ x
    return np.matmul(dct_matrix(x.shape[-2]), x)


def idct_apply(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim == 1:
        return dct_matrix(coeffs.shape[0]).T @ coeffs
    return np.matmul(dct_matrix(coeffs.shape[-2]).T, coeffs)


def dct_forward(traj: Union[PoseTrajectory, np.ndarray]) -> np.ndarray:
    frames = traj.frames if isinstance(traj, PoseTrajectory) else traj
    return dct_apply(frames)


def dct_inverse(coeffs: np.ndarray, layout: Optional[JointLayout] = None,
                frame_hz: float = CANONICAL_HZ) -> PoseTrajectory:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2:
        raise ShapeError(f"coefficient matrix must be 2-D, got shape {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise ShapeError("coefficient matrix must be finite")
    if layout is None:
        layout = layout_for_width(coeffs.shape[1])
    return PoseTrajectory(layout, idct_apply(coeffs), frame_hz)


# ---------------------------------------------------------------------------
# 場景平移
# ---------------------------------------------------------------------------

def _shift(frames: np.ndarray, v: np.ndarray) -> np.ndarray:
    shape = frames.shape
    return (frames.reshape(shape[:-1] + (-1, 3)) + v).reshape(shape)


def translate(traj: PoseTrajectory, v) -> PoseTrajectory:
    return PoseTrajectory(traj.layout, _shift(traj.frames, np.asarray(v, dtype=np.float64)), traj.frame_hz)


def translate_pose(pose: Pose, v) -> Pose:
    return Pose(pose.layout, _shift(pose.coords, np.asarray(v, dtype=np.float64)))


def translate_window(window: SceneWindow, v) -> SceneWindow:
    target = window.target_future
    return SceneWindow(
        human_history=translate(window.human_history, v),
        partner_history=translate(window.partner_history, v),
        partner_future_action=translate_pose(window.partner_future_action, v),
        target_future=translate(target, v) if target is not None else None,
    )


def scene_origin(window: SceneWindow) -> SceneOffset:
    """最後一幀人類 upper_back 的位置"""
    layout = window.human_history.layout
    return SceneOffset(window.human_history.frames[-1, layout.joint_slice(ROOT_JOINT)].copy())


def center_scene(window: SceneWindow) -> Tuple[SceneWindow, SceneOffset]:
    offset = scene_origin(window)
    return translate_window(window, -offset.translation), offset


def uncenter(traj: PoseTrajectory, offset: SceneOffset) -> PoseTrajectory:
    return translate(traj, offset.translation)


# ---------------------------------------------------------------------------
# 指標
# ---------------------------------------------------------------------------

def _check_comparable(pred: PoseTrajectory, truth: PoseTrajectory):
    if pred.layout != truth.layout:
        raise LayoutError(
            f"layout mismatch: {pred.layout.agent_kind} vs {truth.layout.agent_kind}"
        )
    if pred.T != truth.T:
        raise ShapeError(f"frame count mismatch: {pred.T} vs {truth.T}")


def fde(pred: PoseTrajectory, truth: PoseTrajectory) -> float:
    """最終幀各關節歐氏距離的平均 (公尺)"""
    _check_comparable(pred, truth)
    diff = pred.joints()[-1] - truth.joints()[-1]
    return float(np.linalg.norm(diff, axis=-1).mean())


def mpjpe(pred: PoseTrajectory, truth: PoseTrajectory) -> float:
    _check_comparable(pred, truth)
    return float(np.linalg.norm(pred.joints() - truth.joints(), axis=-1).mean())


def batch_fde(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """(B, T, D) 陣列版本，回傳每個視窗的 FDE"""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    B = pred.shape[0]
    diff = (pred[:, -1] - truth[:, -1]).reshape(B, -1, 3)
    return np.linalg.norm(diff, axis=-1).mean(axis=-1)
