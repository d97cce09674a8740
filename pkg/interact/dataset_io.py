"""
InteRACT 意圖預測系統 - 資料集輸入輸出
Episode schema、載入驗證、重取樣、切窗、資料切分、合成雙人場景、程序化衝突取物資料，
以及對齊用的人類/機器人配對資料
"""
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DatasetError, PlacementError, SchemaError, SplitError
from .pose_core import (
    CANONICAL_HZ, FORECAST_HORIZON, ROOT_JOINT, JointLayout, Pose, PoseTrajectory,
    SceneWindow, human_layout, layout_for, layout_for_width, robot_layout,
)
from .retarget import MarkerLayout, retarget_trajectory

SOURCES = ('recorded', 'synthetic_pair', 'procedural')
MAX_PLACEMENT_ATTEMPTS = 100
SPLIT_NAMES = ('train', 'val', 'test')


@dataclass
class AgentTrack:
    name: str
    layout: JointLayout
    frames: np.ndarray

    @property
    def kind(self) -> str:
        return self.layout.agent_kind

    def trajectory(self, frame_hz: float) -> PoseTrajectory:
        return PoseTrajectory(self.layout, self.frames, frame_hz)


@dataclass
class Episode:
    id: str
    task: str
    frame_hz: float
    agents: List[AgentTrack]
    source: str = 'recorded'
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.agents[0].frames.shape[0] if self.agents else 0

    def agent(self, name: str) -> AgentTrack:
        for agent in self.agents:
            if agent.name == name:
                return agent
        raise DatasetError(f"episode {self.id} has no agent '{name}'")

    def first_of_kind(self, kind: str) -> Optional[AgentTrack]:
        return next((a for a in self.agents if a.kind == kind), None)

    def validate(self) -> 'Episode':
        if self.source not in SOURCES:
            raise SchemaError(f"unknown source '{self.source}'", field='source')
        if not (isinstance(self.frame_hz, (int, float)) and not isinstance(self.frame_hz, bool) and self.frame_hz > 0):
            raise SchemaError(f"frame_hz must be positive, got {self.frame_hz!r}", field='frame_hz')
        if not 1 <= len(self.agents) <= 2:
            raise SchemaError(f"expected one or two agents, got {len(self.agents)}", field='agents')
        if sum(a.kind == 'robot' for a in self.agents) > 1:
            raise SchemaError("at most one robot agent is allowed", field='agents')
        counts = [a.frames.shape[0] for a in self.agents]
        if len(set(counts)) != 1:
            raise SchemaError(
                f"agents have unequal frame counts: {' vs '.join(str(c) for c in counts)}",
                field='agents',
            )
        if counts[0] < 2:
            raise SchemaError(f"episode needs at least 2 frames, got {counts[0]}", field='frames')
        for i, agent in enumerate(self.agents):
            finite = np.isfinite(agent.frames)
            if not finite.all():
                frame = int(np.argwhere(~finite)[0, 0])
                raise SchemaError("non-finite coordinate", field=f'agents[{i}].frames', frame=frame)
        return self


@dataclass
class TrainingWindow:
    scene: SceneWindow
    episode_id: str
    start_frame: int
    task: str = ''


@dataclass
class PairedPoseDataset:
    """D_HR：同時取樣的 (機器人 6 維姿態, 操作者 27 維姿態)"""

    robot: np.ndarray
    human: np.ndarray
    source_episode_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.robot = np.asarray(self.robot, dtype=np.float64).reshape(-1, robot_layout().total_dim)
        self.human = np.asarray(self.human, dtype=np.float64).reshape(-1, human_layout().total_dim)
        if self.robot.shape[0] != self.human.shape[0]:
            raise DatasetError(f"paired set has {self.robot.shape[0]} robot and {self.human.shape[0]} human poses")

    def __len__(self) -> int:
        return self.robot.shape[0]

    @property
    def pairs(self) -> List[Tuple[Pose, Pose]]:
        return [(Pose(robot_layout(), r), Pose(human_layout(), h)) for r, h in zip(self.robot, self.human)]

    @classmethod
    def concat(cls, sets: Sequence['PairedPoseDataset']) -> 'PairedPoseDataset':
        if not sets:
            return cls(np.zeros((0, 6)), np.zeros((0, 27)))
        return cls(
            np.concatenate([s.robot for s in sets]),
            np.concatenate([s.human for s in sets]),
            [i for s in sets for i in s.source_episode_ids],
        )


@dataclass(frozen=True)
class SplitSpec:
    ratios: Tuple[float, float, float] = (8, 1, 1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise SplitError(f"split ratios must be three positive numbers, got {self.ratios}")


@dataclass(frozen=True)
class SynthConfig:
    min_separation: float = 0.3
    workspace_radius: float = 1.5
    yaw_range: Tuple[float, float] = (-math.pi, math.pi)
    seed: int = 0
    objects: Tuple[Tuple[float, float, float], ...] = ((-0.25, 0.0, 0.95), (0.25, 0.0, 0.95))
    n_frames: int = 90
    frame_hz: float = CANONICAL_HZ

    def __post_init__(self):
        if self.min_separation <= 0:
            raise DatasetError(f"min_separation must be positive, got {self.min_separation}")
        if self.n_frames < 60:
            raise DatasetError(f"procedural episodes need at least 60 frames, got {self.n_frames}")


# ---------------------------------------------------------------------------
# 載入 / 儲存
# ---------------------------------------------------------------------------

def _require(doc: Dict[str, Any], key: str, where: str = ''):
    if key not in doc:
        raise SchemaError("missing required key", field=f"{where}{key}")
    return doc[key]


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _metadata(doc: Dict[str, Any]) -> Dict[str, Any]:
    meta = doc.get('meta', {})
    if not isinstance(meta, dict):
        raise SchemaError("meta must be a JSON object", field='meta')
    return dict(meta)


def episode_from_dict(doc: Dict[str, Any]) -> Episode:
    if not isinstance(doc, dict):
        raise SchemaError("episode document must be a JSON object")
    agents = []
    raw_agents = _require(doc, 'agents')
    if not isinstance(raw_agents, list):
        raise SchemaError("agents must be a list", field='agents')
    for i, raw in enumerate(raw_agents):
        where = f'agents[{i}].'
        if not isinstance(raw, dict):
            raise SchemaError("agent entry must be a JSON object", field=f'agents[{i}]')
        kind = _require(raw, 'kind', where)
        names = _require(raw, 'joint_names', where)
        try:
            layout = layout_for(kind, names)
        except Exception as exc:
            raise SchemaError(str(exc), field=f'{where}joint_names') from None
        rows = _require(raw, 'frames', where)
        if not isinstance(rows, list):
            raise SchemaError("frames must be a list of coordinate rows", field=f'{where}frames')
        for t, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != layout.total_dim:
                raise SchemaError(
                    f"expected {layout.total_dim} coordinates", field=f'{where}frames', frame=t
                )
            if not all(_is_number(x) for x in row):
                raise SchemaError("coordinates must be numbers", field=f'{where}frames', frame=t)
        frames = np.asarray(rows, dtype=np.float64).reshape(len(rows), layout.total_dim)
        agents.append(AgentTrack(_require(raw, 'name', where), layout, frames))
    episode = Episode(
        id=str(_require(doc, 'id')),
        task=str(_require(doc, 'task')),
        frame_hz=_require(doc, 'frame_hz'),
        agents=agents,
        source=_require(doc, 'source'),
        metadata=_metadata(doc),
    )
    return episode.validate()


def episode_to_dict(ep: Episode) -> Dict[str, Any]:
    doc = {
        'id': ep.id,
        'task': ep.task,
        'frame_hz': float(ep.frame_hz),
        'source': ep.source,
        'agents': [
            {
                'name': a.name,
                'kind': a.kind,
                'joint_names': list(a.layout.joint_names),
                'frames': a.frames.tolist(),
            }
            for a in ep.agents
        ],
    }
    if ep.metadata:
        doc['meta'] = ep.metadata
    return doc


def load_episode(path: str) -> Episode:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return episode_from_dict(doc)


def save_episode(ep: Episode, path: str) -> str:
    """標準化寫出：固定鍵順序、緊湊分隔符號，load→save 逐位元組一致"""
    text = json.dumps(episode_to_dict(ep), separators=(',', ':'), allow_nan=False)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path


def _trajectory_field(doc: Dict[str, Any], key: str, frame_hz: float) -> PoseTrajectory:
    rows = _require(doc, key)
    if not isinstance(rows, list) or not rows or not isinstance(rows[0], list):
        raise SchemaError("expected a list of frames", field=key)
    width = len(rows[0])
    for t, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != width:
            raise SchemaError(f"expected {width} coordinates", field=key, frame=t)
    try:
        return PoseTrajectory(layout_for_width(width), np.asarray(rows, dtype=np.float64), frame_hz)
    except Exception as exc:
        raise SchemaError(str(exc), field=key) from None


def scene_from_dict(doc: Dict[str, Any]) -> SceneWindow:
    """predict 使用的單一視窗 JSON：human_history、partner_history、partner_future_action"""
    if not isinstance(doc, dict):
        raise SchemaError("window document must be a JSON object")
    frame_hz = float(doc.get('frame_hz', CANONICAL_HZ))
    human = _trajectory_field(doc, 'human_history', frame_hz)
    partner = _trajectory_field(doc, 'partner_history', frame_hz)
    action = _require(doc, 'partner_future_action')
    if not isinstance(action, list) or len(action) != partner.layout.total_dim:
        raise SchemaError(f"expected {partner.layout.total_dim} coordinates", field='partner_future_action')
    target = None
    if doc.get('target_future') is not None:
        target = _trajectory_field(doc, 'target_future', frame_hz)
    try:
        return SceneWindow(human, partner, Pose(partner.layout, action), target)
    except Exception as exc:
        raise SchemaError(str(exc)) from None


def scene_to_dict(scene: SceneWindow) -> Dict[str, Any]:
    doc = {
        'frame_hz': float(scene.human_history.frame_hz),
        'human_history': scene.human_history.frames.tolist(),
        'partner_history': scene.partner_history.frames.tolist(),
        'partner_future_action': scene.partner_future_action.coords.tolist(),
    }
    if scene.target_future is not None:
        doc['target_future'] = scene.target_future.frames.tolist()
    return doc


def write_dataset(directory: str, splits: Dict[str, List[Episode]]) -> str:
    os.makedirs(directory, exist_ok=True)
    entries = []
    for split in SPLIT_NAMES:
        for ep in splits.get(split, []):
            filename = f"{ep.id}.json"
            save_episode(ep, os.path.join(directory, filename))
            entries.append({'id': ep.id, 'file': filename, 'split': split})
    manifest_path = os.path.join(directory, 'manifest.json')
    with open(manifest_path, 'w', encoding='utf-8') as f:
        json.dump({'episodes': entries}, f, indent=2)
    return manifest_path


def read_dataset(directory: str) -> Dict[str, List[Episode]]:
    manifest_path = os.path.join(directory, 'manifest.json')
    if not os.path.exists(manifest_path):
        raise DatasetError(f"dataset manifest not found: {manifest_path}")
    with open(manifest_path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)
    splits: Dict[str, List[Episode]] = {name: [] for name in SPLIT_NAMES}
    for entry in manifest.get('episodes', []):
        if entry['split'] not in splits:
            raise SchemaError(f"unknown split '{entry['split']}'", field='split')
        splits[entry['split']].append(load_episode(os.path.join(directory, entry['file'])))
    return splits


# ---------------------------------------------------------------------------
# 重取樣與切窗
# ---------------------------------------------------------------------------

def resample(ep: Episode, target_hz: float) -> Episode:
    """逐通道線性內插到 target_hz 的均勻網格；首尾幀精確保留"""
    if target_hz <= 0:
        raise DatasetError(f"target_hz must be positive, got {target_hz}")
    n = ep.num_frames
    if n < 2:
        raise DatasetError(f"resample needs at least 2 frames, got {n}")
    duration = (n - 1) / ep.frame_hz
    m = int(round(duration * target_hz)) + 1
    src = np.linspace(0.0, duration, n)
    dst = np.linspace(0.0, duration, m)
    agents = []
    for agent in ep.agents:
        out = np.empty((m, agent.frames.shape[1]))
        for c in range(agent.frames.shape[1]):
            out[:, c] = np.interp(dst, src, agent.frames[:, c])
        out[0] = agent.frames[0]
        out[-1] = agent.frames[-1]
        agents.append(AgentTrack(agent.name, agent.layout, out))
    return Episode(ep.id, ep.task, float(target_hz), agents, ep.source, dict(ep.metadata))


def make_windows(ep: Episode, stride: int = 5, horizon: int = FORECAST_HORIZON,
                 both_directions: bool = False) -> List[TrainingWindow]:
    if stride < 1:
        raise DatasetError(f"stride must be >= 1, got {stride}")
    if abs(ep.frame_hz - CANONICAL_HZ) > 1e-9:
        raise DatasetError(f"episode {ep.id} is at {ep.frame_hz} Hz, resample to {CANONICAL_HZ} Hz first")
    if len(ep.agents) != 2:
        raise DatasetError(
            f"episode {ep.id} has a single agent; pair it with compose_synthetic_pair first"
        )
    humans = [a for a in ep.agents if a.kind == 'human']
    if not humans:
        raise DatasetError(f"episode {ep.id} has no human agent")
    roles = [(humans[0], next(a for a in ep.agents if a is not humans[0]))]
    if both_directions and len(humans) == 2:
        roles.append((humans[1], humans[0]))

    length = 2 * horizon
    windows = []
    for human, partner in roles:
        for start in range(0, ep.num_frames - length + 1, stride):
            hist = slice(start, start + horizon)
            fut = slice(start + horizon, start + length)
            scene = SceneWindow(
                human_history=PoseTrajectory(human.layout, human.frames[hist], ep.frame_hz),
                partner_history=PoseTrajectory(partner.layout, partner.frames[hist], ep.frame_hz),
                partner_future_action=Pose(partner.layout, partner.frames[start + length - 1]),
                target_future=PoseTrajectory(human.layout, human.frames[fut], ep.frame_hz),
            )
            windows.append(TrainingWindow(scene, ep.id, start, ep.task))
    return windows


@dataclass
class WindowBatch:
    """以 upper_back 最後一幀為原點平移後的批次陣列"""

    human_history: np.ndarray   # (B, T, d)
    partner_history: np.ndarray  # (B, T, p)
    partner_action: np.ndarray  # (B, p)
    last_human: np.ndarray      # (B, d)
    offsets: np.ndarray         # (B, 3)
    partner_kind: str
    target: Optional[np.ndarray] = None  # (B, T, d)

    def __len__(self) -> int:
        return self.human_history.shape[0]

    def subset(self, index) -> 'WindowBatch':
        return WindowBatch(
            self.human_history[index], self.partner_history[index], self.partner_action[index],
            self.last_human[index], self.offsets[index], self.partner_kind,
            None if self.target is None else self.target[index],
        )


def _shift_points(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """x: (B, ..., D)，v: (B, 3)；對每個 3 維點加上 v"""
    shape = x.shape
    expand = (shape[0],) + (1,) * (x.ndim - 1) + (3,)
    return (x.reshape(shape[:-1] + (-1, 3)) + v.reshape(expand)).reshape(shape)


def stack_windows(windows: Sequence[TrainingWindow]) -> WindowBatch:
    return stack_scenes([w.scene for w in windows])


def stack_scenes(scenes: Sequence[SceneWindow], center: bool = True) -> WindowBatch:
    """center=False 時視窗被視為已平移，offsets 為 0"""
    if not scenes:
        raise DatasetError("cannot stack an empty window list")
    kinds = {s.partner_kind for s in scenes}
    if len(kinds) != 1:
        raise DatasetError(f"batch mixes partner kinds {sorted(kinds)}")
    root = human_layout().joint_slice(ROOT_JOINT)
    human = np.stack([s.human_history.frames for s in scenes])
    partner = np.stack([s.partner_history.frames for s in scenes])
    action = np.stack([s.partner_future_action.coords for s in scenes])
    offsets = human[:, -1, root].copy() if center else np.zeros((len(scenes), 3))
    neg = -offsets
    targets = None
    if all(s.target_future is not None for s in scenes):
        targets = _shift_points(np.stack([s.target_future.frames for s in scenes]), neg)
    human_c = _shift_points(human, neg)
    return WindowBatch(
        human_history=human_c,
        partner_history=_shift_points(partner, neg),
        partner_action=_shift_points(action, neg),
        last_human=human_c[:, -1].copy(),
        offsets=offsets,
        partner_kind=kinds.pop(),
        target=targets,
    )


# ---------------------------------------------------------------------------
# 資料切分
# ---------------------------------------------------------------------------

def split_episodes(eps: Sequence[Episode], spec: SplitSpec = SplitSpec()) -> Dict[str, List[Episode]]:
    """以 episode 為單位做洗牌後連續切分，餘數歸入 train"""
    n = len(eps)
    total = float(sum(spec.ratios))
    n_val = int(math.floor(n * spec.ratios[1] / total))
    n_test = int(math.floor(n * spec.ratios[2] / total))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise SplitError(f"{n} episodes cannot fill every split (train {n_train}, val {n_val}, test {n_test})")
    order = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [eps[i] for i in order]
    return {
        'train': shuffled[:n_train],
        'val': shuffled[n_train:n_train + n_val],
        'test': shuffled[n_train + n_val:],
    }


# ---------------------------------------------------------------------------
# 合成雙人場景
# ---------------------------------------------------------------------------

def extract_agent(ep: Episode, name: str) -> Episode:
    agent = ep.agent(name)
    return Episode(f"{ep.id}.{name}", ep.task, ep.frame_hz,
                   [AgentTrack('human', agent.layout, agent.frames.copy())], ep.source)


def min_interagent_distance(a: np.ndarray, b: np.ndarray) -> float:
    """同一幀兩個代理人所有關節對之間的最小距離；a, b: (N, J, 3)"""
    diff = a[:, :, None, :] - b[:, None, :, :]
    return float(np.linalg.norm(diff, axis=-1).min())


def compose_synthetic_pair(clip_a: Episode, clip_b: Episode, cfg: SynthConfig) -> Episode:
    for clip in (clip_a, clip_b):
        if len(clip.agents) != 1 or clip.agents[0].kind != 'human':
            raise DatasetError(f"clip {clip.id} must contain exactly one human agent")
        if abs(clip.frame_hz - CANONICAL_HZ) > 1e-9:
            raise DatasetError(f"clip {clip.id} must be at {CANONICAL_HZ} Hz")
    n = min(clip_a.num_frames, clip_b.num_frames)
    layout = human_layout()
    root = layout.joint_index(ROOT_JOINT)
    pts_a = clip_a.agents[0].frames[:n].reshape(n, -1, 3)
    pts_b = clip_b.agents[0].frames[:n].reshape(n, -1, 3)
    pivot = pts_b[0, root]
    anchor = pts_a[0, root]
    centered_b = (pts_b - pivot).reshape(-1, 3)

    rng = np.random.default_rng(cfg.seed)
    for attempt in range(MAX_PLACEMENT_ATTEMPTS):
        yaw = rng.uniform(cfg.yaw_range[0], cfg.yaw_range[1])
        radius = cfg.workspace_radius * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        rotated = Rotation.from_euler('z', yaw).apply(centered_b).reshape(n, -1, 3)
        target = np.array([anchor[0] + radius * math.cos(theta),
                           anchor[1] + radius * math.sin(theta),
                           pivot[2]])
        placed = rotated + target
        if min_interagent_distance(pts_a, placed) >= cfg.min_separation:
            return Episode(
                id=f"{clip_a.id}+{clip_b.id}",
                task='synthetic_pair',
                frame_hz=CANONICAL_HZ,
                agents=[
                    AgentTrack('human_a', layout, pts_a.reshape(n, -1).copy()),
                    AgentTrack('human_b', layout, placed.reshape(n, -1)),
                ],
                source='synthetic_pair',
                metadata={'yaw': float(yaw), 'translation': target.tolist(), 'attempts': attempt + 1},
            )
    raise PlacementError(
        f"no placement of {clip_b.id} next to {clip_a.id} reached min_separation "
        f"{cfg.min_separation} m after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )


# ---------------------------------------------------------------------------
# 程序化雙人取物資料
# ---------------------------------------------------------------------------

ROOT_HEIGHT = 1.30
SHOULDER_HALF_WIDTH = 0.18
SHOULDER_RISE = 0.12
SEGMENT_LENGTH = 0.28
HAND_LENGTH = 0.08
STANDOFF = 0.65
AMBIGUITY_THRESHOLD = 0.04
LEAN = 0.12
TASK_SALT = {'conflict_reach': 11, 'handover': 23, 'teleop': 37}


def min_jerk(tau: np.ndarray) -> np.ndarray:
    """最小急動度多項式 10τ³ − 15τ⁴ + 6τ⁵"""
    tau = np.clip(tau, 0.0, 1.0)
    return 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5


def min_jerk_path(start: np.ndarray, end: np.ndarray, n_frames: int, onset: int, duration: int) -> np.ndarray:
    t = np.arange(n_frames, dtype=np.float64)
    s = min_jerk((t - onset) / float(duration))
    return start + (end - start) * s[:, None]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _arm_chain(shoulder: np.ndarray, hand: np.ndarray, fallback: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """固定運動鏈：由肩與手部目標推出手腕與手肘 (N, 3)"""
    u = _unit(hand - shoulder)
    wrist = hand - HAND_LENGTH * u
    span = wrist - shoulder
    half = np.linalg.norm(span, axis=-1, keepdims=True) / 2.0
    droop = np.sqrt(np.maximum(SEGMENT_LENGTH ** 2 - half ** 2, 0.0))
    axis = _unit(span)
    down = np.array([0.0, 0.0, -1.0])
    perp = down - (axis @ down)[:, None] * axis
    norm = np.linalg.norm(perp, axis=-1, keepdims=True)
    perp = np.where(norm > 1e-6, perp / np.maximum(norm, 1e-12), fallback)
    elbow = shoulder + span / 2.0 + droop * perp
    return wrist, elbow


class _Body:
    """一個站在桌邊、面向桌子的上半身"""

    def __init__(self, root: np.ndarray, facing: np.ndarray, rng: np.random.Generator, n_frames: int, hz: float):
        self.facing = facing
        self.right = np.array([facing[1], -facing[0], 0.0])
        self.n = n_frames
        t = np.arange(n_frames) / hz
        self.root0 = root + np.array([rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), 0.0])
        amp = rng.uniform(0.002, 0.008, size=3)
        freq = rng.uniform(0.15, 0.45, size=3)
        phase = rng.uniform(0.0, 2 * math.pi, size=3)
        self.sway = amp * np.sin(2 * math.pi * freq * t[:, None] + phase)
        self.sway[:, 2] *= 0.3
        hand_amp = rng.uniform(0.002, 0.006)
        hand_phase = rng.uniform(0.0, 2 * math.pi)
        self.hand_idle = hand_amp * np.sin(2 * math.pi * 0.3 * t + hand_phase)[:, None] * np.array([0.0, 0.0, 1.0])

    def shoulder_rest(self, side: float) -> np.ndarray:
        return self.root0 + side * SHOULDER_HALF_WIDTH * self.right + np.array([0.0, 0.0, SHOULDER_RISE])

    def hand_rest(self, side: float) -> np.ndarray:
        return self.root0 + side * 0.15 * self.right + 0.25 * self.facing + np.array([0.0, 0.0, -0.28])

    def frames(self, right_hand: np.ndarray, lean_progress: np.ndarray, lean_target: np.ndarray) -> np.ndarray:
        horizontal = lean_target - self.root0
        horizontal[2] = 0.0
        lean_dir = horizontal / max(np.linalg.norm(horizontal), 1e-9)
        root = self.root0 + self.sway + LEAN * lean_progress[:, None] * lean_dir
        offset = root - self.root0
        joints = {'upper_back': root}
        for side, prefix, hand in ((-1.0, 'l', None), (1.0, 'r', right_hand)):
            shoulder = self.shoulder_rest(side) + offset
            if hand is None:
                hand = self.hand_rest(side) + offset + self.hand_idle
            wrist, elbow = _arm_chain(shoulder, hand, -self.facing)
            joints.update({f'{prefix}_shoulder': shoulder, f'{prefix}_elbow': elbow,
                           f'{prefix}_wrist': wrist, f'{prefix}_hand': hand})
        return np.concatenate([joints[name] for name in human_layout().joint_names], axis=1)


def _unambiguous_frame(hand: np.ndarray, rest: np.ndarray, objects: np.ndarray, commit: int) -> int:
    axis = _unit(objects[1] - objects[0])
    lateral = np.abs((hand - rest) @ axis)
    later = np.nonzero(lateral[commit:] >= AMBIGUITY_THRESHOLD)[0]
    return commit + int(later[0]) if later.size else hand.shape[0] - 1


def _two_agent_reach(task: str, cfg: SynthConfig, ep_seed: np.random.SeedSequence, choice: int) -> Dict[str, Any]:
    human_seed, partner_seed = ep_seed.spawn(2)
    human_rng = np.random.default_rng(human_seed)
    partner_rng = np.random.default_rng(partner_seed)
    n, hz = cfg.n_frames, cfg.frame_hz
    objects = np.asarray(cfg.objects, dtype=np.float64)

    # 人類的隨機量全部先抽出，與夥伴的選擇無關
    human = _Body(np.array([0.0, -STANDOFF, ROOT_HEIGHT]), np.array([0.0, 1.0, 0.0]), human_rng, n, hz)
    reaction = int(human_rng.integers(3, 7))
    human_duration = int(human_rng.integers(15, 21))

    partner = _Body(np.array([0.0, STANDOFF, ROOT_HEIGHT]), np.array([0.0, -1.0, 0.0]), partner_rng, n, hz)
    commit = int(partner_rng.integers(15, n - 44))
    partner_duration = int(partner_rng.integers(15, 21))

    partner_goal = objects[choice]
    partner_rest = partner.hand_rest(1.0)
    partner_hand = min_jerk_path(partner_rest, partner_goal, n, commit, partner_duration) + partner.hand_idle
    partner_progress = min_jerk((np.arange(n) - commit) / float(partner_duration))

    onset = min(_unambiguous_frame(partner_hand, partner_rest, objects, commit) + reaction, n - 1)
    if task == 'handover':
        toward_human = human.root0 - partner_goal
        toward_human[2] = 0.0
        human_goal = partner_goal + 0.06 * toward_human / np.linalg.norm(toward_human)
        human_target = choice
    else:
        human_target = 1 - choice
        human_goal = objects[human_target]
    human_rest = human.hand_rest(1.0)
    human_hand = min_jerk_path(human_rest, human_goal, n, onset, human_duration) + human.hand_idle
    human_progress = min_jerk((np.arange(n) - onset) / float(human_duration))

    return {
        'human': human.frames(human_hand, human_progress, human_goal),
        'partner': partner.frames(partner_hand, partner_progress, partner_goal),
        'meta': {
            'partner_target': int(choice),
            'human_target': int(human_target),
            'partner_commit_frame': commit,
            'human_onset_frame': int(onset),
        },
    }


def _balanced_choices(rng: np.random.Generator, n_episodes: int) -> List[int]:
    return [int(c) for c in rng.permutation(np.arange(n_episodes) % 2)]


def _generate(task: str, cfg: SynthConfig, n_episodes: int, partner_kind: str,
              partner_choices: Optional[Sequence[int]], salt_task: str) -> List[Tuple[Dict[str, Any], str]]:
    if len(cfg.objects) != 2:
        raise DatasetError(f"{task} needs exactly 2 objects, got {len(cfg.objects)}")
    if partner_kind not in ('human', 'robot'):
        raise DatasetError(f"partner_kind must be 'human' or 'robot', got '{partner_kind}'")
    root_seed = np.random.SeedSequence([cfg.seed, TASK_SALT[salt_task]])
    choice_seed, *episode_seeds = root_seed.spawn(n_episodes + 1)
    if partner_choices is None:
        partner_choices = _balanced_choices(np.random.default_rng(choice_seed), n_episodes)
    elif len(partner_choices) != n_episodes:
        raise DatasetError(f"got {len(partner_choices)} partner choices for {n_episodes} episodes")
    return [
        (_two_agent_reach(task, cfg, episode_seeds[i], int(partner_choices[i])),
         f"{salt_task}_{cfg.seed}_{i:04d}")
        for i in range(n_episodes)
    ]


def _partner_track(frames: np.ndarray, partner_kind: str, hz: float) -> AgentTrack:
    if partner_kind == 'human':
        return AgentTrack('partner', human_layout(), frames)
    robot = retarget_trajectory(PoseTrajectory(human_layout(), frames, hz), 'right', MarkerLayout())
    return AgentTrack('robot', robot_layout(), robot.frames)


def _task_episodes(task: str, cfg: SynthConfig, n_episodes: int, partner_kind: str,
                   partner_choices: Optional[Sequence[int]]) -> List[Episode]:
    episodes = []
    for gen, ep_id in _generate(task, cfg, n_episodes, partner_kind, partner_choices, task):
        episodes.append(Episode(
            id=f"{ep_id}_{partner_kind}",
            task=task,
            frame_hz=cfg.frame_hz,
            agents=[AgentTrack('human', human_layout(), gen['human']),
                    _partner_track(gen['partner'], partner_kind, cfg.frame_hz)],
            source='procedural',
            metadata=gen['meta'],
        ))
    return episodes


def gen_conflict_reach(cfg: SynthConfig, n_episodes: int, partner_kind: str = 'human',
                       partner_choices: Optional[Sequence[int]] = None) -> List[Episode]:
    """夥伴選定其中一個物件伸手去拿，人類在夥伴選擇明確後去拿另一個"""
    return _task_episodes('conflict_reach', cfg, n_episodes, partner_kind, partner_choices)


def gen_handover(cfg: SynthConfig, n_episodes: int, partner_kind: str = 'human',
                 partner_choices: Optional[Sequence[int]] = None) -> List[Episode]:
    """夥伴把手伸到交接點，人類的手在起始明確後迎上去"""
    return _task_episodes('handover', cfg, n_episodes, partner_kind, partner_choices)


def gen_teleop_sessions(cfg: SynthConfig, n_episodes: int) -> List[Episode]:
    """遙操作錄製：操作者的右臂經 retarget 驅動機器人"""
    episodes = []
    for gen, ep_id in _generate('conflict_reach', cfg, n_episodes, 'robot', None, 'teleop'):
        episodes.append(Episode(
            id=ep_id,
            task='teleop',
            frame_hz=cfg.frame_hz,
            agents=[AgentTrack('teleoperator', human_layout(), gen['partner']),
                    _partner_track(gen['partner'], 'robot', cfg.frame_hz)],
            source='procedural',
            metadata=gen['meta'],
        ))
    return episodes


def build_paired_set(teleop_ep: Episode, side: str = 'right',
                     layout: MarkerLayout = MarkerLayout()) -> PairedPoseDataset:
    human = teleop_ep.first_of_kind('human')
    if human is None:
        raise DatasetError(f"episode {teleop_ep.id} has no teleoperator (human) agent")
    if human.frames.shape[0] == 0:
        return PairedPoseDataset(np.zeros((0, 6)), np.zeros((0, 27)), [teleop_ep.id])
    robot = teleop_ep.first_of_kind('robot')
    if robot is not None:
        if robot.frames.shape[0] != human.frames.shape[0]:
            raise DatasetError(
                f"episode {teleop_ep.id}: robot has {robot.frames.shape[0]} frames, "
                f"teleoperator {human.frames.shape[0]}"
            )
        robot_frames = robot.frames
    else:
        robot_frames = retarget_trajectory(human.trajectory(teleop_ep.frame_hz), side, layout).frames
    return PairedPoseDataset(robot_frames.copy(), human.frames.copy(), [teleop_ep.id])


def save_paired_set(paired: PairedPoseDataset, path: str) -> str:
    doc = {
        'source_episode_ids': list(paired.source_episode_ids),
        'robot': paired.robot.tolist(),
        'human': paired.human.tolist(),
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, separators=(',', ':'))
    return path


def load_paired_set(path: str) -> PairedPoseDataset:
    """讀取 save_paired_set 的輸出；也接受 write_dataset 產生的遙操作資料集目錄"""
    if os.path.isdir(path):
        splits = read_dataset(path)
        return PairedPoseDataset.concat([build_paired_set(ep) for name in SPLIT_NAMES for ep in splits[name]])
    if not os.path.exists(path):
        raise DatasetError(f"paired set not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            doc = json.load(f)
        except ValueError as exc:
            raise SchemaError(f"{path} is not valid JSON: {exc}") from None
    robot = np.asarray(_require(doc, 'robot'), dtype=np.float64)
    human = np.asarray(_require(doc, 'human'), dtype=np.float64)
    if robot.size and robot.shape[-1] != robot_layout().total_dim:
        raise SchemaError(f"expected {robot_layout().total_dim} robot coordinates", field='robot')
    if human.size and human.shape[-1] != human_layout().total_dim:
        raise SchemaError(f"expected {human_layout().total_dim} human coordinates", field='human')
    return PairedPoseDataset(robot, human, list(doc.get('source_episode_ids', [])))
