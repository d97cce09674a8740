"""
InteRACT 意圖預測系統 - 訓練
預測損失 (時間平均平方誤差)、餘弦對齊損失、加權總損失、Adam 與多段式學習率、
預訓練/微調流程，以及版本化的二進位 checkpoint
"""
import copy
import csv
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset_io import PairedPoseDataset, TrainingWindow, WindowBatch, stack_windows
from .diff_core import ParameterStore, Tensor, mean, no_grad, sqrt, tsum
from .errors import (
    AlignmentError, CheckpointCorruptError, CheckpointShapeError, CheckpointVersionError, ConfigError,
    OptimizerError, ShapeError, TrainingDivergedError,
)
from .model import InteractModel, ModelConfig
from .pose_core import ROOT_JOINT, Pose, PoseTrajectory, batch_fde, human_layout

STAGES = ('pretrain', 'finetune')
METRICS_HEADER = ['epoch', 'stage', 'train_loss', 'val_loss', 'val_fde', 'lr']

CHECKPOINT_MAGIC = b'IRCTCKPT'
CHECKPOINT_VERSION = 2
SECTIONS = {'param': 0, 'm': 1, 'v': 2}
BLOB_DTYPES = {0: np.dtype('<f4'), 1: np.dtype('<f8')}


@dataclass(frozen=True)
class LossWeights:
    lambda_p: float = 1.0
    lambda_h: float = 0.1
    lambda_f: float = 0.1

    def __post_init__(self):
        for name in ('lambda_p', 'lambda_h', 'lambda_f'):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative", f"train.{name}")


@dataclass
class OptimizerState:
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class LRSchedule:
    base_lr: float
    milestones: Tuple[int, ...] = (15, 25, 35, 40)
    gamma: float = 0.1

    def __post_init__(self):
        ms = tuple(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {list(ms)}", 'train.milestones')
        object.__setattr__(self, 'milestones', ms)


def lr_at(schedule: LRSchedule, epoch: int) -> float:
    passed = sum(1 for m in schedule.milestones if m <= epoch)
    return schedule.base_lr * schedule.gamma ** passed


# ---------------------------------------------------------------------------
# 損失
# ---------------------------------------------------------------------------

def prediction_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """(B, T, d) 預測對已平移目標：各視窗 Σ_t ||ŝ_t − s_t||² / T 的批次平均"""
    if pred.shape != np.shape(target):
        raise ShapeError(f"prediction shape {pred.shape} does not match target {np.shape(target)}")
    diff = pred - np.asarray(target, dtype=pred.dtype)
    per_frame = tsum(diff * diff, axis=-1)
    return mean(per_frame)


def loss_pred(pred: Union[PoseTrajectory, Tensor], truth: Union[PoseTrajectory, np.ndarray]):
    if isinstance(pred, Tensor):
        return prediction_loss(pred, truth)
    if pred.frames.shape != truth.frames.shape:
        raise ShapeError(f"prediction shape {pred.frames.shape} does not match truth {truth.frames.shape}")
    diff = pred.frames - truth.frames
    return float(np.mean(np.sum(diff * diff, axis=-1)))


PairsLike = Union[PairedPoseDataset, Sequence[Tuple[Pose, Pose]]]


def _pair_arrays(pairs: PairsLike) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, PairedPoseDataset):
        return pairs.robot, pairs.human
    pairs = list(pairs)
    if not pairs:
        return np.zeros((0, 6)), np.zeros((0, 27))
    return np.stack([r.coords for r, _ in pairs]), np.stack([h.coords for _, h in pairs])


def center_pairs(robot: np.ndarray, human: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """每一對都以該對人類的 upper_back 為原點"""
    root = human[:, human_layout().joint_slice(ROOT_JOINT)]
    K = human.shape[0]
    human_c = (human.reshape(K, -1, 3) - root[:, None, :]).reshape(human.shape)
    robot_c = (robot.reshape(K, -1, 3) - root[:, None, :]).reshape(robot.shape)
    return robot_c, human_c


def loss_align(model: InteractModel, batch_pairs: PairsLike, which: str = 'hist') -> Tensor:
    """批次平均的 1 − cos(f_R(s_R), f_H(s_H))，值域 [0, 2]"""
    if which not in ('hist', 'fut'):
        raise AlignmentError(f"alignment target must be 'hist' or 'fut', got '{which}'")
    robot, human = _pair_arrays(batch_pairs)
    if robot.shape[0] == 0:
        raise AlignmentError("alignment needs at least one pair")
    if robot.shape[1] != model.config.robot_dim or human.shape[1] != model.config.human_dim:
        raise AlignmentError(f"pair widths {robot.shape[1]}/{human.shape[1]} do not match the model")
    robot, human = center_pairs(robot, human)
    a = model.embedding(which, 'robot')(Tensor(robot.astype(model.dtype)))
    b = model.embedding(which, 'human')(Tensor(human.astype(model.dtype)))
    norm_a = np.linalg.norm(a.data, axis=-1)
    norm_b = np.linalg.norm(b.data, axis=-1)
    if np.any(norm_a == 0) or np.any(norm_b == 0):
        bad = int(np.flatnonzero((norm_a == 0) | (norm_b == 0))[0])
        raise AlignmentError(f"zero-norm {which} embedding for pair {bad}; cosine undefined")
    cos = tsum(a * b, axis=-1) / (sqrt(tsum(a * a, axis=-1)) * sqrt(tsum(b * b, axis=-1)))
    return mean(1.0 - cos)


def loss_total(pred_loss, hist_align, fut_align, w: LossWeights = LossWeights()):
    return w.lambda_p * pred_loss + w.lambda_h * hist_align + w.lambda_f * fut_align


# ---------------------------------------------------------------------------
# 最佳化
# ---------------------------------------------------------------------------

def _named_params(params) -> Iterable[Tuple[str, Tensor]]:
    if isinstance(params, ParameterStore):
        return params.items()
    if isinstance(params, dict):
        return params.items()
    return params


def adam_step(params, grads: Optional[Dict[str, np.ndarray]], state: OptimizerState, lr: float,
              frozen: Iterable[str] = ()) -> OptimizerState:
    """經典 Adam：權重衰減先加到梯度再更新動量；grads 為 None 時讀取 Tensor.grad"""
    frozen = set(frozen)
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    for name, param in _named_params(params):
        if name in frozen:
            continue
        grad = param.grad if grads is None else grads.get(name)
        if grad is None:
            continue
        w = param.data.astype(np.float64)
        g = np.asarray(grad, dtype=np.float64) + state.weight_decay * w
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        update = lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.all(np.isfinite(update)):
            raise OptimizerError(f"non-finite update for parameter '{name}'")
        state.m[name] = m.astype(param.dtype)
        state.v[name] = v.astype(param.dtype)
        param.data = (w - update).astype(param.dtype)
    return state


# ---------------------------------------------------------------------------
# 訓練流程
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    stage: str = 'pretrain'
    epochs: int = 50
    batch_size: int = 256
    base_lr: float = 3e-4
    weights: LossWeights = LossWeights()
    seed: int = 0
    align_enabled: bool = False
    paired_set: Optional[PairedPoseDataset] = None
    freeze_human_embeddings: bool = False
    align_subsample: int = 256
    milestones: Tuple[int, ...] = (15, 25, 35, 40)
    gamma: float = 0.1
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-5
    metrics_path: Optional[str] = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got '{self.stage}'", 'stage')
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive", f"{self.stage}.epochs")
        if self.align_enabled:
            if self.stage != 'finetune':
                raise ConfigError("alignment is only available in the finetune stage", 'train.align')
            if self.paired_set is None or len(self.paired_set) == 0:
                raise ConfigError("alignment needs a non-empty paired set", 'paths.teleop_dataset')

    @property
    def schedule(self) -> LRSchedule:
        return LRSchedule(self.base_lr, tuple(self.milestones), self.gamma)


@dataclass
class EpochMetrics:
    epoch: int
    stage: str
    train_loss: float
    val_loss: Optional[float]
    val_fde: Optional[float]
    lr: float

    def row(self) -> List[Any]:
        fmt = lambda x: '' if x is None else repr(float(x))
        return [self.epoch, self.stage, fmt(self.train_loss), fmt(self.val_loss), fmt(self.val_fde), repr(self.lr)]


@dataclass
class StageResult:
    model: InteractModel
    metrics: List[EpochMetrics]
    best_epoch: int
    optimizer: OptimizerState
    rng_state: Dict[str, Any]

    @property
    def best_val_fde(self) -> Optional[float]:
        return self.metrics[self.best_epoch].val_fde


def append_metrics(path: str, rows: Sequence[EpochMetrics]):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, 'a', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(row.row())


def validate(model: InteractModel, batch: WindowBatch, batch_size: int = 256) -> Tuple[float, float]:
    """回傳 (預測損失, 平均 FDE)；FDE 對平移不變，直接在平移後座標計算"""
    losses, fdes = [], []
    with no_grad():
        for start in range(0, len(batch), batch_size):
            chunk = batch.subset(slice(start, start + batch_size))
            pred = model.forward_batch(chunk)
            losses.append(prediction_loss(pred, chunk.target).item() * len(chunk))
            fdes.append(batch_fde(pred.data, chunk.target))
    return float(np.sum(losses) / len(batch)), float(np.concatenate(fdes).mean())


def run_stage(model: InteractModel, dataset_splits: Dict[str, List[TrainingWindow]], cfg: TrainConfig,
              log: Optional[Callable[[str], None]] = None) -> StageResult:
    train_windows = dataset_splits.get('train') or []
    if not train_windows:
        raise ConfigError("training split is empty", 'paths')
    train = stack_windows(train_windows)
    val_windows = dataset_splits.get('val') or []
    val = stack_windows(val_windows) if val_windows else None
    if train.target is None or (val is not None and val.target is None):
        raise ConfigError("training windows need targets", 'paths')

    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState(tuple(cfg.betas), cfg.eps, cfg.weight_decay)
    schedule = cfg.schedule
    frozen = model.embedding_names('human') if cfg.freeze_human_embeddings else []
    paired = cfg.paired_set if cfg.align_enabled else None

    metrics: List[EpochMetrics] = []
    best_epoch, best_fde, best_state = 0, math.inf, None
    best_optimizer, best_rng = state, None
    n = len(train)
    for epoch in range(cfg.epochs):
        lr = lr_at(schedule, epoch)
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = train.subset(order[start:start + cfg.batch_size])
            model.zero_grad()
            pred_loss = prediction_loss(model.forward_batch(batch), batch.target)
            if paired is not None:
                k = min(cfg.align_subsample, len(paired))
                picks = np.sort(rng.choice(len(paired), size=k, replace=False))
                subset = PairedPoseDataset(paired.robot[picks], paired.human[picks])
                loss = loss_total(pred_loss, loss_align(model, subset, 'hist'),
                                  loss_align(model, subset, 'fut'), cfg.weights)
            else:
                loss = cfg.weights.lambda_p * pred_loss
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError("training loss is not finite", epoch)
            loss.backward()
            adam_step(model.store, None, state, lr, frozen)
            total += value * len(batch)
            seen += len(batch)
        train_loss = total / seen

        val_loss = val_fde = None
        if val is not None:
            val_loss, val_fde = validate(model, val)
            if math.isnan(val_fde):
                raise TrainingDivergedError("validation FDE is NaN", epoch)
        row = EpochMetrics(epoch, cfg.stage, train_loss, val_loss, val_fde, lr)
        metrics.append(row)
        if log is not None:
            fde_text = '-' if val_fde is None else f"{val_fde:.4f}"
            log(f"[{cfg.stage}] epoch {epoch}: train_loss={train_loss:.5f} val_fde={fde_text} lr={lr:.2e}")

        # 無驗證集時保留最後一個 epoch
        score = val_fde if val_fde is not None else -epoch
        if score < best_fde:
            best_epoch, best_fde, best_state = epoch, score, model.state_dict()
            best_optimizer, best_rng = copy.deepcopy(state), rng.bit_generator.state

    if best_state is not None:
        model.load_state_dict(best_state)
    model.zero_grad()
    if cfg.metrics_path:
        append_metrics(cfg.metrics_path, metrics)
    # 權重、Adam 動量與亂數狀態都取自同一個最佳 epoch
    return StageResult(model, metrics, best_epoch, best_optimizer, best_rng or rng.bit_generator.state)


# ---------------------------------------------------------------------------
# Checkpoint
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    params: Dict[str, np.ndarray]
    optimizer: Optional[OptimizerState] = None
    epoch: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    config_hash: str = ''
    stage: str = ''

    def build_model(self) -> InteractModel:
        model = InteractModel(self.config)
        _load_params(model, self.params)
        return model


def _load_params(model: InteractModel, params: Dict[str, np.ndarray]):
    for name, tensor in model.store.items():
        if name not in params:
            raise CheckpointShapeError(f"checkpoint has no parameter '{name}'")
        if params[name].shape != tensor.shape:
            raise CheckpointShapeError(
                f"parameter '{name}' has shape {params[name].shape} in checkpoint, model expects {tensor.shape}"
            )
    extra = [name for name in params if name not in model.store]
    if extra:
        raise CheckpointShapeError(f"checkpoint parameter '{extra[0]}' does not exist in the model")
    model.load_state_dict(params)


def _entry(name: str, section: str, array: np.ndarray) -> bytes:
    encoded = name.encode('utf-8')
    array = np.asarray(array)
    code = 1 if array.dtype == np.float64 else 0
    head = struct.pack('<H', len(encoded)) + encoded + struct.pack('<BBB', SECTIONS[section], code, array.ndim)
    dims = struct.pack(f'<{array.ndim}I', *array.shape)
    return head + dims + array.astype(BLOB_DTYPES[code]).tobytes()


def save_checkpoint(model: InteractModel, state: Optional[StageResult], path: str,
                    optimizer: Optional[OptimizerState] = None, epoch: Optional[int] = None,
                    stage: str = '') -> str:
    """寫出版本化二進位 checkpoint；參數與動量依各自精度 (float32 或 float64) 以 little-endian 儲存"""
    optimizer = optimizer or (state.optimizer if state is not None else None)
    if epoch is None:
        epoch = state.best_epoch if state is not None else 0
    config_block = json.dumps(model.config.to_dict(), sort_keys=True).encode('utf-8')
    entries = [_entry(name, 'param', tensor.data) for name, tensor in model.store.items()]
    if optimizer is not None:
        for name in model.store:
            if name in optimizer.m:
                entries.append(_entry(name, 'm', optimizer.m[name]))
                entries.append(_entry(name, 'v', optimizer.v[name]))
    trailer_state = {
        'epoch': int(epoch),
        'stage': stage,
        'config_hash': model.config.config_hash(),
        'rng_state': state.rng_state if state is not None else None,
        'optimizer': None if optimizer is None else {
            'step': optimizer.step, 'betas': list(optimizer.betas),
            'eps': optimizer.eps, 'weight_decay': optimizer.weight_decay,
        },
    }
    state_block = json.dumps(trailer_state, sort_keys=True).encode('utf-8')
    body = b''.join([
        CHECKPOINT_MAGIC,
        struct.pack('<I', CHECKPOINT_VERSION),
        struct.pack('<I', len(config_block)), config_block,
        struct.pack('<I', len(entries)), *entries,
        struct.pack('<I', len(state_block)), state_block,
    ])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        f.write(body + hashlib.sha256(body).digest())
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError("checkpoint payload is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str, model: Optional[InteractModel] = None) -> Checkpoint:
    with open(path, 'rb') as f:
        data = f.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 4 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointCorruptError(f"{path} is not a checkpoint file")
    version = struct.unpack('<I', data[8:12])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    if len(data) < 12 + 32 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise CheckpointCorruptError(f"{path}: checksum mismatch, payload is corrupt or truncated")

    reader = _Reader(data[:-32])
    reader.take(12)
    try:
        (config_len,) = reader.unpack('<I')
        config = ModelConfig.from_dict(json.loads(reader.take(config_len).decode('utf-8')))
        (count,) = reader.unpack('<I')
        sections: Dict[int, Dict[str, np.ndarray]] = {0: {}, 1: {}, 2: {}}
        for _ in range(count):
            (name_len,) = reader.unpack('<H')
            name = reader.take(name_len).decode('utf-8')
            section, code, ndim = reader.unpack('<BBB')
            if section not in sections or code not in BLOB_DTYPES:
                raise CheckpointCorruptError(f"{path}: unknown entry tag for '{name}'")
            dtype = BLOB_DTYPES[code]
            shape = reader.unpack(f'<{ndim}I')
            size = int(np.prod(shape)) if ndim else 1
            blob = reader.take(dtype.itemsize * size)
            sections[section][name] = np.frombuffer(blob, dtype=dtype).reshape(shape).astype(dtype.newbyteorder('='))
        (state_len,) = reader.unpack('<I')
        trailer = json.loads(reader.take(state_len).decode('utf-8'))
    except (struct.error, UnicodeDecodeError, ValueError, KeyError) as exc:
        raise CheckpointCorruptError(f"{path}: {exc}") from None

    optimizer = None
    if trailer.get('optimizer') is not None:
        opt = trailer['optimizer']
        optimizer = OptimizerState(tuple(opt['betas']), opt['eps'], opt['weight_decay'], opt['step'],
                                   dict(sections[1]), dict(sections[2]))
    ckpt = Checkpoint(
        config=config,
        params=sections[0],
        optimizer=optimizer,
        epoch=trailer.get('epoch', 0),
        rng_state=trailer.get('rng_state'),
        config_hash=trailer.get('config_hash', ''),
        stage=trailer.get('stage', ''),
    )
    if model is not None:
        _load_params(model, ckpt.params)
    return ckpt
