"""
InteRACT 意圖預測系統 - 模型
DCT 歷史 → 代理人對應的嵌入層 → 局部/全域編碼器 → 以夥伴未來動作為查詢的解碼器
→ 時間展開 → 輸出頭 → IDCT；以及各基準變體 (Marginal / MarginalHist / InteRACT / InteRACT_Align)
"""
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from .dataset_io import WindowBatch, stack_scenes
from .diff_core import (
    DecoderLayer, EncoderLayer, Linear, ParameterStore, Tensor, concat, no_grad, relu, reshape,
    sinusoidal_positions,
)
from .errors import ConfigError, LayoutError
from .pose_core import (
    FORECAST_HORIZON, Pose, PoseTrajectory, SceneWindow, center_scene, dct_matrix, human_layout,
    uncenter,
)

QUERY_SOURCES = ('last_observed_human_pose', 'partner_future_action')
PRECISIONS = ('float32', 'float64')


@dataclass(frozen=True)
class VariantSpec:
    name: str
    uses_partner_history: bool
    query_source: str
    align_enabled: bool
    pretrained: bool = True

    def __post_init__(self):
        if self.query_source not in QUERY_SOURCES:
            raise ConfigError(f"unknown query source '{self.query_source}'", 'model.variant')

    @property
    def conditional(self) -> bool:
        return self.query_source == 'partner_future_action'


VARIANTS: Dict[str, VariantSpec] = {
    'Marginal': VariantSpec('Marginal', False, 'last_observed_human_pose', False),
    'MarginalHist': VariantSpec('MarginalHist', True, 'last_observed_human_pose', False),
    'InteRACT': VariantSpec('InteRACT', True, 'partner_future_action', False),
    'InteRACT_Align': VariantSpec('InteRACT_Align', True, 'partner_future_action', True),
    # 架構與 InteRACT 相同，只差在不做預訓練
    'OnlyFineTuned': VariantSpec('OnlyFineTuned', True, 'partner_future_action', False, pretrained=False),
}


def variant_spec(name: str) -> VariantSpec:
    for key, spec in VARIANTS.items():
        if key.lower() == str(name).lower():
            return spec
    raise ConfigError(f"unknown variant '{name}', expected one of {list(VARIANTS)}", 'model.variant')


@dataclass(frozen=True)
class ModelConfig:
    horizon: int = FORECAST_HORIZON
    human_dim: int = 27
    robot_dim: int = 6
    embed_dim: int = 32
    layers: int = 3
    heads: int = 4
    ffn_ratio: int = 4
    variant: str = 'InteRACT'
    seed: int = 0
    precision: str = 'float32'

    def __post_init__(self):
        object.__setattr__(self, 'variant', variant_spec(self.variant).name)
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got '{self.precision}'", 'model.precision')
        if self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} is not divisible by {self.heads} heads", 'model.heads'
            )
        for key in ('horizon', 'embed_dim', 'layers', 'heads', 'ffn_ratio'):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive", f"model.{key}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Dict) -> 'ModelConfig':
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def config_hash(self) -> str:
        # precision 不影響架構
        doc = {k: v for k, v in self.to_dict().items() if k != 'precision'}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode('utf-8')).hexdigest()[:16]


def parameter_count(cfg: ModelConfig) -> int:
    """參數量的封閉式：只取決於 (d, j, D, T, layers, ffn_ratio)，與 heads 無關"""
    d, j, D, T, L, f = cfg.human_dim, cfg.robot_dim, cfg.embed_dim, cfg.horizon, cfg.layers, cfg.ffn_ratio
    embeddings = 2 * (d + 1) * D + 2 * (j + 1) * D
    attention = 4 * D * D + 3 * D  # 鍵投影無偏置
    norm = 2 * D
    ffn = 2 * f * D * D + f * D + D
    encoder = attention + 2 * norm + ffn
    decoder = 2 * attention + 3 * norm + ffn
    horizon = D * T * D + T * D + D * D + D
    head = D * d + d
    return embeddings + 2 * L * encoder + L * decoder + horizon + head


@dataclass
class ContextEncoding:
    memory: Tensor  # (3T, D) 或 (2T, D)；批次時多一個前導維度

    @property
    def rows(self) -> int:
        return self.memory.shape[-2]


@dataclass
class ActionQuery:
    embedding: Tensor  # (1, D)
    raw: Pose


class InteractModel:
    def __init__(self, config: ModelConfig = ModelConfig()):
        self.config = config
        self.variant = variant_spec(config.variant)
        D, T = config.embed_dim, config.horizon
        rng = np.random.default_rng(config.seed)
        # 先以 float64 初始化再轉型，兩種精度的初值一致
        self.store = ParameterStore(np.float64)
        s = self.store
        self.embeddings = {
            ('hist', 'human'): Linear(s, 'embed.hist_human', config.human_dim, D, rng),
            ('hist', 'robot'): Linear(s, 'embed.hist_robot', config.robot_dim, D, rng),
            ('fut', 'human'): Linear(s, 'embed.fut_human', config.human_dim, D, rng),
            ('fut', 'robot'): Linear(s, 'embed.fut_robot', config.robot_dim, D, rng),
        }
        args = (D, config.heads, config.ffn_ratio, rng)
        self.local = [EncoderLayer(s, f"local.{i}", *args) for i in range(config.layers)]
        self.global_ = [EncoderLayer(s, f"global.{i}", *args) for i in range(config.layers)]
        self.decoder = [DecoderLayer(s, f"decoder.{i}", *args) for i in range(config.layers)]
        self.horizon_expand = Linear(s, 'horizon.expand', D, T * D, rng)
        self.horizon_step = Linear(s, 'horizon.step', D, D, rng)
        self.head = Linear(s, 'head', D, config.human_dim, rng)
        self._positions = sinusoidal_positions(2 * T, D)
        self.store.cast(config.precision)

    # -- 參數 --------------------------------------------------------------
    @property
    def dtype(self):
        return self.store.dtype

    def num_parameters(self) -> int:
        return self.store.num_parameters()

    def parameters(self):
        return self.store.items()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return self.store.state_dict()

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        self.store.load_state_dict(state)

    def zero_grad(self):
        self.store.zero_grad()

    def astype(self, precision: str) -> 'InteractModel':
        if precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got '{precision}'", 'model.precision')
        self.store.cast(precision)
        self.config = ModelConfig(**{**self.config.to_dict(), 'precision': precision})
        return self

    def with_variant(self, name: str) -> 'InteractModel':
        """切換前向使用的變體；參數共用"""
        self.variant = variant_spec(name)
        self.config = ModelConfig(**{**self.config.to_dict(), 'variant': self.variant.name})
        return self

    def embedding(self, when: str, kind: str) -> Linear:
        try:
            return self.embeddings[(when, kind)]
        except KeyError:
            raise LayoutError(f"no {when} embedding for agent kind '{kind}'") from None

    def embedding_names(self, kind: str) -> List[str]:
        prefixes = (f"embed.hist_{kind}.", f"embed.fut_{kind}.")
        return [name for name in self.store if name.startswith(prefixes)]

    # -- 前向 --------------------------------------------------------------
    def _check_batch(self, batch: WindowBatch):
        cfg = self.config
        if batch.human_history.ndim != 3 or batch.human_history.shape[1:] != (cfg.horizon, cfg.human_dim):
            raise LayoutError(
                f"human history shape {batch.human_history.shape[1:]} does not match "
                f"({cfg.horizon}, {cfg.human_dim})"
            )
        width = {'human': cfg.human_dim, 'robot': cfg.robot_dim}.get(batch.partner_kind)
        if width is None:
            raise LayoutError(f"unknown partner kind '{batch.partner_kind}'")
        if batch.partner_history.shape[1:] != (cfg.horizon, width) or batch.partner_action.shape[1:] != (width,):
            raise LayoutError(
                f"{batch.partner_kind} partner arrays {batch.partner_history.shape[1:]} / "
                f"{batch.partner_action.shape[1:]} do not match width {width}"
            )

    def _constant(self, x: np.ndarray) -> Tensor:
        return Tensor(np.asarray(x, dtype=self.dtype))

    def _stream(self, frames: np.ndarray, kind: str, start: int) -> Tensor:
        T = self.config.horizon
        coeffs = np.matmul(dct_matrix(T), frames)
        embedded = self.embedding('hist', kind)(self._constant(coeffs))
        return embedded + self._constant(self._positions[start:start + T])

    def encode_batch(self, batch: WindowBatch, variant: Optional[VariantSpec] = None) -> Tensor:
        variant = variant or self.variant
        self._check_batch(batch)
        T = self.config.horizon
        human = self._stream(batch.human_history, 'human', 0)
        local = human
        for layer in self.local:
            local = layer(local)
        if variant.uses_partner_history:
            partner = self._stream(batch.partner_history, batch.partner_kind, T)
            glob = concat([human, partner], axis=1)
        else:
            glob = human
        for layer in self.global_:
            glob = layer(glob)
        return concat([local, glob], axis=1)

    def query_batch(self, batch: WindowBatch, variant: Optional[VariantSpec] = None) -> Tensor:
        variant = variant or self.variant
        if variant.conditional:
            if batch.partner_action is None:
                raise LayoutError(f"variant {variant.name} needs the partner future action")
            raw, kind = batch.partner_action, batch.partner_kind
        else:
            raw, kind = batch.last_human, 'human'
        embedded = self.embedding('fut', kind)(self._constant(raw))
        return reshape(embedded, (raw.shape[0], 1, self.config.embed_dim))

    def decode(self, query: Tensor, memory: Tensor) -> Tensor:
        cfg = self.config
        x = query
        for layer in self.decoder:
            x = layer(x, memory)
        expanded = relu(self.horizon_expand(x))
        steps = self.horizon_step(reshape(expanded, (x.shape[0], cfg.horizon, cfg.embed_dim)))
        coeffs = self.head(steps)
        idct = self._constant(dct_matrix(cfg.horizon).T)
        return idct @ coeffs

    def forward_batch(self, batch: WindowBatch, variant: Optional[VariantSpec] = None) -> Tensor:
        """已平移批次 → (B, T, d) 已平移預測"""
        memory = self.encode_batch(batch, variant)
        return self.decode(self.query_batch(batch, variant), memory)

    def __call__(self, batch: WindowBatch) -> Tensor:
        return self.forward_batch(batch)


def forward_batch(model: InteractModel, batch: WindowBatch) -> Tensor:
    return model.forward_batch(batch)


def encode_context(model: InteractModel, centered: SceneWindow) -> ContextEncoding:
    with no_grad():
        memory = model.encode_batch(stack_scenes([centered], center=False))
    return ContextEncoding(memory[0])


def build_query(model: InteractModel, variant: VariantSpec, centered: SceneWindow) -> ActionQuery:
    if variant.conditional:
        if centered.partner_future_action is None:
            raise LayoutError(f"variant {variant.name} needs the partner future action")
        raw = centered.partner_future_action
    else:
        raw = centered.human_history.pose_at(centered.horizon - 1)
    with no_grad():
        embedding = model.embedding('fut', raw.layout.agent_kind)(Tensor(raw.coords.astype(model.dtype)[None, :]))
    return ActionQuery(embedding, raw)


def predict_intent(model: InteractModel, window: SceneWindow) -> PoseTrajectory:
    centered, offset = center_scene(window)
    with no_grad():
        pred = model.forward_batch(stack_scenes([centered], center=False))
    traj = PoseTrajectory(human_layout(), pred.data[0].astype(np.float64), window.human_history.frame_hz)
    return uncenter(traj, offset)


def predict_batch(model: InteractModel, batch: WindowBatch, batch_size: int = 256) -> np.ndarray:
    """不記錄計算圖的批次預測，回傳原座標 (未平移) 的 (B, T, d) float64 陣列"""
    outputs = []
    with no_grad():
        for start in range(0, len(batch), batch_size):
            chunk = batch.subset(slice(start, start + batch_size))
            outputs.append(model.forward_batch(chunk).data.astype(np.float64))
    pred = np.concatenate(outputs, axis=0)
    B = pred.shape[0]
    return (pred.reshape(B, pred.shape[1], -1, 3) + batch.offsets.reshape(B, 1, 1, 3)).reshape(pred.shape)

