"""
InteRACT 意圖預測系統 - 配置文件
"""
import copy
import math
import os
from typing import Any, Dict, Iterable, Optional

import json5
from dotenv import load_dotenv

from interact.errors import ConfigError

# 載入環境變量
load_dotenv()


class Config:
    """系統配置類"""

    # 環境變量
    SEED = int(os.getenv('INTERACT_SEED', 0))
    RESULTS_DIR = os.getenv('INTERACT_RESULTS_DIR', 'results')

    # 預設值 (標準訓練設定；embed_dim 為桌面規模)
    DEFAULTS: Dict[str, Any] = {
        'seed': 0,
        'model': {
            'horizon': 15,
            'human_dim': 27,
            'robot_dim': 6,
            'embed_dim': 32,
            'layers': 3,
            'heads': 4,
            'ffn_ratio': 4,
            'variant': 'InteRACT',
            'precision': 'float32',
        },
        'train': {
            'lambda_p': 1.0,
            'lambda_h': 0.1,
            'lambda_f': 0.1,
            'milestones': [15, 25, 35, 40],
            'gamma': 0.1,
            'betas': [0.9, 0.999],
            'eps': 1e-8,
            'weight_decay': 1e-5,
            'align': False,
            'align_subsample': 256,
        },
        'pretrain': {
            'epochs': 50,
            'batch_size': 256,
            'lr': 3e-4,
        },
        'finetune': {
            'epochs': 30,
            'batch_size': 64,
            'lr': 1e-4,
            'freeze_human_embeddings': False,
        },
        'data': {
            'frame_hz': 15.0,
            'stride': 5,
            'split': [8, 1, 1],
            'both_directions': False,
        },
        'synth': {
            'task': 'conflict_reach',
            'partner': 'human',
            'n_episodes': 60,
            'n_hr_episodes': 12,
            'n_teleop': 4,
            'n_frames': 90,
            'min_separation': 0.3,
            'workspace_radius': 1.5,
            'yaw_range': [-math.pi, math.pi],
            'objects': [[-0.25, 0.0, 0.95], [0.25, 0.0, 0.95]],
            'source_dir': None,
        },
        'retarget': {
            'side': 'right',
        },
        'eval': {
            'checkpoints': {},
            'split': 'test',
            'dump_raw': False,
            'plots': False,
            'trace_episodes': 1,
        },
        'verify': {
            'n_windows': 100,
        },
        'paths': {
            'hh_dataset': None,
            'hr_dataset': None,
            'teleop_dataset': None,
            'eval_dataset': None,
            'pretrained': None,
            'checkpoint': None,
            'window': None,
            'episode': None,
            'out_dir': None,
        },
    }

    # 值為空字典的鍵允許任意子鍵 (例如 eval.checkpoints 的 變體 → 檔案)
    OPEN_SECTIONS = ('eval.checkpoints',)

    @classmethod
    def default_seed(cls) -> int:
        value = os.getenv('INTERACT_SEED')
        if value is None:
            return cls.SEED
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"INTERACT_SEED must be an integer, got '{value}'", 'seed') from None

    @classmethod
    def defaults(cls) -> Dict[str, Any]:
        resolved = copy.deepcopy(cls.DEFAULTS)
        resolved['seed'] = cls.default_seed()
        return resolved

    @classmethod
    def results_dir(cls) -> str:
        return os.getenv('INTERACT_RESULTS_DIR', cls.RESULTS_DIR)

    @classmethod
    def load_file(cls, path: str) -> Dict[str, Any]:
        """JSON 設定檔 (以 json5 解析，容許註解與結尾逗號)"""
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}", 'config')
        with open(path, 'r', encoding='utf-8') as f:
            try:
                doc = json5.load(f)
            except ValueError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}", 'config') from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path} must hold a JSON object", 'config')
        return doc

    @staticmethod
    def parse_override(text: str):
        if '=' not in text:
            raise ConfigError(f"override '{text}' is not of the form key=value", text)
        key, raw = text.split('=', 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"override '{text}' has an empty key", text)
        try:
            value = json5.loads(raw)
        except ValueError:
            value = raw
        return key, value

    @classmethod
    def _check_type(cls, key: str, default: Any, value: Any) -> Any:
        if default is None:
            return value
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"expected a boolean, got {value!r}", key)
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"expected an integer, got {value!r}", key)
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"expected a number, got {value!r}", key)
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"expected a string, got {value!r}", key)
            return value
        if isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"expected a list, got {value!r}", key)
            return value
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"expected an object, got {value!r}", key)
            return value
        return value

    @classmethod
    def _merge(cls, base: Dict[str, Any], doc: Dict[str, Any], prefix: str = ''):
        for key, value in doc.items():
            dotted = f"{prefix}{key}"
            if key not in base:
                raise ConfigError("unknown configuration key", dotted)
            default = base[key]
            if isinstance(default, dict) and dotted not in cls.OPEN_SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"expected an object, got {value!r}", dotted)
                cls._merge(default, value, f"{dotted}.")
            else:
                base[key] = cls._check_type(dotted, default, value)

    @classmethod
    def set(cls, resolved: Dict[str, Any], dotted: str, value: Any):
        parts = dotted.split('.')
        node = resolved
        for i, part in enumerate(parts[:-1]):
            path = '.'.join(parts[:i + 1])
            if path in cls.OPEN_SECTIONS:
                node = node.setdefault(part, {})
                node['.'.join(parts[i + 1:])] = value
                return
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError("unknown configuration key", dotted)
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigError("unknown configuration key", dotted)
        if isinstance(node[leaf], dict) and dotted not in cls.OPEN_SECTIONS:
            raise ConfigError("cannot override a whole section", dotted)
        node[leaf] = cls._check_type(dotted, node[leaf], value)

    @classmethod
    def resolve(cls, path: Optional[str] = None, overrides: Iterable[str] = ()) -> Dict[str, Any]:
        """預設值 ← 設定檔 ← key=value 覆寫；未知鍵或型別錯誤丟出 ConfigError"""
        resolved = cls.defaults()
        if path:
            cls._merge(resolved, cls.load_file(path))
        for text in overrides:
            key, value = cls.parse_override(text)
            cls.set(resolved, key, value)
        cls.validate(resolved)
        return resolved

    @classmethod
    def validate(cls, resolved: Dict[str, Any]):
        if len(resolved['data']['split']) != 3:
            raise ConfigError("split needs three ratios", 'data.split')
        if resolved['synth']['partner'] not in ('human', 'robot'):
            raise ConfigError("partner must be 'human' or 'robot'", 'synth.partner')
        if resolved['synth']['task'] not in ('conflict_reach', 'handover', 'synthetic_pair'):
            raise ConfigError(f"unknown task '{resolved['synth']['task']}'", 'synth.task')
        if resolved['retarget']['side'] not in ('left', 'right'):
            raise ConfigError("side must be 'left' or 'right'", 'retarget.side')
        if len(resolved['train']['betas']) != 2:
            raise ConfigError("betas needs two values", 'train.betas')

    @staticmethod
    def get(resolved: Dict[str, Any], dotted: str, default: Any = None) -> Any:
        node: Any = resolved
        for part in dotted.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    @classmethod
    def require(cls, resolved: Dict[str, Any], dotted: str) -> Any:
        value = cls.get(resolved, dotted)
        if value is None or value == {}:
            raise ConfigError("missing required key", dotted)
        return value
