"""
InteRACT 意圖預測系統 - 核心模組
姿態資料、資料集、retarget、可微分計算、模型、訓練與評估
"""

__version__ = '0.1.0'

from .errors import (
    InteractError, ConfigError, DatasetError, SchemaError, LayoutError, ShapeError, DegenerateBoneError,
    PlacementError, SplitError, AlignmentError, GradCheckError, OptimizerError, TrainingDivergedError,
    CheckpointError, CheckpointVersionError, CheckpointCorruptError, CheckpointShapeError, EvaluationError,
)
from .pose_core import (
    CANONICAL_HZ, FORECAST_HORIZON, JointLayout, Pose, PoseTrajectory, SceneWindow, SceneOffset,
    human_layout, robot_layout, dct_matrix, dct_forward, dct_inverse, center_scene, uncenter,
    translate, translate_window, fde, mpjpe,
)
from .retarget import EEPose, MarkerLayout, hand_frame, ee_to_marker_pose, retarget_trajectory
from .dataset_io import (
    AgentTrack, Episode, TrainingWindow, PairedPoseDataset, SplitSpec, SynthConfig, WindowBatch,
    load_episode, save_episode, write_dataset, read_dataset, resample, make_windows, stack_windows,
    stack_scenes, split_episodes, extract_agent, compose_synthetic_pair, gen_conflict_reach, gen_handover,
    gen_teleop_sessions, build_paired_set, scene_from_dict, scene_to_dict, save_paired_set, load_paired_set,
)
from .diff_core import Tensor, ComputationTape, ParameterStore, GradCheckReport, grad_check, no_grad
from .model import (
    VariantSpec, VARIANTS, variant_spec, ModelConfig, InteractModel, ContextEncoding, ActionQuery,
    parameter_count, forward_batch, encode_context, build_query, predict_intent, predict_batch,
)
from .training import (
    LossWeights, OptimizerState, LRSchedule, TrainConfig, Checkpoint, lr_at, loss_pred, loss_align,
    loss_total, adam_step, run_stage, save_checkpoint, load_checkpoint,
)
from .evalkit import (
    MetricsTable, ErrorTrace, ComparisonReport, evaluate, error_trace, compare, write_metrics_csv,
    write_trace_csv, dump_raw, aggregate_from_dump, plot_trace, plot_table,
)
from .verification import VerificationSuite

__all__ = [
    'InteractError', 'ConfigError', 'DatasetError', 'SchemaError', 'LayoutError', 'ShapeError',
    'DegenerateBoneError', 'PlacementError', 'SplitError', 'AlignmentError', 'GradCheckError',
    'OptimizerError', 'TrainingDivergedError', 'CheckpointError', 'CheckpointVersionError',
    'CheckpointCorruptError', 'CheckpointShapeError', 'EvaluationError',
    'CANONICAL_HZ', 'FORECAST_HORIZON', 'JointLayout', 'Pose', 'PoseTrajectory', 'SceneWindow',
    'SceneOffset', 'human_layout', 'robot_layout', 'dct_matrix', 'dct_forward', 'dct_inverse',
    'center_scene', 'uncenter', 'translate', 'translate_window', 'fde', 'mpjpe',
    'EEPose', 'MarkerLayout', 'hand_frame', 'ee_to_marker_pose', 'retarget_trajectory',
    'AgentTrack', 'Episode', 'TrainingWindow', 'PairedPoseDataset', 'SplitSpec', 'SynthConfig',
    'WindowBatch', 'load_episode', 'save_episode', 'write_dataset', 'read_dataset', 'resample',
    'make_windows', 'stack_windows', 'stack_scenes', 'split_episodes', 'extract_agent',
    'compose_synthetic_pair', 'gen_conflict_reach', 'gen_handover', 'gen_teleop_sessions',
    'build_paired_set', 'scene_from_dict', 'scene_to_dict', 'save_paired_set', 'load_paired_set',
    'Tensor', 'ComputationTape', 'ParameterStore', 'GradCheckReport', 'grad_check', 'no_grad',
    'VariantSpec', 'VARIANTS', 'variant_spec', 'ModelConfig', 'InteractModel', 'ContextEncoding',
    'ActionQuery', 'parameter_count', 'forward_batch', 'encode_context', 'build_query',
    'predict_intent', 'predict_batch',
    'LossWeights', 'OptimizerState', 'LRSchedule', 'TrainConfig', 'Checkpoint', 'lr_at', 'loss_pred',
    'loss_align', 'loss_total', 'adam_step', 'run_stage', 'save_checkpoint', 'load_checkpoint',
    'MetricsTable', 'ErrorTrace', 'ComparisonReport', 'evaluate', 'error_trace', 'compare',
    'write_metrics_csv', 'write_trace_csv', 'dump_raw', 'aggregate_from_dump', 'plot_trace', 'plot_table',
    'VerificationSuite',
]
