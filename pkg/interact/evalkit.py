"""
InteRACT 意圖預測系統 - 評估工具
依任務彙整的 FDE 表、單一 episode 的 FDE 時間序列、變體比較報告，
以及 CSV / SVG 輸出
"""
import csv
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset_io import Episode, TrainingWindow, make_windows, stack_windows
from .errors import EvaluationError
from .model import InteractModel, predict_batch
from .pose_core import FORECAST_HORIZON, PoseTrajectory, SceneWindow, fde, mpjpe

ALL_TASKS = 'all'
METRICS_COLUMNS = ['variant', 'task', 'mean_fde', 'std_fde', 'n_episodes', 'n_windows']
TRACE_COLUMNS = ['frame', 'variant', 'fde', 'annotation']
RAW_COLUMNS = ['variant', 'task', 'episode_id', 'start_frame', 'fde', 'mpjpe']
COMPARISON_COLUMNS = ['task', 'reference', 'candidate', 'reference_fde', 'candidate_fde', 'delta', 'improvement_pct']

Predictor = Union[InteractModel, Callable[[SceneWindow], PoseTrajectory]]


@dataclass(frozen=True)
class WindowRecord:
    variant: str
    task: str
    episode_id: str
    start_frame: int
    fde: float
    mpjpe: float


@dataclass(frozen=True)
class MetricsRow:
    variant: str
    task: str
    mean_fde: float
    std_fde: float
    n_episodes: int
    n_windows: int
    episode_mean_fde: float
    mean_mpjpe: float


@dataclass
class MetricsTable:
    rows: List[MetricsRow]
    records: List[WindowRecord] = field(default_factory=list)

    def row(self, variant: str, task: str = ALL_TASKS) -> MetricsRow:
        for row in self.rows:
            if row.variant == variant and row.task == task:
                return row
        raise KeyError(f"no row for variant '{variant}' and task '{task}'")

    def tasks(self) -> List[str]:
        return list(OrderedDict.fromkeys(r.task for r in self.rows))

    def variants(self) -> List[str]:
        return list(OrderedDict.fromkeys(r.variant for r in self.rows))

    def merge(self, other: 'MetricsTable') -> 'MetricsTable':
        return MetricsTable(self.rows + other.rows, self.records + other.records)


def _aggregate(records: Sequence[WindowRecord]) -> List[MetricsRow]:
    """以視窗加權彙整；另外給出 episode 平均的平均"""
    groups: 'OrderedDict[Tuple[str, str], List[WindowRecord]]' = OrderedDict()
    for rec in records:
        groups.setdefault((rec.variant, rec.task), []).append(rec)
        groups.setdefault((rec.variant, ALL_TASKS), []).append(rec)
    rows = []
    for (variant, task), group in groups.items():
        values = np.array([r.fde for r in group])
        per_episode: 'OrderedDict[str, List[float]]' = OrderedDict()
        for r in group:
            per_episode.setdefault(r.episode_id, []).append(r.fde)
        episode_means = np.array([np.mean(v) for v in per_episode.values()])
        rows.append(MetricsRow(
            variant=variant,
            task=task,
            mean_fde=float(values.mean()),
            std_fde=float(values.std()),
            n_episodes=len(per_episode),
            n_windows=len(group),
            episode_mean_fde=float(episode_means.mean()),
            mean_mpjpe=float(np.mean([r.mpjpe for r in group])),
        ))
    # 'all' 列放在各變體最後
    rows.sort(key=lambda r: (r.task == ALL_TASKS,))
    return rows


def _predict_windows(model: Predictor, windows: Sequence[TrainingWindow]) -> List[np.ndarray]:
    if isinstance(model, InteractModel):
        preds: List[Optional[np.ndarray]] = [None] * len(windows)
        by_kind: Dict[str, List[int]] = OrderedDict()
        for i, w in enumerate(windows):
            by_kind.setdefault(w.scene.partner_kind, []).append(i)
        for indices in by_kind.values():
            batch = stack_windows([windows[i] for i in indices])
            out = predict_batch(model, batch)
            for i, frames in zip(indices, out):
                preds[i] = frames
        return preds
    return [np.asarray(model(w.scene).frames, dtype=np.float64) for w in windows]


def window_records(model: Predictor, windows: Sequence[TrainingWindow],
                   variant: Optional[str] = None) -> List[WindowRecord]:
    if not windows:
        raise EvaluationError("empty split: no windows to evaluate")
    if any(w.scene.target_future is None for w in windows):
        raise EvaluationError("every evaluation window needs a target")
    if variant is None:
        variant = model.variant.name if isinstance(model, InteractModel) else 'custom'
    preds = _predict_windows(model, windows)
    records = []
    for w, frames in zip(windows, preds):
        target = w.scene.target_future
        pred = PoseTrajectory(target.layout, frames, target.frame_hz)
        records.append(WindowRecord(variant, w.task, w.episode_id, w.start_frame, fde(pred, target), mpjpe(pred, target)))
    return records


def evaluate(model: Predictor, windows: Sequence[TrainingWindow], variant: Optional[str] = None) -> MetricsTable:
    """逐視窗計算 FDE，依任務分組彙整，另附 'all' 列"""
    records = window_records(model, windows, variant)
    return MetricsTable(_aggregate(records), records)


# ---------------------------------------------------------------------------
# FDE 時間序列
# ---------------------------------------------------------------------------

@dataclass
class ErrorTrace:
    episode_id: str
    frames: List[int]
    series: Dict[str, np.ndarray]
    annotations: Dict[int, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def mean_after(self, variant: str, frame: int) -> float:
        values = [v for f, v in zip(self.frames, self.series[variant]) if f >= frame]
        return float(np.mean(values)) if values else float('nan')


def _named_models(models) -> 'OrderedDict[str, Predictor]':
    if isinstance(models, dict):
        return OrderedDict(models)
    named: 'OrderedDict[str, Predictor]' = OrderedDict()
    for i, model in enumerate(models):
        name = model.variant.name if isinstance(model, InteractModel) else f"model_{i}"
        if name in named:
            name = f"{name}_{i}"
        named[name] = model
    return named


def error_trace(models, episode: Episode, horizon: int = FORECAST_HORIZON) -> ErrorTrace:
    """步距 1 的滑動視窗；frame 為每個視窗最後一個觀測幀"""
    if episode.num_frames < 2 * horizon:
        raise EvaluationError(
            f"episode '{episode.id}' has {episode.num_frames} frames, a trace needs at least {2 * horizon}"
        )
    windows = make_windows(episode, stride=1, horizon=horizon)
    frames = [w.start_frame + horizon - 1 for w in windows]
    series = OrderedDict()
    for name, model in _named_models(models).items():
        series[name] = np.array([r.fde for r in window_records(model, windows, name)])

    annotations: Dict[int, str] = {}
    for key, label in (('partner_commit_frame', 'partner_commit'), ('human_onset_frame', 'human_onset')):
        if key in episode.metadata:
            annotations[int(episode.metadata[key])] = label
    for frame, label in episode.metadata.get('annotations', {}).items():
        annotations[int(frame)] = str(label)
    return ErrorTrace(episode.id, frames, series, annotations)


# ---------------------------------------------------------------------------
# 變體比較
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VariantDelta:
    task: str
    reference: str
    candidate: str
    reference_fde: float
    candidate_fde: float

    @property
    def delta(self) -> float:
        return self.candidate_fde - self.reference_fde

    @property
    def improvement_pct(self) -> float:
        if self.reference_fde == 0:
            return 0.0
        return 100.0 * (self.reference_fde - self.candidate_fde) / self.reference_fde


@dataclass
class ComparisonReport:
    medians: Dict[Tuple[str, str], float]
    deltas: List[VariantDelta]
    seeds: Dict[Tuple[str, str], List[float]]

    def delta(self, reference: str, candidate: str, task: str = ALL_TASKS) -> VariantDelta:
        return VariantDelta(task, reference, candidate, self.medians[(reference, task)], self.medians[(candidate, task)])

    def to_csv(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(COMPARISON_COLUMNS)
            for d in self.deltas:
                writer.writerow([d.task, d.reference, d.candidate, repr(d.reference_fde),
                                 repr(d.candidate_fde), repr(d.delta), repr(d.improvement_pct)])
        return path


def compare(tables: Sequence[MetricsTable]) -> ComparisonReport:
    """同名變體 (不同種子) 取中位數，再對所有變體兩兩比較"""
    if not tables:
        raise EvaluationError("compare needs at least one table")
    keys = set(tables[0].tasks())
    for table in tables[1:]:
        if set(table.tasks()) != keys:
            raise EvaluationError(
                f"task keys differ between tables: {sorted(keys)} vs {sorted(table.tasks())}"
            )
    seeds: 'OrderedDict[Tuple[str, str], List[float]]' = OrderedDict()
    variants: List[str] = []
    for table in tables:
        for row in table.rows:
            seeds.setdefault((row.variant, row.task), []).append(row.mean_fde)
            if row.variant not in variants:
                variants.append(row.variant)
    medians = {key: float(np.median(values)) for key, values in seeds.items()}
    tasks = tables[0].tasks()
    deltas = []
    for i, reference in enumerate(variants):
        for candidate in variants[i + 1:]:
            for task in tasks:
                if (reference, task) in medians and (candidate, task) in medians:
                    deltas.append(VariantDelta(task, reference, candidate,
                                               medians[(reference, task)], medians[(candidate, task)]))
    return ComparisonReport(medians, deltas, dict(seeds))


# ---------------------------------------------------------------------------
# 檔案輸出
# ---------------------------------------------------------------------------

def _writer(path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return open(path, 'w', newline='', encoding='utf-8')


def write_metrics_csv(table: MetricsTable, path: str) -> str:
    with _writer(path) as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for r in table.rows:
            writer.writerow([r.variant, r.task, repr(r.mean_fde), repr(r.std_fde), r.n_episodes, r.n_windows])
    return path


def write_trace_csv(trace: ErrorTrace, path: str) -> str:
    with _writer(path) as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for variant, values in trace.series.items():
            for frame, value in zip(trace.frames, values):
                writer.writerow([frame, variant, repr(float(value)), trace.annotations.get(frame, '')])
    return path


def dump_raw(table: MetricsTable, path: str) -> str:
    """每個視窗一列；repr 保證浮點數可精確讀回"""
    with _writer(path) as f:
        writer = csv.writer(f)
        writer.writerow(RAW_COLUMNS)
        for r in table.records:
            writer.writerow([r.variant, r.task, r.episode_id, r.start_frame, repr(r.fde), repr(r.mpjpe)])
    return path


def aggregate_from_dump(path: str) -> MetricsTable:
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        records = [
            WindowRecord(row['variant'], row['task'], row['episode_id'], int(row['start_frame']),
                         float(row['fde']), float(row['mpjpe']))
            for row in reader
        ]
    if not records:
        raise EvaluationError(f"{path} holds no window records")
    return MetricsTable(_aggregate(records), records)


def _pyplot():
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    return plt


def plot_trace(trace: ErrorTrace, path: str) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 4))
    for variant, values in trace.series.items():
        ax.plot(trace.frames, values, label=variant)
    for frame, label in trace.annotations.items():
        ax.axvline(frame, color='gray', linestyle='--', linewidth=1)
        ax.annotate(label, (frame, ax.get_ylim()[1]), fontsize=8, rotation=90, va='top')
    ax.set_xlabel('frame')
    ax.set_ylabel('FDE (m)')
    ax.set_title(f"FDE over time: {trace.episode_id}")
    ax.grid(True)
    ax.legend()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format='svg')
    plt.close(fig)
    return path


def plot_table(table: MetricsTable, path: str) -> str:
    plt = _pyplot()
    tasks, variants = table.tasks(), table.variants()
    width = 0.8 / max(1, len(variants))
    fig, ax = plt.subplots(figsize=(max(6, 1.5 * len(tasks)), 4))
    x = np.arange(len(tasks))
    for i, variant in enumerate(variants):
        means, stds = [], []
        for task in tasks:
            try:
                row = table.row(variant, task)
                means.append(row.mean_fde)
                stds.append(row.std_fde)
            except KeyError:
                means.append(0.0)
                stds.append(0.0)
        ax.bar(x + i * width, means, width, yerr=stds, label=variant, capsize=3)
    ax.set_xticks(x + width * (len(variants) - 1) / 2)
    ax.set_xticklabels(tasks)
    ax.set_ylabel('FDE (m)')
    ax.set_title('All-joints FDE at 1 s')
    ax.legend()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format='svg')
    plt.close(fig)
    return path
