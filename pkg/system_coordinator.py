"""
InteRACT 意圖預測系統 - 系統協調器
協調各子命令的處理流程：資料合成、預訓練、微調、評估、預測、retarget 與自我驗證
"""
import hashlib
import json
import os
import platform
import re
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from colorama import Fore, init
from rich.console import Console
from rich.table import Table

import interact
from config import Config
from interact.dataset_io import (
    SPLIT_NAMES, AgentTrack, Episode, PairedPoseDataset, SplitSpec, SynthConfig, TrainingWindow,
    build_paired_set, compose_synthetic_pair, extract_agent, gen_conflict_reach, gen_handover,
    gen_teleop_sessions, load_episode, load_paired_set, make_windows, read_dataset, resample,
    save_episode, save_paired_set, scene_from_dict, split_episodes, write_dataset,
)
from interact.errors import ConfigError, DatasetError, EvaluationError, InteractError
from interact.evalkit import (
    MetricsTable, compare, dump_raw, error_trace, evaluate as evaluate_model, plot_table, plot_trace, write_metrics_csv,
    write_trace_csv,
)
from interact.model import InteractModel, ModelConfig, predict_intent, variant_spec
from interact.pose_core import CANONICAL_HZ, robot_layout
from interact.retarget import retarget_trajectory
from interact.training import LossWeights, TrainConfig, load_checkpoint, run_stage, save_checkpoint
from interact.verification import VerificationSuite

# 初始化colorama
init(autoreset=True)

COMMANDS = ('synth', 'pretrain', 'finetune', 'eval', 'predict', 'retarget', 'verify')


def hash_path(path: str) -> str:
    """檔案取內容 sha256；目錄依相對路徑排序後逐檔雜湊"""
    digest = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                full = os.path.join(root, name)
                digest.update(os.path.relpath(full, path).replace(os.sep, '/').encode('utf-8'))
                digest.update(hash_path(full).encode('ascii'))
    else:
        with open(path, 'rb') as f:
            for chunk in iter(lambda: f.read(1 << 20), b''):
                digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """在任何耗時計算開始前寫出；內容足以重現這次執行"""

    command: str
    config: Dict[str, Any]
    seed: int
    build: Dict[str, str]
    inputs: Dict[str, str]
    out_dir: str
    started_at: str
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()

    def write(self) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, 'run_manifest.json')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)
        return path


def build_info() -> Dict[str, str]:
    return {
        'interact': interact.__version__,
        'python': platform.python_version(),
        'numpy': np.__version__,
    }


def _input_paths(command: str, resolved: Dict[str, Any]) -> Dict[str, str]:
    paths = {f"paths.{k}": v for k, v in resolved['paths'].items() if v and k != 'out_dir'}
    if resolved['synth'].get('source_dir'):
        paths['synth.source_dir'] = resolved['synth']['source_dir']
    if command == 'eval':
        for label, value in resolved['eval']['checkpoints'].items():
            for i, path in enumerate(value if isinstance(value, list) else [value]):
                paths[f"eval.checkpoints.{label}[{i}]"] = path
    return paths


def _sanitize(name: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.-]+', '_', name)


class PipelineCoordinator:
    """系統協調器 - 依子命令串接資料、模型、訓練與評估"""

    def __init__(self, verbose: bool = False, console: Optional[Console] = None):
        self.verbose = verbose
        self.console = console or Console()
        self.handlers: Dict[str, Callable[[Dict[str, Any], str], Dict[str, Any]]] = {
            'synth': self.synth,
            'pretrain': self.pretrain,
            'finetune': self.finetune,
            'eval': self.evaluate,
            'predict': self.predict,
            'retarget': self.retarget,
            'verify': self.verify,
        }

    # ------------------------------------------------------------------
    # 共用
    # ------------------------------------------------------------------

    def _log(self, message: str, color: str = Fore.WHITE):
        if self.verbose:
            print(f"{color}{message}")

    @staticmethod
    def out_dir(command: str, resolved: Dict[str, Any]) -> str:
        return resolved['paths']['out_dir'] or os.path.join(Config.results_dir(), command)

    def write_manifest(self, command: str, resolved: Dict[str, Any]) -> RunManifest:
        inputs = {}
        for key, path in _input_paths(command, resolved).items():
            inputs[key] = hash_path(path) if os.path.exists(path) else 'missing'
        manifest = RunManifest(
            command=command,
            config=resolved,
            seed=resolved['seed'],
            build=build_info(),
            inputs=inputs,
            out_dir=self.out_dir(command, resolved),
            started_at=datetime.now().isoformat(),
        )
        manifest.write()
        return manifest

    def run(self, command: str, resolved: Dict[str, Any]) -> Dict[str, Any]:
        """執行子命令；InteractError 轉為結果字典而不往外拋"""
        if command not in self.handlers:
            return self._failure(command, ConfigError(f"unknown command '{command}'", 'command'))
        start_time = time.time()
        try:
            manifest = self.write_manifest(command, resolved)
            if self.verbose:
                print(f"{Fore.CYAN}{'=' * 60}")
                print(f"{Fore.CYAN}執行 {command}，輸出目錄: {manifest.out_dir}")
                print(f"{Fore.CYAN}{'=' * 60}")
            result = self.handlers[command](resolved, manifest.out_dir, manifest_hash=manifest.digest())
        except InteractError as exc:
            return self._failure(command, exc)
        result.setdefault('success', True)
        result.setdefault('error', None)
        result.setdefault('exit_code', 0 if result['success'] else 1)
        result.update({
            'command': command,
            'out_dir': manifest.out_dir,
            'manifest_hash': manifest.digest(),
            'processing_time': time.time() - start_time,
            'timestamp': datetime.now().isoformat(),
        })
        result['results_path'] = self.save_results(result, manifest.out_dir)
        return result

    @staticmethod
    def _failure(command: str, exc: InteractError) -> Dict[str, Any]:
        return {
            'command': command,
            'success': False,
            'error': str(exc),
            'error_kind': exc.kind,
            'exit_code': 2 if isinstance(exc, ConfigError) else 1,
        }

    @staticmethod
    def model_config(resolved: Dict[str, Any], variant: Optional[str] = None) -> ModelConfig:
        doc = dict(resolved['model'])
        if variant is not None:
            doc['variant'] = variant
        return ModelConfig(seed=resolved['seed'], **doc)

    @staticmethod
    def synth_config(resolved: Dict[str, Any], seed: Optional[int] = None) -> SynthConfig:
        s = resolved['synth']
        return SynthConfig(
            min_separation=s['min_separation'],
            workspace_radius=s['workspace_radius'],
            yaw_range=tuple(s['yaw_range']),
            seed=resolved['seed'] if seed is None else seed,
            objects=tuple(tuple(o) for o in s['objects']),
            n_frames=s['n_frames'],
            frame_hz=resolved['data']['frame_hz'],
        )

    @staticmethod
    def split_spec(resolved: Dict[str, Any]) -> SplitSpec:
        return SplitSpec(tuple(resolved['data']['split']), resolved['seed'])

    @staticmethod
    def windows(episodes: List[Episode], resolved: Dict[str, Any]) -> List[TrainingWindow]:
        out = []
        for ep in episodes:
            if abs(ep.frame_hz - CANONICAL_HZ) > 1e-9:
                ep = resample(ep, CANONICAL_HZ)
            out.extend(make_windows(ep, resolved['data']['stride'], resolved['model']['horizon'],
                                    resolved['data']['both_directions']))
        return out

    def window_splits(self, splits: Dict[str, List[Episode]], resolved: Dict[str, Any]) -> Dict[str, List[TrainingWindow]]:
        return {name: self.windows(splits.get(name, []), resolved) for name in SPLIT_NAMES}

    def train_config(self, resolved: Dict[str, Any], stage: str, out_dir: str,
                     paired=None) -> TrainConfig:
        t, s = resolved['train'], resolved[stage]
        return TrainConfig(
            stage=stage,
            epochs=s['epochs'],
            batch_size=s['batch_size'],
            base_lr=s['lr'],
            weights=LossWeights(t['lambda_p'], t['lambda_h'], t['lambda_f']),
            seed=resolved['seed'],
            align_enabled=paired is not None,
            paired_set=paired,
            freeze_human_embeddings=stage == 'finetune' and resolved['finetune']['freeze_human_embeddings'],
            align_subsample=t['align_subsample'],
            milestones=tuple(t['milestones']),
            gamma=t['gamma'],
            betas=tuple(t['betas']),
            eps=t['eps'],
            weight_decay=t['weight_decay'],
            metrics_path=os.path.join(out_dir, 'metrics.csv'),
        )

    def generated(self, resolved: Dict[str, Any], partner: str, n_episodes: int, seed: int) -> Dict[str, List[Episode]]:
        task = resolved['synth']['task']
        cfg = self.synth_config(resolved, seed)
        if task == 'handover':
            episodes = gen_handover(cfg, n_episodes, partner)
        elif task == 'conflict_reach':
            episodes = gen_conflict_reach(cfg, n_episodes, partner)
        else:
            raise ConfigError(f"task '{task}' cannot be generated without source clips", 'synth.task')
        return split_episodes(episodes, replace(self.split_spec(resolved), seed=seed))

    def _stage_log(self) -> Optional[Callable[[str], None]]:
        return (lambda line: print(f"{Fore.WHITE}{line}")) if self.verbose else None

    # ------------------------------------------------------------------
    # synth
    # ------------------------------------------------------------------

    def synth(self, resolved: Dict[str, Any], out_dir: str, manifest_hash: str = '') -> Dict[str, Any]:
        s = resolved['synth']
        seed = resolved['seed']
        if s['task'] == 'synthetic_pair':
            source = Config.require(resolved, 'synth.source_dir')
            clips = [extract_agent(ep, a.name)
                     for split in read_dataset(source).values() for ep in split for a in ep.agents
                     if a.kind == 'human']
            if len(clips) < 2:
                raise DatasetError(f"synthetic pairing needs at least 2 human clips, found {len(clips)} in {source}")
            cfg = self.synth_config(resolved)
            n_pairs = min(s['n_episodes'], len(clips))
            episodes = []
            for i in range(n_pairs):
                ep = compose_synthetic_pair(clips[i], clips[(i + 1) % len(clips)], replace(cfg, seed=seed + i))
                episodes.append(ep)
                self._log(f"  配對 {i + 1}/{n_pairs}: {ep.id}")
            splits = split_episodes(episodes, self.split_spec(resolved))
        else:
            splits = self.generated(resolved, s['partner'], s['n_episodes'], seed)
            self._log(f"  已產生 {sum(len(v) for v in splits.values())} 個 {s['task']} episode")
        manifest_path = write_dataset(os.path.join(out_dir, 'dataset'), splits)
        result = {
            'dataset': os.path.dirname(manifest_path),
            'split_sizes': {name: len(splits.get(name, [])) for name in SPLIT_NAMES},
        }
        if s['n_teleop'] > 0:
            teleop = gen_teleop_sessions(self.synth_config(resolved, seed + 2), s['n_teleop'])
            teleop_manifest = write_dataset(os.path.join(out_dir, 'teleop'), {'train': teleop})
            result['teleop_dataset'] = os.path.dirname(teleop_manifest)
        return result

    # ------------------------------------------------------------------
    # pretrain / finetune
    # ------------------------------------------------------------------

    def _train(self, model: InteractModel, splits: Dict[str, List[Episode]], resolved: Dict[str, Any],
               stage: str, out_dir: str, paired=None) -> Dict[str, Any]:
        windows = self.window_splits(splits, resolved)
        self._log(f"  視窗數: " + ', '.join(f"{k}={len(v)}" for k, v in windows.items()))
        cfg = self.train_config(resolved, stage, out_dir, paired)
        state = run_stage(model, windows, cfg, self._stage_log())
        path = resolved['paths']['checkpoint'] or os.path.join(out_dir, f"{stage}.ckpt")
        save_checkpoint(state.model, state, path, stage=stage)
        self._log(f"✓ checkpoint 已保存到: {path}", Fore.GREEN)
        return {
            'checkpoint': path,
            'variant': model.variant.name,
            'num_parameters': model.num_parameters(),
            'best_epoch': state.best_epoch,
            'best_val_fde': state.best_val_fde,
            'final_train_loss': state.metrics[-1].train_loss,
            'metrics_csv': cfg.metrics_path,
            'window_counts': {k: len(v) for k, v in windows.items()},
        }

    def pretrain(self, resolved: Dict[str, Any], out_dir: str, manifest_hash: str = '') -> Dict[str, Any]:
        if resolved['paths']['hh_dataset']:
            splits = read_dataset(resolved['paths']['hh_dataset'])
        else:
            splits = self.generated(resolved, 'human', resolved['synth']['n_episodes'], resolved['seed'])
        model = InteractModel(self.model_config(resolved))
        self._log(f"預訓練 {model.variant.name}，參數量 {model.num_parameters()}", Fore.YELLOW)
        return self._train(model, splits, resolved, 'pretrain', out_dir)

    def paired_set(self, resolved: Dict[str, Any]):
        path = resolved['paths']['teleop_dataset']
        if path:
            return load_paired_set(path)
        sessions = gen_teleop_sessions(self.synth_config(resolved, resolved['seed'] + 2),
                                       max(1, resolved['synth']['n_teleop']))
        return PairedPoseDataset.concat(
            [build_paired_set(ep, resolved['retarget']['side']) for ep in sessions])

    def finetune(self, resolved: Dict[str, Any], out_dir: str, manifest_hash: str = '') -> Dict[str, Any]:
        align = resolved['train']['align']
        variant = 'InteRACT_Align' if align else resolved['model']['variant']
        spec = variant_spec(variant)
        if spec.pretrained:
            ckpt = load_checkpoint(Config.require(resolved, 'paths.pretrained'))
            model = ckpt.build_model().astype(resolved['model']['precision']).with_variant(spec.name)
        else:
            model = InteractModel(self.model_config(resolved, spec.name))
        if resolved['paths']['hr_dataset']:
            splits = read_dataset(resolved['paths']['hr_dataset'])
        else:
            splits = self.generated(resolved, 'robot', resolved['synth']['n_hr_episodes'], resolved['seed'] + 1)
        paired = self.paired_set(resolved) if align else None
        if paired is not None:
            self._log(f"  對齊配對姿態數: {len(paired)}")
        self._log(f"微調 {model.variant.name}", Fore.YELLOW)
        result = self._train(model, splits, resolved, 'finetune', out_dir, paired)
        result['aligned'] = bool(align)
        return result

    # ------------------------------------------------------------------
    # eval
    # ------------------------------------------------------------------

    def _checkpoint_groups(self, resolved: Dict[str, Any]) -> Dict[str, List[str]]:
        groups = {label: (value if isinstance(value, list) else [value])
                  for label, value in resolved['eval']['checkpoints'].items()}
        if not groups:
            path = Config.require(resolved, 'paths.checkpoint')
            groups = {load_checkpoint(path).config.variant: [path]}
        for label, paths in groups.items():
            if not paths or not all(isinstance(p, str) for p in paths):
                raise ConfigError("expected a checkpoint path or a list of paths", f"eval.checkpoints.{label}")
        return groups

    def evaluate(self, resolved: Dict[str, Any], out_dir: str, manifest_hash: str = '') -> Dict[str, Any]:
        e = resolved['eval']
        paths = resolved['paths']
        dataset = paths['eval_dataset'] or paths['hr_dataset'] or paths['hh_dataset']
        if not dataset:
            raise ConfigError("missing required key", 'paths.eval_dataset')
        split = e['split']
        if split not in SPLIT_NAMES:
            raise ConfigError(f"split must be one of {SPLIT_NAMES}", 'eval.split')
        episodes = read_dataset(dataset)[split]
        windows = self.windows(episodes, resolved)
        if not windows:
            raise EvaluationError(f"empty split: '{split}' of {dataset} has no windows to evaluate")

        groups = self._checkpoint_groups(resolved)
        n_seeds = max(len(p) for p in groups.values())
        tables: List[MetricsTable] = []
        first_models: Dict[str, InteractModel] = {}
        for i in range(n_seeds):
            table = None
            for label, ckpts in groups.items():
                if i >= len(ckpts):
                    continue
                model = load_checkpoint(ckpts[i]).build_model()
                first_models.setdefault(label, model)
                self._log(f"  評估 {label} [{i}]: {ckpts[i]}")
                part = evaluate_model(model, windows, label)
                table = part if table is None else table.merge(part)
            tables.append(table)

        outputs = {'metrics_csv': write_metrics_csv(tables[0], os.path.join(out_dir, 'metrics.csv'))}
        for i, table in enumerate(tables[1:], 1):
            write_metrics_csv(table, os.path.join(out_dir, f"metrics_seed{i}.csv"))
        report = compare(tables)
        outputs['comparison_csv'] = report.to_csv(os.path.join(out_dir, 'comparison.csv'))
        if e['dump_raw']:
            outputs['raw_csv'] = dump_raw(tables[0], os.path.join(out_dir, 'raw_fde.csv'))
        if e['plots']:
            outputs['table_svg'] = plot_table(tables[0], os.path.join(out_dir, 'metrics.svg'))

        traces = []
        long_enough = [ep for ep in episodes if ep.num_frames >= 2 * resolved['model']['horizon']]
        for ep in long_enough[:e['trace_episodes']]:
            if abs(ep.frame_hz - CANONICAL_HZ) > 1e-9:
                ep = resample(ep, CANONICAL_HZ)
            trace = error_trace(first_models, ep, resolved['model']['horizon'])
            stem = f"trace_{_sanitize(ep.id)}"
            traces.append(write_trace_csv(trace, os.path.join(out_dir, f"{stem}.csv")))
            if e['plots']:
                traces.append(plot_trace(trace, os.path.join(out_dir, f"{stem}.svg")))
        outputs['traces'] = traces

        self.print_table(tables[0])
        return {
            'dataset': dataset,
            'split': split,
            'n_windows': len(windows),
            'metrics': [asdict(r) for r in tables[0].rows],
            'comparison': [
                {**asdict(d), 'delta': d.delta, 'improvement_pct': d.improvement_pct} for d in report.deltas
            ],
            'outputs': outputs,
        }

    def print_table(self, table: MetricsTable):
        rich_table = Table(title='FDE (m)')
        for column in ('variant', 'task', 'mean FDE', 'std', 'episode mean', 'MPJPE', 'episodes', 'windows'):
            rich_table.add_column(column)
        for r in table.rows:
            rich_table.add_row(r.variant, r.task, f"{r.mean_fde:.4f}", f"{r.std_fde:.4f}",
                               f"{r.episode_mean_fde:.4f}", f"{r.mean_mpjpe:.4f}",
                               str(r.n_episodes), str(r.n_windows))
        self.console.print(rich_table)

    # ------------------------------------------------------------------
    # predict / retarget / verify
    # ------------------------------------------------------------------

    def predict(self, resolved: Dict[str, Any], out_dir: str, manifest_hash: str = '') -> Dict[str, Any]:
        window_path = Config.require(resolved, 'paths.window')
        ckpt_path = Config.require(resolved, 'paths.checkpoint')
        if not os.path.exists(window_path):
            raise DatasetError(f"window file not found: {window_path}")
        with open(window_path, 'r', encoding='utf-8') as f:
            try:
                doc = json.load(f)
            except ValueError as exc:
                raise DatasetError(f"{window_path} is not valid JSON: {exc}") from None
        window = scene_from_dict(doc)
        model = load_checkpoint(ckpt_path).build_model()
        forecast = predict_intent(model, window)
        path = os.path.join(out_dir, 'forecast.json')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({
                'forecast': forecast.frames.tolist(),
                'frame_hz': forecast.frame_hz,
                'variant': model.variant.name,
                'checkpoint': ckpt_path,
                'manifest_hash': manifest_hash,
            }, f, ensure_ascii=False, indent=2)
        self._log(f"✓ 預測已保存到: {path}", Fore.GREEN)
        return {'forecast_path': path, 'shape': list(forecast.frames.shape), 'variant': model.variant.name}

    def retarget(self, resolved: Dict[str, Any], out_dir: str, manifest_hash: str = '') -> Dict[str, Any]:
        ep = load_episode(Config.require(resolved, 'paths.episode'))
        human = ep.first_of_kind('human')
        if human is None:
            raise DatasetError(f"episode {ep.id} has no human agent")
        side = resolved['retarget']['side']
        robot = retarget_trajectory(human.trajectory(ep.frame_hz), side)
        out = Episode(
            id=f"{ep.id}_retarget",
            task=ep.task,
            frame_hz=ep.frame_hz,
            agents=[AgentTrack(human.name, human.layout, human.frames.copy()),
                    AgentTrack('robot', robot_layout(), robot.frames)],
            source=ep.source,
            metadata=dict(ep.metadata),
        ).validate()
        episode_path = save_episode(out, os.path.join(out_dir, f"{_sanitize(out.id)}.json"))
        paired = build_paired_set(out, side)
        paired_path = save_paired_set(paired, os.path.join(out_dir, 'paired_set.json'))
        self._log(f"✓ retarget 完成：{robot.T} 幀，側 {side}", Fore.GREEN)
        return {'episode_path': episode_path, 'paired_set_path': paired_path, 'n_pairs': len(paired)}

    def verify(self, resolved: Dict[str, Any], out_dir: str, manifest_hash: str = '') -> Dict[str, Any]:
        suite = VerificationSuite(self.model_config(resolved), resolved['seed'], resolved['verify']['n_windows'])

        def log(check: Dict[str, Any]):
            if self.verbose:
                mark = f"{Fore.GREEN}✓" if check['success'] else f"{Fore.RED}✗"
                print(f"  {mark} {check['name']}: {check['max_error']:.3e} (≤ {check['tolerance']:.0e}) {check['detail']}")

        checks = suite.run(log)
        summary = VerificationSuite.get_verification_summary(checks)
        result = {'checks': checks, 'summary': summary, 'success': summary['all_passed']}
        if not summary['all_passed']:
            result['error'] = f"verification failed: {', '.join(summary['failed'])}"
            result['error_kind'] = 'verify'
        return result

    # ------------------------------------------------------------------
    # 顯示與保存
    # ------------------------------------------------------------------

    def format_complete_results(self, result: Dict[str, Any]) -> str:
        """格式化完整結果用於顯示"""
        output = [
            f"{Fore.CYAN}{'=' * 60}",
            f"{Fore.CYAN}InteRACT 意圖預測系統 - {result.get('command', '')} 結果",
            f"{Fore.CYAN}{'=' * 60}",
        ]
        if not result['success']:
            output.append(f"{Fore.RED}失敗: {result['error']}")
            return '\n'.join(output)
        command = result['command']
        if command in ('pretrain', 'finetune'):
            fde = result['best_val_fde']
            output.append(f"{Fore.WHITE}變體: {result['variant']} ({result['num_parameters']} 參數)")
            output.append(f"{Fore.WHITE}最佳 epoch: {result['best_epoch']}"
                          + ('' if fde is None else f"，驗證 FDE {fde:.4f} m"))
            output.append(f"{Fore.WHITE}checkpoint: {result['checkpoint']}")
        elif command == 'eval':
            output.append(f"{Fore.WHITE}{result['n_windows']} 個視窗 ({result['split']})")
            for d in result['comparison']:
                if d['task'] == 'all':
                    output.append(f"  {d['candidate']} vs {d['reference']}: {d['improvement_pct']:+.1f}%")
        elif command == 'verify':
            summary = result['summary']
            output.append(f"{Fore.WHITE}通過 {summary['passed']}/{summary['total_checks']} 項檢查")
            output.append(f"{Fore.WHITE}max grad-check error: {summary['max_grad_error']:.3e}")
        elif command == 'predict':
            output.append(f"{Fore.WHITE}forecast {result['shape']} → {result['forecast_path']}")
        elif command == 'synth':
            output.append(f"{Fore.WHITE}資料集: {result['dataset']} {result['split_sizes']}")
        elif command == 'retarget':
            output.append(f"{Fore.WHITE}{result['episode_path']} ({result['n_pairs']} 對姿態)")
        output.append(f"{Fore.WHITE}處理時間: {result['processing_time']:.2f}秒")
        return '\n'.join(output)

    def save_results(self, results: Dict[str, Any], out_dir: Optional[str] = None) -> str:
        """保存結果到 results.json"""
        out_dir = out_dir or Config.results_dir()
        os.makedirs(out_dir, exist_ok=True)
        filepath = os.path.join(out_dir, 'results.json')
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(results, f, ensure_ascii=False, indent=2, default=_json_default)
        return filepath


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")
