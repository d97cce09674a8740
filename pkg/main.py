#!/usr/bin/env python3
"""
InteRACT 意圖預測系統 - 主程序
"""
import argparse
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from colorama import Fore, init

from config import Config
from interact.errors import ConfigError, InteractError
from system_coordinator import COMMANDS, PipelineCoordinator

# 初始化colorama
init(autoreset=True)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


@dataclass
class CommandSpec:
    """子命令、設定檔路徑，以及旗標轉成的 dotted-key=value 覆寫"""

    command: str
    config_path: Optional[str] = None
    overrides: List[str] = field(default_factory=list)
    verbose: bool = False


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='main.py', description='InteRACT 動作條件式人類意圖預測')
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    helps = {
        'synth': '產生程序化或合成配對的 episode 資料集',
        'pretrain': '在人-人資料上預訓練',
        'finetune': '在人-機器人資料上微調 (可選 --align)',
        'eval': '評估 checkpoint，輸出 FDE 表、時間序列與比較報告',
        'predict': '讀入一個視窗 JSON，輸出 15×27 的意圖預測',
        'retarget': '把人類 episode 轉為機器人軌跡與配對資料',
        'verify': '梯度檢查、DCT 往返與等變性自我驗證',
    }
    for name in COMMANDS:
        sub = subparsers.add_parser(name, help=helps[name])
        sub.add_argument('--config', '-c', type=str, help='JSON 設定檔')
        sub.add_argument('--out', '-o', type=str, help='輸出目錄 (paths.out_dir)')
        sub.add_argument('--verbose', '-v', action='store_true', help='顯示詳細處理過程')
        sub.add_argument('overrides', nargs='*', metavar='key=value', help='設定覆寫，例如 train.lambda_h=0.2')
        if name == 'finetune':
            sub.add_argument('--align', action='store_true', help='加入表徵對齊損失 (train.align)')
        elif name == 'eval':
            sub.add_argument('--dump-raw', action='store_true', help='輸出逐視窗 FDE (eval.dump_raw)')
            sub.add_argument('--plots', action='store_true', help='輸出 SVG 圖表 (eval.plots)')
        elif name == 'predict':
            sub.add_argument('--window', type=str, help='視窗 JSON (paths.window)')
            sub.add_argument('--checkpoint', type=str, help='checkpoint 檔 (paths.checkpoint)')
        elif name == 'retarget':
            sub.add_argument('--episode', type=str, help='人類 episode 檔 (paths.episode)')
        elif name == 'synth':
            sub.add_argument('--task', choices=['conflict_reach', 'handover', 'synthetic_pair'],
                             help='synth.task')
            sub.add_argument('--partner', choices=['human', 'robot'], help='synth.partner')
    return parser


def _flag_overrides(args: argparse.Namespace) -> List[str]:
    """每個旗標都對應到一個設定鍵"""
    overrides = []
    if args.out:
        overrides.append(f"paths.out_dir={args.out}")
    if getattr(args, 'align', False):
        overrides.append('train.align=true')
    if getattr(args, 'dump_raw', False):
        overrides.append('eval.dump_raw=true')
    if getattr(args, 'plots', False):
        overrides.append('eval.plots=true')
    for flag, key in (('window', 'paths.window'), ('checkpoint', 'paths.checkpoint'),
                      ('episode', 'paths.episode'), ('task', 'synth.task'), ('partner', 'synth.partner')):
        value = getattr(args, flag, None)
        if value:
            overrides.append(f"{key}={value}")
    return overrides


def parse_and_resolve(argv: Sequence[str]) -> Tuple[CommandSpec, Dict[str, Any]]:
    """解析命令列並合併 預設值 ← 設定檔 ← 旗標 ← key=value"""
    args = build_parser().parse_args(list(argv))
    spec = CommandSpec(
        command=args.command,
        config_path=args.config,
        overrides=_flag_overrides(args) + list(args.overrides),
        verbose=args.verbose,
    )
    return spec, Config.resolve(spec.config_path, spec.overrides)


def execute(spec: CommandSpec, resolved: Optional[Dict[str, Any]] = None) -> int:
    if resolved is None:
        resolved = Config.resolve(spec.config_path, spec.overrides)
    system = PipelineCoordinator(verbose=spec.verbose)
    result = system.run(spec.command, resolved)
    if not result['success']:
        print(f"error[{result.get('error_kind', 'runtime')}]: {result['error']}", file=sys.stderr)
        return result['exit_code']
    print(system.format_complete_results(result))
    print(f"\n{Fore.GREEN}結果已保存到: {result['results_path']}")
    return result['exit_code']


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函數"""
    argv = sys.argv[1:] if argv is None else argv
    try:
        spec, resolved = parse_and_resolve(argv)
        return execute(spec, resolved)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InteractError as exc:
        print(f"error[{exc.kind}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print(f"\n{Fore.YELLOW}用戶中斷程序")
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
