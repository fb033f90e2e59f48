"""
命令行接口入口
"""
import sys
import json
import argparse
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from loguru import logger

from .harness import (
    SWEEPABLE_AXES,
    load_scenario,
    parse_axis_values,
    report,
    run_experiment,
    run_family,
    sweep,
)
from .utils import RunFailure, ScenarioError, load_config, setup_logger

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUN_FAILURE = 2


def _records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    """DataFrame -> JSON 可序列化的记录（NaN 转为 null）"""
    return frame.astype(object).where(pd.notna(frame), None).to_dict(orient='records')


def _print_json(payload: Dict[str, Any]):
    print(json.dumps(payload, ensure_ascii=False, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='python -m src',
        description='MANET 转发方案对比仿真（DAF / 洪泛 / 自学习 / IP-AODV）',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  # 运行一个场景（默认 10 次）
  python -m src run --scenario config/scenarios/stationary_anchor.json --out results/anchor

  # 速度扫描，可重复 --axis/--values 做多轴笛卡尔积
  python -m src sweep --scenario config/scenarios/mobility.json \\
      --axis speed --values 0,2,4,8 --axis scheme --values daf,aodv --out results/mobility

  # 运行 config.yaml 中定义的实验组
  python -m src family --name mobility --out results/mobility

  # 汇总目录下所有结果
  python -m src report --in results
        """
    )
    parser.add_argument('--config', help='配置文件路径', default=None)
    subparsers = parser.add_subparsers(dest='command', required=True)

    run_parser = subparsers.add_parser('run', help='按场景执行多次运行并聚合')
    run_parser.add_argument('--scenario', required=True, help='场景文件（JSON）')
    run_parser.add_argument('--seed', type=int, default=None, help='覆盖 master_seed')
    run_parser.add_argument('--runs', type=int, default=None, help='覆盖运行次数')
    run_parser.add_argument('--out', default=None, help='输出目录（默认 output.dir）')
    run_parser.add_argument('--workers', type=int, default=None, help='并行进程数')

    sweep_parser = subparsers.add_parser('sweep', help='参数扫描')
    sweep_parser.add_argument('--scenario', required=True, help='基础场景文件')
    sweep_parser.add_argument('--axis', action='append', required=True,
                              help=f"扫描轴，可重复；可选: {', '.join(SWEEPABLE_AXES)}, cs, rtx, rate")
    sweep_parser.add_argument('--values', action='append', required=True, help='逗号分隔的取值，与 --axis 一一对应')
    sweep_parser.add_argument('--out', default=None, help='输出目录')
    sweep_parser.add_argument('--workers', type=int, default=None, help='并行进程数')

    report_parser = subparsers.add_parser('report', help='汇总结果目录')
    report_parser.add_argument('--in', dest='in_dir', required=True, help='结果目录')

    family_parser = subparsers.add_parser('family', help='运行预定义的实验组')
    family_parser.add_argument('--name', required=True, help='config.yaml 中 families 下的名字')
    family_parser.add_argument('--out', default=None, help='输出目录')
    family_parser.add_argument('--workers', type=int, default=None, help='并行进程数')

    return parser


def _output_dir(args: argparse.Namespace, config: Dict, default_leaf: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(config.get('output', {}).get('dir', 'results')) / default_leaf


def _command_run(args: argparse.Namespace, config: Dict) -> Dict[str, Any]:
    scenario = load_scenario(args.scenario)
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides['master_seed'] = args.seed
    if args.runs is not None:
        overrides['runs'] = args.runs
    if overrides:
        scenario = scenario.with_values(overrides)

    out_dir = _output_dir(args, config, Path(args.scenario).stem)
    result = run_experiment(scenario, config, out_dir=out_dir, workers=args.workers)
    return {
        'command': 'run',
        'out': str(out_dir),
        'aggregate': _records(result.aggregate)[0],
    }


def _command_sweep(args: argparse.Namespace, config: Dict) -> Dict[str, Any]:
    if len(args.axis) != len(args.values):
        raise ScenarioError(f"{len(args.axis)} --axis flags but {len(args.values)} --values flags")
    base = load_scenario(args.scenario)
    axes = [(axis, parse_axis_values(axis, raw)) for axis, raw in zip(args.axis, args.values)]

    out_dir = _output_dir(args, config, f"sweep_{Path(args.scenario).stem}")
    table = sweep(base, axes, config, out_dir=out_dir, workers=args.workers)
    return {'command': 'sweep', 'out': str(out_dir), 'rows': len(table)}


def _command_report(args: argparse.Namespace, config: Dict) -> Dict[str, Any]:
    table = report(args.in_dir)
    # 表格打印到 stderr，stdout 保持为 JSON
    print(table.to_string(index=False), file=sys.stderr)
    return {'command': 'report', 'report': str(Path(args.in_dir) / 'report.csv'), 'rows': len(table)}


def _command_family(args: argparse.Namespace, config: Dict) -> Dict[str, Any]:
    out_dir = _output_dir(args, config, args.name)
    table = run_family(args.name, config, out_dir=out_dir, workers=args.workers)
    return {'command': 'family', 'name': args.name, 'out': str(out_dir), 'rows': len(table)}


COMMANDS = {
    'run': _command_run,
    'sweep': _command_sweep,
    'report': _command_report,
    'family': _command_family,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    命令行入口

    Returns:
        退出码：0 成功，1 配置错误，2 运行失败
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        setup_logger(config)
        result = COMMANDS[args.command](args, config)
    except (ScenarioError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        _print_json({'error': str(e)})
        return EXIT_CONFIG_ERROR
    except RunFailure as e:
        _print_json({'error': str(e), 'run_index': e.run_index})
        return EXIT_RUN_FAILURE
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        _print_json({'error': f'Unexpected error: {str(e)}'})
        return EXIT_RUN_FAILURE

    _print_json(result)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
