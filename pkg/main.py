#!/usr/bin/env python3
"""
L² 直像度量与相对 Kähler–Ricci 流的数值实验室

读取实验配置，运行登记的场景，把每项检查写进 manifest，
并导出 CSV/JSON 产物与文本报告。
"""

import argparse
import json
import logging
import os
import sys
import warnings
from typing import Dict, List, Optional

import yaml

from exporter.export import Exporter
from models.config import SCENARIOS, ExperimentConfig
from models.errors import ConfigError
from models.manifest import CheckResult, RunManifest
from scenarios import get_scenario

logger = logging.getLogger('glab')

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def load_config(config_path: Optional[str]) -> Dict:
    """加载配置文件（.json 用 json 读取，其余按 YAML）"""
    if config_path is None:
        return {}
    if not os.path.exists(config_path):
        raise ConfigError(f"配置文件不存在: {config_path}")

    with open(config_path, 'r', encoding='utf-8') as f:
        if config_path.lower().endswith('.json'):
            try:
                config = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{config_path}:{e.lineno}:{e.colno}: {e.msg}")
            return config or {}
        try:
            config = yaml.safe_load(f)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            if mark is not None:
                raise ConfigError(f"{config_path}:{mark.line + 1}:{mark.column + 1}: "
                                  f"{getattr(e, 'problem', e)}")
            raise ConfigError(f"{config_path}: {e}")

    return config or {}


def parse_resolution(text: str) -> List[int]:
    """'64x128' → [64, 128]"""
    try:
        n_theta, n_phi = (int(part) for part in text.lower().split('x'))
    except ValueError:
        raise ConfigError(f"--resolution: 需要 NTxNP 形式，得到 {text!r}")
    return [n_theta, n_phi]


def apply_overrides(data: Dict, args: argparse.Namespace) -> Dict:
    """命令行参数覆盖配置字段"""
    data = dict(data)
    data['scenario'] = args.scenario
    if args.resolution:
        n_theta, n_phi = parse_resolution(args.resolution)
        data['grid'] = {**(data.get('grid') or {}), 'n_theta': n_theta, 'n_phi': n_phi}
    if args.dt is not None:
        data['flow'] = {**(data.get('flow') or {}), 'dt': args.dt}
    if args.seed is not None:
        data['seed'] = args.seed
    if args.out:
        data['output'] = {**(data.get('output') or {}), 'dir': args.out}
    return data


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """
    运行配置中的场景

    场景内部的异常记为失败的 '<scenario>.crashed' 检查，不会中断 manifest 的写出。

    Args:
        config: 实验配置

    Returns:
        已 finalize 的 RunManifest
    """
    scenario = get_scenario(config.scenario)(config)
    manifest = RunManifest(scenario=config.scenario, config=config.to_dict(),
                           registered=list(scenario.checks))
    os.makedirs(scenario.output_dir, exist_ok=True)

    logger.info("[%s] 开始运行", config.scenario)
    try:
        scenario.run(manifest)
    except Exception as e:
        logger.exception("[%s] 场景异常退出", config.scenario)
        manifest.record(CheckResult(f"{config.scenario}.crashed", False, float('nan'),
                                    float('nan'), f"{type(e).__name__}: {e}"))
    manifest.finalize()

    Exporter.export_all(manifest,
                        os.path.join(scenario.output_dir, 'manifest.json'),
                        os.path.join(scenario.output_dir, 'report.txt'))
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='glab', description=__doc__.strip().splitlines()[0])
    parser.add_argument('scenario', choices=SCENARIOS, help="要运行的场景")
    parser.add_argument('--config', help="配置文件路径（YAML 或 JSON）")
    parser.add_argument('--out', help="输出目录，覆盖 output.dir")
    parser.add_argument('--seed', type=int, help="随机扰动的种子")
    parser.add_argument('--resolution', help="纤维网格 NTxNP，例如 64x128")
    parser.add_argument('--dt', type=float, help="流的时间步长")
    parser.add_argument('--format', choices=('text', 'json'), default='text',
                        help="标准输出上的报告格式")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    args = build_parser().parse_args(argv)

    try:
        data = apply_overrides(load_config(args.config), args)
        config = ExperimentConfig.from_dict(data)
    except ConfigError as e:
        print(f"配置错误: {e}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logging(config.log_level)
    with warnings.catch_warnings():
        warnings.simplefilter('default')
        manifest = run_experiment(config)

    sys.stdout.write(Exporter.emit_report(manifest, args.format))
    return EXIT_OK if manifest.passed else EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
