"""
命令行入口

    python main.py fit      --config run.json
    python main.py simulate --config run.json [--prior-predictive] [--pairing on|off]
    python main.py sweep    --config run.json --axis r0 [--values 1.25 1.5 2.0]
    python main.py curves   --config run.json

退出码：0 成功，1 运行失败（包括文件不存在），2 用法或配置错误
"""
import argparse
import json
import sys
from typing import List, Optional

from dependencies import get_command_registry
from logger import logger
from modules.command_manager import USAGE_ERROR
from modules.kpi import SWEEP_AXES

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _on_off(value: str) -> bool:
    value = value.lower()
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("必须是 on 或 off")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON 运行配置文件")
    common.add_argument("--seed", type=int, help="主随机种子")
    common.add_argument("--workers", type=int, help="并行进程数")
    common.add_argument("--out-dir", dest="out_dir", help="输出目录")

    simulation = argparse.ArgumentParser(add_help=False)
    simulation.add_argument(
        "--pairing", type=_on_off, metavar="on|off",
        help="各策略共用同一组随机数（默认 on）"
    )
    simulation.add_argument(
        "--prior-predictive", dest="prior_predictive", action="store_true", default=None,
        help="从先验抽群体参数，不读取后验文件"
    )

    parser = argparse.ArgumentParser(
        prog="multiplex-sim",
        description="多重检测暴发发现策略模拟"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    subparsers.add_parser("fit", parents=[common], help="拟合病毒动力学模型")

    simulate = subparsers.add_parser(
        "simulate", parents=[common, simulation], help="评估检测策略"
    )
    simulate.add_argument(
        "--epidemic-curve", dest="epidemic_curve", action="store_true",
        help="同时输出累计感染曲线"
    )

    sweep = subparsers.add_parser("sweep", parents=[common, simulation], help="敏感性分析")
    sweep.add_argument("--axis", choices=list(SWEEP_AXES), help="扫描轴")
    sweep.add_argument("--values", type=float, nargs="+", help="扫描取值")

    curves = subparsers.add_parser("curves", parents=[common], help="输出曲线数据")
    curves.add_argument(
        "--prior-predictive", dest="prior_predictive", action="store_true", default=None,
        help="从先验抽群体参数，不读取后验文件"
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    params = {k: v for k, v in vars(args).items() if k != "command" and v is not None}

    result = get_command_registry().execute(args.command, params)
    if result.get("success"):
        print(json.dumps(result["result"], ensure_ascii=False, indent=2))
        return EXIT_OK

    print(f"错误: {result.get('error')}", file=sys.stderr)
    if result.get("error_kind") == USAGE_ERROR:
        return EXIT_USAGE
    return EXIT_FAILURE


if __name__ == "__main__":
    logger.info("multiplex-sim 启动")
    sys.exit(main())
