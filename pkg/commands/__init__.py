"""
子命令模块

每个子命令一个 Command 子类，由 dependencies.get_command_registry 注册
"""
from .fit_command import FitCommand
from .simulate_command import SimulateCommand
from .sweep_command import SweepCommand
from .curves_command import CurvesCommand

__all__ = [
    'FitCommand',
    'SimulateCommand',
    'SweepCommand',
    'CurvesCommand'
]
