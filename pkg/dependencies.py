from commands import CurvesCommand, FitCommand, SimulateCommand, SweepCommand
from db_setup import RunLedger
from modules.command_manager import CommandRegistry

# Global instances
_command_registry = None
_run_ledger = None


def get_run_ledger() -> RunLedger:
    global _run_ledger
    if _run_ledger is None:
        _run_ledger = RunLedger()
    return _run_ledger


def get_command_registry() -> CommandRegistry:
    global _command_registry
    if _command_registry is None:
        _command_registry = CommandRegistry(ledger=get_run_ledger())
        for command in (FitCommand(), SimulateCommand(), SweepCommand(), CurvesCommand()):
            _command_registry.register(command)
    return _command_registry
