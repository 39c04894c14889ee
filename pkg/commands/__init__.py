"""
Sub-command groups. Each module defines one CommandGroup and registers its
sub-commands on it; app.create_app wires the groups into the parser.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

Argument = Tuple[Tuple[str, ...], Dict[str, Any]]


def arg(*flags: str, **kwargs) -> Argument:
    return flags, kwargs


@dataclass
class Command:
    name: str
    func: Callable[..., Dict[str, Any]]
    help: str
    arguments: Tuple[Argument, ...] = ()
    stochastic: bool = False
    tolerance: Optional[float] = None


@dataclass
class CommandGroup:
    name: str
    commands: List[Command] = field(default_factory=list)

    def command(self, name: str, help: str, arguments: Tuple[Argument, ...] = (),
                stochastic: bool = False, tolerance: Optional[float] = None):
        def decorator(func):
            self.commands.append(Command(name, func, help, tuple(arguments), stochastic, tolerance))
            return func
        return decorator
