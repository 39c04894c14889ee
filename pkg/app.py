import os
import sys
import logging
import argparse
from dataclasses import asdict, dataclass, field
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, Mapping, Optional, Sequence

from utils.error_handlers import EXIT_INPUT, EXIT_OK, LabError, ValidationError, handle_errors, require
from utils.helpers import config_hash, write_report
from utils.input_validation import InputValidator
from utils.timeout_control import ProcessTimer, get_timeout_for_operation, run_budget

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'

DEFAULTS = {
    'threads': 1,
    'log_level': 'INFO',
    'report': 'report.json',
    'log_max_bytes': 10240,
    'log_backups': 10,
}

ENV_THREADS = 'LCLAB_THREADS'
ENV_LOG_LEVEL = 'LCLAB_LOG_LEVEL'
ENV_LEDGER = 'LCLAB_LEDGER_URL'

GLOBAL_KEYS = ('command', 'threads', 'seed', 'tolerance', 'report', 'csv', 'png',
               'ledger', 'log_level', 'log_file')


def setup_logging(level: str = DEFAULTS['log_level'], log_file: Optional[str] = None):
    """Root logger: console always, rotating file when requested"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        file_handler = RotatingFileHandler(log_file, maxBytes=DEFAULTS['log_max_bytes'],
                                           backupCount=DEFAULTS['log_backups'])
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(file_handler)
    logging.getLogger('matplotlib').setLevel(logging.WARNING)


@dataclass(frozen=True)
class RunConfig:
    command: str
    options: Dict[str, Any] = field(default_factory=dict)
    threads: int = DEFAULTS['threads']
    seed: Optional[int] = None
    tolerance: Optional[float] = None
    report_path: str = DEFAULTS['report']
    csv_path: Optional[str] = None
    png_path: Optional[str] = None
    ledger_url: Optional[str] = None
    log_level: str = DEFAULTS['log_level']
    log_file: Optional[str] = None

    def as_dict(self) -> Dict[str, Any]:
        """Everything that determines the report; logging and output paths excluded"""
        data = asdict(self)
        for key in ('report_path', 'csv_path', 'png_path', 'ledger_url', 'log_level', 'log_file', 'threads'):
            data.pop(key)
        return data


class LabApp:
    """Registry of command groups and the argument parser built from them"""

    def __init__(self, name: str = 'logconcave-lab'):
        self.name = name
        self.groups = []
        self.commands = {}

    def register_group(self, group):
        for command in group.commands:
            if command.name in self.commands:
                raise ValueError(f"Duplicate command {command.name}")
            self.commands[command.name] = command
        self.groups.append(group)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=self.name, description="Log-concavity certification lab")
        common = argparse.ArgumentParser(add_help=False)
        for parent, defaults in ((parser, True), (common, False)):
            def default(value):
                return value if defaults else argparse.SUPPRESS
            parent.add_argument('--threads', type=int, default=default(DEFAULTS['threads']))
            parent.add_argument('--seed', type=int, default=default(None))
            parent.add_argument('--tolerance', type=float, default=default(None))
            parent.add_argument('--report', default=default(DEFAULTS['report']), help="JSON report path")
            parent.add_argument('--csv', default=default(None), help="CSV output path")
            parent.add_argument('--png', default=default(None), help="PNG figure path")
            parent.add_argument('--ledger', default=default(None), help="SQLAlchemy URL of the results ledger")
            parent.add_argument('--log-level', default=default(None))
            parent.add_argument('--log-file', default=default(None))
        sub = parser.add_subparsers(dest='command', required=True)
        for name in sorted(self.commands):
            command = self.commands[name]
            cmd_parser = sub.add_parser(name, help=command.help, parents=[common])
            for flags, kwargs in command.arguments:
                cmd_parser.add_argument(*flags, **kwargs)
        return parser


def create_app() -> LabApp:
    from commands.inversion import inversion_cmd
    from commands.lattice import lattice_cmd
    from commands.measures import measures_cmd
    from commands.processes import processes_cmd
    from commands.transforms import transforms_cmd

    lab = LabApp()
    for group in (measures_cmd, transforms_cmd, inversion_cmd, processes_cmd, lattice_cmd):
        lab.register_group(group)
    return lab


app = create_app()


def build_config(argv: Optional[Sequence[str]] = None, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Parse argv, apply LCLAB_* overrides and validate; raises ValidationError"""
    env = os.environ if env is None else env
    try:
        args = vars(app.build_parser().parse_args(argv))
    except SystemExit as e:
        if e.code == 0:
            raise
        raise ValidationError(f"Invalid command line: {' '.join(argv or sys.argv[1:])}")
    command = app.commands[args['command']]

    threads = args['threads']
    if env.get(ENV_THREADS):
        threads = env[ENV_THREADS]
    threads = InputValidator.validate_int_range(threads, 1, 512, "threads")
    seed = InputValidator.validate_seed(args['seed']) if args['seed'] is not None else None
    if command.stochastic and seed is None:
        raise ValidationError(f"{command.name} is stochastic and needs --seed")
    tolerance = InputValidator.validate_tolerance(args['tolerance'])
    if tolerance is None:
        tolerance = command.tolerance
    log_level = args['log_level'] or env.get(ENV_LOG_LEVEL) or DEFAULTS['log_level']
    InputValidator.validate_choice(log_level.upper(), ['DEBUG', 'INFO', 'WARNING', 'ERROR'], "log-level")

    options = {k: v for k, v in args.items() if k not in GLOBAL_KEYS}
    return RunConfig(command=command.name, options=options, threads=threads, seed=seed,
                     tolerance=tolerance, report_path=args['report'], csv_path=args['csv'],
                     png_path=args['png'], ledger_url=args['ledger'] or env.get(ENV_LEDGER),
                     log_level=log_level.upper(), log_file=args['log_file'])


def _first_failure(report: Dict[str, Any]) -> str:
    for key in ('first_failure', 'first_mismatch', 'first_violation', 'violation', 'error'):
        if report.get(key):
            return f"{key}: {report[key]}"
    failing = [k for k, v in sorted(report.items()) if isinstance(v, dict) and v.get('pass') is False]
    return f"failed checks: {failing}" if failing else "report did not pass"


@handle_errors
def _execute(command, config: RunConfig, report: Dict[str, Any]) -> int:
    try:
        report.update(command.func(config))
    except (LabError, FileNotFoundError, ValueError) as e:
        report['error'] = f"{type(e).__name__}: {e}"
        raise
    require(report.get('pass') is True, _first_failure(report))
    return EXIT_OK


def run(config: RunConfig) -> int:
    """Execute one sub-command; the JSON report is written whatever the outcome"""
    command = app.commands[config.command]
    report: Dict[str, Any] = {'command': config.command, 'config': config.as_dict(),
                              'tolerance': config.tolerance, 'pass': False}
    timer = ProcessTimer(config.command, get_timeout_for_operation(config.command))
    timer.start()
    with run_budget(timer):
        status = _execute(command, config, report)
    elapsed = timer.stop()
    report['exit_status'] = status
    write_report(report, config.report_path)
    logger.info(f"{config.command} exited with status {status}; report at {config.report_path}")
    if config.ledger_url:
        from models import record_run
        record_run(config.ledger_url, config.command, config_hash(config.as_dict()), report, status,
                   seed=config.seed, processing_time=elapsed)
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config = build_config(argv)
    except ValidationError as e:
        setup_logging()
        logger.error(f"Input error: {e}")
        return EXIT_INPUT
    setup_logging(config.log_level, config.log_file)
    return run(config)
