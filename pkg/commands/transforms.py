import logging

from commands import CommandGroup, arg
from utils.berwald import (CM_REL_TOL, DEFAULT_CM_GRID, LAPLACE_REL_TOL, batch_certify, bb_transform,
                           figure1_table, nu_density_frame, verify_laplace_identity)
from utils.error_handlers import ValidationError
from utils.halfmeasure import (LOG_CONCAVE_LIBRARY, NAMED_PATTERN, certify_log_concave_measure, load_measure,
                               total_variation)
from utils.helpers import write_csv, write_png
from utils.input_validation import InputValidator
from utils.memory_monitor import memory_monitor
from utils.seqcore import Quadruple

logger = logging.getLogger(__name__)

transforms_cmd = CommandGroup('transforms')

FIGURE1_TOL = 1e-8


@transforms_cmd.command('bb-transform', "Berwald-Borell transform of a log-concave measure",
                        arguments=(arg('--measure', required=True, help="named measure or JSON file"),
                                   arg('--quad', default='0,1,1,2', help="k,l,m,n"),
                                   arg('--t-grid', default='0.5,1,2,4', help="Laplace check points"),
                                   arg('--points', type=int, default=201, help="density samples for --csv/--png")),
                        tolerance=LAPLACE_REL_TOL)
def bb_transform_command(config):
    opts = config.options
    mu = load_measure(InputValidator.validate_measure_spec(opts['measure']))
    q = Quadruple.parse(opts['quad'])
    bb = bb_transform(mu, q)
    laplace = verify_laplace_identity(bb, InputValidator.parse_t_grid(opts['t_grid']), config.tolerance)
    if config.csv_path or config.png_path:
        frame = nu_density_frame(bb, InputValidator.validate_int_range(opts['points'], 2, 100_000, "points"))
        if config.csv_path:
            write_csv(frame, config.csv_path)
        if config.png_path:
            write_png(frame, config.png_path, title=f"nu for q={q.as_tuple()}")
    return {'pass': laplace['pass'] and bb.certified, 'q': q.as_tuple(),
            'nonnegativity': bb.nonnegativity, 'laplace': laplace,
            'total_variation': total_variation(bb.nu),
            'nu_log_concave': certify_log_concave_measure(bb.nu)['pass'],
            'nu': bb.nu.to_dict()}


@transforms_cmd.command('cm-certify', "complete-monotonicity certificates over measures x quadruples",
                        arguments=(arg('--measures', default=None,
                                       help="';'-separated named measures, default the log-concave library"),
                                   arg('--n-max', type=int, default=6),
                                   arg('--quads', default=None,
                                       help="';'-separated k,l,m,n list, default every quadruple up to --n-max"),
                                   arg('--t-grid', default=','.join(f"{t:g}" for t in DEFAULT_CM_GRID)),
                                   arg('--j-max', type=int, default=4)),
                        tolerance=CM_REL_TOL)
@memory_monitor()
def cm_certify(config):
    opts = config.options
    names = [s.strip() for s in opts['measures'].split(';')] if opts.get('measures') else list(LOG_CONCAVE_LIBRARY)
    for name in names:
        if not NAMED_PATTERN.match(name):
            raise ValidationError(f"cm-certify takes named measures only, got {name!r}")
        InputValidator.validate_measure_spec(name)
    n_max = InputValidator.validate_int_range(opts['n_max'], 2, 40, "n-max")
    j_max = InputValidator.validate_int_range(opts['j_max'], 0, 12, "j-max")
    quads = InputValidator.parse_quadruple_list(opts['quads']) if opts.get('quads') else None
    report = batch_certify(names, n_max, InputValidator.parse_t_grid(opts['t_grid']), j_max,
                           threads=config.threads, rel_tol=config.tolerance, quads=quads)
    failed = [r for r in report['rows'] if not r['pass']]
    if failed:
        report['first_failure'] = failed[0]
    return report


@transforms_cmd.command('figure1', "uniform[1,2], q=(0,1,1,2) transform density against its closed form",
                        arguments=(arg('--points', type=int, default=101),
                                   arg('--no-rational', action='store_true', help="skip the exact rational path")),
                        tolerance=FIGURE1_TOL)
def figure1(config):
    opts = config.options
    report = figure1_table(InputValidator.validate_int_range(opts['points'], 3, 100_001, "points"),
                           rational=not opts.get('no_rational'))
    table = report.pop('table')
    if config.csv_path:
        write_csv(table, config.csv_path)
    if config.png_path:
        write_png(table, config.png_path, golden='exact', title="uniform[1,2], q=(0,1,1,2)")
    golden_ok = abs(report['density_at_3'] - 1.0) <= config.tolerance
    report['pass'] = bool(report['pass'] and golden_ok and report['max_abs_error'] <= config.tolerance)
    return report
