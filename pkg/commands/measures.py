import logging
from pathlib import Path

import pandas as pd

from commands import CommandGroup, arg
from utils.error_handlers import ValidationError
from utils.halfmeasure import (LOG_CONCAVE_LIBRARY, NAMED_MEASURES, HalfLineMeasure, MomentTable,
                               certify_log_concave_measure, load_source)
from utils.helpers import write_csv
from utils.input_validation import InputValidator
from utils.laplace import taylor_coeffs
from utils.seqcore import DEFAULT_REL_TOL, is_log_concave, seq_from_json

logger = logging.getLogger(__name__)

measures_cmd = CommandGroup('measures')

MEASURE_ARG = arg('--measure', help="named measure such as 'uniform(1,2)' or a JSON measure file")
T_ARG = arg('--t', type=float, default=1.0, help="evaluation point t > 0")
N_ARG = arg('--N', type=int, default=50, help="largest Taylor index")


def _read_sequence(path):
    InputValidator.validate_input_file(path, 'sequence')
    if Path(path).suffix.lower() == '.json':
        with open(path, 'r', encoding='utf-8') as fh:
            return seq_from_json(fh.read()).values
    frame = pd.read_csv(path, header=None)
    return tuple(float(v) for v in frame.to_numpy().ravel())


@measures_cmd.command('check-logconcave', "certify a sequence or the Taylor table of a measure",
                      arguments=(MEASURE_ARG, T_ARG, N_ARG,
                                 arg('--sequence', help="comma-separated sequence values"),
                                 arg('--sequence-file', help="JSON array or one-column CSV")),
                      tolerance=DEFAULT_REL_TOL)
def check_logconcave(config):
    opts = config.options
    given = [name for name in ('measure', 'sequence', 'sequence_file') if opts.get(name)]
    if len(given) != 1:
        raise ValidationError("Give exactly one of --measure, --sequence, --sequence-file")
    if opts.get('sequence'):
        return {'source': 'sequence', **is_log_concave(InputValidator.parse_number_list(opts['sequence'], "sequence"),
                                                       config.tolerance)}
    if opts.get('sequence_file'):
        return {'source': opts['sequence_file'], **is_log_concave(_read_sequence(opts['sequence_file']),
                                                                  config.tolerance)}

    spec = InputValidator.validate_measure_spec(opts['measure'])
    t = InputValidator.validate_numeric_range(opts['t'], 0.0, 1e6, "t", inclusive_min=False)
    n = InputValidator.validate_int_range(opts['N'], 2, 2000, "N")
    src = load_source(spec)
    report = {'source': spec, 't': t, 'N': n, **is_log_concave(taylor_coeffs(src, t, n), config.tolerance)}
    if isinstance(src, HalfLineMeasure):
        # recorded alongside, the verdict is the Taylor table's
        cert = certify_log_concave_measure(src)
        report['measure_certificate'] = {'log_concave': cert['pass'], 'kind': cert['kind'],
                                         'reason': cert['reason']}
    return report


@measures_cmd.command('taylor', "dump the moment table a_t(0..N)", arguments=(MEASURE_ARG, T_ARG, N_ARG))
def taylor(config):
    opts = config.options
    spec = InputValidator.validate_measure_spec(opts.get('measure') or '')
    t = InputValidator.validate_numeric_range(opts['t'], 0.0, 1e6, "t")
    n = InputValidator.validate_int_range(opts['N'], 0, 2000, "N")
    table = MomentTable.build(load_source(spec), t, n)
    if config.csv_path:
        write_csv(pd.DataFrame({'n': range(n + 1), 'a_t': table.values}), config.csv_path)
    return {'pass': True, 'source': spec, 't': table.t, 'values': list(table.values)}


@measures_cmd.command('library', "list the named measures and the log-concave test library")
def library(config):
    return {'pass': True,
            'named': {name: arity for name, (_, arity) in sorted(NAMED_MEASURES.items())},
            'log_concave_library': list(LOG_CONCAVE_LIBRARY)}
