import logging

from commands import CommandGroup, arg
from utils.discretepl import (CONCLUSION_REL_TOL, check_conclusion_counting, check_conclusion_poisson,
                              check_hypothesis, load_quad, pl_harness, stirling_limit_experiment)
from utils.error_handlers import ValidationError
from utils.input_validation import InputValidator

logger = logging.getLogger(__name__)

lattice_cmd = CommandGroup('lattice')


@lattice_cmd.command('discrete-pl', "discrete Prekopa-Leindler checks for a quadruple of functions",
                     arguments=(arg('--quad', default=None, help="JSON with maps f, g, h, k ('-inf' allowed)"),
                                arg('--mode', default='counting', choices=['counting', 'poisson']),
                                arg('--T', type=float, default=1.0),
                                arg('--limit', default=None, help="n values for the Poisson-to-counting limit"),
                                arg('--harness', type=int, default=0, help="randomized instances to run"),
                                arg('--width', type=int, default=15)),
                     tolerance=CONCLUSION_REL_TOL)
def discrete_pl(config):
    opts = config.options
    if not opts.get('quad') and not opts.get('harness'):
        raise ValidationError("Give --quad and/or --harness N")
    report = {'pass': True}
    if opts.get('quad'):
        q = load_quad(InputValidator.validate_input_file(opts['quad'], 'quad'))
        hypothesis = check_hypothesis(q)
        report['hypothesis'] = hypothesis
        if not hypothesis['pass']:
            report['pass'] = False
            return report
        if opts['mode'] == 'counting':
            report['conclusion'] = check_conclusion_counting(q, config.tolerance)
        else:
            T = InputValidator.validate_numeric_range(opts['T'], 0.0, 1e3, "T", inclusive_min=False)
            report['conclusion'] = check_conclusion_poisson(q, T, config.tolerance)
        report['pass'] = report['conclusion']['pass']
        if opts.get('limit'):
            ns = [InputValidator.validate_int_range(v, 1, 100_000, "n")
                  for v in InputValidator.parse_number_list(opts['limit'], "limit")]
            report['limit'] = stirling_limit_experiment(q, ns, config.tolerance)
            report['pass'] = report['pass'] and report['limit']['pass']
    if opts.get('harness'):
        if config.seed is None:
            raise ValidationError("--harness needs --seed")
        n = InputValidator.validate_int_range(opts['harness'], 1, 1_000_000, "harness")
        width = InputValidator.validate_int_range(opts['width'], 1, 200, "width")
        report['harness'] = pl_harness(n, config.seed, width=width)
        report['pass'] = report['pass'] and report['harness']['pass']
    return report
