import logging

from commands import CommandGroup, arg
from utils.discretepl import SWAP_TOL, coupling_check, coupling_noises
from utils.error_handlers import ValidationError
from utils.input_validation import InputValidator
from utils.memory_monitor import memory_monitor
from utils.poissonctl import (IntegerMap, compensated_check, load_payoff, load_policy, ode_policy_value,
                              supermartingale_check, truncation_level)

logger = logging.getLogger(__name__)

processes_cmd = CommandGroup('processes')

ODE_TOL = 1e-6


@processes_cmd.command('poisson-variational', "Monte Carlo functional of a policy against log int e^f d pi_T",
                       arguments=(arg('--payoff', required=True, help="JSON {\"0\": v, ..., \"beyond\": c}"),
                                  arg('--horizon', type=float, default=1.0),
                                  arg('--trajectories', type=int, default=10_000),
                                  arg('--policy', default='optimal', help="optimal | constant:<c> | file:<path>"),
                                  arg('--ode', action='store_true', help="also solve the backward ODE"),
                                  arg('--compensated', action='store_true',
                                      help="also check E[X_T - int lambda] = 0")),
                       stochastic=True, tolerance=ODE_TOL)
@memory_monitor()
def poisson_variational(config):
    opts = config.options
    f = load_payoff(InputValidator.validate_input_file(opts['payoff'], 'payoff'))
    T = InputValidator.validate_numeric_range(opts['horizon'], 0.0, 1e3, "horizon", inclusive_min=False)
    n_traj = InputValidator.validate_int_range(opts['trajectories'], 2, 10_000_000, "trajectories")
    spec = InputValidator.validate_policy_spec(opts['policy'])
    policy = load_policy(spec, f, T)
    report = supermartingale_check(policy, f, T, n_traj, config.seed, optimal=spec == 'optimal')
    if opts.get('ode'):
        value = ode_policy_value(policy, f, T, truncation_level(policy.bound, T))
        report['ode_value'] = value
        if spec == 'optimal':
            report['ode_gap'] = abs(value - report['lhs'])
            report['pass'] = report['pass'] and report['ode_gap'] <= config.tolerance
    if opts.get('compensated'):
        report['compensated'] = compensated_check(policy, T, n_traj, config.seed)
        report['pass'] = report['pass'] and report['compensated']['pass']
    report['policy'] = spec
    return report


@processes_cmd.command('coupling-check', "pathwise floor/ceil coupling of two intensities on shared noise",
                       arguments=(arg('--alpha', default='constant:2'),
                                  arg('--beta', default='constant:1'),
                                  arg('--payoff', default=None, help="payoff for optimal policies"),
                                  arg('--horizon', type=float, default=1.0),
                                  arg('--noises', type=int, default=1000)),
                       stochastic=True, tolerance=SWAP_TOL)
def coupling(config):
    opts = config.options
    T = InputValidator.validate_numeric_range(opts['horizon'], 0.0, 1e3, "horizon", inclusive_min=False)
    f = load_payoff(opts['payoff']) if opts.get('payoff') else IntegerMap.constant(0.0)
    specs = [InputValidator.validate_policy_spec(opts[name]) for name in ('alpha', 'beta')]
    if 'optimal' in specs and not opts.get('payoff'):
        raise ValidationError("optimal policies need --payoff")
    alpha, beta = (load_policy(spec, f, T) for spec in specs)
    n = InputValidator.validate_int_range(opts['noises'], 1, 1_000_000, "noises")
    noises = coupling_noises(T, max(alpha.bound, beta.bound), n, config.seed)
    report = coupling_check(alpha, beta, noises, tol=config.tolerance)
    report.update({'alpha': specs[0], 'beta': specs[1]})
    return report
