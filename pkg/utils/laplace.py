"""
Laplace-transform views of a measure: alternating Taylor coefficients,
log-concavity measurements and their exact derivatives, Post inversion
and the log-linear g_t approximation
"""

import math
import logging
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import special, stats

from utils.error_handlers import ValidationError
from utils.halfmeasure import HalfLineMeasure, MomentSource, moments
from utils.seqcore import (LogConcaveSeq, Quadruple, binomial_tail_transform, enumerate_quadruples,
                           is_log_concave)

logger = logging.getLogger(__name__)

MEASUREMENT_REL_TOL = 1e-12
CONVEXITY_TOL = 1e-9
DEFAULT_T_GRID = tuple(np.geomspace(0.1, 10.0, 33))


def _require_positive_t(t: float):
    if not t > 0:
        raise ValidationError(f"t must be > 0, got {t}")


def taylor_coeffs(mu: MomentSource, t: float, N: int) -> LogConcaveSeq:
    """(a_t(0), ..., a_t(N)); uncertified"""
    _require_positive_t(t)
    if N < 0:
        raise ValidationError(f"N must be >= 0, got {N}")
    values = moments(mu, t, N)
    scale = float(np.max(np.abs(values))) if len(values) else 0.0
    negative = values < 0
    if np.any(negative):
        worst = float(values.min())
        if worst < -MEASUREMENT_REL_TOL * scale:
            raise ValidationError(f"Moment table of a signed source has negative entry {worst:.3e}")
        logger.warning(f"Clamping round-off negative moments (min {worst:.3e}) at t={t}")
        values = np.where(negative, 0.0, values)
    return LogConcaveSeq(tuple(values))


def _quad_logs(mu: MomentSource, t: float, n_max: int) -> Tuple[np.ndarray, np.ndarray]:
    return mu.log_moments(t, np.arange(n_max + 1))


def _measurement_from_logs(logs: np.ndarray, signs: np.ndarray, q: Quadruple) -> Tuple[float, float]:
    """(c_q, a_l * a_m) from a log-moment table; the difference is taken in log space"""
    if q.degenerate:
        lead = float(signs[q.l] * signs[q.m] * math.exp(logs[q.l] + logs[q.m])) if signs[q.l] * signs[q.m] else 0.0
        return 0.0, lead
    idx = (q.k, q.l, q.m, q.n)
    if all(signs[i] > 0 for i in idx):
        big = logs[q.l] + logs[q.m]
        small = logs[q.k] + logs[q.n]
        lead = math.exp(big)
        return -lead * math.expm1(small - big), lead
    vals = [float(signs[i] * math.exp(logs[i])) if signs[i] else 0.0 for i in idx]
    a_k, a_l, a_m, a_n = vals
    return a_l * a_m - a_k * a_n, a_l * a_m


def measurement(mu: MomentSource, q: Quadruple, t: float) -> float:
    """c_q(t) = a_t(l) a_t(m) - a_t(k) a_t(n)"""
    _require_positive_t(t)
    logs, signs = _quad_logs(mu, t, q.n)
    return _measurement_from_logs(logs, signs, q)[0]


@dataclass
class MeasurementFn:
    """t -> c_q(t) for a fixed source, with a guarded cache"""
    source: MomentSource
    q: Quadruple
    _cache: Dict[float, float] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __call__(self, t: float) -> float:
        with self._lock:
            if t in self._cache:
                return self._cache[t]
        value = measurement(self.source, self.q, t)
        with self._lock:
            self._cache[t] = value
        return value

    def curve(self, t_grid: Iterable[float]) -> pd.DataFrame:
        ts = [float(t) for t in t_grid]
        return pd.DataFrame({'t': ts, 'c': [self(t) for t in ts]})


def measurement_curve(mu: MomentSource, q: Quadruple, t_grid: Iterable[float]) -> pd.DataFrame:
    return MeasurementFn(mu, q).curve(t_grid)


def derivative_decomposition(q: Quadruple) -> List[Tuple[int, Quadruple]]:
    """-c_q'(t) as a non-negative integer combination of measurements"""
    k, l, m, n = q.as_tuple()
    if q.degenerate:
        return []
    if l < m:
        return [(k + 1, Quadruple(k + 1, l + 1, m, n)),
                (l - k, Quadruple(k, l + 1, m, n + 1)),
                (m + 1, Quadruple(k, l, m + 1, n + 1))]
    return [(k + 1, Quadruple(k + 1, l, m + 1, n)),
            (n + 1, Quadruple(k, l, m + 1, n + 1))]


@lru_cache(maxsize=4096)
def _expansion(quad: Tuple[int, int, int, int], j: int) -> Tuple[Tuple[Tuple[int, int, int, int], int], ...]:
    """(-1)^j c_q^(j) as {quadruple: integer coefficient}, degenerate terms dropped"""
    q = Quadruple(*quad)
    if j == 0:
        return () if q.degenerate else ((quad, 1),)
    total: Dict[Tuple[int, int, int, int], int] = {}
    for coef, child in derivative_decomposition(q):
        for grand, weight in _expansion(child.as_tuple(), j - 1):
            total[grand] = total.get(grand, 0) + coef * weight
    return tuple(sorted(total.items()))


def signed_derivative_terms(q: Quadruple, j: int) -> Dict[Quadruple, int]:
    if j < 0:
        raise ValidationError(f"Derivative order must be >= 0, got {j}")
    return {Quadruple(*quad): coef for quad, coef in _expansion(q.as_tuple(), j)}


def signed_derivative_with_scale(mu: MomentSource, q: Quadruple, t: float, j: int) -> Tuple[float, float]:
    """((-1)^j c_q^(j)(t), sum of coef * a_l a_m) from the decomposition recursion"""
    _require_positive_t(t)
    terms = signed_derivative_terms(q, j)
    if not terms:
        return 0.0, 0.0
    logs, signs = _quad_logs(mu, t, max(p.n for p in terms))
    value = 0.0
    scale = 0.0
    for p, coef in terms.items():
        c, lead = _measurement_from_logs(logs, signs, p)
        value += coef * c
        scale += coef * abs(lead)
    return value, scale


def signed_derivative(mu: MomentSource, q: Quadruple, t: float, j: int) -> float:
    """(-1)^j c_q^(j)(t); never numeric differentiation"""
    return signed_derivative_with_scale(mu, q, t, j)[0]


def _post_horizon(mu: MomentSource, t: float, floor: int = 0) -> int:
    """Index range carrying essentially all of the mass of n -> t^n a_t(n)"""
    if isinstance(mu, HalfLineMeasure):
        ends = [x for x, _ in mu.atoms] + [p.support_end() for p in mu.pieces]
        reach = max(ends, default=0.0)
    else:
        reach = 60.0
    lam = t * reach
    return max(floor, int(math.ceil(lam + 12.0 * math.sqrt(lam) + 40.0)))


def _post_logs(mu: MomentSource, t: float, n_max: int) -> Tuple[np.ndarray, np.ndarray]:
    logs, signs = _quad_logs(mu, t, n_max)
    return logs + np.arange(n_max + 1) * math.log(t), signs


def post_inversion_sum(mu: MomentSource, t: float, R: float) -> float:
    """sum_{n <= floor(Rt)} t^n a_t(n), accumulated with log-sum-exp"""
    _require_positive_t(t)
    if not R > 0:
        raise ValidationError(f"R must be > 0, got {R}")
    n_max = int(math.floor(R * t))
    logs, signs = _post_logs(mu, t, n_max)
    with np.errstate(divide='ignore', invalid='ignore'):
        total, sign = special.logsumexp(logs, b=signs, return_sign=True)
    return float(sign * math.exp(total)) if np.isfinite(total) else 0.0


def post_term_sup(mu: MomentSource, t: float, n_max: Optional[int] = None) -> float:
    """sup_n t^n a_t(n) over the post horizon"""
    _require_positive_t(t)
    n_max = _post_horizon(mu, t) if n_max is None else n_max
    logs, signs = _post_logs(mu, t, n_max)
    logs = np.where(signs > 0, logs, -np.inf)
    return float(math.exp(logs.max())) if np.isfinite(logs.max()) else 0.0


def poisson_limit(alpha: float, s: float) -> float:
    """P(N_s <= alpha s) for N_s ~ Poisson(s); tends to 1, 1/2, 0 as alpha >, =, < 1"""
    return float(stats.poisson.cdf(math.floor(alpha * s), s))


class GtDensity:
    """
    Log-linear interpolation of n -> t^{n+1} a_t(n) placed at x = n/t:
    g_t((n + lam)/t) = t * exp((1 - lam) L_n + lam L_{n+1}), L_n = log t^n a_t(n).
    """

    def __init__(self, mu: MomentSource, t: float, n_max: Optional[int] = None):
        _require_positive_t(t)
        self.t = float(t)
        self.n_max = _post_horizon(mu, t) if n_max is None else int(n_max)
        logs, signs = _post_logs(mu, t, self.n_max + 1)
        if np.any(signs < 0):
            raise ValidationError("g_t needs an unsigned source")
        self.logs = np.where(signs > 0, logs, -np.inf)
        if not np.any(np.isfinite(self.logs[1:])):
            raise ValidationError("g_t is undefined: the source puts no mass on (0, inf)")

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        pos = np.clip(x * self.t, 0.0, float(self.n_max))
        n = np.minimum(np.floor(pos).astype(int), self.n_max - 1)
        lam = pos - n
        with np.errstate(invalid='ignore'):
            left = np.where(lam < 1.0, (1.0 - lam) * self.logs[n], 0.0)
            right = np.where(lam > 0.0, lam * self.logs[n + 1], 0.0)
            out = self.t * np.exp(left + right)
        return np.where(x < 0, 0.0, out)

    def cell_integral(self, n: int, lam: float = 1.0) -> float:
        """int of g_t over x in [n/t, (n + lam)/t]"""
        lo, hi = self.logs[n], self.logs[n + 1]
        if lam <= 0 or not np.isfinite(lo):
            return 0.0
        if not np.isfinite(hi):
            return 0.0
        d = hi - lo
        if d == 0.0:
            return lam * math.exp(lo)
        return math.exp(lo) * math.expm1(lam * d) / d

    def interval_mass(self, R: float) -> float:
        """int_0^R g_t(x) dx: full cells, then the partial cell"""
        if not R > 0:
            raise ValidationError(f"R must be > 0, got {R}")
        pos = R * self.t
        full = int(math.floor(pos))
        if full >= self.n_max:
            raise ValidationError(f"R={R} lies beyond the g_t table (n_max={self.n_max})")
        total = sum(self.cell_integral(n) for n in range(full))
        return total + self.cell_integral(full, pos - full)

    def samples(self, x_grid: Iterable[float]) -> pd.DataFrame:
        xs = np.asarray(list(x_grid), dtype=np.float64)
        return pd.DataFrame({'x': xs, 'g': self(xs)})

    def certify_log_concave(self, per_cell: int = 4, rel_tol: float = 1e-10) -> Dict[str, Any]:
        """Equispaced samples of a log-concave function form a log-concave sequence"""
        xs = np.arange(self.n_max * per_cell) / (per_cell * self.t)
        report = is_log_concave(self(xs), rel_tol)
        report['t'] = self.t
        report['samples'] = len(xs)
        return report


def gt_interval_mass(mu: MomentSource, t: float, R: float) -> float:
    n_max = _post_horizon(mu, t, floor=int(math.ceil(R * t)) + 2)
    return GtDensity(mu, t, n_max).interval_mass(R)


def euler_maclaurin_check(mu: MomentSource, t: float, R: float) -> Dict[str, Any]:
    """|int_0^R g_t - post sum| against 3 sup_n t^n a_t(n)"""
    gt_mass = gt_interval_mass(mu, t, R)
    post = post_inversion_sum(mu, t, R)
    bound = 3.0 * post_term_sup(mu, t)
    gap = abs(gt_mass - post)
    return {'pass': gap <= bound, 't': t, 'R': R, 'gt_mass': gt_mass,
            'post_sum': post, 'gap': gap, 'bound': bound}


def root_convexity_check(mu: MomentSource, n: int, t_grid: Sequence[float] = DEFAULT_T_GRID,
                         tol: float = CONVEXITY_TOL) -> Dict[str, Any]:
    """
    h(t) = ((n-1)! a_t(n-1))^(-1/n) = |phi^(n-1)(t)|^(-1/n) must be convex;
    checked through scaled second divided differences on the grid.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    ts = np.asarray(sorted(float(t) for t in t_grid))
    if len(ts) < 3 or ts[0] <= 0:
        raise ValidationError("t_grid needs at least three positive points")
    log_a = np.empty(len(ts))
    for i, t in enumerate(ts):
        logs, signs = mu.log_moments(t, np.array([n - 1]))
        if signs[0] <= 0:
            raise ValidationError(f"a_t({n - 1}) vanishes at t={t}; the source is a multiple of delta_0")
        log_a[i] = logs[0]
    h = np.exp(-(special.gammaln(n) + log_a) / n)
    slopes = np.diff(h) / np.diff(ts)
    second = np.diff(slopes) * (ts[2:] - ts[:-2]) / 2.0
    limit = tol * float(np.max(np.abs(h)))
    worst = int(np.argmin(second))
    passed = bool(second[worst] >= -limit)
    report = {'pass': passed, 'n': n, 'min_second_difference': float(second[worst]),
              'tolerance': limit, 'violation_t': None if passed else float(ts[worst + 1])}
    return report


def propagation_check(mu: MomentSource, s: float, ratios: Sequence[float] = (0.125, 0.25, 0.5),
                      N: int = 50, rel_tol: float = MEASUREMENT_REL_TOL) -> Dict[str, Any]:
    """If (a_s(n)) is log-concave, so is (a_r(n)) for every r < s"""
    base = is_log_concave(taylor_coeffs(mu, s, N), rel_tol)
    report: Dict[str, Any] = {'pass': True, 's': s, 'base_pass': base['pass'], 'checked': []}
    if not base['pass']:
        return report
    for ratio in ratios:
        r = s * ratio
        res = is_log_concave(taylor_coeffs(mu, r, N), rel_tol)
        report['checked'].append({'t': r, 'pass': res['pass'], 'violation_index': res['violation_index']})
        if not res['pass']:
            report['pass'] = False
    return report


def taylor_shift_consistency(mu: MomentSource, s: float, t: float, N: int = 80,
                             compare_upto: Optional[int] = None, rel_tol: float = 1e-8) -> Dict[str, Any]:
    """
    (t-s)^k a_s(k) = sum_n binom(n, k) (t-s)^n a_t(n), truncated at N.

    Truncation drops the terms n > N, whose share of the k-th sum grows
    with k; only indices up to N // 2 are compared by default, where the
    dropped tail sits far below rel_tol for the library measures.
    """
    if not 0 < s < t:
        raise ValidationError(f"Taylor shift needs 0 < s < t, got s={s}, t={t}")
    h = t - s
    a_t = taylor_coeffs(mu, t, N).as_array()
    shifted = a_t * h ** np.arange(N + 1)
    tails = binomial_tail_transform(shifted).as_array()
    upto = N // 2 if compare_upto is None else compare_upto
    target = taylor_coeffs(mu, s, upto).as_array() * h ** np.arange(upto + 1)
    rel = np.abs(tails[:upto + 1] - target) / np.maximum(np.abs(target), 1e-300)
    worst = int(np.argmax(rel))
    return {'pass': bool(rel[worst] <= rel_tol), 'max_rel_error': float(rel[worst]),
            'worst_index': worst, 'compared': upto + 1, 'N': N}


def equivalence_check(mu: MomentSource, t: float, n_max: int = 20,
                      rel_tol: float = MEASUREMENT_REL_TOL) -> Dict[str, Any]:
    """Log-concavity of the Taylor table agrees with non-negativity of every measurement"""
    seq = taylor_coeffs(mu, t, n_max)
    seq_pass = is_log_concave(seq, rel_tol)['pass']
    logs, signs = _quad_logs(mu, t, n_max)
    first_negative = None
    for q in enumerate_quadruples(n_max):
        c, lead = _measurement_from_logs(logs, signs, q)
        if c < -rel_tol * abs(lead):
            first_negative = q.as_tuple()
            break
    measurements_pass = first_negative is None
    return {'pass': seq_pass == measurements_pass, 'sequence_pass': seq_pass,
            'measurements_pass': measurements_pass, 'first_negative': first_negative}
