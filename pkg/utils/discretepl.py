"""
Discrete Prekopa-Leindler inequality on the integers: hypothesis check,
counting and Poisson conclusions, the floor/ceil coupling of counting
processes and the Poisson-to-counting limit.
"""

import json
import math
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from utils.error_handlers import PreconditionError, ValidationError
from utils.timeout_control import check_budget
from utils.poissonctl import (GL_NODES, IntegerMap, IntensityPolicy, PlanarNoise, cost,
                              sample_noise, semigroup_apply, substream)

logger = logging.getLogger(__name__)

NEG_INF = -math.inf
NEG_INF_LITERAL = '-inf'
HYPOTHESIS_TOL = 1e-12
CONCLUSION_REL_TOL = 1e-12
SWAP_TOL = 1e-12
MAX_REPORTED_VIOLATIONS = 20


def _extended(value) -> float:
    if isinstance(value, str):
        if value.strip() == NEG_INF_LITERAL:
            return NEG_INF
        raise ValidationError(f"Unknown extended-real literal {value!r}, only '{NEG_INF_LITERAL}' is allowed")
    value = float(value)
    if math.isnan(value) or value == math.inf:
        raise ValidationError(f"Extended reals allow -inf only, got {value}")
    return value


@dataclass(frozen=True)
class ExtendedMap:
    """Map from the integer window [lo, lo + len(values) - 1] to [-inf, inf); -inf off-window"""
    lo: int
    values: Tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ValidationError("ExtendedMap needs a non-empty window")
        object.__setattr__(self, 'lo', int(self.lo))
        object.__setattr__(self, 'values', tuple(_extended(v) for v in self.values))

    @property
    def hi(self) -> int:
        return self.lo + len(self.values) - 1

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, self.array[np.clip(x - self.lo, 0, len(self.values) - 1)], NEG_INF)

    def log_sum(self) -> float:
        """log sum_x e^{v(x)}"""
        finite = self.array[np.isfinite(self.array)]
        return float(logsumexp(finite)) if finite.size else NEG_INF

    @classmethod
    def constant(cls, lo: int, hi: int, c: float) -> 'ExtendedMap':
        return cls(lo, (c,) * (hi - lo + 1))

    @classmethod
    def from_function(cls, lo: int, hi: int, fn: Callable[[int], float]) -> 'ExtendedMap':
        return cls(lo, tuple(fn(x) for x in range(lo, hi + 1)))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExtendedMap':
        try:
            keyed = {int(k): _extended(v) for k, v in data.items()}
        except (TypeError, ValueError) as e:
            raise ValidationError(f"Extended map needs integer keys: {e}")
        if not keyed:
            raise ValidationError("Extended map is empty")
        lo, hi = min(keyed), max(keyed)
        return cls(lo, tuple(keyed.get(x, NEG_INF) for x in range(lo, hi + 1)))

    def to_dict(self) -> Dict[str, Any]:
        return {str(self.lo + i): (NEG_INF_LITERAL if v == NEG_INF else v) for i, v in enumerate(self.values)}


@dataclass(frozen=True)
class QuadrupleOfFunctions:
    f: ExtendedMap
    g: ExtendedMap
    h: ExtendedMap
    k: ExtendedMap

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'QuadrupleOfFunctions':
        missing = [name for name in 'fghk' if name not in data]
        if missing:
            raise ValidationError(f"Quadruple of functions is missing {missing}")
        return cls(*(ExtendedMap.from_dict(data[name]) for name in 'fghk'))

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name).to_dict() for name in 'fghk'}


def load_quad(path: str) -> QuadrupleOfFunctions:
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            return QuadrupleOfFunctions.from_dict(json.load(fh))
    except json.JSONDecodeError as e:
        raise ValidationError(f"Quad file {path} is not valid JSON: {e}")


def check_hypothesis(q: QuadrupleOfFunctions, tol: float = HYPOTHESIS_TOL) -> Dict[str, Any]:
    """f(x) + g(y) <= h(floor((x+y)/2)) + k(ceil((x+y)/2)) for every window pair"""
    xs = np.arange(q.f.lo, q.f.hi + 1)[:, None]
    ys = np.arange(q.g.lo, q.g.hi + 1)[None, :]
    s = xs + ys
    lhs = q.f.array[:, None] + q.g.array[None, :]
    rhs = q.h(np.floor_divide(s, 2)) + q.k(-np.floor_divide(-s, 2))
    with np.errstate(invalid='ignore'):
        bad = np.isfinite(lhs) & ~(lhs <= rhs + tol * (1.0 + np.abs(np.where(np.isfinite(rhs), rhs, 0.0))))
    rows, cols = np.nonzero(bad)
    violations = [{'x': int(xs[i, 0]), 'y': int(ys[0, j]), 'lhs': float(lhs[i, j]),
                   'rhs': float(rhs[i, j])} for i, j in zip(rows, cols)]
    return {'pass': not violations, 'violation': violations[0] if violations else None,
            'violation_count': len(violations), 'violations': violations[:MAX_REPORTED_VIOLATIONS]}


def _sum_profile(f: ExtendedMap, g: ExtendedMap) -> Tuple[int, np.ndarray]:
    """m(s) = max over x + y = s of f(x) + g(y), for s from f.lo + g.lo"""
    width = len(f.values) + len(g.values) - 1
    m = np.full(width, NEG_INF)
    garr = g.array
    for i, fx in enumerate(f.values):
        m[i:i + len(garr)] = np.maximum(m[i:i + len(garr)], fx + garr)
    return f.lo + g.lo, m


def tight_hk(f: ExtendedMap, g: ExtendedMap) -> Tuple[ExtendedMap, ExtendedMap]:
    """h = k = max(m(2z-1), m(2z), m(2z+1)) / 2, the smallest symmetric feasible pair"""
    s_lo, m = _sum_profile(f, g)
    s_hi = s_lo + len(m) - 1
    z_lo, z_hi = s_lo // 2, -((-s_hi) // 2)

    def m_at(s: int) -> float:
        return m[s - s_lo] if s_lo <= s <= s_hi else NEG_INF

    half = tuple(0.5 * max(m_at(2 * z - 1), m_at(2 * z), m_at(2 * z + 1)) for z in range(z_lo, z_hi + 1))
    hk = ExtendedMap(z_lo, half)
    return hk, hk


def with_tight_hk(f: ExtendedMap, g: ExtendedMap) -> QuadrupleOfFunctions:
    h, k = tight_hk(f, g)
    return QuadrupleOfFunctions(f, g, h, k)


def _require_hypothesis(q: QuadrupleOfFunctions):
    report = check_hypothesis(q)
    if not report['pass']:
        raise PreconditionError(f"Hypothesis fails at {report['violation']}")


def _compare(log_lhs: float, log_rhs: float, rel_tol: float) -> Dict[str, Any]:
    passed = log_lhs == NEG_INF or log_lhs <= log_rhs + math.log1p(rel_tol)
    return {'lhs': math.exp(log_lhs), 'rhs': math.exp(log_rhs), 'log_lhs': log_lhs,
            'log_rhs': log_rhs, 'pass': bool(passed)}


def check_conclusion_counting(q: QuadrupleOfFunctions, rel_tol: float = CONCLUSION_REL_TOL) -> Dict[str, Any]:
    """(sum e^f)(sum e^g) <= (sum e^h)(sum e^k)"""
    _require_hypothesis(q)
    return _compare(q.f.log_sum() + q.g.log_sum(), q.h.log_sum() + q.k.log_sum(), rel_tol)


def log_poisson_mass(v: ExtendedMap, T: float) -> float:
    """log sum_{x >= 0} e^{v(x)} pi_T(x); negative integers carry no Poisson mass"""
    upper = v.hi
    if upper < 0:
        return NEG_INF
    vals = v(np.arange(upper + 1))
    finite = np.isfinite(vals)
    if not finite.any():
        return NEG_INF
    top = float(vals[finite].max())
    weights = IntegerMap(tuple(np.where(finite, np.exp(vals - top), 0.0)), 0.0)
    mass = float(semigroup_apply(weights, T, 0))
    return top + math.log(mass) if mass > 0 else NEG_INF


def check_conclusion_poisson(q: QuadrupleOfFunctions, T: float,
                             rel_tol: float = CONCLUSION_REL_TOL) -> Dict[str, Any]:
    """(int e^f d pi_T)(int e^g d pi_T) <= (int e^h d pi_T)(int e^k d pi_T)"""
    if not T > 0:
        raise ValidationError(f"Poisson parameter must be > 0, got {T}")
    _require_hypothesis(q)
    lf, lg, lh, lk = (log_poisson_mass(getattr(q, name), T) for name in 'fghk')
    report = _compare(lf + lg, lh + lk, rel_tol)
    report['T'] = T
    return report


# ---------------------------------------------------------------------------
# floor/ceil coupling
# ---------------------------------------------------------------------------

def swap_rates(a, b, chi) -> Tuple[np.ndarray, np.ndarray]:
    """lambda = min chi + max (1 - chi), mu = max chi + min (1 - chi)"""
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return np.where(chi, lo, hi), np.where(chi, hi, lo)


def rate_swap_check(alpha: IntensityPolicy, beta: IntensityPolicy, phi: Callable[[np.ndarray], np.ndarray],
                    t_nodes, xa=0, xb=0, tol: float = SWAP_TOL) -> Dict[str, Any]:
    """phi(alpha) + phi(beta) = phi(lambda) + phi(mu) at the given nodes and states"""
    t_nodes = np.asarray(t_nodes, dtype=np.float64)
    xa = np.broadcast_to(np.asarray(xa, dtype=np.int64), t_nodes.shape)
    xb = np.broadcast_to(np.asarray(xb, dtype=np.int64), t_nodes.shape)
    a, b = alpha.rate(t_nodes, xa), beta.rate(t_nodes, xb)
    lam, mu = swap_rates(a, b, (xa + xb) % 2 == 0)
    left, right = phi(a) + phi(b), phi(lam) + phi(mu)
    err = float(np.max(np.abs(left - right) / (1.0 + np.abs(left)))) if t_nodes.size else 0.0
    return {'pass': err <= tol, 'max_rel_error': err}


def _couple_path(alpha: IntensityPolicy, beta: IntensityPolicy, noise: PlanarNoise) -> Dict[str, Any]:
    """X^alpha, X^beta, X^lambda, X^mu on one noise; first floor/ceil discrepancy if any"""
    xa = xb = xl = xm = 0
    jumps_a, jumps_b = [], []
    for t, u in zip(noise.times, noise.heights):
        a, b = float(alpha.rate(t, xa)), float(beta.rate(t, xb))
        lam, mu = swap_rates(a, b, (xa + xb) % 2 == 0)
        if u <= a:
            xa += 1
            jumps_a.append(t)
        if u <= b:
            xb += 1
            jumps_b.append(t)
        xl += int(u <= lam)
        xm += int(u <= mu)
        total = xa + xb
        if xl != total // 2 or xm != -((-total) // 2):
            return {'mismatch': True, 'time': float(t), 'X_alpha': xa, 'X_beta': xb, 'X_lambda': xl, 'X_mu': xm}
    return {'mismatch': False, 'jumps_alpha': np.asarray(jumps_a), 'jumps_beta': np.asarray(jumps_b)}


def coupling_check(alpha: IntensityPolicy, beta: IntensityPolicy, noises: Sequence[PlanarNoise],
                   phis: Optional[Dict[str, Callable]] = None, tol: float = SWAP_TOL) -> Dict[str, Any]:
    """
    Pathwise floor/ceil identities X^lambda = floor((X^alpha + X^beta)/2),
    X^mu = ceil(...) at every atom of every noise, plus the rate-swap identity
    at Gauss-Legendre nodes along each path.
    """
    phis = phis or {'entropy': cost, 'square': np.square}
    gx, _ = np.polynomial.legendre.leggauss(GL_NODES)
    mismatches = []
    swap_worst = 0.0
    for noise in noises:
        check_budget()
        if max(alpha.bound, beta.bound) > noise.cap * (1 + 1e-12):
            raise PreconditionError(f"Policy bounds exceed the shared noise cap {noise.cap}")
        result = _couple_path(alpha, beta, noise)
        if result['mismatch']:
            mismatches.append({'index': noise.index, **{k: v for k, v in result.items() if k != 'mismatch'}})
            continue
        nodes = noise.T * (gx + 1.0) / 2.0
        xa = np.searchsorted(result['jumps_alpha'], nodes, side='left')
        xb = np.searchsorted(result['jumps_beta'], nodes, side='left')
        for phi in phis.values():
            swap = rate_swap_check(alpha, beta, phi, nodes, xa, xb)
            swap_worst = max(swap_worst, swap['max_rel_error'])
    if mismatches:
        logger.error(f"Coupling mismatch on {len(mismatches)} noise(s), first at t={mismatches[0]['time']}")
    return {'pass': not mismatches and swap_worst <= tol, 'noises': len(noises), 'tolerance': tol,
            'mismatches': len(mismatches), 'first_mismatch': mismatches[0] if mismatches else None,
            'swap_max_rel_error': swap_worst}


def coupling_noises(T: float, cap: float, n_noises: int, seed: int) -> List[PlanarNoise]:
    return [sample_noise(T, cap, seed, i) for i in range(n_noises)]


# ---------------------------------------------------------------------------
# Poisson to counting limit
# ---------------------------------------------------------------------------

def _centered_poisson_log_mean(v: ExtendedMap, n: int) -> float:
    """log E e^{v(Y_n - n)} for Y_n ~ Poisson(n); finite window so the sum is exact"""
    xs = np.arange(max(v.lo, -n), v.hi + 1)
    if xs.size == 0:
        return NEG_INF
    terms = v(xs) + stats.poisson.logpmf(xs + n, n)
    finite = terms[np.isfinite(terms)]
    return float(logsumexp(finite)) if finite.size else NEG_INF


def stirling_limit_experiment(q: QuadrupleOfFunctions, n_list: Sequence[int],
                              rel_tol: float = CONCLUSION_REL_TOL) -> Dict[str, Any]:
    """
    s_n(f) = sqrt(2 pi n) E e^{f(Y_n - n)} against sum e^f, and the shifted
    Poisson inequality at every n.
    """
    _require_hypothesis(q)
    target = q.f.log_sum()
    rows = []
    for n in n_list:
        if n < 1:
            raise ValidationError(f"Poisson parameter n must be >= 1, got {n}")
        logs = {name: _centered_poisson_log_mean(getattr(q, name), n) for name in 'fghk'}
        scaled = 0.5 * math.log(2 * math.pi * n) + logs['f']
        cmp = _compare(logs['f'] + logs['g'], logs['h'] + logs['k'], rel_tol)
        rows.append({'n': int(n), 's_n': math.exp(scaled), 'sum_exp_f': math.exp(target),
                     'rel_gap': abs(math.expm1(scaled - target)), 'shifted_pass': cmp['pass']})
    return {'pass': all(r['shifted_pass'] for r in rows), 'rows': rows}


# ---------------------------------------------------------------------------
# randomized harness
# ---------------------------------------------------------------------------

def random_extended(rng: np.random.Generator, width: int, lo_max: int = 3, p_neg_inf: float = 0.15) -> ExtendedMap:
    size = int(rng.integers(1, width + 1))
    vals = rng.normal(0.0, 1.0, size)
    vals[rng.uniform(size=size) < p_neg_inf] = NEG_INF
    if not np.isfinite(vals).any():
        vals[int(rng.integers(size))] = 0.0
    return ExtendedMap(int(rng.integers(0, lo_max + 1)), tuple(vals))


def random_instance(rng: np.random.Generator, width: int = 15) -> QuadrupleOfFunctions:
    """Random f, g on non-negative windows of width <= width, closed by tight_hk"""
    return with_tight_hk(random_extended(rng, width), random_extended(rng, width))


def pl_harness(n_instances: int = 1000, seed: int = 0, T_values: Sequence[float] = (0.5, 1.0, 2.0),
               width: int = 15) -> Dict[str, Any]:
    """Randomized hypothesis => conclusion run; instance i draws from substream (seed, i)"""
    violations = []
    for i in range(n_instances):
        check_budget()
        q = random_instance(substream(seed, i), width)
        checks = [('counting', None, check_conclusion_counting(q))]
        checks += [('poisson', T, check_conclusion_poisson(q, T)) for T in T_values]
        for mode, T, report in checks:
            if not report['pass']:
                violations.append({'instance': i, 'mode': mode, 'T': T, 'quad': q.to_dict()})
    if violations:
        logger.error(f"Discrete PL harness found {len(violations)} violation(s)")
    return {'pass': not violations, 'instances': n_instances, 'T_values': list(T_values),
            'violations': len(violations), 'first_violation': violations[0] if violations else None}
