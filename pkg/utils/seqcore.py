"""
Log-concave sequence primitives and the sequence-level transforms
(binomial convolution and binomial tails)
"""

import json
import math
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.error_handlers import BinomialRangeError, PreconditionError, ValidationError

logger = logging.getLogger(__name__)

BINOMIAL_LIMIT = 128
DEFAULT_REL_TOL = 1e-12
ZERO_FLOOR = 1e-300


@lru_cache(maxsize=1)
def _pascal_table(limit: int = BINOMIAL_LIMIT) -> Tuple[Tuple[int, ...], ...]:
    rows = [(1,)]
    for n in range(1, limit + 1):
        prev = rows[-1]
        rows.append(tuple([1] + [prev[k - 1] + prev[k] for k in range(1, n)] + [1]))
    return tuple(rows)


def binom(n: int, k: int) -> int:
    """Exact binomial coefficient, zero outside the Pascal triangle"""
    if n < 0 or k < 0 or k > n:
        return 0
    if n > BINOMIAL_LIMIT:
        raise BinomialRangeError(f"binom({n},{k}) exceeds exact table limit {BINOMIAL_LIMIT}")
    return _pascal_table()[n][k]


@dataclass(frozen=True)
class Quadruple:
    """Balanced index quadruple k <= l <= m <= n with k + n = l + m"""
    k: int
    l: int
    m: int
    n: int

    def __post_init__(self):
        for name in ('k', 'l', 'm', 'n'):
            if not isinstance(getattr(self, name), (int, np.integer)):
                raise ValidationError(f"Quadruple entry {name} must be an integer")
        if self.k < 0:
            raise ValidationError(f"Quadruple entries must be non-negative, got {self}")
        if not (self.k <= self.l <= self.m <= self.n):
            raise ValidationError(f"Quadruple must satisfy k<=l<=m<=n, got {self.as_tuple()}")
        if self.k + self.n != self.l + self.m:
            raise ValidationError(f"Quadruple must satisfy k+n=l+m, got {self.as_tuple()}")

    @property
    def degenerate(self) -> bool:
        """True when the measurement vanishes identically (k = l, hence m = n)"""
        return self.k == self.l

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.k, self.l, self.m, self.n)

    @classmethod
    def parse(cls, text: str) -> 'Quadruple':
        try:
            parts = [int(p) for p in str(text).replace(' ', '').split(',')]
        except ValueError:
            raise ValidationError(f"Quadruple must be four comma-separated integers, got {text!r}")
        if len(parts) != 4:
            raise ValidationError(f"Quadruple must have four entries, got {text!r}")
        return cls(*parts)


def enumerate_quadruples(n_max: int, include_degenerate: bool = False) -> List[Quadruple]:
    """All valid quadruples with n <= n_max, ordered lexicographically by (n-k, l-k)"""
    found = []
    for k in range(n_max + 1):
        for n in range(k, n_max + 1):
            for l in range(k, n + 1):
                m = k + n - l
                if m < l:
                    continue
                q = Quadruple(k, l, m, n)
                if q.degenerate and not include_degenerate:
                    continue
                found.append(q)
    found.sort(key=lambda q: (q.n - q.k, q.l - q.k, q.k))
    return found


@dataclass(frozen=True)
class LogConcaveSeq:
    """Finite non-negative sequence indexed from 0 with support tracking"""
    values: Tuple[float, ...]
    certified: bool = False
    support_lo: Optional[int] = field(default=None, init=False)
    support_hi: Optional[int] = field(default=None, init=False)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        for i, v in enumerate(vals):
            if not math.isfinite(v):
                raise ValidationError(f"Sequence entry {i} is not finite: {v}")
            if v < 0:
                raise ValidationError(f"Sequence entry {i} is negative: {v}")
        object.__setattr__(self, 'values', vals)
        positive = [i for i, v in enumerate(vals) if v > ZERO_FLOOR]
        object.__setattr__(self, 'support_lo', positive[0] if positive else None)
        object.__setattr__(self, 'support_hi', positive[-1] if positive else None)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        if 0 <= i < len(self.values):
            return self.values[i]
        return 0.0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


SeqLike = Union[LogConcaveSeq, Sequence[float], np.ndarray]


def as_sequence(seq: SeqLike) -> LogConcaveSeq:
    if isinstance(seq, LogConcaveSeq):
        return seq
    return LogConcaveSeq(tuple(np.asarray(seq, dtype=np.float64).ravel()))


def is_log_concave(seq: SeqLike, rel_tol: float = DEFAULT_REL_TOL) -> Dict[str, Any]:
    """
    Certify log-concavity: contiguous support and
    values[i]^2 >= (1 - rel_tol) * values[i-1] * values[i+1] at interior i.

    Products are compared in log space, so entries near the underflow
    threshold are handled; entries <= ZERO_FLOOR count as zero.
    """
    seq = as_sequence(seq)
    report = {'pass': True, 'violation_index': None, 'margin': None, 'rel_tol': rel_tol}
    if seq.support_lo is None:
        return report

    v = seq.as_array()
    lo, hi = seq.support_lo, seq.support_hi
    gaps = [i for i in range(lo, hi + 1) if v[i] <= ZERO_FLOOR]
    if gaps:
        report.update({'pass': False, 'violation_index': gaps[0], 'reason': 'support gap'})
        return report

    margin = math.inf
    log_bound = -math.log1p(-rel_tol)
    for i in range(max(lo, 1), min(hi, len(v) - 2) + 1):
        left, mid, right = v[i - 1], v[i], v[i + 1]
        if left <= ZERO_FLOOR or right <= ZERO_FLOOR:
            continue
        excess = math.log(left) + math.log(right) - 2.0 * math.log(mid)
        margin = min(margin, -math.expm1(excess))
        if excess > log_bound and report['pass']:
            report['pass'] = False
            report['violation_index'] = i
    report['margin'] = None if margin == math.inf else margin
    return report


def certify(seq: SeqLike, rel_tol: float = DEFAULT_REL_TOL) -> LogConcaveSeq:
    """Return the certified copy of seq or raise PreconditionError"""
    seq = as_sequence(seq)
    if seq.certified:
        return seq
    report = is_log_concave(seq, rel_tol)
    if not report['pass']:
        raise PreconditionError(
            f"Sequence is not log-concave (violation at index {report['violation_index']})")
    return replace(seq, certified=True)


def measurement_defect(seq: SeqLike, q: Quadruple) -> float:
    """seq[l]*seq[m] - seq[k]*seq[n]; entries past the end read as zero"""
    seq = as_sequence(seq)
    return seq[q.l] * seq[q.m] - seq[q.k] * seq[q.n]


def walkup_convolve(a: SeqLike, b: SeqLike, rel_tol: float = DEFAULT_REL_TOL) -> LogConcaveSeq:
    """Binomial convolution c_n = sum_k binom(n,k) a_k b_{n-k} of log-concave inputs"""
    a = certify(a, rel_tol)
    b = certify(b, rel_tol)
    if not len(a) or not len(b):
        return LogConcaveSeq((), certified=True)
    length = len(a) + len(b) - 1
    out = []
    for n in range(length):
        total = 0.0
        for k in range(max(0, n - len(b) + 1), min(n, len(a) - 1) + 1):
            total += binom(n, k) * a.values[k] * b.values[n - k]
        out.append(total)
    result = LogConcaveSeq(tuple(out))
    return replace(result, certified=is_log_concave(result, rel_tol)['pass'])


def binomial_tail_transform(a: SeqLike, rel_tol: float = DEFAULT_REL_TOL) -> LogConcaveSeq:
    """c_k = sum_{n >= k} binom(n, k) a_n"""
    a = as_sequence(a)
    out = []
    for k in range(len(a)):
        out.append(sum(binom(n, k) * a.values[n] for n in range(k, len(a))))
    result = LogConcaveSeq(tuple(out))
    return replace(result, certified=is_log_concave(result, rel_tol)['pass'])


def combinatorial_inequality_check(a: SeqLike, k: int, l: int,
                                   tol: float = DEFAULT_REL_TOL) -> Tuple[float, float, bool]:
    """
    Compare sum_n C(n,k) C(l-n,k) a_n a_{l-n} against
    sum_n C(n,k-1) C(l-n,k+1) a_n a_{l-n}. Both sides vanish when 2k > l.
    """
    if k < 0 or l < 0:
        raise ValidationError(f"k and l must be non-negative, got k={k}, l={l}")
    a = as_sequence(a)
    lhs = 0.0
    rhs = 0.0
    for n in range(l + 1):
        weight = a[n] * a[l - n]
        if weight == 0.0:
            continue
        lhs += binom(n, k) * binom(l - n, k) * weight
        rhs += binom(n, k - 1) * binom(l - n, k + 1) * weight
    passed = lhs >= rhs - tol * max(abs(lhs), abs(rhs))
    return lhs, rhs, passed


def random_log_concave(rng: np.random.Generator, length: int, pad: int = 0,
                       slope_scale: float = 1.5) -> LogConcaveSeq:
    """
    Random log-concave sequence: a concave piecewise-linear exponent
    (descending slopes) exponentiated, optionally padded with zeros.
    """
    if length < 1:
        raise ValidationError("length must be at least 1")
    slopes = np.sort(rng.normal(0.0, slope_scale, size=length - 1))[::-1]
    exponent = np.concatenate([[0.0], np.cumsum(slopes)])
    exponent = exponent - exponent.max()
    span = -exponent.min()
    if span > 60.0:
        # positive rescaling keeps the exponent concave
        exponent = exponent * (60.0 / span)
    values = np.exp(exponent + rng.uniform(-2.0, 2.0))
    lead = int(rng.integers(0, pad + 1)) if pad else 0
    trail = int(rng.integers(0, pad + 1)) if pad else 0
    values = np.concatenate([np.zeros(lead), values, np.zeros(trail)])
    return LogConcaveSeq(tuple(values))


def seq_to_json(seq: SeqLike) -> str:
    return json.dumps(list(as_sequence(seq).values))


def seq_from_json(text: str) -> LogConcaveSeq:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"Sequence is not valid JSON: {e}")
    if not isinstance(data, list):
        raise ValidationError("Sequence JSON must be an array of numbers")
    return LogConcaveSeq(tuple(data))
