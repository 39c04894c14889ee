"""
Error handling utilities for the log-concavity lab
"""

import math
import logging
from functools import wraps

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_INPUT = 2


class LabError(Exception):
    """Base class for every error raised by the lab"""
    pass


class ValidationError(LabError):
    """Invalid input value, file or command-line argument"""
    pass


class PreconditionError(LabError):
    """An operation received input that fails a required certification"""
    pass


class DivergenceError(LabError):
    """An integral over unbounded support does not converge"""
    pass


class BinomialRangeError(LabError):
    """Requested binomial coefficient lies outside the exact table"""
    pass


class CertificationError(LabError):
    """A certification that must pass did not; keeps the offending value"""

    def __init__(self, message, value=None, location=None):
        super().__init__(message)
        self.value = value
        self.location = location


class ContractViolation(LabError):
    """An intensity policy broke the rate-cap or predictability contract"""
    pass


class TruncationError(LabError):
    """A truncated state space is too small for the requested accuracy"""
    pass


class RunTimeout(LabError):
    """A run exceeded its configured time budget"""
    pass


class AssertionFailure(LabError):
    """A command-line assertion failed; carries the first failure detail"""
    pass


def json_safe(value):
    """Recursively convert a report into JSON-serialisable builtins"""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if getattr(value, 'ndim', 0) > 0 and hasattr(value, 'tolist'):
        return json_safe(value.tolist())
    if hasattr(value, 'item') and not isinstance(value, (str, bytes)):
        try:
            value = value.item()
        except (ValueError, AttributeError):
            pass
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def handle_errors(f):
    """Decorator mapping lab errors of a CLI command onto exit codes"""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except AssertionFailure as e:
            logger.error(f"Assertion failed in {f.__name__}: {e}")
            return EXIT_ASSERTION
        except (ValidationError, FileNotFoundError) as e:
            logger.error(f"Input error in {f.__name__}: {e}")
            return EXIT_INPUT
        except ValueError as e:
            logger.error(f"Value error in {f.__name__}: {e}")
            return EXIT_INPUT
        except CertificationError as e:
            logger.error(f"Certification failed in {f.__name__}: {e} (value={e.value})")
            return EXIT_ASSERTION
        except RunTimeout as e:
            logger.error(f"Time budget exceeded in {f.__name__}: {e}")
            return EXIT_ASSERTION
        except LabError as e:
            logger.error(f"{type(e).__name__} in {f.__name__}: {e}")
            return EXIT_INPUT
        except Exception as e:
            logger.error(f"Unexpected error in {f.__name__}: {e}")
            raise
    return decorated_function


def require(condition, message):
    """Raise AssertionFailure with message unless condition holds"""
    if not condition:
        raise AssertionFailure(message)
