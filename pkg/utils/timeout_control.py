"""
Timing utilities for long-running certification and Monte Carlo runs
"""

import time
import logging
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Callable, Dict, Iterator, List, Optional

from utils.error_handlers import RunTimeout

logger = logging.getLogger(__name__)


class ProcessTimer:
    """Timer for monitoring process execution"""

    def __init__(self, name: str, timeout_seconds: float = 300):
        self.name = name
        self.timeout_seconds = timeout_seconds
        self.start_time = None
        self.end_time = None

    def start(self):
        self.start_time = time.perf_counter()
        logger.info(f"Starting {self.name} - budget: {self.timeout_seconds}s")

    def check_timeout(self) -> bool:
        elapsed = self.get_elapsed()
        if self.start_time is not None and elapsed > self.timeout_seconds:
            logger.error(f"{self.name} exceeded its budget after {elapsed:.2f}s")
            raise RunTimeout(f"{self.name} exceeded its {self.timeout_seconds}s budget after {elapsed:.2f}s")
        return False

    def stop(self) -> float:
        """Stop the timer and log completion"""
        if self.start_time is None:
            logger.warning(f"{self.name} timer was never started")
            return 0.0
        self.end_time = time.perf_counter()
        elapsed = self.end_time - self.start_time
        logger.info(f"{self.name} completed in {elapsed:.2f}s")
        return elapsed

    def get_elapsed(self) -> float:
        if self.start_time is None:
            return 0.0
        return time.perf_counter() - self.start_time


# Time budgets per sub-command, in seconds
TIMEOUT_CONFIGS = {
    'check-logconcave': 30,
    'taylor': 30,
    'library': 5,
    'bb-transform': 60,
    'cm-certify': 300,
    'figure1': 30,
    'post-invert': 120,
    'root-convexity': 60,
    'poisson-variational': 600,
    'coupling-check': 300,
    'discrete-pl': 300,
}


def get_timeout_for_operation(operation_type: str) -> float:
    return TIMEOUT_CONFIGS.get(operation_type, 300)


_active_timer: ContextVar[Optional[ProcessTimer]] = ContextVar('active_timer', default=None)


@contextmanager
def run_budget(timer: ProcessTimer) -> Iterator[ProcessTimer]:
    """Make timer the budget that check_budget enforces inside the block"""
    token = _active_timer.set(timer)
    try:
        yield timer
    finally:
        _active_timer.reset(token)


def check_budget():
    """Raise RunTimeout once the enclosing run_budget is spent; no-op outside one"""
    timer = _active_timer.get()
    if timer is not None:
        timer.check_timeout()


class BatchProcessingTimer:
    """Timer for batch runs with progress tracking"""

    def __init__(self, total_items: int, name: str = "batch", log_every: int = 1):
        self.total_items = total_items
        self.name = name
        self.log_every = max(1, log_every)
        self.processed_items = 0
        self.start_time = None
        self.failed_items: List[Any] = []

    def start(self):
        self.start_time = time.perf_counter()
        logger.info(f"Starting {self.name} of {self.total_items} items")

    def process_item(self, item_id: Any, func: Callable, *args, **kwargs):
        """Run one item, recording it as failed if it raises"""
        if self.start_time is None:
            self.start()
        check_budget()
        try:
            result = func(*args, **kwargs)
        except Exception as e:
            self.failed_items.append(item_id)
            logger.error(f"Item {item_id} failed: {e}")
            raise
        self.processed_items += 1
        if self.processed_items % self.log_every == 0 or self.processed_items == self.total_items:
            progress = (self.processed_items / self.total_items) * 100 if self.total_items else 100.0
            logger.info(f"{self.name}: processed {item_id} - Progress: {progress:.1f}%")
        return result

    def get_summary(self) -> Dict[str, Any]:
        if self.start_time is None:
            return {"status": "not_started"}
        return {
            "total_items": self.total_items,
            "processed_items": self.processed_items,
            "failed_items": len(self.failed_items),
            "failed_item_ids": self.failed_items,
            "elapsed_seconds": time.perf_counter() - self.start_time,
            "success_rate": (self.processed_items / self.total_items) * 100 if self.total_items > 0 else 0
        }
