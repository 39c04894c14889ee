"""
Memory monitoring for Monte Carlo and batch certification runs
"""

import gc
import logging
from functools import wraps
from typing import Dict

import psutil

logger = logging.getLogger(__name__)


class MemoryMonitor:
    """Resident memory of the current process, in MB"""

    def __init__(self, max_memory_mb: int = 4096):
        self.max_memory_mb = max_memory_mb
        self.process = psutil.Process()
        self.initial_memory = self.get_memory_usage()

    def get_memory_usage(self) -> float:
        try:
            return self.process.memory_info().rss / 1024 / 1024
        except psutil.Error as e:
            logger.error(f"Failed to get memory usage: {e}")
            return 0.0

    def get_available_memory(self) -> float:
        try:
            return psutil.virtual_memory().available / 1024 / 1024
        except psutil.Error as e:
            logger.error(f"Failed to get available memory: {e}")
            return 0.0

    def check_memory_limit(self) -> bool:
        return self.get_memory_usage() > self.max_memory_mb

    def get_memory_stats(self) -> Dict[str, float]:
        current = self.get_memory_usage()
        return {
            'current_mb': current,
            'available_mb': self.get_available_memory(),
            'increase_mb': current - self.initial_memory,
            'max_limit_mb': self.max_memory_mb,
            'usage_percent': (current / self.max_memory_mb) * 100,
        }


def memory_monitor(max_memory_mb: int = 4096):
    """Decorator logging resident memory before and after the wrapped run"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            monitor = MemoryMonitor(max_memory_mb)
            initial = monitor.get_memory_stats()
            logger.info(f"Starting {func.__name__} - Memory: {initial['current_mb']:.1f}MB")
            if initial['available_mb'] < 200:
                logger.warning("Low available memory, forcing garbage collection")
                gc.collect()
            try:
                result = func(*args, **kwargs)
            except MemoryError as e:
                logger.error(f"Memory error in {func.__name__}: {e}")
                gc.collect()
                raise
            final = monitor.get_memory_stats()
            logger.info(f"Completed {func.__name__} - Memory: {final['current_mb']:.1f}MB "
                        f"(+{final['increase_mb']:.1f}MB)")
            if monitor.check_memory_limit():
                logger.warning(f"{func.__name__} exceeded {max_memory_mb}MB resident memory")
            return result
        return wrapper
    return decorator
