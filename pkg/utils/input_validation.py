"""
Input validation utilities for command-line parameters and input files
"""

import os
import re
import logging
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

from utils.error_handlers import ValidationError
from utils.halfmeasure import NAMED_PATTERN, _parse_named
from utils.seqcore import Quadruple

logger = logging.getLogger(__name__)


class InputValidator:
    """Static validators; every failure raises ValidationError"""

    ALLOWED_INPUT_EXTENSIONS = {'.json'}
    ALLOWED_SEQUENCE_EXTENSIONS = {'.json', '.csv', '.txt'}
    MAX_INPUT_SIZE = 10 * 1024 * 1024  # 10MB

    NUMBER_LIST_PATTERN = re.compile(r'^\s*[-+0-9.eE]+(\s*,\s*[-+0-9.eE]+)*\s*$')
    POLICY_PATTERN = re.compile(r'^(optimal|constant:[0-9.eE+-]+|file:.+)$')

    @staticmethod
    def validate_input_file(file_path: str, kind: str = 'measure') -> str:
        """Existing, non-empty, readable file with an accepted extension"""
        if not file_path or not isinstance(file_path, str):
            raise ValidationError(f"{kind} file path is empty")
        if not os.path.exists(file_path):
            raise ValidationError(f"{kind} file not found: {file_path}")
        ext = Path(file_path).suffix.lower()
        allowed = (InputValidator.ALLOWED_SEQUENCE_EXTENSIONS if kind == 'sequence'
                   else InputValidator.ALLOWED_INPUT_EXTENSIONS)
        if ext not in allowed:
            raise ValidationError(f"Invalid {kind} file extension: {ext}")
        size = os.path.getsize(file_path)
        if size == 0:
            raise ValidationError(f"{kind} file is empty: {file_path}")
        if size > InputValidator.MAX_INPUT_SIZE:
            raise ValidationError(f"{kind} file too large: {size / 1024 / 1024:.1f}MB")
        logger.info(f"Input file validation passed: {file_path}")
        return file_path

    @staticmethod
    def validate_numeric_range(value: Any, min_val: float, max_val: float,
                               field_name: str = "value", inclusive_min: bool = True) -> float:
        """Validate numeric value within specified range"""
        try:
            num_value = float(value)
        except (ValueError, TypeError):
            raise ValidationError(f"{field_name} must be a valid number, got {value}")
        below = num_value < min_val if inclusive_min else num_value <= min_val
        if below or num_value > max_val:
            bracket = '[' if inclusive_min else '('
            raise ValidationError(f"{field_name} must be in {bracket}{min_val}, {max_val}], got {num_value}")
        return num_value

    @staticmethod
    def validate_int_range(value: Any, min_val: int, max_val: int, field_name: str = "value") -> int:
        try:
            num_value = int(value)
        except (ValueError, TypeError):
            raise ValidationError(f"{field_name} must be an integer, got {value}")
        if num_value != float(value) or num_value < min_val or num_value > max_val:
            raise ValidationError(f"{field_name} must be an integer in [{min_val}, {max_val}], got {value}")
        return num_value

    @staticmethod
    def validate_choice(value: Any, choices: Sequence[Any], field_name: str = "value") -> Any:
        """Validate value is in allowed choices"""
        if value not in choices:
            raise ValidationError(f"{field_name} must be one of {list(choices)}, got {value}")
        return value

    @staticmethod
    def validate_tolerance(value: Optional[float], field_name: str = "tolerance") -> Optional[float]:
        if value is None:
            return None
        return InputValidator.validate_numeric_range(value, 0.0, 1.0, field_name, inclusive_min=False)

    @staticmethod
    def validate_seed(value: Any) -> int:
        return InputValidator.validate_int_range(value, 0, 2 ** 63 - 1, "seed")

    @staticmethod
    def parse_number_list(text: str, field_name: str = "list") -> List[float]:
        if not text or not InputValidator.NUMBER_LIST_PATTERN.match(text):
            raise ValidationError(f"{field_name} must be comma-separated numbers, got {text!r}")
        return [float(tok) for tok in text.split(',')]

    @staticmethod
    def parse_t_grid(text: str) -> Tuple[float, ...]:
        """'0.5,1,2' or 'geom:lo:hi:count'"""
        if text.startswith('geom:'):
            parts = text.split(':')
            if len(parts) != 4:
                raise ValidationError(f"Geometric grid must be geom:lo:hi:count, got {text!r}")
            lo = InputValidator.validate_numeric_range(parts[1], 0.0, 1e6, "grid start", inclusive_min=False)
            hi = InputValidator.validate_numeric_range(parts[2], lo, 1e6, "grid end")
            count = InputValidator.validate_int_range(parts[3], 2, 10_000, "grid size")
            ratio = (hi / lo) ** (1.0 / (count - 1))
            return tuple(lo * ratio ** i for i in range(count))
        grid = InputValidator.parse_number_list(text, "t-grid")
        for t in grid:
            InputValidator.validate_numeric_range(t, 0.0, 1e6, "t", inclusive_min=False)
        return tuple(grid)

    @staticmethod
    def parse_quadruple_list(text: str) -> List[Quadruple]:
        """'0,1,1,2;1,2,3,4'"""
        if not text or not text.strip():
            raise ValidationError("Quadruple list is empty")
        return [Quadruple.parse(chunk) for chunk in text.split(';') if chunk.strip()]

    @staticmethod
    def validate_measure_spec(spec: str) -> str:
        """Named measure (grammar checked here) or a JSON file path"""
        if not spec or not isinstance(spec, str):
            raise ValidationError("Measure specification is empty")
        if NAMED_PATTERN.match(spec):
            _parse_named(spec)
            return spec
        return InputValidator.validate_input_file(spec, 'measure')

    @staticmethod
    def validate_policy_spec(spec: str) -> str:
        if not spec or not InputValidator.POLICY_PATTERN.match(spec):
            raise ValidationError(f"Policy must be optimal, constant:<c> or file:<path>, got {spec!r}")
        return spec
