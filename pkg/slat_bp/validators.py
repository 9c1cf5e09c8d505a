"""
Validation helpers shared by the record loaders and the numeric models.
"""

import math
from typing import Any, Callable, Sequence, TypeVar

import numpy as np

from slat_bp.exceptions import ValidationError

T = TypeVar('T')


class RecordValidator:
    """Validates numeric vectors and wraps per-record failures with their location."""

    @staticmethod
    def finite_vector(value: Sequence[float], length: int, name: str) -> Sequence[float]:
        """
        Check that a vector has the expected length and only finite components.

        Args:
            value: Vector to check
            length: Required number of components
            name: Field name for error messages

        Returns:
            The unchanged vector

        Raises:
            ValueError: If the length is wrong or a component is not finite
        """
        if len(value) != length:
            raise ValueError(f"{name} must have {length} components, got {len(value)}")
        if not all(math.isfinite(v) for v in value):
            raise ValueError(f"{name} must be finite, got {list(value)}")
        return value

    @staticmethod
    def nonnegative_vector(value: Sequence[float], length: int, name: str) -> Sequence[float]:
        """Check a finite vector whose components are all >= 0."""
        RecordValidator.finite_vector(value, length, name)
        if any(v < 0 for v in value):
            raise ValueError(f"{name} must be nonnegative, got {list(value)}")
        return value

    @staticmethod
    def weights(values: Any, name: str) -> np.ndarray:
        """
        Convert belief weights to a float array and check them.

        Args:
            values: Array-like of weights
            name: Name of the belief for error messages

        Returns:
            One-dimensional float64 array

        Raises:
            ValidationError: If weights are not a finite nonnegative vector
        """
        array = np.asarray(values, dtype=np.float64)
        if array.ndim != 1 or array.size == 0:
            raise ValidationError(f"{name}: weights must be a non-empty vector")
        if not np.all(np.isfinite(array)):
            raise ValidationError(f"{name}: weights must be finite")
        if np.any(array < 0):
            raise ValidationError(f"{name}: weights must be nonnegative")
        return array

    @staticmethod
    def validate_record(
        build: Callable[[], T],
        source: str,
        record_idx: int,
    ) -> T:
        """
        Build one record and prefix any failure with its location.

        Args:
            build: Callable producing the validated record
            source: File name for error messages
            record_idx: Current record (or line) index for error messages

        Returns:
            Whatever ``build`` returns

        Raises:
            ValidationError: If building the record fails
        """
        try:
            return build()
        except ValidationError as e:
            raise ValidationError(f"{source}, record {record_idx}: {e}") from e
        except Exception as e:
            raise ValidationError(
                f"{source}, record {record_idx}: error creating record: {e}"
            ) from e
