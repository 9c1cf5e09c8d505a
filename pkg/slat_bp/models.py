"""
JsonModel - Base class for file-backed Pydantic models.
"""

import logging
from pathlib import Path
from typing import Type, TypeVar, Union

from pydantic import BaseModel, ConfigDict
from pydantic import ValidationError as PydanticValidationError

from slat_bp.exceptions import ValidationError

logger = logging.getLogger(__name__)

T = TypeVar('T', bound='JsonModel')

PathLike = Union[str, Path]


class JsonModel(BaseModel):
    """
    Base class for models that are read from and written to JSON files.

    Inherit from this class to get ``from_file`` / ``to_file`` with consistent
    error reporting. Field aliases are accepted on input, field names on output.
    """

    model_config = ConfigDict(populate_by_name=True, extra='forbid')

    @classmethod
    def from_json_text(cls: Type[T], text: Union[str, bytes], source: str = '<string>') -> T:
        """
        Parse a model from JSON text.

        Args:
            text: JSON document
            source: Name used in error messages

        Returns:
            Model instance

        Raises:
            ValidationError: If the document does not describe a valid model
        """
        try:
            return cls.model_validate_json(text)
        except PydanticValidationError as e:
            raise ValidationError(f"{source}: invalid {cls.__name__}: {e}") from e

    @classmethod
    def from_file(cls: Type[T], path: PathLike) -> T:
        """
        Read a model from a UTF-8 JSON file.

        Args:
            path: Path to the JSON file

        Returns:
            Model instance

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValidationError: If validation fails

        Example:
            config = ScenarioConfig.from_file("tunnel.json")
        """
        file_path = Path(path)
        if not file_path.exists():
            raise FileNotFoundError(f"{cls.__name__} file not found: {path}")
        instance = cls.from_json_text(file_path.read_text(encoding='utf-8'), str(path))
        logger.info("Loaded %s from %s", cls.__name__, path)
        return instance

    def to_file(self, path: PathLike, indent: int = 2) -> None:
        """
        Write the model to a UTF-8 JSON file.

        Args:
            path: Destination path; parent directories are created
            indent: JSON indentation
        """
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text(self.model_dump_json(indent=indent), encoding='utf-8')
        logger.info("Wrote %s to %s", type(self).__name__, path)
