"""
Exception classes for the segmentation framework.

Every error renders as ``message | Label: value | Context: k=v`` on a single
line; the CLI prints that line verbatim behind the raising module's name.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple


def _render(message: str, labelled: Sequence[Tuple[str, Any]],
            context: Dict[str, Any]) -> str:
    parts = [message]
    parts.extend(f"{label}: {value}" for label, value in labelled if value is not None)
    if context:
        parts.append("Context: " + ", ".join(f"{k}={v}" for k, v in context.items()))
    return " | ".join(parts)


@dataclass
class ValidationError(Exception):
    """Invalid input, with the offending field and value"""
    message: str
    field: Optional[str] = None
    value: Any = None
    context: Optional[Dict[str, Any]] = None

    def __init__(self, message: str, field: Optional[str] = None,
                 value: Any = None, context: Optional[Dict[str, Any]] = None):
        self.message = message
        self.field = field
        self.value = value
        self.context = context or {}
        super().__init__(self._format_message())

    def _format_message(self) -> str:
        shown = repr(self.value) if self.value is not None else None
        return _render(self.message, [("Field", self.field or None), ("Value", shown)],
                       self.context)

    def __str__(self) -> str:
        return self._format_message()


class InvalidLabelError(ValidationError):
    """Label value outside [0, K-1]"""


class ShapeMismatchError(ValidationError):
    """Two grids that must agree in shape do not"""


class DegenerateInputError(ValidationError):
    """Input cannot be normalized (e.g. a constant volume)"""


class CapacityError(ValidationError):
    """Synthetic grid too small to host the requested objects"""


class ConfigError(ValidationError):
    """Unknown key, type mismatch or missing field in a run configuration"""


class LayoutMismatchError(ValidationError):
    """Decoder parameter sets are not elementwise compatible"""


class CheckpointError(ValidationError):
    """Missing or corrupt checkpoint container"""


@dataclass
class TrainingError(Exception):
    """
    Runtime failure inside the training loop.

    ``module`` names the component at fault; the CLI reports it instead of
    the module the exception was raised from.
    """
    message: str
    iteration: Optional[int] = None
    module: Optional[str] = None
    context: Optional[Dict[str, Any]] = None

    def __init__(self, message: str, iteration: Optional[int] = None,
                 module: Optional[str] = None, context: Optional[Dict[str, Any]] = None):
        self.message = message
        self.iteration = iteration
        self.module = module
        self.context = context or {}
        super().__init__(self._format_message())

    def _format_message(self) -> str:
        return _render(self.message, [("Iteration", self.iteration),
                                      ("Module", self.module or None)], self.context)

    def __str__(self) -> str:
        return self._format_message()
