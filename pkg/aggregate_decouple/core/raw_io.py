"""
Raw grid container and plain-text manifest.

Grid file: one ASCII header line ``A&D-RAWv1 D H W K sx sy sz`` followed by
the C-ordered payload. K = 0 marks an intensity volume stored as little-endian
float32; K >= 1 marks a label grid stored as uint8.

Manifest: one record per line, ``<role> <domain> <volume_path> [<label_path>]``,
paths relative to the manifest. Blank lines and ``#`` comments are skipped.
An optional ``preprocess key=value ...`` line sets the PreprocessSpec.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Any, Tuple

import numpy as np

from .enums import SampleRole
from .exceptions import ValidationError, ShapeMismatchError
from .models import Volume, LabelMap, PreprocessSpec

logger = logging.getLogger(__name__)

MAGIC = "A&D-RAWv1"
MAX_HEADER_BYTES = 256
VOLUME_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("u1")


def _header(shape: Tuple[int, ...], num_classes: int, spacing: Tuple[float, ...]) -> bytes:
    d, h, w = shape
    sx, sy, sz = (repr(float(s)) for s in spacing)
    return f"{MAGIC} {d} {h} {w} {num_classes} {sx} {sy} {sz}\n".encode("ascii")


def write_volume(path: Path, volume: Volume) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_header(volume.shape, 0, volume.spacing))
        f.write(np.ascontiguousarray(volume.data, dtype=VOLUME_DTYPE).tobytes())


def write_label(path: Path, label: LabelMap, spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> None:
    if label.num_classes > 256:
        raise ValidationError("Raw label grids hold at most 256 classes", field="num_classes",
                              value=label.num_classes)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_header(label.shape, label.num_classes, spacing))
        f.write(np.ascontiguousarray(label.data, dtype=LABEL_DTYPE).tobytes())


def read_grid(path: Path) -> Tuple[np.ndarray, int, Tuple[float, float, float]]:
    """Read a raw grid; returns (array, K, spacing) with K = 0 for volumes"""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"Grid file not found: {path}", field="path", value=str(path))
    raw = path.read_bytes()
    newline = raw.find(b"\n", 0, MAX_HEADER_BYTES)
    if newline < 0:
        raise ValidationError("Missing raw grid header", field="header",
                              context={"file": str(path)})
    tokens = raw[:newline].decode("ascii", errors="replace").split()
    if len(tokens) != 8 or tokens[0] != MAGIC:
        raise ValidationError("Malformed raw grid header", field="header",
                              value=raw[:newline].decode("ascii", errors="replace"),
                              context={"file": str(path)})
    try:
        shape = tuple(int(v) for v in tokens[1:4])
        num_classes = int(tokens[4])
        spacing = tuple(float(v) for v in tokens[5:8])
    except ValueError as e:
        raise ValidationError(f"Malformed raw grid header: {e}", field="header",
                              context={"file": str(path)})
    dtype = VOLUME_DTYPE if num_classes == 0 else LABEL_DTYPE
    payload = raw[newline + 1:]
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise ValidationError("Raw grid payload size does not match its header", field="payload",
                              value=len(payload),
                              context={"expected": expected, "file": str(path)})
    data = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return data, num_classes, spacing  # type: ignore[return-value]


def read_volume(path: Path) -> Volume:
    data, num_classes, spacing = read_grid(path)
    if num_classes != 0:
        raise ValidationError("Expected an intensity volume, found a label grid", field="path",
                              value=str(path))
    return Volume(data, spacing=spacing)


def read_label(path: Path) -> LabelMap:
    data, num_classes, _ = read_grid(path)
    if num_classes == 0:
        raise ValidationError("Expected a label grid, found an intensity volume", field="path",
                              value=str(path))
    return LabelMap(data, num_classes=num_classes)


# ============================================================================
# Manifest
# ============================================================================

@dataclass(frozen=True)
class ManifestRecord:
    role: SampleRole
    domain: str
    volume_path: Path
    label_path: Optional[Path] = None

    def __post_init__(self):
        object.__setattr__(self, "role", SampleRole(self.role))
        needs_label = self.role in (SampleRole.LABELED, SampleRole.TEST)
        if needs_label and self.label_path is None:
            raise ValidationError(f"Role '{self.role.value}' requires a label path",
                                  field="label_path", value=str(self.volume_path))

    def to_line(self, base: Path) -> str:
        parts = [self.role.value, self.domain, _relative(self.volume_path, base)]
        if self.label_path is not None:
            parts.append(_relative(self.label_path, base))
        return " ".join(parts)


def _relative(path: Path, base: Path) -> str:
    try:
        return Path(path).resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return Path(path).as_posix()


def _coerce_flag(key: str, value: str) -> Any:
    if key in ("clip_lower_pct", "clip_upper_pct"):
        return float(value)
    if key == "stack_depth":
        return None if value.lower() in ("none", "") else int(value)
    if key == "crop_to_foreground":
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {value}")
        return value.lower() in ("true", "1", "yes")
    if key == "normalize":
        return value
    raise KeyError(key)


def parse_preprocess_line(tokens: List[str], line_no: int) -> PreprocessSpec:
    values: Dict[str, Any] = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep:
            raise ValidationError("Expected key=value in preprocess directive", field="preprocess",
                                  value=token, context={"line": line_no})
        try:
            values[key] = _coerce_flag(key, value)
        except KeyError:
            raise ValidationError(f"Unknown preprocess key '{key}'", field="preprocess",
                                  value=token, context={"line": line_no})
        except ValueError as e:
            raise ValidationError(f"Invalid preprocess value: {e}", field=key, value=value,
                                  context={"line": line_no})
    return PreprocessSpec(**values)


def read_manifest(path: Path) -> Tuple[List[ManifestRecord], PreprocessSpec]:
    """Parse a manifest; paths are resolved against its directory"""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"Manifest not found: {path}", field="manifest", value=str(path))
    base = path.parent
    records: List[ManifestRecord] = []
    preprocess = PreprocessSpec()
    for line_no, raw_line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "preprocess":
            preprocess = parse_preprocess_line(tokens[1:], line_no)
            continue
        try:
            role = SampleRole(tokens[0])
        except ValueError:
            raise ValidationError(f"Unknown manifest role '{tokens[0]}'", field="role",
                                  value=tokens[0], context={"line": line_no})
        if len(tokens) not in (3, 4):
            raise ValidationError("Manifest record needs 3 or 4 fields", field="record",
                                  value=raw_line, context={"line": line_no})
        label_path = base / tokens[3] if len(tokens) == 4 else None
        records.append(ManifestRecord(role=role, domain=tokens[1],
                                      volume_path=base / tokens[2], label_path=label_path))
    logger.debug("Read %d manifest records from %s", len(records), path)
    return records, preprocess


def write_manifest(path: Path, records: List[ManifestRecord],
                   preprocess: Optional[PreprocessSpec] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# role domain volume [label]"]
    if preprocess is not None:
        flags = [f"{k}={'none' if v is None else str(v).lower() if isinstance(v, bool) else v}"
                 for k, v in preprocess.to_dict().items()]
        lines.append("preprocess " + " ".join(flags))
    lines.extend(record.to_line(path.parent) for record in records)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def check_pair(volume: Volume, label: LabelMap, record: ManifestRecord) -> None:
    if volume.shape != label.shape:
        raise ShapeMismatchError("Label shape differs from its volume", field="label",
                                 value=label.shape,
                                 context={"volume": volume.shape, "file": str(record.label_path)})
