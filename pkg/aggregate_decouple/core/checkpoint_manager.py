"""
Checkpoint manager for model parameters.

Each checkpoint is a directory holding ``tensors.bin`` (raw little-endian
payloads, concatenated) and ``checkpoint.yaml`` (tensor names, shapes,
dtypes and byte offsets plus the run configuration echo).
"""

import shutil
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Any, Tuple

import numpy as np
import torch
import yaml

from .exceptions import CheckpointError

TENSORS_FILE = "tensors.bin"
METADATA_FILE = "checkpoint.yaml"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Checkpoint metadata as stored in checkpoint.yaml"""
    name: str
    created_at: datetime
    iteration: int
    score: Optional[float] = None
    config: Dict[str, Any] = field(default_factory=dict)
    tensors: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "created_at": self.created_at.isoformat(),
            "iteration": self.iteration,
            "score": self.score,
            "config": self.config,
            "tensors": self.tensors,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Checkpoint":
        return cls(
            name=data["name"],
            created_at=datetime.fromisoformat(data["created_at"]),
            iteration=int(data["iteration"]),
            score=data.get("score"),
            config=data.get("config", {}),
            tensors=data.get("tensors", []),
            metadata=data.get("metadata", {}),
        )


class CheckpointManager:
    """Saves, lists and restores named checkpoints under one directory"""

    def __init__(self, checkpoints_dir: Path):
        self.checkpoints_dir = Path(checkpoints_dir)
        self.checkpoints_dir.mkdir(parents=True, exist_ok=True)

    def save(
        self,
        name: str,
        model: torch.nn.Module,
        iteration: int,
        score: Optional[float] = None,
        config: Optional[Dict[str, Any]] = None,
        metadata: Optional[Dict[str, Any]] = None
    ) -> Checkpoint:
        """
        Write every parameter and buffer of the model.

        Args:
            name: Checkpoint name (e.g. "best", "last"); an existing one is replaced
            model: Module whose state_dict is stored
            iteration: Training iteration at save time
            score: Optional selection score
            config: Run configuration echo
            metadata: Optional extra fields

        Returns:
            Created checkpoint
        """
        target = self.checkpoints_dir / name
        staging = self.checkpoints_dir / f".{name}.tmp"
        if staging.exists():
            shutil.rmtree(staging)
        staging.mkdir(parents=True)

        entries: List[Dict[str, Any]] = []
        offset = 0
        try:
            with open(staging / TENSORS_FILE, "wb") as f:
                for key, tensor in model.state_dict().items():
                    array = tensor.detach().cpu().numpy()
                    payload = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes()
                    f.write(payload)
                    entries.append({
                        "name": key,
                        "shape": list(array.shape),
                        "dtype": array.dtype.str.lstrip("<>|="),
                        "offset": offset,
                        "nbytes": len(payload),
                    })
                    offset += len(payload)

            checkpoint = Checkpoint(
                name=name,
                created_at=datetime.now(),
                iteration=iteration,
                score=None if score is None else float(score),
                config=config or {},
                tensors=entries,
                metadata=metadata or {},
            )
            with open(staging / METADATA_FILE, "w", encoding="utf-8") as f:
                yaml.safe_dump(checkpoint.to_dict(), f, default_flow_style=False, sort_keys=False)
        except OSError as e:
            raise CheckpointError(f"Failed to save checkpoint: {e}", field="name", value=name) from e

        if target.exists():
            shutil.rmtree(target)
        staging.rename(target)
        return checkpoint

    def list_checkpoints(self) -> List[Checkpoint]:
        """All readable checkpoints, most recent first"""
        checkpoints = []
        for entry in sorted(self.checkpoints_dir.iterdir()):
            if not entry.is_dir() or entry.name.startswith("."):
                continue
            try:
                checkpoints.append(self.get_checkpoint(entry.name))
            except CheckpointError as e:
                warnings.warn(f"Failed to load checkpoint from {entry}: {e}")
        checkpoints.sort(key=lambda c: c.created_at, reverse=True)
        return checkpoints

    def get_checkpoint(self, name: str) -> Checkpoint:
        return self.read_metadata(self.checkpoints_dir / name)

    @staticmethod
    def read_metadata(checkpoint_dir: Path) -> Checkpoint:
        meta_file = Path(checkpoint_dir) / METADATA_FILE
        if not meta_file.is_file():
            raise CheckpointError(f"Checkpoint not found: {checkpoint_dir}", field="checkpoint",
                                  value=str(checkpoint_dir))
        try:
            with open(meta_file, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
            return Checkpoint.from_dict(data)
        except (yaml.YAMLError, KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"Corrupt checkpoint metadata: {e}", field="checkpoint",
                                  value=str(meta_file))

    @staticmethod
    def read_tensors(checkpoint_dir: Path) -> Tuple[Checkpoint, Dict[str, torch.Tensor]]:
        """Load a checkpoint directory into a state dict"""
        checkpoint = CheckpointManager.read_metadata(checkpoint_dir)
        blob_file = Path(checkpoint_dir) / TENSORS_FILE
        if not blob_file.is_file():
            raise CheckpointError("Checkpoint payload missing", field="checkpoint",
                                  value=str(blob_file))
        blob = blob_file.read_bytes()
        state: Dict[str, torch.Tensor] = {}
        for entry in checkpoint.tensors:
            start, nbytes = int(entry["offset"]), int(entry["nbytes"])
            if start + nbytes > len(blob):
                raise CheckpointError("Checkpoint payload truncated", field=entry["name"],
                                      context={"file": str(blob_file)})
            dtype = np.dtype(entry["dtype"]).newbyteorder("<")
            array = np.frombuffer(blob[start:start + nbytes], dtype=dtype).reshape(entry["shape"])
            state[entry["name"]] = torch.from_numpy(array.astype(dtype.newbyteorder("="), copy=True))
        return checkpoint, state

    def load(self, name: str) -> Tuple[Checkpoint, Dict[str, torch.Tensor]]:
        return self.read_tensors(self.checkpoints_dir / name)

    @staticmethod
    def restore(model: torch.nn.Module, checkpoint_dir: Path) -> Checkpoint:
        """Load tensors into the model; names and shapes must match exactly"""
        checkpoint, state = CheckpointManager.read_tensors(checkpoint_dir)
        try:
            model.load_state_dict(state, strict=True)
        except RuntimeError as e:
            raise CheckpointError(f"Checkpoint does not fit the model: {e}", field="checkpoint",
                                  value=str(checkpoint_dir))
        return checkpoint

    def delete_checkpoint(self, name: str) -> bool:
        target = self.checkpoints_dir / name
        if not target.exists():
            return False
        try:
            shutil.rmtree(target)
            return True
        except OSError as e:
            warnings.warn(f"Failed to delete {target}: {e}")
            return False
