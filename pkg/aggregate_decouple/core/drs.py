"""
Difficulty-aware re-weighting of the supervised classes.

Each class keeps a window of its last tau + 1 Dice scores. Classes whose Dice
stagnates or drops get a larger learning-speed factor d, classes with a low
Dice get a larger magnitude factor w_lambda; the product w_lambda * d^alpha is
normalized to mean 1 across classes.
"""

import logging
from collections import deque
from typing import Deque, Dict, Any

import numpy as np

from .exceptions import ValidationError

logger = logging.getLogger(__name__)

EPS_PSI = 1e-8


def difficulty_factor(d: np.ndarray, alpha: float) -> np.ndarray:
    return np.power(d, alpha)


class DifficultyState:
    """Per-class Dice history; single writer (the trainer)"""

    def __init__(self, num_classes: int, tau: int = 50, alpha: float = 0.2, eps: float = EPS_PSI):
        if num_classes < 1 or tau < 1:
            raise ValidationError("num_classes and tau must be positive", field="tau",
                                  value=tau, context={"num_classes": num_classes})
        if alpha <= 0 or eps <= 0:
            raise ValidationError("alpha and eps must be positive", field="alpha", value=alpha)
        self.num_classes = num_classes
        self.tau = tau
        self.alpha = alpha
        self.eps = eps
        self.history: Deque[np.ndarray] = deque(maxlen=tau + 1)

    def observe(self, dice: Any) -> None:
        """Append one per-class Dice vector; the oldest beyond tau + 1 is evicted"""
        values = np.asarray(dice, dtype=np.float64).reshape(-1)
        if values.shape[0] != self.num_classes:
            raise ValidationError("Dice vector has the wrong class count", field="dice",
                                  value=values.shape[0], context={"num_classes": self.num_classes})
        if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
            raise ValidationError("Dice scores must lie in [0, 1]", field="dice",
                                  value=values.tolist())
        self.history.append(values)

    @property
    def ready(self) -> bool:
        return len(self.history) >= 2

    def difficulty(self) -> np.ndarray:
        """Learning-speed difficulty d per class; 1 is neutral"""
        window = np.maximum(np.stack(self.history), self.eps)
        delta = window[1:] - window[:-1]
        log_ratio = np.log(window[1:] / window[:-1])
        not_learned = np.sum(np.minimum(delta, 0.0) * log_ratio, axis=0)
        learned = np.sum(np.maximum(delta, 0.0) * log_ratio, axis=0)
        return (not_learned + self.eps) / (learned + self.eps)

    def magnitude(self) -> np.ndarray:
        """Reversed-Dice factor: mean of (1 - lambda) over the window"""
        window = np.stack(self.history)[1:]
        return np.mean(1.0 - window, axis=0)

    def weights(self) -> np.ndarray:
        """Per-class weights with mean 1; uniform until two observations exist"""
        uniform = np.ones(self.num_classes)
        if not self.ready:
            return uniform
        raw = self.magnitude() * difficulty_factor(self.difficulty(), self.alpha)
        mean = raw.mean()
        if not np.isfinite(mean) or mean <= 0:
            return uniform
        return raw / mean

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_classes": self.num_classes,
            "tau": self.tau,
            "alpha": self.alpha,
            "eps": self.eps,
            "history": [h.tolist() for h in self.history],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DifficultyState":
        state = cls(data["num_classes"], data["tau"], data["alpha"], data.get("eps", EPS_PSI))
        for values in data.get("history", []):
            state.observe(values)
        return state

    def __len__(self) -> int:
        return len(self.history)
