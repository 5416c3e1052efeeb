"""
Momentum SGD shared by weights, biases, codebooks and centroids
"""

from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from loguru import logger

from .errors import ConfigurationError

# (name, parameter array updated in place, gradient array)
Param = Tuple[str, np.ndarray, np.ndarray]


class SGDMomentum:
    """
    Optimizer state: step rule settings plus one velocity buffer per parameter

    Velocities are keyed by parameter name so the state survives checkpoints.
    Update rule: v <- momentum * v - lr * g; p <- p + v.
    """

    def __init__(
        self,
        learning_rate: float,
        momentum: float = 0.9,
        decay_gamma: float = 1.0,
        decay_every: int = 0,
    ):
        """
        Args:
            learning_rate: Base step size (> 0)
            momentum: Velocity decay in [0, 1)
            decay_gamma: Step-decay factor applied every decay_every epochs
            decay_every: Epoch period of the step decay (0 keeps lr constant)
        """
        if not learning_rate > 0:
            raise ConfigurationError(f"learning rate must be > 0, got {learning_rate}")
        if not 0.0 <= momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {momentum}")
        if decay_every < 0 or not decay_gamma > 0:
            raise ConfigurationError("step decay needs decay_every >= 0 and decay_gamma > 0")
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.decay_gamma = decay_gamma
        self.decay_every = decay_every
        self.velocities: Dict[str, np.ndarray] = {}

    def lr_at(self, epoch: int) -> float:
        """Learning rate in effect during the given (0-based) epoch"""
        if self.decay_every:
            return self.learning_rate * self.decay_gamma ** (epoch // self.decay_every)
        return self.learning_rate

    def step(self, params: Iterable[Param], learning_rate: Optional[float] = None) -> None:
        """Apply one update to every (name, value, grad) triple"""
        lr = self.learning_rate if learning_rate is None else learning_rate
        for name, value, grad in params:
            velocity = self.velocities.get(name)
            if velocity is None:
                velocity = np.zeros_like(value)
                self.velocities[name] = velocity
            elif velocity.shape != value.shape:
                raise ConfigurationError(
                    f"velocity of '{name}' has shape {velocity.shape}, parameter has {value.shape}"
                )
            velocity *= self.momentum
            velocity -= lr * grad
            value += velocity

    def reset(self) -> None:
        self.velocities.clear()

    def settings(self) -> Dict[str, float]:
        return {
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "decay_gamma": self.decay_gamma,
            "decay_every": self.decay_every,
        }

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: velocity.copy() for name, velocity in self.velocities.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.velocities = {name: np.array(velocity, dtype=np.float64) for name, velocity in state.items()}
        logger.debug(f"Loaded {len(self.velocities)} velocity buffers")
