"""
Synthetic teacher-student tasks. A frozen random network of the same
architecture produces the targets; batches are a pure function of
(seed, cursor) so a restored data cursor replays identical data.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from config.settings import MODEL_SETTINGS, TRAINING_SETTINGS
from model_utils.network import EdgeLayers, StageState, forward, init_network
from model_utils.spec import ModelSpec, Task

# Independent random streams derived from the run seed
INIT_STREAM = 0
TARGET_STREAM = 1
TRAIN_STREAM = 2
VALIDATION_STREAM = 3
PROBE_STREAM = 4


@dataclass(frozen=True)
class SyntheticTask:
    spec: ModelSpec
    seed: int
    target_edges: EdgeLayers
    target_stages: Tuple[StageState, ...]

    @classmethod
    def create(cls, spec: ModelSpec, seed: int,
               gain: float = MODEL_SETTINGS["TARGET_INIT_GAIN"]) -> "SyntheticTask":
        rng = np.random.default_rng([seed, TARGET_STREAM])
        edges, stages = init_network(spec, rng, lr=1.0, gain=gain)
        return cls(spec, seed, edges.layers, stages)

    def _sample(self, rng: np.random.Generator, size: int):
        inputs = rng.standard_normal((size, self.spec.input_dim))
        outputs = forward(self.spec, self.target_edges, self.target_stages, inputs).predictions
        if self.spec.task == Task.CLASSIFICATION:
            return inputs, np.argmax(outputs, axis=1)
        return inputs, outputs

    def batch(self, cursor: int, batch_size: int = TRAINING_SETTINGS["BATCH_SIZE"]):
        """Training batch number `cursor`."""
        return self._sample(np.random.default_rng([self.seed, TRAIN_STREAM, cursor]), batch_size)

    def validation_set(self, size: int = TRAINING_SETTINGS["VALIDATION_SIZE"]):
        return self._sample(np.random.default_rng([self.seed, VALIDATION_STREAM]), size)

    def probe_set(self, size: int):
        return self._sample(np.random.default_rng([self.seed, PROBE_STREAM]), size)


def init_rng(seed: int) -> np.random.Generator:
    """Generator used for the trainable model's initialization."""
    return np.random.default_rng([seed, INIT_STREAM])
