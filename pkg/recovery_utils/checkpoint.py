"""
Checkpoint snapshots and their versioned binary container.

Layout after the `ckfree-ckpt v1` header line: a sequence of little-endian
float64 arrays, each prefixed by its uint64 element count, in this order:
E, E_inv, stage 1..s weights, stage 1..s (m, v), edge (m, v), then one
scalar array [iteration, edge_step, edge_lr, (step, omega, lr) per stage,
data_cursor].
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from config.settings import RECOVERY_SETTINGS
from model_utils.network import AdamState, EdgeLayers, EdgeState, ResidualBlock, StageState
from model_utils.params import ParameterVector
from model_utils.spec import ModelSpec
from pipeline_utils.engine import ModelState
from sim_utils.errors import CheckpointFormatError, ConfigurationError

logger = logging.getLogger(__name__)

HEADER = f"ckfree-ckpt {RECOVERY_SETTINGS['CHECKPOINT_FORMAT_VERSION']}\n".encode("ascii")
_COUNT = np.dtype("<u8")
_FLOAT = np.dtype("<f8")


@dataclass(frozen=True)
class CheckpointSnapshot:
    iteration: int
    edges: EdgeState
    stages: Tuple[StageState, ...]
    data_cursor: int

    def to_bytes(self) -> bytes:
        arrays: List[np.ndarray] = [self.edges.layers.embedding.values,
                                    self.edges.layers.deembedding.values]
        arrays += [stage.flat_weights().values for stage in self.stages]
        for stage in self.stages:
            arrays += [stage.optimizer.m, stage.optimizer.v]
        arrays += [self.edges.optimizer.m, self.edges.optimizer.v]
        scalars = [float(self.iteration), float(self.edges.optimizer.step), self.edges.lr]
        for stage in self.stages:
            scalars += [float(stage.optimizer.step), stage.omega, stage.lr]
        scalars.append(float(self.data_cursor))
        arrays.append(np.array(scalars))

        chunks = [HEADER]
        for array in arrays:
            chunks.append(np.array([array.size], dtype=_COUNT).tobytes())
            chunks.append(np.ascontiguousarray(array, dtype=_FLOAT).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes, spec: ModelSpec) -> "CheckpointSnapshot":
        if not data.startswith(HEADER):
            raise CheckpointFormatError("missing 'ckfree-ckpt v1' header")
        arrays, offset = [], len(HEADER)
        while offset < len(data):
            if offset + 8 > len(data):
                raise CheckpointFormatError(f"truncated length prefix at byte {offset}")
            count = int(np.frombuffer(data, dtype=_COUNT, count=1, offset=offset)[0])
            offset += 8
            end = offset + 8 * count
            if end > len(data):
                raise CheckpointFormatError(f"array of {count} values overruns the snapshot")
            arrays.append(np.frombuffer(data, dtype=_FLOAT, count=count, offset=offset).copy())
            offset = end

        s = spec.num_stages
        expected = 2 + s + 2 * s + 2 + 1
        if len(arrays) != expected:
            raise CheckpointFormatError(f"snapshot holds {len(arrays)} arrays, expected {expected}")
        scalars = arrays[-1]
        if scalars.size != 3 + 3 * s + 1:
            raise CheckpointFormatError("scalar block has the wrong length")

        try:
            e_shape, e_inv_shape = spec.edge_shapes
            layers = EdgeLayers(ParameterVector(arrays[0], e_shape), ParameterVector(arrays[1], e_inv_shape))
            edge_m, edge_v = arrays[2 + 3 * s], arrays[3 + 3 * s]
            edges = EdgeState(layers, AdamState(edge_m, edge_v, int(scalars[1])), float(scalars[2]))

            stages = []
            for i in range(s):
                stage_id = i + 1
                n_blocks = len(spec.stage_layers(stage_id))
                template = _empty_stage(stage_id, n_blocks, spec)
                step, omega, lr = scalars[3 + 3 * i: 6 + 3 * i]
                moments = AdamState(arrays[2 + s + 2 * i], arrays[3 + s + 2 * i], int(step))
                weights = ParameterVector(arrays[2 + i], (arrays[2 + i].size,))
                stage = template.with_weights(weights)
                stages.append(StageState(stage_id, stage.blocks, moments, float(omega), float(lr)))
        except ConfigurationError as e:
            raise CheckpointFormatError(f"snapshot does not match the model spec: {e}") from e

        return cls(int(scalars[0]), edges, tuple(stages), int(scalars[-1]))


def _empty_stage(stage_id: int, n_blocks: int, spec: ModelSpec) -> StageState:
    blocks = tuple(ResidualBlock.zeros(spec) for _ in range(n_blocks))
    size = sum(b.w1.size + b.w2.size for b in blocks)
    return StageState(stage_id, blocks, AdamState.fresh(size), 0.0, 1.0)


def checkpoint_save(state: ModelState, iteration: Optional[int] = None) -> CheckpointSnapshot:
    iteration = state.iteration if iteration is None else iteration
    return CheckpointSnapshot(iteration, state.edges, state.stages, state.iteration)


def checkpoint_restore(snapshot: CheckpointSnapshot, spec: ModelSpec) -> ModelState:
    return ModelState(spec, snapshot.edges, snapshot.stages, snapshot.data_cursor)


class CheckpointStore:
    """Reliable remote store that keeps the most recent serialized snapshot."""

    def __init__(self, spec: ModelSpec, interval: int):
        if interval <= 0:
            raise ConfigurationError("checkpoint interval must be positive")
        self.spec = spec
        self.interval = interval
        self._latest: Optional[bytes] = None
        self.latest_iteration: Optional[int] = None
        self.saves = 0

    def maybe_save(self, state: ModelState) -> bool:
        """Save when the model iteration is a multiple of the interval."""
        if state.iteration % self.interval:
            return False
        if self.latest_iteration == state.iteration:
            return False
        self._latest = checkpoint_save(state).to_bytes()
        self.latest_iteration = state.iteration
        self.saves += 1
        logger.debug(f"Checkpoint saved at iteration {state.iteration}")
        return True

    def restore(self) -> Optional[ModelState]:
        if self._latest is None:
            return None
        snapshot = CheckpointSnapshot.from_bytes(self._latest, self.spec)
        return checkpoint_restore(snapshot, self.spec)
