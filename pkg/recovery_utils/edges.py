"""
First/last stage recovery: the stage is copied from its inner neighbor, and the
(de)embedding layer comes back from the replica held by that neighbor's node.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from model_utils.network import AdamState, EdgeLayers, EdgeState, StageState
from model_utils.params import ParameterVector
from recovery_utils.strategies import StrategyConfig, StrategyKind, bump_lr
from sim_utils.errors import ConfigurationError, UnsupportedRecoveryError, UsageError

logger = logging.getLogger(__name__)


class EdgeSide(str, Enum):
    FIRST = "first"
    LAST = "last"


@dataclass(frozen=True)
class EdgeReplica:
    """Copy of E kept by stage 2's node and of E_inv kept by stage s-1's node."""

    embedding: ParameterVector
    deembedding: ParameterVector
    staleness: int = 0

    def aged(self) -> "EdgeReplica":
        return replace(self, staleness=self.staleness + 1)

    @property
    def nbytes(self) -> int:
        return int(self.embedding.values.nbytes + self.deembedding.values.nbytes)


def refresh_edge_replicas(edges: EdgeLayers, replicas: Optional[EdgeReplica] = None) -> EdgeReplica:
    """Send the live edge weights to the neighboring nodes."""
    if replicas is not None and replicas.staleness > 1:
        logger.debug(f"Refreshing edge replicas that were {replicas.staleness} iterations stale")
    return EdgeReplica(
        ParameterVector(edges.embedding.values, edges.embedding.shape),
        ParameterVector(edges.deembedding.values, edges.deembedding.shape),
        staleness=0,
    )


def _restore_edge(edges: EdgeState, side: EdgeSide, replicas: EdgeReplica) -> EdgeState:
    layers = edges.layers
    split = layers.embedding.size
    m = np.array(edges.optimizer.m)
    v = np.array(edges.optimizer.v)
    if side == EdgeSide.FIRST:
        layers = EdgeLayers(replicas.embedding, layers.deembedding)
        m[:split] = 0.0
        v[:split] = 0.0
    else:
        layers = EdgeLayers(layers.embedding, replicas.deembedding)
        m[split:] = 0.0
        v[split:] = 0.0
    return replace(edges, layers=layers, optimizer=AdamState(m, v, edges.optimizer.step))


def recover_edge_stage(failed: EdgeSide, failed_stage: StageState, neighbor: StageState,
                       replicas: EdgeReplica, edges: EdgeState,
                       config: StrategyConfig) -> Tuple[StageState, EdgeState]:
    """S_1 <- S_2 (or S_s <- S_{s-1}), edge layer restored from the replica, lr bumped."""
    failed = EdgeSide(failed)
    if config.kind != StrategyKind.CHECKFREE_PLUS:
        raise UnsupportedRecoveryError(
            f"{config.kind.value} recovers intermediate stages only; "
            f"the {failed.value} stage needs checkfree-plus"
        )
    if replicas is None:
        raise UsageError("edge recovery needs a refreshed edge replica")
    if replicas.staleness:
        if config.replica_refresh_interval == 1:
            raise UsageError("edge recovery needs a replica refreshed at the last iteration")
        logger.warning(f"Restoring the {failed.value} edge layer from a replica "
                       f"{replicas.staleness} iterations old")
    if len(neighbor.blocks) != len(failed_stage.blocks):
        raise ConfigurationError(
            f"stage {failed_stage.stage_id} and neighbor {neighbor.stage_id} hold different block counts"
        )

    optimizer = neighbor.optimizer if config.average_moments else AdamState.fresh(neighbor.num_params)
    recovered = StageState(
        stage_id=failed_stage.stage_id,
        blocks=neighbor.blocks,
        optimizer=optimizer,
        omega=0.0,
        lr=bump_lr(failed_stage.lr, config.lr_bump),
    )
    restored = _restore_edge(edges, failed, replicas)
    logger.info(f"Recovered {failed.value} stage {failed_stage.stage_id} from stage {neighbor.stage_id} "
                f"and the edge replica")
    return recovered, restored
