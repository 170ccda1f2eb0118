"""
Redundant computation: every node keeps a live mirror of the stage that follows
it, so a lost stage is copied back exactly from its predecessor's node.
"""

import logging
from typing import Dict, Iterable, Optional

from model_utils.network import StageState
from pipeline_utils.engine import ModelState
from sim_utils.errors import UnrecoverableFailureError, UsageError

logger = logging.getLogger(__name__)


def holder_of(stage_id: int, num_stages: int) -> int:
    """Node holding the mirror of `stage_id`; stage 1 wraps around to stage s."""
    return num_stages if stage_id == 1 else stage_id - 1


class RedundantStore:
    """Mirrors of every stage (weights and optimizer state), refreshed after each step."""

    def __init__(self, num_stages: int):
        self.num_stages = num_stages
        self._mirrors: Dict[int, StageState] = {}
        self.refreshes = 0

    def refresh(self, state: ModelState):
        self._mirrors = {stage.stage_id: stage for stage in state.stages}
        self.refreshes += 1

    def mirror(self, stage_id: int) -> Optional[StageState]:
        return self._mirrors.get(stage_id)

    def holder_of(self, stage_id: int) -> int:
        return holder_of(stage_id, self.num_stages)


def redundant_recover(stage_id: int, store: RedundantStore, dead_stages: Iterable[int],
                      iteration: Optional[int] = None) -> StageState:
    """Exact copy of the failed stage taken from the previous node's mirror."""
    dead = set(dead_stages)
    holder = store.holder_of(stage_id)
    if holder in dead:
        raise UnrecoverableFailureError(
            f"stage {stage_id} and the stage {holder} holding its redundant copy failed together",
            iteration=iteration,
            stages=tuple(sorted({stage_id, holder})),
        )
    mirror = store.mirror(stage_id)
    if mirror is None:
        raise UsageError("redundant store was never refreshed")
    logger.info(f"Restored stage {stage_id} from the redundant copy on stage {holder}")
    return mirror
