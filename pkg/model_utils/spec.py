"""
Model shape: dimensions, depth and the stage partition.
"""

from enum import Enum
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from config.settings import MODEL_SETTINGS
from sim_utils.errors import ConfigurationError


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"
    LINEAR = "linear"


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


def even_partition(num_layers: int, num_stages: int) -> List[Tuple[int, int]]:
    """Split layers 1..L into s contiguous ranges, earlier stages taking the remainder."""
    if not 1 <= num_stages <= num_layers:
        raise ConfigurationError(f"need 1 <= stages <= layers, got s={num_stages}, L={num_layers}")
    base, extra = divmod(num_layers, num_stages)
    ranges, start = [], 1
    for i in range(num_stages):
        size = base + (1 if i < extra else 0)
        ranges.append((start, start + size - 1))
        start += size
    return ranges


class ModelSpec(BaseModel):
    """Embedding -> L residual blocks split into s stages -> de-embedding."""

    model_config = ConfigDict(frozen=True)

    input_dim: int = MODEL_SETTINGS["INPUT_DIM"]
    model_dim: int = MODEL_SETTINGS["MODEL_DIM"]
    hidden_dim: int = MODEL_SETTINGS["HIDDEN_DIM"]
    output_dim: int = 0
    num_layers: int = MODEL_SETTINGS["NUM_LAYERS"]
    num_stages: int = MODEL_SETTINGS["NUM_STAGES"]
    partition: Tuple[Tuple[int, int], ...] = ()
    activation: Activation = Activation(MODEL_SETTINGS["ACTIVATION"])
    task: Task = Task(MODEL_SETTINGS["TASK"])
    num_classes: int = MODEL_SETTINGS["NUM_CLASSES"]

    @model_validator(mode="before")
    @classmethod
    def _fill_derived(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        task = Task(data.get("task", MODEL_SETTINGS["TASK"]))
        if data.get("output_dim") is None:
            if task == Task.CLASSIFICATION:
                data["output_dim"] = data.get("num_classes", MODEL_SETTINGS["NUM_CLASSES"])
            else:
                data["output_dim"] = data.get("input_dim", MODEL_SETTINGS["INPUT_DIM"])
        if data.get("partition") is None:
            data["partition"] = even_partition(
                int(data.get("num_layers", MODEL_SETTINGS["NUM_LAYERS"])),
                int(data.get("num_stages", MODEL_SETTINGS["NUM_STAGES"])),
            )
        return data

    @model_validator(mode="after")
    def _check(self):
        for name in ("input_dim", "model_dim", "hidden_dim", "output_dim", "num_layers", "num_classes"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        # A single stage is only used for monolithic reference runs.
        if not 1 <= self.num_stages <= self.num_layers:
            raise ConfigurationError(
                f"num_stages must lie in [1, {self.num_layers}], got {self.num_stages}"
            )
        if self.task == Task.CLASSIFICATION and self.output_dim != self.num_classes:
            raise ConfigurationError("classification output_dim must equal num_classes")
        self._check_partition()
        return self

    def _check_partition(self):
        if len(self.partition) != self.num_stages:
            raise ConfigurationError(
                f"partition has {len(self.partition)} ranges for {self.num_stages} stages"
            )
        expected_start = 1
        for start, end in self.partition:
            if start != expected_start or end < start:
                raise ConfigurationError(
                    f"partition {list(self.partition)} is not contiguous and ordered over 1..{self.num_layers}"
                )
            expected_start = end + 1
        if expected_start != self.num_layers + 1:
            raise ConfigurationError(f"partition does not cover layers 1..{self.num_layers}")

    def stage_layers(self, stage_id: int) -> range:
        """Global 1-based layer indices held by a stage."""
        if not 1 <= stage_id <= self.num_stages:
            raise ConfigurationError(f"stage id {stage_id} outside 1..{self.num_stages}")
        start, end = self.partition[stage_id - 1]
        return range(start, end + 1)

    def stage_of_layer(self, layer: int) -> int:
        for stage_id, (start, end) in enumerate(self.partition, start=1):
            if start <= layer <= end:
                return stage_id
        raise ConfigurationError(f"layer {layer} outside 1..{self.num_layers}")

    @property
    def block_shapes(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        return (self.model_dim, self.hidden_dim), (self.hidden_dim, self.model_dim)

    @property
    def edge_shapes(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        return (self.input_dim, self.model_dim), (self.model_dim, self.output_dim)
