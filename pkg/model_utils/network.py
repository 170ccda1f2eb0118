"""
Residual network pieces and the exact forward/backward pass over pipeline stages.

The model is  E_inv o (I + f_L) o ... o (I + f_1) o E  with row-vector batches:
h0 = X @ E, each block maps h -> h + act(h @ W1) @ W2, predictions = h_L @ E_inv.
Stages are applied in whatever order the caller passes them, which is how the
pipeline engine expresses swapped execution.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from model_utils.params import ParameterVector
from model_utils.spec import Activation, ModelSpec, Task
from sim_utils.errors import ConfigurationError, UsageError
from sim_utils.guards import ensure_finite

logger = logging.getLogger(__name__)


def activate(kind: Activation, x: np.ndarray) -> np.ndarray:
    if kind == Activation.TANH:
        return np.tanh(x)
    if kind == Activation.RELU:
        return np.maximum(x, 0.0)
    return x


def activation_derivative(kind: Activation, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if kind == Activation.TANH:
        return 1.0 - post * post
    if kind == Activation.RELU:
        return (pre > 0.0).astype(np.float64)
    return np.ones_like(pre)


@dataclass(frozen=True)
class ResidualBlock:
    """One residual layer f_l; W1 is (model x hidden), W2 is (hidden x model)."""

    w1: ParameterVector
    w2: ParameterVector

    def apply(self, x: np.ndarray, activation: Activation) -> np.ndarray:
        return x + activate(activation, x @ self.w1.as_array()) @ self.w2.as_array()

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ResidualBlock":
        shape1, shape2 = spec.block_shapes
        return cls(ParameterVector.zeros(shape1), ParameterVector.zeros(shape2))


@dataclass(frozen=True)
class EdgeLayers:
    """Embedding E (input x model) and de-embedding E_inv (model x output)."""

    embedding: ParameterVector
    deembedding: ParameterVector

    def flat(self) -> ParameterVector:
        return ParameterVector.concat([self.embedding, self.deembedding])

    def with_flat(self, vector: ParameterVector) -> "EdgeLayers":
        embedding, deembedding = vector.split([self.embedding.shape, self.deembedding.shape])
        return EdgeLayers(embedding, deembedding)

    def same_bits(self, other: "EdgeLayers") -> bool:
        return self.embedding.same_bits(other.embedding) and self.deembedding.same_bits(other.deembedding)


@dataclass(frozen=True, eq=False)
class AdamState:
    """First/second moment accumulators over a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).ravel()
        v = np.array(self.v, dtype=np.float64).ravel()
        if m.shape != v.shape:
            raise ConfigurationError("Adam moment sizes differ")
        m.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "v", v)

    @classmethod
    def fresh(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)

    @property
    def size(self) -> int:
        return int(self.m.size)


@dataclass(frozen=True)
class StageState:
    """Weights, optimizer state, last squared gradient norm and lr of one stage."""

    stage_id: int
    blocks: Tuple[ResidualBlock, ...]
    optimizer: AdamState
    omega: float = 0.0
    lr: float = 3e-4

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.optimizer.size != self.num_params:
            raise ConfigurationError(
                f"stage {self.stage_id}: optimizer holds {self.optimizer.size} moments "
                f"for {self.num_params} parameters"
            )
        if self.omega < 0:
            raise ConfigurationError("omega must be nonnegative")
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")

    @property
    def num_params(self) -> int:
        return sum(b.w1.size + b.w2.size for b in self.blocks)

    def weight_shapes(self) -> List[Tuple[int, ...]]:
        shapes = []
        for block in self.blocks:
            shapes.extend([block.w1.shape, block.w2.shape])
        return shapes

    def flat_weights(self) -> ParameterVector:
        parts = []
        for block in self.blocks:
            parts.extend([block.w1, block.w2])
        return ParameterVector.concat(parts)

    def with_weights(self, vector: ParameterVector) -> "StageState":
        """Same stage with its block weights replaced by `vector` (flat layout)."""
        pieces = vector.split(self.weight_shapes())
        blocks = tuple(ResidualBlock(pieces[2 * i], pieces[2 * i + 1]) for i in range(len(self.blocks)))
        return replace(self, blocks=blocks)

    def fresh_optimizer(self) -> "StageState":
        return replace(self, optimizer=AdamState.fresh(self.num_params))


@dataclass(frozen=True)
class EdgeState:
    """Edge layers plus their optimizer state; they train like any stage."""

    layers: EdgeLayers
    optimizer: AdamState
    lr: float = 3e-4

    def __post_init__(self):
        if self.optimizer.size != self.layers.flat().size:
            raise ConfigurationError("edge optimizer size does not match edge layers")


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    """Uniform in [-a, a] with a = gain * sqrt(6 / (fan_in + fan_out))."""
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_block(rng: np.random.Generator, spec: ModelSpec, gain: float = 1.0) -> ResidualBlock:
    (m, h), (h2, m2) = spec.block_shapes
    return ResidualBlock(
        ParameterVector.from_array(glorot_uniform(rng, m, h, gain)),
        ParameterVector.from_array(glorot_uniform(rng, h2, m2, gain)),
    )


def init_network(spec: ModelSpec, rng: np.random.Generator, lr: float,
                 gain: float = 1.0) -> Tuple[EdgeState, Tuple[StageState, ...]]:
    """Initialize E, the L blocks in layer order, then E_inv, from one generator."""
    (i, m), (m2, o) = spec.edge_shapes
    embedding = ParameterVector.from_array(glorot_uniform(rng, i, m, gain))
    blocks = [init_block(rng, spec, gain) for _ in range(spec.num_layers)]
    deembedding = ParameterVector.from_array(glorot_uniform(rng, m2, o, gain))

    layers = EdgeLayers(embedding, deembedding)
    edges = EdgeState(layers, AdamState.fresh(layers.flat().size), lr)
    stages = []
    for stage_id in range(1, spec.num_stages + 1):
        stage_blocks = tuple(blocks[layer - 1] for layer in spec.stage_layers(stage_id))
        size = sum(b.w1.size + b.w2.size for b in stage_blocks)
        stages.append(StageState(stage_id, stage_blocks, AdamState.fresh(size), 0.0, lr))
    return edges, tuple(stages)


def blocks_parameter_vector(stages: Sequence[StageState]) -> ParameterVector:
    """Concatenation of every stage's flat weights in stage-id order."""
    ordered = sorted(stages, key=lambda s: s.stage_id)
    return ParameterVector.concat(stage.flat_weights() for stage in ordered)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class BlockCache:
    stage_id: int
    index: int
    layer: int
    x_in: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class ForwardCache:
    """Everything backward needs, recorded in execution order."""

    spec: ModelSpec
    inputs: np.ndarray
    embedding: np.ndarray
    deembedding: np.ndarray
    stage_order: Tuple[int, ...]
    stage_block_counts: Dict[int, int]
    activations: List[np.ndarray] = field(default_factory=list)
    blocks: List[BlockCache] = field(default_factory=list)
    final_hidden: Optional[np.ndarray] = None
    predictions: Optional[np.ndarray] = None
    iteration: Optional[int] = None


@dataclass
class Gradients:
    """Loss plus gradients laid out exactly like the flat weights they belong to."""

    loss: float
    stages: Dict[int, np.ndarray]
    edges: np.ndarray


def _check_stages(spec: ModelSpec, stages: Sequence[StageState]):
    ids = [s.stage_id for s in stages]
    if sorted(ids) != list(range(1, spec.num_stages + 1)):
        raise ConfigurationError(f"stage ids {ids} are not a permutation of 1..{spec.num_stages}")
    shape1, shape2 = spec.block_shapes
    for stage in stages:
        expected = len(spec.stage_layers(stage.stage_id))
        if len(stage.blocks) != expected:
            raise ConfigurationError(
                f"stage {stage.stage_id} has {len(stage.blocks)} blocks, partition needs {expected}"
            )
        for block in stage.blocks:
            if block.w1.shape != shape1 or block.w2.shape != shape2:
                raise ConfigurationError(
                    f"stage {stage.stage_id} block shapes {block.w1.shape}/{block.w2.shape} "
                    f"differ from {shape1}/{shape2}"
                )


def forward(spec: ModelSpec, edges: EdgeLayers, stages: Sequence[StageState], batch,
            layer_mask: Optional[Sequence[int]] = None,
            iteration: Optional[int] = None) -> ForwardCache:
    """Run the network with stages applied in the given order and cache activations."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigurationError(f"batch shape {x.shape} does not match input_dim={spec.input_dim}")
    if edges.embedding.shape != spec.edge_shapes[0] or edges.deembedding.shape != spec.edge_shapes[1]:
        raise ConfigurationError("edge layer shapes do not match the model spec")
    _check_stages(spec, stages)
    if layer_mask is not None and len(layer_mask) != spec.num_layers:
        raise ConfigurationError(f"layer mask has {len(layer_mask)} entries for {spec.num_layers} layers")

    cache = ForwardCache(
        spec=spec,
        inputs=x,
        embedding=edges.embedding.as_array(),
        deembedding=edges.deembedding.as_array(),
        stage_order=tuple(s.stage_id for s in stages),
        stage_block_counts={s.stage_id: len(s.blocks) for s in stages},
        iteration=iteration,
    )
    h = x @ cache.embedding
    for stage in stages:
        cache.activations.append(h)
        layers = spec.stage_layers(stage.stage_id)
        for index, block in enumerate(stage.blocks):
            layer = layers[index]
            if layer_mask is not None and not layer_mask[layer - 1]:
                continue
            w1, w2 = block.w1.as_array(), block.w2.as_array()
            pre = h @ w1
            post = activate(spec.activation, pre)
            cache.blocks.append(BlockCache(stage.stage_id, index, layer, h, pre, post, w1, w2))
            h = h + post @ w2
        ensure_finite(h, f"activations leaving stage {stage.stage_id}", iteration)

    cache.final_hidden = h
    cache.activations.append(h)
    cache.predictions = h @ cache.deembedding
    ensure_finite(cache.predictions, "predictions", iteration)
    return cache


def loss_and_output_grad(spec: ModelSpec, predictions: np.ndarray, targets) -> Tuple[float, np.ndarray]:
    """Mean squared error (regression) or mean cross-entropy (classification)."""
    if spec.task == Task.CLASSIFICATION:
        labels = np.asarray(targets).astype(np.int64).ravel()
        if labels.shape[0] != predictions.shape[0]:
            raise ConfigurationError("label count does not match batch size")
        shifted = predictions - predictions.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        sum_exp = exp.sum(axis=1, keepdims=True)
        log_probs = shifted - np.log(sum_exp)
        rows = np.arange(labels.shape[0])
        loss = float(-np.mean(log_probs[rows, labels]))
        grad = exp / sum_exp
        grad[rows, labels] -= 1.0
        return loss, grad / labels.shape[0]

    y = np.asarray(targets, dtype=np.float64)
    if y.shape != predictions.shape:
        raise ConfigurationError(f"target shape {y.shape} does not match predictions {predictions.shape}")
    diff = predictions - y
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def backward(cache: Optional[ForwardCache], targets) -> Gradients:
    """Exact gradients of the loss w.r.t. every stage and both edge layers."""
    if cache is None or cache.predictions is None or cache.final_hidden is None:
        raise UsageError("backward called without cached activations from forward")
    spec = cache.spec
    loss, d_pred = loss_and_output_grad(spec, cache.predictions, targets)

    g_deembedding = cache.final_hidden.T @ d_pred
    dh = d_pred @ cache.deembedding.T

    block_grads: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]] = {}
    for bc in reversed(cache.blocks):
        g_w2 = bc.post.T @ dh
        d_post = dh @ bc.w2.T
        d_pre = d_post * activation_derivative(spec.activation, bc.pre, bc.post)
        g_w1 = bc.x_in.T @ d_pre
        dh = dh + d_pre @ bc.w1.T
        block_grads[(bc.stage_id, bc.index)] = (g_w1, g_w2)

    g_embedding = cache.inputs.T @ dh

    shape1, shape2 = spec.block_shapes
    zero1, zero2 = np.zeros(shape1), np.zeros(shape2)
    stage_grads = {}
    for stage_id in cache.stage_order:
        parts = []
        for index in range(cache.stage_block_counts[stage_id]):
            g_w1, g_w2 = block_grads.get((stage_id, index), (zero1, zero2))
            parts.extend([g_w1.ravel(), g_w2.ravel()])
        flat = np.concatenate(parts) if parts else np.zeros(0)
        stage_grads[stage_id] = ensure_finite(flat, f"gradients of stage {stage_id}", cache.iteration)

    edge_grads = np.concatenate([g_embedding.ravel(), g_deembedding.ravel()])
    ensure_finite(edge_grads, "edge gradients", cache.iteration)
    return Gradients(loss=loss, stages=stage_grads, edges=edge_grads)


def evaluate_loss(spec: ModelSpec, edges: EdgeLayers, stages: Sequence[StageState], inputs, targets,
                  layer_mask: Optional[Sequence[int]] = None) -> float:
    """Loss of the standard-order network, no gradients."""
    ordered = sorted(stages, key=lambda s: s.stage_id)
    cache = forward(spec, edges, ordered, inputs, layer_mask=layer_mask)
    loss, _ = loss_and_output_grad(spec, cache.predictions, targets)
    return loss


def layer_omission_loss(spec: ModelSpec, edges: EdgeLayers, stages: Sequence[StageState],
                        mask: Sequence[int], data) -> float:
    """Loss with every layer whose mask entry is 0 replaced by its identity skip."""
    if len(mask) != spec.num_layers:
        raise ConfigurationError(f"mask has {len(mask)} entries for {spec.num_layers} layers")
    inputs, targets = data
    return evaluate_loss(spec, edges, stages, inputs, targets, layer_mask=mask)
