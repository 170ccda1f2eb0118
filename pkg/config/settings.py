"""
Configuration settings for the stage-failure recovery simulator.
Centralized settings to make the simulator more customizable.
"""

import os

from dotenv import load_dotenv

load_dotenv()

# Model Settings (desk-scale residual network)
MODEL_SETTINGS = {
    # Width of the synthetic inputs
    "INPUT_DIM": 16,

    # Width of the residual stream
    "MODEL_DIM": 32,

    # Width of the hidden layer inside each residual block
    "HIDDEN_DIM": 64,

    # Number of residual blocks (L)
    "NUM_LAYERS": 8,

    # Number of pipeline stages (s)
    "NUM_STAGES": 4,

    # tanh | relu | linear
    "ACTIVATION": "tanh",

    # regression (teacher-student, MSE) | classification (16 classes, cross-entropy)
    "TASK": "regression",

    "NUM_CLASSES": 16,

    # Init scale multiplier of the frozen target network
    "TARGET_INIT_GAIN": 2.0,
}

# Training Settings
TRAINING_SETTINGS = {
    "BATCH_SIZE": 256,
    "NUM_MICROBATCHES": 8,
    "TOTAL_ITERATIONS": 2000,
    "LEARNING_RATE": 3e-4,

    # constant | cosine (linear warmup then cosine decay to MIN_LR_RATIO)
    "LR_SCHEDULE": "constant",
    "WARMUP_ITERATIONS": 0,
    "MIN_LR_RATIO": 0.1,

    # Adam, no weight decay
    "ADAM_BETAS": (0.9, 0.999),
    "ADAM_EPS": 1e-8,

    "EVAL_INTERVAL": 50,
    "VALIDATION_SIZE": 1024,
}

# Failure Injection Settings
FAILURE_SETTINGS = {
    # Per-hour stage failure probabilities used in the comparisons
    "RATES": {"5%": 0.05, "10%": 0.10, "16%": 0.16},

    # Seconds of simulated wall clock per iteration for hour->iteration conversion
    "ITERATION_SECONDS": 92.12,

    "TRACE_FORMAT_VERSION": "v1",
}

# Recovery Settings
RECOVERY_SETTINGS = {
    # Learning-rate multiplier applied to a reinitialized stage
    "LR_BUMP": 1.1,

    # Checkpoint every N model iterations
    "CHECKPOINT_INTERVAL": 100,

    # Average neighbor Adam moments instead of starting from zero
    "AVERAGE_MOMENTS": False,

    # Refresh (de)embedding replicas every N iterations
    "REPLICA_REFRESH_INTERVAL": 1,

    "CHECKPOINT_FORMAT_VERSION": "v1",
}

# Cost Model Settings (desk-scale defaults)
COST_SETTINGS = {
    "FWD_SECONDS": 0.8,
    "BWD_SECONDS": 1.6,
    "ACTIVATION_BYTES": 4 * 1024 * 1024,
    "STAGE_WEIGHT_BYTES": 500 * 1000 * 1000,
    "EDGE_WEIGHT_BYTES": 100 * 1000 * 1000,
    "FULL_MODEL_BYTES": 2200 * 1000 * 1000,
    "NUM_MICROBATCHES": 8,

    # Remote checkpoint store link
    "STORAGE_LATENCY": 0.1,
    "STORAGE_BANDWIDTH": 500e6 / 8,

    # sequential | fill_drain
    "SCHEDULE": "sequential",

    # Upload checkpoints synchronously (stalls training)
    "CHECKPOINT_BLOCKING": False,

    # Time for a replacement node to join before transfers start
    "NODE_STARTUP_SECONDS": 0.0,
}

# Medium-model preset: reproduces the iteration-time ratio between redundant
# computation and checkpoint-free recovery on a 4-stage uniform 40 MB/s network.
MEDIUM_MODEL_COST = {
    "FWD_SECONDS": 0.8,
    "BWD_SECONDS": 1.6,
    "ACTIVATION_BYTES": 4 * 1000 * 1000,
    "STAGE_WEIGHT_BYTES": 1000 * 1000 * 1000,
    "EDGE_WEIGHT_BYTES": 100 * 1000 * 1000,
    "FULL_MODEL_BYTES": 4200 * 1000 * 1000,
    "NUM_MICROBATCHES": 8,
}

# Network Settings: synthetic 5-site profile (latency in seconds, bandwidth in Mb/s)
NETWORK_SETTINGS = {
    "SITES": ["us-east", "us-west", "eu-west", "asia-east", "sa-east"],
    "LATENCY_S": [
        [0.001, 0.065, 0.080, 0.150, 0.120],
        [0.065, 0.001, 0.140, 0.110, 0.150],
        [0.080, 0.140, 0.001, 0.145, 0.130],
        [0.150, 0.110, 0.145, 0.001, 0.150],
        [0.120, 0.150, 0.130, 0.150, 0.001],
    ],
    "BANDWIDTH_MBPS": [
        [10000, 500, 400, 150, 250],
        [500, 10000, 200, 300, 100],
        [400, 200, 10000, 150, 200],
        [150, 300, 150, 10000, 100],
        [250, 100, 200, 100, 10000],
    ],
    "NETWORK_FORMAT_VERSION": "v1",
}

# Experiment Harness Settings
EXPERIMENT_SETTINGS = {
    "OUTPUT_DIR": os.getenv("CKFREE_OUTPUT_DIR", "runs"),
    "SEEDS": [0],
    "METRICS_FILE": "metrics.csv",
    "EVENTS_FILE": "events.csv",
    "SUMMARY_FILE": "summary.json",
    "RESOLVED_CONFIG_FILE": "resolved_config.json",
    "FORMAT_VERSION": 1,

    # Probe batch for function-space measurements
    "PROBE_SIZE": 256,

    # Fractions of the baseline loss drop used as convergence milestones
    "MILESTONE_FRACTIONS": [0.5, 0.7, 0.8, 0.9],
}

# Logging Settings
LOGGING_SETTINGS = {
    "LOG_FILE": os.getenv("CKFREE_LOG_FILE", "checkfree_sim.log"),
    "LEVEL": os.getenv("CKFREE_LOG_LEVEL", "INFO"),
    "FORMAT": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
}
