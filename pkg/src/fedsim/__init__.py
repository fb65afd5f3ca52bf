"""Deterministic single-process federated learning simulator."""

from .client import ClientConfig, ClientUpdate, local_train
from .compression import CompressionScheme, EncodedUpdate, decode, encode, measure_bytes
from .config import RunConfig, load_config, parse_config
from .data import Dataset, Shard, load_csv, partition_dirichlet, partition_quantity_skew, synth_generate
from .engine import MetricsLog, Simulation, compare, run
from .models import ModelSpec, evaluate, grad, loss
from .server import ServerDelta, ServerOptimizerState, aggregate, init_state, server_step

__version__ = "0.1.0"

__all__ = [
    "ClientConfig", "ClientUpdate", "local_train",
    "CompressionScheme", "EncodedUpdate", "decode", "encode", "measure_bytes",
    "RunConfig", "load_config", "parse_config",
    "Dataset", "Shard", "load_csv", "partition_dirichlet", "partition_quantity_skew", "synth_generate",
    "MetricsLog", "Simulation", "compare", "run",
    "ModelSpec", "evaluate", "grad", "loss",
    "ServerDelta", "ServerOptimizerState", "aggregate", "init_state", "server_step",
]
