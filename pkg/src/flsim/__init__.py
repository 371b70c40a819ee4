"""Deterministic desk-scale federated learning simulator for binary threat detection."""
from .aggregation import AgrRule, apply_update, fedavg, multi_krum, trimmed_mean
from .attacks import AttackConfig
from .config import ExperimentFile, FLConfig
from .data import Dataset, SynthSpec, hash_features, load_csv, synth_generate
from .models import ClientUpdate, Metrics, ModelSpec, evaluate, local_train, predict
from .orchestrator import (
    ExperimentResult,
    RoundRecord,
    Simulation,
    attack_impact,
    build_datasets,
    detect_convergence,
    instability_metrics,
    run_experiment,
    run_file,
)
from .partition import PartitionPlan, PartitionSpec, partition

__version__ = "0.1.0"

__all__ = [
    "AgrRule",
    "AttackConfig",
    "ClientUpdate",
    "Dataset",
    "ExperimentFile",
    "ExperimentResult",
    "FLConfig",
    "Metrics",
    "ModelSpec",
    "PartitionPlan",
    "PartitionSpec",
    "RoundRecord",
    "Simulation",
    "SynthSpec",
    "apply_update",
    "attack_impact",
    "build_datasets",
    "detect_convergence",
    "evaluate",
    "fedavg",
    "hash_features",
    "instability_metrics",
    "load_csv",
    "local_train",
    "multi_krum",
    "partition",
    "predict",
    "run_experiment",
    "run_file",
    "synth_generate",
    "trimmed_mean",
]
