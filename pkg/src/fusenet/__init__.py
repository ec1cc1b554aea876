from . import env, exc, hint
from .config import ExperimentConfig, load_experiment, validate_experiment
from .convex_mtl import ConvexConfig, LinearModel, logreg_joint_train, svm_joint_train
from .core import Const, Key, Variable
from .joint_trainer import TrainConfig, irls_train, train_baseline
from .network import Dataset, NetworkSpec, ParamEnsemble
from .sharing_graph import SharingGraph, build_graph, export_dot

__all__ = [
    "Const",
    "ConvexConfig",
    "Dataset",
    "ExperimentConfig",
    "Key",
    "LinearModel",
    "NetworkSpec",
    "ParamEnsemble",
    "SharingGraph",
    "TrainConfig",
    "Variable",
    "build_graph",
    "env",
    "exc",
    "export_dot",
    "hint",
    "irls_train",
    "load_experiment",
    "logreg_joint_train",
    "svm_joint_train",
    "train_baseline",
    "validate_experiment",
]
