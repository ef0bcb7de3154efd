"""Certified neural abstractions of nonlinear dynamical models.

A ReLU network is trained to mimic a vector field, an interval
branch-and-bound proves a per-component error bound, and the network is
compiled into a hybrid automaton with affine modes whose flowpipe decides
safety for the original model.
"""

__version__ = "0.1.0"

from .cegis import LoopConfig, NeuralAbstraction, synthesize, tighten
from .certifier import CertBudget, ErrorBound, certify
from .hybridizer import HybridAutomaton, build_automaton
from .model import DynamicalModel, load_benchmark, load_model
from .netlearn import NeuralNet, TrainConfig
from .pipeline import PipelineConfig, run_pipeline
from .reach import ReachConfig, simulate_concrete

__all__ = [
    "CertBudget",
    "DynamicalModel",
    "ErrorBound",
    "HybridAutomaton",
    "LoopConfig",
    "NeuralAbstraction",
    "NeuralNet",
    "PipelineConfig",
    "ReachConfig",
    "TrainConfig",
    "build_automaton",
    "certify",
    "load_benchmark",
    "load_model",
    "run_pipeline",
    "simulate_concrete",
    "synthesize",
    "tighten",
]
