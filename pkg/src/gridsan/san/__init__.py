"""Stochastic activity networks: model descriptors, simulation engines and batch statistics."""

from gridsan.san.batches import BatchError, BatchRun, BatchRunner, MeasureEstimate, batch_seeds, estimate, \
    terminating_batches
from gridsan.san.engine import CompiledModel, Simulator, Trajectory, enabled, fire, simulate
from gridsan.san.model import (
    EXTENDED,
    TOKEN,
    Activity,
    Add,
    BadCaseDistribution,
    Case,
    Cmp,
    Const,
    Copy,
    Deterministic,
    Effect,
    Exponential,
    Fn,
    InputGate,
    Instantaneous,
    InstantaneousLoop,
    Layout,
    Linear,
    Marking,
    MarkingView,
    ModelError,
    NegativeTokens,
    OutputGate,
    Place,
    Pred,
    SanError,
    SanModel,
    Set,
    Share,
    extended,
    has_tokens,
    token,
)

__all__ = [
    "EXTENDED", "TOKEN", "Activity", "Add", "BadCaseDistribution", "BatchError", "BatchRun", "BatchRunner", "Case",
    "Cmp", "CompiledModel", "Const", "Copy", "Deterministic", "Effect", "Exponential", "Fn", "InputGate",
    "Instantaneous", "InstantaneousLoop", "Layout", "Linear", "Marking", "MarkingView", "MeasureEstimate",
    "ModelError", "NegativeTokens", "OutputGate", "Place", "Pred", "SanError", "SanModel", "Set", "Share",
    "Simulator", "Trajectory", "batch_seeds", "enabled", "estimate", "extended", "fire", "has_tokens", "simulate",
    "terminating_batches", "token",
]
