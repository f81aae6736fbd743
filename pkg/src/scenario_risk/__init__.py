"""Density estimation (KDE and normalizing flows) for cut-in scenario risk."""

from .core import Dataset, DensityModel, ScenarioParameters, Standardization, standardize
from .kde import KdeModel, fit_kde
from .nf import FlowModel, TrainConfig, train_flow
from .risk import RiskConfig, RiskEstimate, run_pipeline
from .sim import CutInSimulator, ScenarioConfig, TwoStageDriver, simulate_cutin

__version__ = "0.1.0"

__all__ = [
    "CutInSimulator",
    "Dataset",
    "DensityModel",
    "FlowModel",
    "KdeModel",
    "RiskConfig",
    "RiskEstimate",
    "ScenarioConfig",
    "ScenarioParameters",
    "Standardization",
    "TrainConfig",
    "TwoStageDriver",
    "fit_kde",
    "run_pipeline",
    "simulate_cutin",
    "standardize",
    "train_flow",
]
