"""
slat-bp - Simultaneous sensor localization and target tracking with discrete belief propagation.
"""

__version__ = "0.1.0"

from slat_bp.engine import (
    EngineState,
    Mode,
    RangeMeasurement,
    SlotInput,
    init,
    run_slots,
    sensor_to_target_message,
    step,
    target_transition_message,
)
from slat_bp.exceptions import (
    BeliefCollapseError,
    CellNotFoundError,
    ConfigurationError,
    SlatError,
    ValidationError,
)
from slat_bp.geometry import CellMap, Position3, cell_distance, compute_D
from slat_bp.monte_carlo import MonteCarloResult, run_monte_carlo, run_single, run_sweep
from slat_bp.noise import (
    GmComponent,
    ImuModel,
    RangingNoiseModel,
    dynamic_weight,
    fit_gm,
    imu_total_noise_pdf,
    likelihood,
    obstacle_trapezoid_pdf,
    ranging_total_noise_pdf,
)
from slat_bp.pmf import Pmf, active_cells, estimate_cell, knn_estimate
from slat_bp.records import BeliefSnapshot
from slat_bp.scenario import GroundTruth, ScenarioConfig

__all__ = [
    # Geometry
    "CellMap",
    "Position3",
    "cell_distance",
    "compute_D",
    # Noise models
    "ImuModel",
    "RangingNoiseModel",
    "GmComponent",
    "imu_total_noise_pdf",
    "dynamic_weight",
    "obstacle_trapezoid_pdf",
    "ranging_total_noise_pdf",
    "likelihood",
    "fit_gm",
    # Engine
    "Pmf",
    "active_cells",
    "knn_estimate",
    "estimate_cell",
    "Mode",
    "RangeMeasurement",
    "SlotInput",
    "EngineState",
    "init",
    "sensor_to_target_message",
    "target_transition_message",
    "step",
    "run_slots",
    "BeliefSnapshot",
    # Simulation
    "ScenarioConfig",
    "GroundTruth",
    "MonteCarloResult",
    "run_single",
    "run_monte_carlo",
    "run_sweep",
    # Exceptions
    "SlatError",
    "ValidationError",
    "ConfigurationError",
    "CellNotFoundError",
    "BeliefCollapseError",
]
