"""Scenario-based MPC for reservoir release under uncertain inflow."""
__version__ = "0.1.0"

from .closedloop import (
    DMPC_CLIM,
    DMPC_PROPHET,
    ORACLE,
    POLICIES,
    SMPC,
    RunSettings,
    Trajectory,
    run_receding_horizon,
)
from .controller import (
    QUADRATIC,
    SUM_OF_NORMS,
    ControlPlan,
    MpcProblem,
    ScenarioBound,
    required_scenarios,
    scenario_objective,
    solve,
)
from .errors import ResmpcError
from .evaluation import (
    MonteCarloReport,
    MonteCarloSetup,
    SynthSpec,
    dry_winter_config,
    dry_winter_setup,
    evaluate_trajectory,
    monte_carlo_compare,
    nonlinear_cost,
    synth_dataset,
)
from .hydrology import (
    DemandProfile,
    InflowSeries,
    ReservoirConfig,
    ReservoirState,
    climatology,
    level_to_volume,
    load_config,
    load_inflow_csv,
    step_dynamics,
    volume_to_level,
)
from .scenarios import AdditiveModel, FitConfig, ScenarioMatrix, fit, nominal_forecast, sample_scenarios
