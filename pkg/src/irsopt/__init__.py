"""IRS-aided OFDM link: simulation, Hadamard-pilot channel estimation and configuration search."""

from .core import (
    AffineChannelModel,
    DimensionError,
    SystemDims,
    apply_frequency_model,
    compose_channel,
    convolve_block,
    dft_channel,
    dft_signal,
    fwht,
    idft_signal,
)
from .estimator import ChannelEstimate, estimate_channel, invert_hadamard_pilots, project_to_delay_subspace
from .evaluator import RateReport, compare_report, true_rate, weighted_average_rate
from .optimizer import (
    ConfigurationResult,
    OptimizationSettings,
    exhaustive_oracle,
    export_submission,
    objective_rate,
    optimize_narrowband_exact,
    optimize_wideband,
)
from .simulator import (
    GroundTruthScenario,
    PilotDataset,
    ScenarioConfig,
    build_hadamard_pilots,
    generate_scenario,
    simulate_pilot_phase,
)

__version__ = "0.1.0"
