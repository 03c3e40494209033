"""Event-level Monte Carlo and analysis toolkit for a spin-singlet
neutron-pair polarization-correlation experiment."""

from .analysis import (
    AnalysisError,
    CoincidenceHistogram,
    FitResult,
    P12Estimate,
    ScanPoint,
    angle_scan_summary,
    coincidence_histogram,
    estimate_p12,
    expected_dip_fraction,
    fit_coincidence_model,
    histogram_from_detection,
    p12_from_ratio,
)
from .beamline import BeamGeometry, RoutedStream, TransmittedStream, measure_and_transmit, route_neutrons
from .config import AnalysisSettings, ConfigError, ExperimentConfig, load_config, parse_config
from .daq import DaqConfig, DetectionEvents, DetectionLedger, detect, quantize_ticks, split_by_detector
from .eventfile import EventFileError, read_events, write_events
from .pipeline import PipelineLedger, PipelineResult, run_pipeline
from .quantum import (
    CorrelationParams,
    PolarizerPair,
    ResponseParams,
    WindowParams,
    ch_functional,
    ch_geometry_scan,
    ch_violates,
    chsh_functional,
    coincidence_model,
    convolved_correlation,
    correlation_c,
    effective_t_w,
    p12_all_pairs_perfect,
    p12_ideal,
    p12_paper,
    p12_projector,
    piecewise_coincidence_amplitudes,
    singlet_joint_outcome_probs,
    theta_from_degrees,
)
from .seeding import rng_for, substream_seed
from .source import (
    EmissionStream,
    SourceConfig,
    antibunching_filter,
    generate_emission_stream,
    tag_pairs,
    tau_c_from_energy_spread,
)

__version__ = "0.1.0"
