"""Experiment configuration: JSON with explicit unit-suffixed keys.

Defaults mirror the measured apparatus: 2e3 n/s beam, transmittances
0.221/0.084 on both analyzers, 78 ns coherence time, 60 ns response time,
150 ns coincidence window, 25 ns clock tick, 10 s cycles with 10 ms dead
time.  Unknown keys are errors, not warnings, and the master seed is
mandatory (no wall-clock seeding).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .beamline import BeamGeometry
from .daq import DaqConfig
from .quantum import PolarizerPair, WindowParams, effective_t_w
from .source import tau_c_from_energy_spread

__all__ = ["ConfigError", "AnalysisSettings", "ExperimentConfig", "load_config", "parse_config"]

NS = 1e-9


class ConfigError(ValueError):
    """Configuration file cannot be parsed or violates an invariant."""


@dataclass(frozen=True)
class AnalysisSettings:
    """Histogram binning, coincidence window, and plateau range (seconds)."""

    bin_width: float = 25 * NS
    max_delta: float = 3000 * NS
    window: float = 150 * NS
    plateau_min: float | None = None
    plateau_max: float | None = None

    def __post_init__(self):
        if self.bin_width <= 0 or self.max_delta <= 0 or self.window <= 0:
            raise ConfigError("analysis durations must be positive")
        if self.window > self.max_delta:
            raise ConfigError("coincidence window exceeds max_delta")
        if (self.plateau_min is None) != (self.plateau_max is None):
            raise ConfigError("plateau_min_ns and plateau_max_ns must be given together")

    def plateau_range(self, t_w: float, tau_c: float) -> tuple[float, float]:
        if self.plateau_min is not None:
            return (self.plateau_min, self.plateau_max)
        return (10.0 * (t_w + tau_c), self.max_delta)

    def window_params(self) -> WindowParams:
        return WindowParams(self.window)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description."""

    master_seed: int
    rate: float
    duration: float
    tau_c: float
    singlet_fraction: float
    beam: BeamGeometry
    polarizers: PolarizerPair
    daq: DaqConfig
    analysis: AnalysisSettings
    angles_deg: tuple[float, ...] = ()
    output_dir: str = "."

    def resolved_dict(self) -> dict:
        """Round-trippable dict with the same unit-suffixed keys as the file."""
        return {
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "angles_deg": list(self.angles_deg),
            "source": {
                "rate_per_s": self.rate,
                "duration_s": self.duration,
                "tau_c_ns": self.tau_c / NS,
                "singlet_fraction": self.singlet_fraction,
            },
            "beam": {
                "path_split_prob": self.beam.path_split_prob,
                "v_ther_m_per_s": self.beam.v_ther,
            },
            "polarizers": {
                "eps1_down": self.polarizers.eps1_down,
                "eps1_up": self.polarizers.eps1_up,
                "eps2_down": self.polarizers.eps2_down,
                "eps2_up": self.polarizers.eps2_up,
            },
            "daq": {
                "t_w_ns": self.daq.t_w / NS,
                "clock_tick_ns": self.daq.clock_tick / NS,
                "cycle_length_s": self.daq.cycle_length,
                "dead_time_per_cycle_ms": self.daq.dead_time_per_cycle / 1e-3,
                "detection_efficiency": self.daq.detection_efficiency,
            },
            "analysis": {
                "bin_width_ns": self.analysis.bin_width / NS,
                "max_delta_ns": self.analysis.max_delta / NS,
                "window_ns": self.analysis.window / NS,
                "plateau_min_ns": None if self.analysis.plateau_min is None
                else self.analysis.plateau_min / NS,
                "plateau_max_ns": None if self.analysis.plateau_max is None
                else self.analysis.plateau_max / NS,
            },
        }


class _Section:
    """Typed reader over one JSON object that rejects unknown keys."""

    def __init__(self, data: dict, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object")
        self.data = dict(data)
        self.path = path

    def take(self, key, default=None, required=False):
        if key in self.data:
            return self.data.pop(key)
        if required:
            raise ConfigError(f"{self.path}: missing required key '{key}'")
        return default

    def number(self, key, default=None, required=False):
        val = self.take(key, default, required)
        if val is None:
            return None
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{self.path}.{key}: expected a number, got {val!r}")
        return float(val)

    def finish(self):
        if self.data:
            unknown = ", ".join(sorted(self.data))
            raise ConfigError(f"{self.path}: unknown key(s): {unknown}")


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a decoded JSON document and resolve it to runtime objects."""
    top = _Section(data, "config")
    seed = top.take("master_seed", required=True)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("config.master_seed: expected a non-negative integer")
    output_dir = top.take("output_dir", ".")
    angles = top.take("angles_deg", [])
    if not isinstance(angles, list) or any(
            isinstance(a, bool) or not isinstance(a, (int, float)) for a in angles):
        raise ConfigError("config.angles_deg: expected a list of numbers")

    src = _Section(top.take("source", {}), "config.source")
    rate = src.number("rate_per_s", 2000.0)
    duration = src.number("duration_s", 3600.0)
    tau_c_ns = src.number("tau_c_ns")
    delta_e = src.number("delta_e_microev")
    singlet_fraction = src.number("singlet_fraction", 0.25)
    src.finish()
    if tau_c_ns is not None and delta_e is not None:
        raise ConfigError("config.source: give either tau_c_ns or delta_e_microev, not both")
    if delta_e is not None:
        tau_c = tau_c_from_energy_spread(delta_e)
    else:
        tau_c = (78.0 if tau_c_ns is None else tau_c_ns) * NS
    if rate < 0 or duration <= 0 or tau_c <= 0 or not 0 <= singlet_fraction <= 1:
        raise ConfigError("config.source: invalid beam parameters")

    beam_sec = _Section(top.take("beam", {}), "config.beam")
    try:
        beam = BeamGeometry(path_split_prob=beam_sec.number("path_split_prob", 0.5),
                            v_ther=beam_sec.number("v_ther_m_per_s", 593.0))
    except ValueError as exc:
        raise ConfigError(f"config.beam: {exc}") from exc
    beam_sec.finish()

    pol_sec = _Section(top.take("polarizers", {}), "config.polarizers")
    try:
        pol = PolarizerPair(eps1_down=pol_sec.number("eps1_down", 0.221),
                            eps1_up=pol_sec.number("eps1_up", 0.084),
                            eps2_down=pol_sec.number("eps2_down", 0.221),
                            eps2_up=pol_sec.number("eps2_up", 0.084))
    except ValueError as exc:
        raise ConfigError(f"config.polarizers: {exc}") from exc
    pol_sec.finish()

    daq_sec = _Section(top.take("daq", {}), "config.daq")
    t_w_ns = daq_sec.number("t_w_ns")
    t_capture = daq_sec.number("capture_time_ns")
    t_decay = daq_sec.number("light_decay_ns")
    if (t_capture is None) != (t_decay is None):
        raise ConfigError("config.daq: capture_time_ns and light_decay_ns go together")
    if t_capture is not None:
        if t_w_ns is not None:
            raise ConfigError("config.daq: give either t_w_ns or the capture/decay pair")
        t_w = effective_t_w(t_capture * NS, t_decay * NS)
    else:
        t_w = (60.0 if t_w_ns is None else t_w_ns) * NS
    try:
        daq = DaqConfig(t_w=t_w,
                        clock_tick=daq_sec.number("clock_tick_ns", 25.0) * NS,
                        cycle_length=daq_sec.number("cycle_length_s", 10.0),
                        dead_time_per_cycle=daq_sec.number("dead_time_per_cycle_ms", 10.0) * 1e-3,
                        detection_efficiency=daq_sec.number("detection_efficiency", 1.0))
    except ValueError as exc:
        raise ConfigError(f"config.daq: {exc}") from exc
    daq_sec.finish()

    ana_sec = _Section(top.take("analysis", {}), "config.analysis")
    plateau_min = ana_sec.number("plateau_min_ns")
    plateau_max = ana_sec.number("plateau_max_ns")
    analysis = AnalysisSettings(
        bin_width=ana_sec.number("bin_width_ns", 25.0) * NS,
        max_delta=ana_sec.number("max_delta_ns", 3000.0) * NS,
        window=ana_sec.number("window_ns", 150.0) * NS,
        plateau_min=None if plateau_min is None else plateau_min * NS,
        plateau_max=None if plateau_max is None else plateau_max * NS,
    )
    ana_sec.finish()
    top.finish()

    for name, dur in (("bin_width_ns", analysis.bin_width),
                      ("window_ns", analysis.window),
                      ("max_delta_ns", analysis.max_delta)):
        ratio = dur / daq.clock_tick
        if abs(ratio - round(ratio)) > 1e-6:
            raise ConfigError(f"config.analysis.{name} must be an integer multiple of the clock tick")

    return ExperimentConfig(master_seed=seed, rate=rate, duration=duration,
                            tau_c=tau_c, singlet_fraction=singlet_fraction,
                            beam=beam, polarizers=pol, daq=daq, analysis=analysis,
                            angles_deg=tuple(float(a) for a in angles),
                            output_dir=str(output_dir))


def load_config(path) -> ExperimentConfig:
    """Load and validate a JSON config file, with line-level diagnostics."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return parse_config(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
