"""Filter-compensated transport waveforms and transport-fidelity analysis."""

from ._core import (
    FilterSpec,
    LikelihoodCurve,
    NumericalError,
    ParseError,
    RamseyDataset,
    RamseyFit,
    adjust_for_failures,
    apply_forward,
    bias_correct,
    default_filter,
    fidelity_likelihood,
    fit_ramsey,
    phase_width_from_fidelity,
    precompensate,
    profile_likelihood,
    simulate_and_fit_tracking,
    simulate_ramsey,
    static_decay_amplitude,
    synthesize,
)

__all__ = [
    "FilterSpec",
    "LikelihoodCurve",
    "NumericalError",
    "ParseError",
    "RamseyDataset",
    "RamseyFit",
    "adjust_for_failures",
    "apply_forward",
    "bias_correct",
    "default_filter",
    "fidelity_likelihood",
    "fit_ramsey",
    "phase_width_from_fidelity",
    "precompensate",
    "profile_likelihood",
    "simulate_and_fit_tracking",
    "simulate_ramsey",
    "static_decay_amplitude",
    "synthesize",
]
