"""Twin-beam protocol simulator: Python interface to the C++ core."""

from ._core import (
    BatchStats,
    CalibrationError,
    CalibrationResult,
    ChannelParams,
    ConfigError,
    Dataset,
    RocPoint,
    ShotRecord,
    SourceParams,
    StatSummary,
    SweepPoint,
    attack_sweep,
    auc,
    batch_stats,
    bootstrap_batches,
    classify,
    detect_attack,
    detected_idler_mean,
    error_probability,
    estimate_gain,
    fano_detected,
    fit_modes_by_moments,
    generate_dataset,
    max_noise_for_nonclassicality,
    midpoint_threshold,
    pmf_multimode_thermal,
    predict_R,
    r_standard_error,
    roc_curve,
    run,
    sample_multimode_thermal,
    summarize,
    synth_pulse_heights,
    volts_to_photons,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
