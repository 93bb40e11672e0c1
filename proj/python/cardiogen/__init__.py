"""ECG-conditioned echocardiogram video generation (C++ core)."""

from ._cardiogen import (
    ConfigError,
    Error,
    IoError,
    MissingArtifactError,
    NumericError,
    ShapeError,
    Tokenizer,
    build_id,
    ef_agreement,
    ef_from_radii,
    estimate_ef,
    gen_ecg,
    load_clip,
    mae,
    make_sample,
    mse,
    resolved_config,
    run_cli,
    save_clip,
    ssim,
)

__all__ = [
    "ConfigError",
    "Error",
    "IoError",
    "MissingArtifactError",
    "NumericError",
    "ShapeError",
    "Tokenizer",
    "build_id",
    "ef_agreement",
    "ef_from_radii",
    "estimate_ef",
    "gen_ecg",
    "load_clip",
    "mae",
    "make_sample",
    "mse",
    "resolved_config",
    "run_cli",
    "save_clip",
    "ssim",
]
