"""HDR Gaussian splatting: synthesize, train, render and evaluate."""

from ._nhsplat import (
    Camera,
    ConfigError,
    Dataset,
    Error,
    FormatError,
    GaussianCloud,
    InvalidArgument,
    IoError,
    NumericalError,
    __version__,
    combined_loss,
    evaluate,
    load_cloud,
    load_dataset,
    mu_law,
    psnr,
    read_pfm,
    render,
    save_cloud,
    save_dataset,
    ssim,
    synthesize,
    train,
    write_pfm,
)

__all__ = [
    "Camera",
    "ConfigError",
    "Dataset",
    "Error",
    "FormatError",
    "GaussianCloud",
    "InvalidArgument",
    "IoError",
    "NumericalError",
    "__version__",
    "combined_loss",
    "evaluate",
    "load_cloud",
    "load_dataset",
    "mu_law",
    "psnr",
    "read_pfm",
    "render",
    "save_cloud",
    "save_dataset",
    "ssim",
    "synthesize",
    "train",
    "write_pfm",
]
