"""Five-parameter lambda distribution (FPLD): quantile-based density, estimation,
CRPS scoring and distributional quantile regression."""

__version__ = "0.1.0"
