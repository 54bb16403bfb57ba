"""Self-supervised pretraining, probing and analysis for multichannel time series."""

__version__ = "0.1.0"
