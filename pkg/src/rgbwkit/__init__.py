"""RGBW-to-Bayer remosaic toolkit: data generation, baselines, ISP, metrics and benchmarking."""

__version__ = "0.1.0"
