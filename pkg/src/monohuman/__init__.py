"""Monocular clothed-human reconstruction with Gaussian splatting on a small numpy autodiff core."""

__version__ = "0.1.0"
