"""Face-tracking-free video heart-rate estimation.

Temporal superpixels turn a video into per-region color traces; sliding
windows over the traces form spatio-temporal maps; heart rate is read off
each map with a spectral estimator or a small CNN regressor.
"""

__version__ = "0.1.0"
