"""Virtual mass-flow sensing for vapor-cycle compressors.

Estimators (static polynomial regression and a causal 1-D CNN), a
band-pass + DTW k-means segmentation of flow recordings into transient and
static patterns, and engineering-performance metrics on those patterns.
"""

__version__ = "0.1.0"
