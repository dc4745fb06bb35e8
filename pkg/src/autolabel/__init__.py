"""Pseudo-label generation from unlabeled instance masks and encoder features.

Stages: decompose instance maps into binary masks, gate out oversized
masks, pool aligned encoder features per mask, cluster the pooled
vectors with streaming K-means, and compose per-image label rasters
(255 = uncovered). See the cli module for the end-to-end driver.
"""

__version__ = "0.1.0"
