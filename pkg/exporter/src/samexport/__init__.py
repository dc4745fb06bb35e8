"""Model-side adapter for the pseudo-labeling pipeline.

Runs a segmentation foundation model's automatic mask generator and
image encoder over real images and writes the pipeline's interchange
files (instance-id rasters, feature tensors, a corpus manifest). Also
converts 3D medical volumes into per-slice 2D grayscale images.
"""

__version__ = "0.1.0"
