"""Fusion of low-resolution PolSAR covariance data with a high-resolution
single-polarisation intensity image.

Subpackages and modules:

* ``polarimetry``: C3/T3 algebra, Pauli powers, degradation, signatures
* ``engine``: numpy tensors with reverse-mode autodiff, conv layers, Adam
* ``model``: the fusion network and tiled whole-raster inference
* ``losses``: numerical, polarimetric and adaptively weighted losses
* ``datagen``: synthetic scenes, Wishart speckle, patch datasets, PFC3 files
* ``metrics``: Pauli PSNR/MAE, ENL, Y4R decomposition, bicubic baseline
* ``cli``: the ``polfuse`` batch command
"""

__version__ = "0.1.0"
