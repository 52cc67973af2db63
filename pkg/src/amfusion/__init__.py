"""
AMFusion: infrared/visible image fusion with a multi-kernel attention autoencoder.

Subpackages and modules:
    tensor, ops      dense tensors with tape-based reverse-mode autodiff
    nn               the autoencoder (blocks, parameters, AMFW weight files)
    losses           training objectives
    fusion           test-time feature fusion strategies
    metrics          fusion quality metrics and the normalized evaluation index
    dataio           PGM/PNG loading, preprocessing, pair discovery
    training         Adam and the training loop
    cli              command-line entry point
"""

__version__ = "1.0.0"
