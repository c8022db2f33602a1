"""Pixel-wise crack segmentation engine.

A self-contained segmentation stack for concrete-defect imagery: an
encoder/decoder convolutional network with hand-written backprop, class
imbalance weighting, Adam training with early stopping, neighborhood
crack-probability maps and ROC/AUC evaluation, all driven by a batch CLI.
"""
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
