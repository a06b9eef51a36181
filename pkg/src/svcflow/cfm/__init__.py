"""Conditional flow matching over multi-band STFT frames."""

from .bands import BandSpec, band_merge, band_split, overlap_pairs, pack_spectrum, unpack_spectrum
from .losses import (
    LAMBDA_AUX,
    endpoint_estimate,
    interpolate,
    overlap_loss,
    rf_loss,
    rf_objective,
    sigma_of,
    stft_loss,
    total_loss,
)
from .net import ConvNeXtBlock, MLPField, VectorFieldNet
from .sampler import euler_integrate, euler_sample, oracle_field, sample_spectrum
from .toy import GaussianMixture, sample_toy, train_toy
from .train import cosine_schedule, moving_average, train_loop

__all__ = [
    "LAMBDA_AUX",
    "BandSpec",
    "ConvNeXtBlock",
    "GaussianMixture",
    "MLPField",
    "VectorFieldNet",
    "band_merge",
    "band_split",
    "cosine_schedule",
    "endpoint_estimate",
    "euler_integrate",
    "euler_sample",
    "interpolate",
    "moving_average",
    "oracle_field",
    "overlap_loss",
    "overlap_pairs",
    "pack_spectrum",
    "rf_loss",
    "rf_objective",
    "sample_spectrum",
    "sample_toy",
    "sigma_of",
    "stft_loss",
    "total_loss",
    "train_loop",
    "train_toy",
    "unpack_spectrum",
]
