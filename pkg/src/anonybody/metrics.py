"""Image-set quality metrics: Inception Score and Frechet distance.

Both metrics are defined over the outputs of a prediction / embedding
network. The network is pluggable: the deterministic toy extractor below
maps coarse image statistics to a probability row and a feature vector,
which is enough to exercise every numerical property at desk scale, while
a real pretrained embedding is reached through the bridge protocol behind
the same interface.

Formulas:

    IS over a split S = exp( mean_{i in S} KL(p(y|x_i) || p_mean_S) )
    FID(a, b)         = ||mu_a - mu_b||^2
                        + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))

The matrix square root uses the symmetrized product
sqrt(S_a) S_b sqrt(S_a), whose eigenvalues are clipped at zero before
taking the root. KL uses natural log with 0 log 0 = 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientSamplesError,
    InvalidArgumentError,
    InvalidDistributionError,
    NumericalQualityWarning,
)
from .raster import RasterImage
from .seeds import noise_field

ROW_SUM_TOLERANCE = 1e-9
DEFAULT_SPLITS = 10

_TOY_FEATURE_SEED = 0x7F0A11E5
_TOY_LOGIT_SEED = 0x0DDBA11


def validate_predictions(preds: np.ndarray) -> np.ndarray:
    """Check an (n, K) matrix of per-image class probabilities."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[0] < 1 or preds.shape[1] < 1:
        raise InvalidArgumentError(f"expected (n, K) prediction matrix, got shape {preds.shape}")
    for i, row in enumerate(preds):
        if (row < 0).any():
            raise InvalidDistributionError("negative probability", i)
        if abs(row.sum() - 1.0) > ROW_SUM_TOLERANCE:
            raise InvalidDistributionError(f"probabilities sum to {row.sum():.12f}", i)
    return preds


def inception_score(preds: np.ndarray, splits: int = DEFAULT_SPLITS) -> tuple[float, float]:
    """Mean and population std of per-split Inception Scores.

    Rows are split in order into ``splits`` contiguous groups. Within a
    group, each row's KL divergence from the group marginal is averaged
    and exponentiated.
    """
    preds = validate_predictions(preds)
    n = preds.shape[0]
    if splits < 1 or splits > n:
        raise InvalidArgumentError(f"splits must lie in [1, {n}], got {splits}")
    scores = []
    for part in np.array_split(preds, splits):
        marginal = part.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.where(part > 0, np.log(part) - np.log(marginal), 0.0)
        kl_per_row = (part * log_ratio).sum(axis=1)
        scores.append(float(np.exp(kl_per_row.mean())))
    return float(np.mean(scores)), float(np.std(scores))


@dataclass(frozen=True)
class FeatureMoments:
    """Gaussian summary of a feature cloud: mean vector and covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise InvalidArgumentError(
                f"moment shapes do not agree: mean {mean.shape}, covariance {cov.shape}"
            )
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise InvalidArgumentError("moments contain non-finite values")
        if np.abs(cov - cov.T).max() > 1e-12:
            raise InvalidArgumentError("covariance is not symmetric within 1e-12")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def moments_from_features(features: np.ndarray) -> FeatureMoments:
    """Sample mean and unbiased (n-1) covariance, symmetrized."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise InvalidArgumentError(f"expected (n, d) feature matrix, got shape {features.shape}")
    n = features.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 samples for covariance, got {n}")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (n - 1)
    return FeatureMoments(mean=mean, covariance=(cov + cov.T) / 2.0)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(matrix)
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def fid(a: FeatureMoments, b: FeatureMoments) -> float:
    """Frechet distance between two Gaussian feature summaries.

    Non-negative by definition; tiny negative output (within -1e-6) from
    eigenvalue clipping is clamped to zero, anything worse is clamped and
    flagged with a ``NumericalQualityWarning``.
    """
    if a.dim != b.dim:
        raise InvalidArgumentError(f"moment dimensions differ: {a.dim} vs {b.dim}")
    delta = a.mean - b.mean
    root_a = _psd_sqrt(a.covariance)
    inner = root_a @ b.covariance @ root_a
    inner_eigs = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    clipped = np.clip(inner_eigs, 0.0, None)
    if inner_eigs.min() < -1e-6:
        warnings.warn(
            f"covariance product eigenvalue {inner_eigs.min():.3e} clipped to zero",
            NumericalQualityWarning,
            stacklevel=2,
        )
    trace_sqrt = float(np.sqrt(clipped).sum())
    value = float(delta @ delta + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * trace_sqrt)
    if value < 0.0:
        if value < -1e-6:
            warnings.warn(
                f"distance {value:.3e} clamped to zero", NumericalQualityWarning, stacklevel=2
            )
        value = 0.0
    return value


def _coarse_stats(image: RasterImage) -> np.ndarray:
    data = image.data.astype(np.float64)
    means = data.mean(axis=(0, 1))
    stds = data.std(axis=(0, 1))
    luminance = data.mean(axis=2)
    grad_x = np.abs(np.diff(luminance, axis=1))
    grad_y = np.abs(np.diff(luminance, axis=0))
    gx = float(grad_x.mean()) if grad_x.size else 0.0
    gy = float(grad_y.mean()) if grad_y.size else 0.0
    return np.concatenate([means, stds, [gx, gy]])


def _mixing_matrix(seed: int, rows: int, cols: int) -> np.ndarray:
    return 2.0 * noise_field(seed, cols, rows) - 1.0


def toy_extractor(image: RasterImage, classes: int = 10, dims: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic stand-in for a pretrained embedding network.

    Eight coarse statistics (channel means, channel stds, mean horizontal
    and vertical gradient magnitude) are pushed through two fixed
    pseudo-random linear maps: a softmax over ``classes`` logits and a
    ``dims``-long feature vector. Pure and reproducible everywhere.
    """
    if classes < 1 or dims < 1:
        raise InvalidArgumentError("classes and dims must be >= 1")
    stats = _coarse_stats(image)
    logits = _mixing_matrix(_TOY_LOGIT_SEED, classes, stats.size) @ stats
    logits = logits - logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    features = _mixing_matrix(_TOY_FEATURE_SEED, dims, stats.size) @ stats
    return probs, features


@dataclass(frozen=True)
class ToyExtractor:
    """Callable wrapper fixing (classes, dims) for dataset evaluation."""

    classes: int = 10
    dims: int = 16

    def extract(self, image: RasterImage) -> tuple[np.ndarray, np.ndarray]:
        return toy_extractor(image, self.classes, self.dims)
