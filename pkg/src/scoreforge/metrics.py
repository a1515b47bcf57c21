"""Sample-quality metrics: Inception Score, Frechet distance, KID, and PCA projections.

All metric functions operate on plain numpy arrays in float64. Image-level
evaluation goes through a :class:`FeatureExtractor`, so the whole suite can run
offline with :class:`RandomProjectionExtractor` or against a pretrained
classifier with :class:`InceptionExtractor`.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import rel_entr, softmax

from . import dataprep

logger = logging.getLogger(__name__)

FID_MIN_SAMPLES = 2048


class NumericalError(ArithmeticError):
    pass


class ExtractorError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# feature extractors


@runtime_checkable
class FeatureExtractor(Protocol):
    extractor_id: str

    def embed(self, images: torch.Tensor) -> np.ndarray: ...

    def classify(self, images: torch.Tensor) -> np.ndarray: ...


class RandomProjectionExtractor:
    """Deterministic stand-in extractor: area-pool to a fixed size, project, softmax.

    Stateless after construction, so it is safe to share across threads.
    """

    def __init__(self, dim: int = 64, n_classes: int = 10, input_size: int = 16, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.input_size = input_size
        self.projection = rng.standard_normal((input_size * input_size, dim)) / input_size
        self.class_weights = rng.standard_normal((dim, n_classes))
        self.extractor_id = f"random-projection(dim={dim},classes={n_classes},size={input_size},seed={seed})"

    def _pixels(self, images: torch.Tensor) -> np.ndarray:
        x = torch.as_tensor(images, dtype=torch.float64)
        if x.dim() != 4:
            raise ValueError(f"expected (N, C, H, W) images, got {tuple(x.shape)}")
        x = x.mean(dim=1, keepdim=True)
        x = F.interpolate(x, size=(self.input_size, self.input_size), mode="area")
        return x.reshape(x.shape[0], -1).numpy()

    def embed(self, images):
        return self._pixels(images) @ self.projection

    def classify(self, images):
        return softmax(self.embed(images) @ self.class_weights, axis=1)


class InceptionExtractor:
    """Pretrained Inception-v3 adapter: pool features (2048-d) and ImageNet class probabilities.

    Grayscale inputs are replicated to three channels and bilinearly resized to
    299x299. Inference runs under ``torch.no_grad`` in eval mode; concurrent
    calls from several threads on one instance are not supported.
    """

    extractor_id = "inception-v3-imagenet"

    def __init__(self, weights="DEFAULT", batch_size: int = 32, device: str = "cpu"):
        try:
            from torchvision.models import inception_v3
        except ImportError as exc:
            raise ExtractorError("torchvision is required for the Inception extractor") from exc
        try:
            self.net = inception_v3(weights=weights, aux_logits=True, init_weights=weights is None)
        except Exception as exc:
            raise ExtractorError(f"could not load Inception-v3 weights: {exc}") from exc
        if weights is None:
            self.extractor_id = "inception-v3-untrained"
        self.net.eval().to(device)
        self.device = device
        self.batch_size = batch_size
        self._pool = None
        self.net.avgpool.register_forward_hook(lambda m, i, o: setattr(self, "_pool", o))

    @torch.no_grad()
    def _run(self, images):
        feats, logits = [], []
        mean = torch.tensor([0.485, 0.456, 0.406]).reshape(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).reshape(1, 3, 1, 1)
        for start in range(0, images.shape[0], self.batch_size):
            x = torch.as_tensor(images[start:start + self.batch_size], dtype=torch.float32)
            if x.shape[1] == 1:
                x = x.repeat(1, 3, 1, 1)
            x = F.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
            x = ((x + 1) / 2 - mean) / std
            out = self.net(x.to(self.device))
            logits.append(out.cpu().double())
            feats.append(self._pool.flatten(1).cpu().double())
        return torch.cat(feats).numpy(), torch.cat(logits).numpy()

    def embed(self, images):
        return self._run(images)[0]

    def classify(self, images):
        return softmax(self._run(images)[1], axis=1)


# ---------------------------------------------------------------------------
# metrics


def inception_score(probs, splits: int = 10) -> tuple[float, float]:
    """``exp(E_x KL(p(y|x) || p(y)))`` over contiguous splits; returns (mean, population std)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be an n x C matrix")
    n = probs.shape[0]
    if splits < 1 or n < splits:
        raise ValueError(f"need n >= splits >= 1, got n={n}, splits={splits}")
    if (probs < 0).any() or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("rows of probs must be probability vectors")
    scores = []
    for part in np.array_split(probs, splits):
        marginal = part.mean(axis=0, keepdims=True)
        kl = rel_entr(part, marginal).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


@dataclass
class FeatureMoments:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def compute_moments(features) -> FeatureMoments:
    """Sample mean and unbiased (n - 1) covariance of an n x d feature matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 samples for a covariance, got {x.shape[0]}")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (x.shape[0] - 1)
    return FeatureMoments(mu, (sigma + sigma.T) / 2)


def _psd_eigh(mat: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    tol = 1e-8 * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w.min() < -tol:
        raise NumericalError(f"{what} has eigenvalue {w.min():.3e} below -{tol:.1e}; "
                             f"not positive semidefinite (spectrum range [{w.min():.3e}, {w.max():.3e}])")
    # eigenvalues under the float64 noise floor are zero; their square roots would otherwise
    # turn rounding noise into a visible trace contribution
    floor = w.size * np.finfo(np.float64).eps * float(np.abs(w).max(initial=0.0))
    return np.where(w > floor, w, 0.0), v


def trace_sqrt_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """``Tr((A B)^{1/2})`` through the symmetric form ``A^{1/2} B A^{1/2}``."""
    w, v = _psd_eigh(sigma_a, "sigma_a")
    root_a = (v * np.sqrt(w)) @ v.T
    inner = root_a @ sigma_b @ root_a
    w_inner, _ = _psd_eigh(inner, "sigma_a^1/2 sigma_b sigma_a^1/2")
    return float(np.sqrt(w_inner).sum())


def frechet_distance(a: FeatureMoments, b: FeatureMoments) -> float:
    mu_a, mu_b = np.atleast_1d(a.mu), np.atleast_1d(b.mu)
    sa, sb = np.atleast_2d(a.sigma), np.atleast_2d(b.sigma)
    if mu_a.shape != mu_b.shape or sa.shape != sb.shape or sa.shape != (mu_a.size, mu_a.size):
        raise ValueError(f"dimension mismatch: {mu_a.shape}/{sa.shape} vs {mu_b.shape}/{sb.shape}")
    diff = mu_a - mu_b
    fid = float(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * trace_sqrt_product(sa, sb))
    scale = max(1.0, float(np.trace(sa) + np.trace(sb)))
    if fid < -1e-8 * scale:
        raise NumericalError(f"Frechet distance came out negative ({fid:.3e})")
    return max(fid, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray, degree: int = 3, scale: float | None = None,
                      offset: float = 1.0) -> np.ndarray:
    scale = 1.0 / x.shape[1] if scale is None else scale
    return (x @ y.T * scale + offset) ** degree


def kid(x_features, y_features, degree: int = 3, scale: float | None = None, offset: float = 1.0) -> float:
    """Unbiased squared MMD under the polynomial kernel ``(a.b / d + 1)^3``."""
    x = np.asarray(x_features, dtype=np.float64)
    y = np.asarray(y_features, dtype=np.float64)
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise ValueError(f"KID needs at least 2 samples per set, got {m} and {n}")
    if x.shape[1] != y.shape[1]:
        raise ValueError("feature dimensions differ")
    scale = 1.0 / x.shape[1] if scale is None else scale
    k_xx = polynomial_kernel(x, x, degree, scale, offset)
    k_yy = polynomial_kernel(y, y, degree, scale, offset)
    k_xy = polynomial_kernel(x, y, degree, scale, offset)
    term_x = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    term_y = (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
    return float(term_x + term_y - 2.0 * k_xy.sum() / (m * n))


@dataclass
class PcaResult:
    coords: dict[str, np.ndarray]
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray

    def rows(self):
        for label, pts in self.coords.items():
            for p in pts:
                yield (label, *map(float, p))


def pca_project(feature_sets: Mapping[str, np.ndarray] | Sequence[tuple[str, np.ndarray]],
                components: int = 2) -> PcaResult:
    """Project labelled feature sets onto the leading principal directions of their pooled data."""
    items = list(feature_sets.items()) if isinstance(feature_sets, Mapping) else list(feature_sets)
    mats = [np.atleast_2d(np.asarray(m, dtype=np.float64)) for _, m in items]
    pooled = np.concatenate(mats, axis=0)
    if pooled.shape[0] < components or pooled.shape[1] < components:
        raise ValueError(f"need at least {components} samples and dimensions, got {pooled.shape}")
    mean = pooled.mean(axis=0)
    _, s, vt = np.linalg.svd(pooled - mean, full_matrices=False)
    axes = vt[:components].copy()
    for row in axes:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1
    var = s ** 2
    total = var.sum()
    ratio = var[:components] / total if total > 0 else np.zeros(components)
    coords: dict[str, np.ndarray] = {}
    for (label, _), mat in zip(items, mats):
        proj = (mat - mean) @ axes.T
        coords[label] = np.concatenate([coords[label], proj]) if label in coords else proj
    return PcaResult(coords, axes, ratio, mean)


def save_pca_csv(result: PcaResult, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        n = result.components.shape[0]
        writer.writerow(["label", *(f"pc{i + 1}" for i in range(n))])
        for row in result.rows():
            writer.writerow([row[0], *(repr(v) for v in row[1:])])
    return path


# ---------------------------------------------------------------------------
# full evaluation


@dataclass
class MetricReport:
    extractor_id: str
    n_real: int
    n_fake: int
    is_mean: float
    is_std: float
    fid: float
    kid: float
    splits: int
    kernel: dict = field(default_factory=lambda: {"degree": 3, "scale": None, "offset": 1.0})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))

    def table_row(self, model: str) -> dict:
        return {"model": model, "IS": f"{self.is_mean:.5f} ± {self.is_std:.5f}",
                "FID": self.fid, "KID": self.kid}


def evaluate_images(real: torch.Tensor, fake: torch.Tensor, extractor: FeatureExtractor,
                    splits: int = 10) -> MetricReport:
    name = getattr(extractor, "extractor_id", type(extractor).__name__)
    try:
        probs = np.asarray(extractor.classify(fake), dtype=np.float64)
        real_feat = np.asarray(extractor.embed(real), dtype=np.float64)
        fake_feat = np.asarray(extractor.embed(fake), dtype=np.float64)
    except Exception as exc:
        raise ExtractorError(f"feature extractor {name} failed: {exc}") from exc
    if min(len(real_feat), len(fake_feat)) < FID_MIN_SAMPLES:
        logger.warning("FID from %d real / %d fake samples is biased; %d+ recommended",
                       len(real_feat), len(fake_feat), FID_MIN_SAMPLES)
    is_mean, is_std = inception_score(probs, splits)
    fid = frechet_distance(compute_moments(real_feat), compute_moments(fake_feat))
    d = real_feat.shape[1]
    k = kid(real_feat, fake_feat)
    return MetricReport(name, len(real_feat), len(fake_feat), is_mean, is_std, fid, k, splits,
                        {"degree": 3, "scale": 1.0 / d, "offset": 1.0})


def evaluate(real_dir: str | Path, fake_dir: str | Path, extractor: FeatureExtractor,
             splits: int = 10, resolution: int | None = None) -> MetricReport:
    """Score the PNGs of ``fake_dir`` against those of ``real_dir``."""
    _, real = dataprep.load_image_dir(real_dir, resolution)
    _, fake = dataprep.load_image_dir(fake_dir, resolution)
    for label, batch, d in (("real", real, real_dir), ("fake", fake, fake_dir)):
        if batch.shape[0] < 2:
            raise ValueError(f"{label} directory {d} holds {batch.shape[0]} readable images; need >= 2")
    return evaluate_images(real, fake, extractor, splits)
