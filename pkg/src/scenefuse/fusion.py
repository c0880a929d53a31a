"""Embedding fusion across crop scales and across views.

Two multi-scale combiners (plain mean, cosine-weighted toward the
tightest crop) and two multi-view combiners (plain mean, global-context
augmented) compose into four numbered schemes. Fused vectors are NOT
renormalized; retrieval uses cosine similarity, which absorbs scale.
"""

from __future__ import annotations

from enum import IntEnum
from typing import Sequence

import numpy as np

__all__ = [
    "FusionScheme",
    "cosine",
    "fuse_multiscale_direct",
    "fuse_multiscale_weighted",
    "fuse_multiview_direct",
    "fuse_multiview_global",
    "best_fit_index",
    "fuse_for_scheme",
    "fuse_views_for_scheme",
]


class FusionScheme(IntEnum):
    """Numbered combinations of the per-scale and per-view combiners."""

    DIRECT = 1           # mean over crops, mean over views
    GLOBAL_VIEW = 2      # mean over crops, global-augmented views
    WEIGHTED_SCALE = 3   # weighted crops, mean over views
    WEIGHTED_GLOBAL = 4  # weighted crops, global-augmented views

    @property
    def weighted_multiscale(self) -> bool:
        return self in (FusionScheme.WEIGHTED_SCALE, FusionScheme.WEIGHTED_GLOBAL)

    @property
    def global_multiview(self) -> bool:
        return self in (FusionScheme.GLOBAL_VIEW, FusionScheme.WEIGHTED_GLOBAL)


def _as_matrix(vectors: Sequence[np.ndarray], what: str) -> np.ndarray:
    if len(vectors) == 0:
        raise ValueError(f"{what} must contain at least one vector")
    mat = np.asarray([np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors])
    if mat.ndim != 2:
        raise ValueError(f"{what} vectors must share one dimension")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{what} vectors must be finite")
    return mat


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; rejects zero vectors and dimension mismatches."""
    av = np.asarray(a, dtype=np.float64).reshape(-1)
    bv = np.asarray(b, dtype=np.float64).reshape(-1)
    if av.shape != bv.shape:
        raise ValueError("cosine requires equal-dimension vectors")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine is undefined for a zero vector")
    return float(np.dot(av, bv) / (na * nb))


def fuse_multiscale_direct(crops: Sequence[np.ndarray]) -> np.ndarray:
    """Unweighted mean of the k crop embeddings."""
    mat = _as_matrix(crops, "crops")
    return np.sum(mat, axis=0) / mat.shape[0]


def fuse_multiscale_weighted(crops: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of crop embeddings, each weighted by its cosine to the first.

    crops[0] is the best-fit (tightest) crop; looser crops that drift from
    it contribute less.
    """
    mat = _as_matrix(crops, "crops")
    ref = mat[0]
    weights = np.array([cosine(ref, row) for row in mat])
    return np.sum(weights[:, None] * mat, axis=0) / mat.shape[0]


def fuse_multiview_direct(views: Sequence[np.ndarray]) -> np.ndarray:
    """Unweighted mean of the m per-view embeddings."""
    mat = _as_matrix(views, "views")
    return np.sum(mat, axis=0) / mat.shape[0]


def fuse_multiview_global(
    views: Sequence[np.ndarray], globals_: Sequence[np.ndarray]
) -> np.ndarray:
    """Mean over views of (view + cos(view, frame_global) * frame_global)."""
    vmat = _as_matrix(views, "views")
    gmat = _as_matrix(globals_, "globals")
    if vmat.shape != gmat.shape:
        raise ValueError("views and globals must align one-to-one")
    terms = np.empty_like(vmat)
    for i in range(vmat.shape[0]):
        terms[i] = vmat[i] + cosine(vmat[i], gmat[i]) * gmat[i]
    return np.sum(terms, axis=0) / vmat.shape[0]


def best_fit_index(ratios: Sequence[float]) -> int:
    """Index of the crop to treat as best-fit: ratio 1.0, else the smallest."""
    values = [float(r) for r in ratios]
    if not values:
        raise ValueError("ratios must be non-empty")
    if any(r <= 0 for r in values):
        raise ValueError("ratios must be positive")
    for i, r in enumerate(values):
        if r == 1.0:
            return i
    return min(range(len(values)), key=lambda i: (values[i], i))


def fuse_views_for_scheme(
    scheme: int | FusionScheme,
    views: Sequence[np.ndarray],
    globals_: Sequence[np.ndarray] | None,
) -> np.ndarray:
    """Combine per-view instance embeddings per the scheme's view rule."""
    scheme = FusionScheme(scheme)
    if scheme.global_multiview:
        if globals_ is None:
            raise ValueError(f"scheme {int(scheme)} needs per-view global embeddings")
        return fuse_multiview_global(views, globals_)
    return fuse_multiview_direct(views)


def fuse_for_scheme(
    scheme: int | FusionScheme,
    crop_sets: Sequence[Sequence[np.ndarray]],
    globals_: Sequence[np.ndarray] | None = None,
) -> np.ndarray:
    """Full two-stage fusion: crops -> per-view vectors -> one map vector.

    crop_sets holds one crop-embedding list per view, best-fit crop first.
    """
    scheme = FusionScheme(scheme)
    if scheme.weighted_multiscale:
        views = [fuse_multiscale_weighted(crops) for crops in crop_sets]
    else:
        views = [fuse_multiscale_direct(crops) for crops in crop_sets]
    return fuse_views_for_scheme(scheme, views, globals_)
