"""Frontal-view scoring and per-identity canonical image selection.

An image's score is its left/right asymmetry minus a weighted nuclear
norm: symmetric faces score low on the first term, sharp (high-rank)
faces are rewarded by the second, so the minimum-score image of an
identity is its best frontal, sharp representative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from . import linalg
from .dataio import as_image
from .errors import DataError

IMAGE_SIDE = 64
_HALF = IMAGE_SIDE // 2

MIRRORED = "mirrored"
LITERAL = "literal"

SYMMETRY = "symmetry"
RANK = "rank"
COMBINED = "combined"

DEFAULT_LAMBDA = 0.02


@dataclass(frozen=True)
class FrontalityConfig:
    """Scoring knobs: nuclear-norm weight and asymmetry formula.

    lam is the nonnegative weight on the nuclear term. symmetry_mode
    selects between the mirrored left/right comparison (default) and the
    literal half-projection difference kept for documentation (see
    symmetry_term).
    """

    lam: float = DEFAULT_LAMBDA
    symmetry_mode: str = MIRRORED

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0.0:
            raise DataError(f"lam must be finite and >= 0, got {self.lam}")
        if self.symmetry_mode not in (MIRRORED, LITERAL):
            raise DataError(f"unknown symmetry mode {self.symmetry_mode!r}")


@dataclass(frozen=True)
class ScoredImage:
    image_id: str
    symmetry_term: float
    nuclear_term: float
    score: float  # symmetry_term - lam * nuclear_term at scoring time


def flip_h(img) -> np.ndarray:
    """Mirror an image horizontally (reverse column order)."""
    return np.asarray(img, dtype=np.float64)[:, ::-1].copy()


def _as_face(img, name: str = "image") -> np.ndarray:
    a = as_image(img, name)
    if a.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise DataError(
            f"{name} must be {IMAGE_SIDE}x{IMAGE_SIDE}, got {a.shape[0]}x{a.shape[1]}"
        )
    return a


def _half_projectors() -> Tuple[np.ndarray, np.ndarray]:
    p = np.zeros((IMAGE_SIDE, IMAGE_SIDE))
    q = np.zeros((IMAGE_SIDE, IMAGE_SIDE))
    p[np.arange(_HALF), np.arange(_HALF)] = 1.0
    q[np.arange(_HALF, IMAGE_SIDE), np.arange(_HALF, IMAGE_SIDE)] = 1.0
    return p, q


def _symmetry_stack(stack: np.ndarray, mode: str) -> np.ndarray:
    """Per-image asymmetry for a (B, 64, 64) stack."""
    if mode == MIRRORED:
        d = stack[:, :, :_HALF] - stack[:, :, _HALF:][:, :, ::-1]
        return np.sum(d * d, axis=(1, 2))
    # literal mode: project onto the two column halves and subtract. The
    # projections have disjoint column support, so this degenerates to the
    # squared Frobenius norm of the whole image; it is kept (and computed
    # by the actual matrix products) purely to document that reading.
    p, q = _half_projectors()
    d = stack @ p - stack @ q
    return np.sum(d * d, axis=(1, 2))


def symmetry_term(img, mode: str = MIRRORED) -> float:
    """Squared-difference asymmetry of a 64x64 image.

    In ``mirrored`` mode, the right half is flipped before comparison, so
    a horizontally mirror-symmetric image scores exactly 0. ``literal``
    mode subtracts the raw left/right column projections instead.
    """
    a = _as_face(img)
    if mode not in (MIRRORED, LITERAL):
        raise DataError(f"unknown symmetry mode {mode!r}")
    return float(_symmetry_stack(a[None], mode)[0])


def frontality_measure(img, cfg: FrontalityConfig, image_id: str = "") -> ScoredImage:
    """Score one image; lower = more frontal and sharper."""
    a = _as_face(img)
    sym = symmetry_term(a, cfg.symmetry_mode)
    nuc = linalg.nuclear_norm(a)
    return ScoredImage(image_id, sym, nuc, sym - cfg.lam * nuc)


def score_images(
    images: Iterable[Tuple[str, np.ndarray]], cfg: FrontalityConfig
) -> List[ScoredImage]:
    """Score a batch of (image_id, image) pairs in input order.

    Batches the singular-value work across all images, which is much
    faster than per-image calls for whole manifests.
    """
    pairs = list(images)
    if not pairs:
        raise DataError("no images to score")
    ids = [str(i) for i, _ in pairs]
    stack = np.stack([_as_face(img, f"image {i!r}") for i, img in pairs])
    sym = _symmetry_stack(stack, cfg.symmetry_mode)
    nuc = linalg.nuclear_norms(stack)
    return [
        ScoredImage(i, float(s), float(n), float(s) - cfg.lam * float(n))
        for i, s, n in zip(ids, sym, nuc)
    ]


def select_canonical(
    images: Iterable[Tuple[str, np.ndarray]], cfg: FrontalityConfig
) -> str:
    """Id of the minimum-score image; ties go to the smallest id."""
    scored = score_images(images, cfg)
    best = min(scored, key=lambda s: (s.score, s.image_id))
    return best.image_id


def rank_images(
    images: Iterable[Tuple[str, np.ndarray]],
    cfg: FrontalityConfig,
    criterion: str = COMBINED,
) -> List[ScoredImage]:
    """Order scored images by one criterion.

    ``symmetry`` sorts ascending by asymmetry, ``rank`` descending by
    nuclear norm (sharpest first), ``combined`` ascending by score. Ties
    are broken by image id.
    """
    scored = score_images(images, cfg)
    if criterion == SYMMETRY:
        key = lambda s: (s.symmetry_term, s.image_id)
    elif criterion == RANK:
        key = lambda s: (-s.nuclear_term, s.image_id)
    elif criterion == COMBINED:
        key = lambda s: (s.score, s.image_id)
    else:
        raise DataError(f"unknown ranking criterion {criterion!r}")
    return sorted(scored, key=key)
