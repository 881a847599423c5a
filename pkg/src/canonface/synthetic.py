"""Synthetic face-like imagery for benchmarks, demos, and tests.

Each generated identity is a mirror-symmetric 64x64 "face" built from
geometric parts (head ellipse, eyes, brows, nose, mouth) plus a fine
symmetrized noise texture, so the base image is exactly symmetric and
spectrally sharp. Corruptions (horizontal shear, Gaussian blur,
downscale-upscale) produce the asymmetric / soft variants that scoring
and training code is exercised on.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from . import dataio
from .dataio import LEFT_EYE, MOUTH_LEFT, MOUTH_RIGHT, NOSE_TIP, RIGHT_EYE

SIDE = 64
_CX = (SIDE - 1) / 2.0  # mirror axis between columns 31 and 32


def synth_face(
    rng: np.random.Generator, texture_amplitude: float = None
) -> Tuple[np.ndarray, np.ndarray]:
    """One symmetric face image and its (5, 2) landmark array of (x, y).

    texture_amplitude scales the symmetrized noise texture; None draws it
    uniformly from [0.04, 0.09], and 0.0 yields a clean geometric face.
    """
    yy, xx = np.indices((SIDE, SIDE), dtype=np.float64)
    dx = xx - _CX

    bg = rng.uniform(0.12, 0.28)
    grad = rng.uniform(-0.08, 0.08)
    img = bg + grad * yy / (SIDE - 1)

    cy = rng.uniform(32.0, 36.0)
    rx = rng.uniform(16.0, 21.0)
    ry = rng.uniform(22.0, 27.0)
    tone = rng.uniform(0.55, 0.8)
    head = (dx / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    img = np.where(head, tone, img)

    eye_y = rng.uniform(22.0, 27.0)
    eye_dx = rng.uniform(7.0, 11.0)
    eye_r = rng.uniform(2.0, 3.5)
    eye_tone = rng.uniform(0.02, 0.18)
    eyes = ((np.abs(dx) - eye_dx) / eye_r) ** 2 + ((yy - eye_y) / eye_r) ** 2
    img = np.where(eyes <= 1.0, eye_tone, img)

    brow_t = rng.uniform(1.0, 2.0)
    brow_w = rng.uniform(3.0, 5.0)
    brows = (np.abs(np.abs(dx) - eye_dx) <= brow_w) & (
        np.abs(yy - (eye_y - 5.5)) <= brow_t
    )
    img = np.where(brows, eye_tone * 1.5, img)

    nose_y = rng.uniform(34.0, 39.0)
    nose_w = rng.uniform(1.0, 2.2)
    nose = (np.abs(dx) <= nose_w) & (yy >= eye_y + 3) & (yy <= nose_y)
    img = np.where(nose, tone * rng.uniform(0.6, 0.8), img)

    mouth_y = rng.uniform(45.0, 50.0)
    mouth_hw = rng.uniform(6.0, 10.0)
    mouth_t = rng.uniform(1.0, 2.2)
    mouth = (np.abs(dx) <= mouth_hw) & (np.abs(yy - mouth_y) <= mouth_t)
    img = np.where(mouth, rng.uniform(0.05, 0.25), img)

    noise = rng.normal(0.0, 1.0, (SIDE, SIDE))
    amp = rng.uniform(0.04, 0.09) if texture_amplitude is None else texture_amplitude
    img = img + amp * 0.5 * (noise + noise[:, ::-1])

    img = np.clip(img, 0.0, 1.0)
    img = 0.5 * (img + img[:, ::-1])

    landmarks = np.zeros((5, 2))
    landmarks[LEFT_EYE] = (_CX - eye_dx, eye_y)
    landmarks[RIGHT_EYE] = (_CX + eye_dx, eye_y)
    landmarks[NOSE_TIP] = (_CX, nose_y)
    landmarks[MOUTH_LEFT] = (_CX - mouth_hw, mouth_y)
    landmarks[MOUTH_RIGHT] = (_CX + mouth_hw, mouth_y)
    return img, landmarks


def shear_h(img: np.ndarray, amount: float) -> np.ndarray:
    """Shear rows horizontally: row y samples at x - amount * (y - center).

    Edge values replicate. amount is the slope in pixels per pixel, so
    0.15 displaces the top and bottom rows by about 4.7 px in 64x64.
    """
    img = dataio.as_image(img)
    h, w = img.shape
    out = np.empty_like(img)
    grid = np.arange(w, dtype=np.float64)
    for y in range(h):
        out[y] = np.interp(grid - amount * (y - (h - 1) / 2.0), grid, img[y])
    return out


def blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return gaussian_filter(dataio.as_image(img), sigma, mode="nearest")


def downscale_upscale(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Lose detail by resizing down by `factor` and back up."""
    img = dataio.as_image(img)
    h, w = img.shape
    small = dataio.resize_bilinear(img, h // factor, w // factor)
    return dataio.resize_bilinear(small, h, w)


def corrupt(img: np.ndarray, rng: np.random.Generator,
            max_shear: float = 0.15) -> np.ndarray:
    """Apply shear + blur + downscale-upscale with random strengths."""
    amount = rng.uniform(0.03, max_shear) * rng.choice((-1.0, 1.0))
    out = shear_h(img, amount)
    out = blur(out, rng.uniform(1.0, 3.0))
    return downscale_upscale(out)


def frontality_benchmark(
    n_identities: int, seed: int, n_variants: int = 5
) -> List[Tuple[str, List[Tuple[str, np.ndarray]]]]:
    """Identities with a symmetric sharp base plus corrupted variants.

    Returns (identity_id, [(image_id, image), ...]) with the base image
    listed first under image id "<identity>_base".
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_identities):
        ident = f"id{i:03d}"
        base, _ = synth_face(rng)
        images = [(f"{ident}_base", base)]
        for j in range(n_variants):
            images.append((f"{ident}_var{j}", corrupt(base, rng)))
        out.append((ident, images))
    return out


def recovery_pairs(
    n_identities: int, n_variants: int, seed: int, max_shear: float = 0.15
) -> Tuple[np.ndarray, np.ndarray]:
    """Sheared inputs paired with their symmetric base as the target.

    Faces are clean geometric patterns (no noise texture): pooled conv
    features cannot reproduce per-identity fine texture, so textured
    targets would put a floor under the reconstruction error.

    Returns (inputs, targets), both (n_identities * n_variants, 64, 64).
    """
    rng = np.random.default_rng(seed)
    inputs, targets = [], []
    for _ in range(n_identities):
        base, _ = synth_face(rng, texture_amplitude=0.0)
        for _ in range(n_variants):
            amount = rng.uniform(0.03, max_shear) * rng.choice((-1.0, 1.0))
            inputs.append(shear_h(base, amount))
            targets.append(base)
    return np.stack(inputs), np.stack(targets)


def verification_pairs(
    n_pairs: int, seed: int, noise_sigma: float = 0.02
) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]]:
    """Alternating same/different pairs: (img_a, lms_a, img_b, lms_b, label).

    Same pairs are one face observed twice under independent pixel noise;
    different pairs are two independently drawn identities.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        if i % 2 == 0:
            img, lms = synth_face(rng)
            a = np.clip(img + rng.normal(0.0, noise_sigma, img.shape), 0, 1)
            b = np.clip(img + rng.normal(0.0, noise_sigma, img.shape), 0, 1)
            pairs.append((a, lms, b, lms.copy(), 1))
        else:
            img_a, lms_a = synth_face(rng)
            img_b, lms_b = synth_face(rng)
            pairs.append((img_a, lms_a, img_b, lms_b, 0))
    return pairs
