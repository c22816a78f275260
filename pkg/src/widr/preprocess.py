"""Page preprocessing: binarization, line segmentation, size normalization
and fixed-size patch extraction.

Images are ``uint8`` arrays of shape (height, width); ink is dark.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

INK = 0
BACKGROUND = 255


class DegenerateHistogramError(ValueError):
    pass


def read_pgm(path: str | Path) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.read(2) != b"P5":
            raise ValueError(f"{path}: not a binary (P5) PGM file")
    with Image.open(path) as img:
        if img.mode != "L":
            raise ValueError(f"{path}: expected 8-bit grayscale, got mode {img.mode}")
        return np.asarray(img, dtype=np.uint8).copy()


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("PGM output must be a 2-D uint8 array")
    Image.fromarray(image, mode="L").save(path, format="PPM")


def otsu_threshold(histogram) -> int:
    """Threshold t maximizing the between-class variance of {<= t} vs {> t}.

    The comparison is carried out in exact integer arithmetic so that ties
    resolve to the smallest t.
    """
    hist = [int(c) for c in histogram]
    if len(hist) != 256 or any(c < 0 for c in hist):
        raise ValueError("histogram must hold 256 nonnegative counts")
    if sum(1 for c in hist if c > 0) < 2:
        raise DegenerateHistogramError("no separable classes")
    total = sum(hist)
    total_mass = sum(i * c for i, c in enumerate(hist))
    # sigma_b^2 * N^2 = (S0*w1 - S1*w0)^2 / (w0*w1); keep as a fraction num/den
    best_t, best_num, best_den = 0, 0, 1
    w0 = s0 = 0
    for t in range(256):
        w0 += hist[t]
        s0 += t * hist[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        s1 = total_mass - s0
        num = (s0 * w1 - s1 * w0) ** 2
        den = w0 * w1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def histogram(image: np.ndarray) -> np.ndarray:
    return np.bincount(np.asarray(image, dtype=np.uint8).ravel(), minlength=256)


def binarize(image: np.ndarray) -> np.ndarray:
    """Otsu binarization: pixels at or below the threshold become ink (0)."""
    t = otsu_threshold(histogram(image))
    return np.where(image <= t, INK, BACKGROUND).astype(np.uint8)


def line_boxes(binary: np.ndarray, window: int = 15, rho: float = 0.05) -> list[tuple[int, int, int, int]]:
    """Bounding boxes ``(top, bottom, left, right)`` (half-open) of text lines."""
    ink = binary == INK
    profile = ink.sum(axis=1).astype(np.float64)
    if profile.max() == 0:
        return []
    smoothed = np.convolve(profile, np.ones(window) / window, mode="same")
    on = smoothed >= rho * smoothed.max()
    # run boundaries of the boolean mask
    edges = np.flatnonzero(np.diff(np.concatenate(([0], on.view(np.int8), [0]))))
    boxes = []
    for start, stop in zip(edges[::2], edges[1::2]):
        band = ink[start:stop]
        rows = np.flatnonzero(band.any(axis=1))
        if rows.size == 0:
            continue
        cols = np.flatnonzero(band.any(axis=0))
        boxes.append((start + rows[0], start + rows[-1] + 1, cols[0], cols[-1] + 1))
    return boxes


def segment_lines(binary: np.ndarray, window: int = 15, rho: float = 0.05) -> list[np.ndarray]:
    """Smoothed projection-profile line segmentation, top to bottom."""
    return [binary[t:b, l:r].copy() for t, b, l, r in line_boxes(binary, window, rho)]


def normalized_size(width: int, height: int, target: int = 256, kind: str = "line") -> tuple[int, int]:
    if kind == "line":
        return max(1, round(width * target / height)), target
    if kind == "word":
        if width >= height:
            return target, max(1, round(height * target / width))
        return max(1, round(width * target / height)), target
    raise ValueError(f"unknown kind {kind!r}; expected 'line' or 'word'")


def normalize_image(image: np.ndarray, target: int = 256, kind: str = "line") -> np.ndarray:
    """Rescale preserving aspect ratio (bilinear).

    ``kind="line"`` fixes the height at ``target``; ``kind="word"`` fixes the
    longer side.
    """
    h, w = image.shape
    new_w, new_h = normalized_size(w, h, target, kind)
    if (new_w, new_h) == (w, h):
        return image.copy()
    resized = Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").resize(
        (new_w, new_h), Image.BILINEAR
    )
    return np.asarray(resized, dtype=np.uint8).copy()


def slide_patches(line: np.ndarray, size: int = 256) -> list[np.ndarray]:
    """Non-overlapping ``size x size`` windows, left to right; the tail is dropped.

    Lines narrower than ``size`` are center-padded with background.
    """
    h, w = line.shape
    if h != size:
        raise ValueError(f"line height {h} != patch size {size}; normalize first")
    if w < size:
        out = np.full((size, size), BACKGROUND, dtype=np.uint8)
        left = (size - w) // 2
        out[:, left : left + w] = line
        return [out]
    return [line[:, i * size : (i + 1) * size].copy() for i in range(w // size)]


def is_blank(patch: np.ndarray, ink_ratio_min: float = 0.02) -> bool:
    return np.count_nonzero(patch == INK) / patch.size < ink_ratio_min


def page_patches(
    page: np.ndarray,
    patch_size: int = 256,
    ink_ratio_min: float = 0.02,
    window: int = 15,
    rho: float = 0.05,
) -> list[tuple[int, int, np.ndarray]]:
    """Full page pipeline; returns ``(line_index, patch_index, patch)`` triples.

    Normalized lines are re-thresholded at mid-gray since bilinear scaling
    reintroduces intermediate values.
    """
    binary = binarize(page)
    out = []
    for li, line in enumerate(segment_lines(binary, window, rho)):
        norm = normalize_image(line, patch_size, "line")
        norm = np.where(norm < 128, INK, BACKGROUND).astype(np.uint8)
        for pi, patch in enumerate(slide_patches(norm, patch_size)):
            if not is_blank(patch, ink_ratio_min):
                out.append((li, pi, patch))
    return out
