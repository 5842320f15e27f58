"""Deterministic toy datasets: 2-D densities and a quantized 7x7 digit set.

Identical (kind, n_samples, seed) always produce bit-identical data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

DATASET_KINDS = ("two_moons", "checkerboard", "eight_gaussians", "tiny_digits")

TWO_MOONS_NOISE = 0.05
EIGHT_GAUSSIANS_STD = 0.15
EIGHT_GAUSSIANS_RADIUS = 2.0
TINY_DIGITS_SIDE = 7


@dataclass
class ToyDataset:
    kind: str
    n_samples: int
    seed: int
    dim: int = 0  # filled from kind when left 0
    n_levels: int = 256

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ParameterError(f"unknown dataset kind: {self.kind}")
        if self.dim == 0:
            self.dim = TINY_DIGITS_SIDE**2 if self.kind == "tiny_digits" else 2


def _two_moons(n, rng, noise):
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0.0, np.pi, n_out)
    t_in = rng.uniform(0.0, np.pi, n_in)
    outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
    inner = np.stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
    pts = np.concatenate([outer, inner], axis=0)
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, pts.shape)
    return pts[rng.permutation(n)]


def _checkerboard(n, rng):
    # 4x4 board of unit squares on [-2,2]^2; points land on the 8 "black" squares
    corners = [(i, j) for i in range(-2, 2) for j in range(-2, 2) if (i + j) % 2 == 0]
    idx = rng.integers(0, len(corners), n)
    offs = rng.uniform(0.0, 1.0, (n, 2))
    base = np.array(corners, dtype=np.float64)[idx]
    return base + offs


def _eight_gaussians(n, rng):
    angles = 2.0 * np.pi * np.arange(8) / 8.0
    centers = EIGHT_GAUSSIANS_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    idx = rng.integers(0, 8, n)
    return centers[idx] + rng.normal(0.0, EIGHT_GAUSSIANS_STD, (n, 2))


# 7x7 stroke glyphs for the ten digits
_GLYPHS = [
    [".###...",
     "#...#..",
     "#...#..",
     "#...#..",
     "#...#..",
     "#...#..",
     ".###..."],
    ["..#....",
     ".##....",
     "..#....",
     "..#....",
     "..#....",
     "..#....",
     ".###..."],
    [".###...",
     "#...#..",
     "....#..",
     "...#...",
     "..#....",
     ".#.....",
     "#####.."],
    [".###...",
     "#...#..",
     "....#..",
     "..##...",
     "....#..",
     "#...#..",
     ".###..."],
    ["...#...",
     "..##...",
     ".#.#...",
     "#..#...",
     "#####..",
     "...#...",
     "...#..."],
    ["#####..",
     "#......",
     "####...",
     "....#..",
     "....#..",
     "#...#..",
     ".###..."],
    ["..##...",
     ".#.....",
     "#......",
     "####...",
     "#...#..",
     "#...#..",
     ".###..."],
    ["#####..",
     "....#..",
     "...#...",
     "..#....",
     ".#.....",
     ".#.....",
     ".#....."],
    [".###...",
     "#...#..",
     "#...#..",
     ".###...",
     "#...#..",
     "#...#..",
     ".###..."],
    [".###...",
     "#...#..",
     "#...#..",
     ".####..",
     "....#..",
     "...#...",
     ".##...."],
]


def _glyph_masks():
    masks = np.zeros((10, TINY_DIGITS_SIDE, TINY_DIGITS_SIDE))
    for d, rows in enumerate(_GLYPHS):
        for r, row in enumerate(rows):
            for c, ch in enumerate(row):
                masks[d, r, c] = 1.0 if ch == "#" else 0.0
    return masks


def _tiny_digits(n, rng, n_levels):
    masks = _glyph_masks().reshape(10, -1)
    digit = rng.integers(0, 10, n)
    stroke = np.clip(rng.normal(0.75, 0.08, (n, 1)), 0.2, 1.0)
    bg = np.abs(rng.normal(0.0, 0.02, (n, masks.shape[1])))
    img = masks[digit] * stroke + (1.0 - masks[digit]) * bg
    img = np.clip(img, 0.0, 1.0)
    return np.round(img * (n_levels - 1))


def generate_dataset(spec: ToyDataset, noise: float | None = None) -> np.ndarray:
    """Samples for a dataset spec; the two_moons noise std may be overridden."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "two_moons":
        return _two_moons(spec.n_samples, rng,
                          TWO_MOONS_NOISE if noise is None else noise)
    if spec.kind == "checkerboard":
        return _checkerboard(spec.n_samples, rng)
    if spec.kind == "eight_gaussians":
        return _eight_gaussians(spec.n_samples, rng)
    if spec.kind == "tiny_digits":
        return _tiny_digits(spec.n_samples, rng, spec.n_levels)
    raise ParameterError(f"unknown dataset kind: {spec.kind}")


def dequantize(levels: np.ndarray, n_levels: int, rng) -> np.ndarray:
    """Map integer levels to [0, 1) with uniform dequantization noise."""
    return (levels + rng.uniform(0.0, 1.0, levels.shape)) / n_levels
