"""Deterministic toy dataset generators."""

import numpy as np
import pytest

from acflow.datasets import ToyDataset, dequantize, generate_dataset
from acflow.errors import ParameterError


def test_determinism_bit_identical():
    for kind in ("two_moons", "checkerboard", "eight_gaussians", "tiny_digits"):
        a = generate_dataset(ToyDataset(kind, 256, seed=4))
        b = generate_dataset(ToyDataset(kind, 256, seed=4))
        assert np.array_equal(a, b)
        c = generate_dataset(ToyDataset(kind, 256, seed=5))
        assert not np.array_equal(a, c)


def test_dims():
    assert ToyDataset("two_moons", 10, seed=0).dim == 2
    assert ToyDataset("tiny_digits", 10, seed=0).dim == 49
    assert generate_dataset(ToyDataset("tiny_digits", 10, seed=0)).shape == (10, 49)


def test_unknown_kind_rejected():
    with pytest.raises(ParameterError):
        ToyDataset("spiral", 10, seed=0)


def test_eight_gaussians_mean_near_origin():
    x = generate_dataset(ToyDataset("eight_gaussians", 20_000, seed=1))
    assert np.linalg.norm(x.mean(axis=0)) < 0.05


def test_eight_gaussians_modes_on_circle():
    x = generate_dataset(ToyDataset("eight_gaussians", 5_000, seed=2))
    r = np.linalg.norm(x, axis=1)
    assert abs(np.median(r) - 2.0) < 0.1


def test_checkerboard_membership():
    x = generate_dataset(ToyDataset("checkerboard", 5_000, seed=3))
    assert np.all((x >= -2.0) & (x <= 2.0))
    i = np.floor(x[:, 0]).astype(int)
    j = np.floor(x[:, 1]).astype(int)
    assert np.all((i + j) % 2 == 0)


def test_two_moons_noiseless_on_arcs():
    x = generate_dataset(ToyDataset("two_moons", 2_000, seed=4), noise=0.0)
    d_outer = np.abs(np.linalg.norm(x, axis=1) - 1.0)
    d_inner = np.abs(np.linalg.norm(x - np.array([1.0, 0.5]), axis=1) - 1.0)
    on_outer = (d_outer <= 1e-9) & (x[:, 1] >= -1e-9)
    on_inner = (d_inner <= 1e-9) & (x[:, 1] <= 0.5 + 1e-9)
    assert np.all(on_outer | on_inner)


def test_two_moons_noise_scale():
    x = generate_dataset(ToyDataset("two_moons", 20_000, seed=5))
    d_outer = np.abs(np.linalg.norm(x, axis=1) - 1.0)
    d_inner = np.abs(np.linalg.norm(x - np.array([1.0, 0.5]), axis=1) - 1.0)
    d = np.minimum(d_outer, d_inner)
    # radial deviation of an isotropic 0.05-std cloud stays well under 4 sigma
    assert np.quantile(d, 0.99) < 0.2


def test_tiny_digits_levels():
    ds = ToyDataset("tiny_digits", 500, seed=6)
    x = generate_dataset(ds)
    assert np.array_equal(x, np.round(x))
    assert x.min() >= 0 and x.max() <= ds.n_levels - 1
    assert x.max() > 100  # strokes reach bright levels


def test_dequantize_range_and_determinism():
    ds = ToyDataset("tiny_digits", 100, seed=7)
    x = generate_dataset(ds)
    a = dequantize(x, ds.n_levels, np.random.default_rng(1))
    b = dequantize(x, ds.n_levels, np.random.default_rng(1))
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() < 1.0
