"""Interpolation, perturbation sweeps, and certification reports."""

import numpy as np
import pytest

import acflow as af
from acflow.analysis import (
    DEFAULT_SIGMAS,
    InterpolationSpec,
    PerturbationSweep,
    certify,
    empirical_lipschitz,
    interpolate,
    perturbation_sweep,
    sweep_to_csv,
)
from util import randomize_model


def _model(seed=0, d=2):
    model = af.build_model(af.ModelConfig(
        data_dim=d, blocks=3, hidden_width=16, attention="l2", seed=seed))
    randomize_model(model, np.random.default_rng(seed + 7), scale=0.3,
                    gamma=0.15)
    model.refresh_states(100)
    return model


def test_empirical_lipschitz_linear_map():
    W = np.diag([0.5, 2.0])
    lip = empirical_lipschitz(lambda a: a @ W.T, (2,), 500,
                              np.random.default_rng(0))
    assert 1.0 < lip <= 2.0 + 1e-9


def test_interpolation_spec_validation():
    with pytest.raises(af.ParameterError):
        InterpolationSpec(0)
    InterpolationSpec(1)


def test_interpolate_endpoints_reconstruct():
    model = _model(seed=1)
    rng = np.random.default_rng(70)
    for _ in range(5):
        x1, x2 = rng.standard_normal(2), rng.standard_normal(2)
        pts, deltas = interpolate(model, x1, x2, 6, tol=1e-9)
        assert pts.shape == (7, 2)
        assert np.max(np.abs(pts[0] - x1)) <= 1e-5
        assert np.max(np.abs(pts[-1] - x2)) <= 1e-5
        # path consistency: re-encoding lands back on the latent line
        assert np.max(np.abs(model.forward_np(pts) - deltas)) <= 1e-4


def test_interpolate_identity_model_is_straight_line():
    model = af.build_model(af.ModelConfig(data_dim=2, blocks=2, hidden_width=8))
    x1, x2 = np.array([0.0, 0.0]), np.array([1.0, 2.0])
    pts, _ = interpolate(model, x1, x2, 4)
    want = np.array([x1 + t * (x2 - x1) for t in np.linspace(0, 1, 5)])
    np.testing.assert_allclose(pts, want, atol=1e-12)


def test_interpolate_overshoot_adds_one_point():
    model = _model(seed=2)
    x1, x2 = np.zeros(2), np.ones(2)
    pts, deltas = interpolate(model, x1, x2, 4, include_overshoot=True)
    assert pts.shape == (6, 2)
    z1, z2 = model.forward_np(x1)[0], model.forward_np(x2)[0]
    np.testing.assert_allclose(deltas[-1], z1 + 1.25 * (z2 - z1), atol=1e-12)


def test_perturbation_sweep_validation():
    with pytest.raises(af.ParameterError):
        PerturbationSweep(sigmas=(0.1, 0.01))
    with pytest.raises(af.ParameterError):
        PerturbationSweep(sigmas=(-1.0, 0.1))


def test_perturbation_sweep_rows_and_zero_limit():
    model = _model(seed=3)
    x = np.random.default_rng(71).standard_normal((64, 2))
    rows = perturbation_sweep(model, x, PerturbationSweep(n_inputs=64, seed=5))
    assert len(rows) == len(DEFAULT_SIGMAS)
    assert [r["sigma"] for r in rows] == list(DEFAULT_SIGMAS)
    assert all(np.isfinite(r["mean"]) for r in rows)
    clean = float(-np.mean(model.log_prob(x, seed=5)))
    assert abs(rows[0]["mean"] - clean) <= 1e-3


def test_perturbation_sweep_deterministic():
    model = _model(seed=4)
    x = np.random.default_rng(72).standard_normal((32, 2))
    sweep = PerturbationSweep(n_inputs=32, seed=9)
    a = sweep_to_csv(perturbation_sweep(model, x, sweep))
    b = sweep_to_csv(perturbation_sweep(model, x, sweep))
    assert a == b
    assert a.startswith("sigma,mean,std\n")


def test_certify_fresh_model_passes():
    model = af.build_model(af.ModelConfig(
        data_dim=2, blocks=3, hidden_width=16, attention="l2", seed=0))
    report = certify(model)
    assert report.ok
    assert len(report.blocks) == 3
    assert "PASS" in report.to_text()


def test_certify_randomized_model_passes():
    report = certify(_model(seed=5))
    assert report.ok
    for b in report.blocks:
        assert b.composed_budget < 1.0
        assert b.empirical_lipschitz <= b.composed_budget + 1e-6
        assert b.roundtrip_error <= 1e-6


def test_certify_flags_overbudget_block():
    model = _model(seed=6)
    layer = model.blocks[1].stages[0]
    layer.normalize = False  # disable the cap, then blow past the budget
    layer.weight.data = layer.weight.data * 10.0
    report = certify(model)
    assert not report.ok
    assert report.blocks[0].ok
    assert not report.blocks[1].ok
    assert "block 1" in report.to_text()
    assert "FAIL" in report.to_text()


def test_certify_trained_model_passes(trained_two_moons):
    model, _, _ = trained_two_moons
    assert certify(model).ok
