"""Session-scoped trained models shared across test files.

Training is the expensive part of the suite, so each configuration is trained
once and reused; tests must not mutate fixture models (take a checkpoint copy
if mutation is needed).
"""

import numpy as np
import pytest

import acflow as af
from acflow.training import TrainConfig, train


ACCEPTANCE_RESULTS: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def _fixed_clock():
    return 0.0


@pytest.fixture(scope="session")
def trained_two_moons():
    ds = af.ToyDataset("two_moons", 1024, seed=1)
    model = af.build_model(af.ModelConfig(
        data_dim=2, blocks=4, hidden_width=32, attention="l2", seed=0))
    model, rows = train(model, ds, TrainConfig(
        epochs=40, batch_size=256, lr=3e-3, seed=5, eval_every=10),
        clock=_fixed_clock)
    model.refresh_states(100)
    return model, rows, ds


@pytest.fixture(scope="session")
def trained_eight_gaussians():
    ds = af.ToyDataset("eight_gaussians", 2048, seed=3)
    model = af.build_model(af.ModelConfig(
        data_dim=2, blocks=6, hidden_width=48, attention="l2", seed=1))
    model, rows = train(model, ds, TrainConfig(
        epochs=250, batch_size=256, lr=5e-3, seed=9, eval_every=50),
        clock=_fixed_clock)
    model.refresh_states(100)
    return model, rows, ds


@pytest.fixture(scope="session")
def trained_tiny_digits():
    """L2-attention and dot-attention twins on quantized 7x7 digits."""
    ds = af.ToyDataset("tiny_digits", 768, seed=2)
    out = {}
    for variant in ("l2", "dot"):
        model = af.build_model(af.ModelConfig(
            data_dim=49, blocks=4, hidden_width=48, attention=variant, seed=0))
        model, rows = train(model, ds, TrainConfig(
            epochs=40, batch_size=256, lr=3e-3, seed=5, eval_every=20),
            clock=_fixed_clock)
        model.refresh_states(100)
        out[variant] = (model, rows)
    return out, ds
