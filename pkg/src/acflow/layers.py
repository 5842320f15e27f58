"""Spectral-normalized affine layers and 1-Lipschitz activations.

A :class:`SpectralLinear` keeps persistent power-iteration state; one
iteration per training step tracks the live weights, and 100 iterations at
certification time pin the operator norm tightly.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    exp,
    matmul,
    min0,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    sub,
    transpose_last2,
)

DEFAULT_COEFF = 0.9
CERT_POWER_ITERS = 100
_LIPSWISH_SCALE = 1.1

ACTIVATION_KINDS = ("relu", "elu", "lipswish", "clipswish")


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


class PowerIterState:
    """Persistent u/v vectors for power iteration on one matrix."""

    def __init__(self, rows: int, cols: int, rng: np.random.Generator):
        self.u = _unit(rng.standard_normal(rows))
        self.v = _unit(rng.standard_normal(cols))


def spectral_norm(weight, state: PowerIterState, iters: int):
    """Estimate the largest singular value of ``weight``; mutates ``state``.

    Returns ``(sigma, state)``.  A zero matrix reports sigma 0 and leaves the
    state untouched.
    """
    w = np.asarray(weight, dtype=np.float64)
    if not w.any():
        return 0.0, state
    u, v = state.u, state.v
    for _ in range(iters):
        v = _unit(w.T @ u)
        u = _unit(w @ v)
    state.u, state.v = u, v
    return float(u @ w @ v), state


def sigma_tensor(weight: Tensor, state: PowerIterState) -> Tensor:
    """sigma = u^T W v with u, v held constant; differentiable in W."""
    u = Tensor(state.u[None, :])
    v = Tensor(state.v[:, None])
    return reshape(matmul(u, matmul(weight, v)), ())


class SpectralLinear:
    """Dense layer whose operator norm is softly capped at ``coeff``.

    Weights are scaled by coeff/sigma only when the estimated sigma exceeds
    the budget; under-budget weights pass through untouched.  ``normalize``
    can be switched off to obtain a plain linear layer (used by certification
    tests to construct violations).
    """

    def __init__(self, in_dim, out_dim, coeff=DEFAULT_COEFF, rng=None,
                 n_power_iters=1, weight=None, bias=None, normalize=True):
        if normalize and not 0.0 < coeff < 1.0:
            raise ParameterError(f"lip coefficient must lie in (0,1), got {coeff}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.coeff = float(coeff)
        self.n_power_iters = int(n_power_iters)
        self.normalize = bool(normalize)
        if weight is None:
            weight = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (out_dim, in_dim):
            raise ShapeError(f"weight shape {weight.shape} != ({out_dim}, {in_dim})")
        self.weight = Tensor(weight)
        self.bias = Tensor(np.zeros(out_dim) if bias is None else np.asarray(bias))
        self.state = PowerIterState(out_dim, in_dim, rng)
        spectral_norm(self.weight.data, self.state, CERT_POWER_ITERS)

    def estimate_sigma(self, iters=CERT_POWER_ITERS) -> float:
        sigma, _ = spectral_norm(self.weight.data, self.state, iters)
        return sigma

    def effective_weight(self, update_state=False) -> Tensor:
        if not self.normalize:
            return self.weight
        if update_state:
            spectral_norm(self.weight.data, self.state, self.n_power_iters)
        sigma_val = float(self.state.u @ self.weight.data @ self.state.v)
        if sigma_val <= self.coeff:
            return self.weight
        return mul(self.weight, div(self.coeff, sigma_tensor(self.weight, self.state)))

    def __call__(self, x: Tensor, update_state=False) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"input width {x.shape[-1]} != {self.in_dim}")
        w = self.effective_weight(update_state)
        return add(matmul(x, transpose_last2(w)), self.bias)

    def budget(self) -> float:
        return self.coeff if self.normalize else self.estimate_sigma()

    def named_params(self):
        return {"weight": self.weight, "bias": self.bias}

    def state_arrays(self):
        return {"u": self.state.u, "v": self.state.v}

    def load_state_arrays(self, arrays):
        self.state.u = np.asarray(arrays["u"], dtype=np.float64)
        self.state.v = np.asarray(arrays["v"], dtype=np.float64)


def forward_sn_linear(layer: SpectralLinear, x, update_state=False) -> Tensor:
    return layer(as_tensor(x), update_state=update_state)


# activations --------------------------------------------------------------

def lipswish(x, beta) -> Tensor:
    x = as_tensor(x)
    return div(mul(x, sigmoid(mul(beta, x))), _LIPSWISH_SCALE)


_clipswish_cache: dict[float, float] = {}


def clipswish_scale(beta_val: float) -> float:
    """Certified Lipschitz constant of x -> (lipswish(x), lipswish(-x)).

    Found numerically on a dense grid; a hair of headroom covers the grid
    discretization error so the normalized map stays strictly 1-Lipschitz.
    """
    key = round(float(beta_val), 12)
    got = _clipswish_cache.get(key)
    if got is not None:
        return got
    x = np.linspace(-15.0, 15.0, 60001)
    z = key * x
    s = 1.0 / (1.0 + np.exp(-np.abs(z)))
    s = np.where(z >= 0, s, 1.0 - s)
    d = (s + z * s * (1.0 - s)) / _LIPSWISH_SCALE
    slope = np.sqrt(d**2 + d[::-1] ** 2)
    val = float(slope.max()) * (1.0 + 1e-6)
    _clipswish_cache[key] = val
    return val


def clipswish(x, beta) -> Tensor:
    x = as_tensor(x)
    scale = clipswish_scale(float(as_tensor(beta).data))
    return div(concat([lipswish(x, beta), lipswish(neg(x), beta)]), scale)


def elu(x) -> Tensor:
    # alpha = 1 keeps the activation 1-Lipschitz
    x = as_tensor(x)
    return add(relu(x), sub(exp(min0(x)), 1.0))


def apply_activation(kind: str, beta, x) -> Tensor:
    """Elementwise activation; clipswish doubles the channel count."""
    if kind == "relu":
        return relu(x)
    if kind == "elu":
        return elu(x)
    if kind in ("lipswish", "clipswish"):
        beta = as_tensor(beta if beta is not None else 1.0)
        if float(beta.data) <= 0:
            raise ParameterError("lipswish beta must be positive")
        return lipswish(x, beta) if kind == "lipswish" else clipswish(x, beta)
    raise ParameterError(f"unknown activation kind: {kind}")


class Activation:
    """Activation stage with a learnable shape parameter where applicable."""

    def __init__(self, kind: str, beta=1.0):
        if kind not in ACTIVATION_KINDS:
            raise ParameterError(f"unknown activation kind: {kind}")
        self.kind = kind
        self.beta = Tensor(float(beta)) if kind in ("lipswish", "clipswish") else None

    def __call__(self, x: Tensor, update_state=False) -> Tensor:
        return apply_activation(self.kind, self.beta, x)

    def out_width(self, w: int) -> int:
        return 2 * w if self.kind == "clipswish" else w

    def budget(self) -> float:
        return 1.0

    def named_params(self):
        return {"beta": self.beta} if self.beta is not None else {}

    def state_arrays(self):
        return {}

    def load_state_arrays(self, arrays):
        pass
