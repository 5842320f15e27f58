"""L2 self-attention with a certified Lipschitz bound, plus the unconstrained
dot-product variant used for robustness comparisons.

The L2 variant ties the query and key projections (one matrix serves both
roles), collapses the value/output matrices into a single replacement matrix,
and rescales its residual contribution by a closed-form Lipschitz upper bound
involving the Lambert W function, so the residual part of the block is
|gamma|-Lipschitz by construction.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, ParameterError, ShapeError
from .layers import CERT_POWER_ITERS, PowerIterState, sigma_tensor, spectral_norm
from .tensor import (
    Tensor,
    add,
    as_tensor,
    div,
    matmul,
    mul,
    neg,
    reshape,
    row_sq_l2,
    softmax_rows,
    sub,
    transpose_last2,
    tsum,
)

PROJ_RATIOS = (1, 2, 4, 8)


def lambert_w0(y: float) -> float:
    """Principal-branch Lambert W on the nonnegative reals.

    Halley iteration from the initial guess ln(1+y); the residual
    w*exp(w) - y is driven below 1e-12 (relative for large y).
    """
    y = float(y)
    if y < 0:
        raise DomainError(f"lambert_w0 needs y >= 0, got {y}")
    if y == 0.0:
        return 0.0
    w = math.log1p(y)
    tol = 1e-13 * max(1.0, y)
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - y
        if abs(f) <= tol:
            break
        denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0)
        w -= f / denom
    return w


class L2AttentionParams:
    """Weights of one L2 self-attention layer.

    The query matrix doubles as the key matrix (the very same object), the
    replacement matrix stands in for the value/output product, and gamma
    starts at zero so the block begins as the exact identity.
    """

    def __init__(self, d_model: int, d_proj_ratio: int = 8, rng=None, d_proj=None):
        if rng is None:
            rng = np.random.default_rng(0)
        if d_proj is None:
            if d_proj_ratio not in PROJ_RATIOS:
                raise ParameterError(
                    f"d_proj_ratio must be one of {PROJ_RATIOS}, got {d_proj_ratio}"
                )
            d_proj = max(1, d_model // d_proj_ratio)
        self.d_model = int(d_model)
        self.d_proj = int(d_proj)
        self.w_q = Tensor(rng.standard_normal((d_model, d_proj)) / np.sqrt(d_model))
        self.w_l = Tensor(rng.standard_normal((d_model, d_model)) / np.sqrt(d_model))
        self.gamma = Tensor(0.0)
        self.q_state = PowerIterState(d_model, d_proj, rng)
        self.l_state = PowerIterState(d_model, d_model, rng)
        spectral_norm(self.w_q.data, self.q_state, CERT_POWER_ITERS)
        spectral_norm(self.w_l.data, self.l_state, CERT_POWER_ITERS)

    @property
    def w_k(self) -> Tensor:
        # tied: query and key share one matrix
        return self.w_q

    def named_params(self):
        return {"w_q": self.w_q, "w_l": self.w_l, "gamma": self.gamma}

    def state_arrays(self):
        return {
            "q_u": self.q_state.u, "q_v": self.q_state.v,
            "l_u": self.l_state.u, "l_v": self.l_state.v,
        }

    def load_state_arrays(self, arrays):
        self.q_state.u = np.asarray(arrays["q_u"], dtype=np.float64)
        self.q_state.v = np.asarray(arrays["q_v"], dtype=np.float64)
        self.l_state.u = np.asarray(arrays["l_u"], dtype=np.float64)
        self.l_state.v = np.asarray(arrays["l_v"], dtype=np.float64)


class DotAttentionParams:
    """Standard dot-product attention weights; deliberately uncertified."""

    def __init__(self, d_model: int, d_proj_ratio: int = 8, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        d_proj = max(1, d_model // d_proj_ratio)
        self.d_model = int(d_model)
        self.d_proj = int(d_proj)
        self.w_q = Tensor(rng.standard_normal((d_model, d_proj)) / np.sqrt(d_model))
        self.w_k = Tensor(rng.standard_normal((d_model, d_proj)) / np.sqrt(d_model))
        self.w_v = Tensor(rng.standard_normal((d_model, d_model)) / np.sqrt(d_model))
        self.gamma = Tensor(0.0)

    def named_params(self):
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v,
                "gamma": self.gamma}

    def state_arrays(self):
        return {}

    def load_state_arrays(self, arrays):
        pass


def _check_width(X: Tensor, params) -> None:
    if X.ndim < 2 or X.shape[-1] != params.d_model:
        raise ShapeError(
            f"attention input {X.shape} does not match d_model={params.d_model}"
        )


def l2_logits(X, params: L2AttentionParams) -> Tensor:
    """Pre-softmax matrix: -(squared pairwise distance of query rows)/sqrt(D)."""
    X = as_tensor(X)
    _check_width(X, params)
    q = matmul(X, params.w_q)
    sq = tsum(mul(q, q), axis=-1, keepdims=True)  # (..., N, 1)
    cross = matmul(q, transpose_last2(q))
    dist = sub(add(sq, transpose_last2(sq)), mul(2.0, cross))
    return neg(div(dist, math.sqrt(params.d_model)))


def l2_attention_forward(X, params: L2AttentionParams) -> Tensor:
    """F = P X A W_L with A = W_Q W_Q^T / sqrt(D), P row-stochastic."""
    X = as_tensor(X)
    _check_width(X, params)
    P = softmax_rows(l2_logits(X, params))
    A = div(matmul(params.w_q, transpose_last2(params.w_q)),
            math.sqrt(params.d_model))
    return matmul(P, matmul(X, matmul(A, params.w_l)))


def _bound_tensor(params: L2AttentionParams, n_positions: int,
                  iters: int) -> Tensor:
    """Lipschitz upper bound as a tensor (differentiable in the weights)."""
    if not params.w_q.data.any() or not params.w_l.data.any():
        return as_tensor(0.0)
    n = int(n_positions)
    if iters > 0:
        spectral_norm(params.w_q.data, params.q_state, iters)
        spectral_norm(params.w_l.data, params.l_state, iters)
    sig_q = sigma_tensor(params.w_q, params.q_state)
    sig_l = sigma_tensor(params.w_l, params.l_state)
    const = (math.sqrt(n) / math.sqrt(params.d_model)) * (
        4.0 * lambert_w0((n - 1) / math.e) + 1.0
    )
    # sigma(W_Q) enters squared: the map applies W_Q twice (inside the
    # softmax distances and through A = W_Q W_Q^T / sqrt(D)), so the true
    # constant scales quadratically in the query weight scale. With a single
    # power the "bound" is undersized whenever sigma(W_Q) > 1 and dividing
    # F by it would not cap the residual at |gamma|.
    return mul(const, mul(mul(sig_q, sig_q), sig_l))


def lipschitz_bound(params: L2AttentionParams, n_positions: int,
                    n_iters: int = CERT_POWER_ITERS) -> float:
    """Certified upper bound on the Lipschitz constant of the unscaled map."""
    return float(_bound_tensor(params, n_positions, n_iters).data)


def attention_block(X, params: L2AttentionParams, update_state=False) -> Tensor:
    """Residual L2 attention: out = gamma * F / bound + X.

    With gamma = 0 the output equals the input bit for bit; the map out - X is
    |gamma|-Lipschitz because F is divided by its certified bound.
    """
    X = as_tensor(X)
    _check_width(X, params)
    n = X.shape[-2]
    bound = _bound_tensor(params, n, iters=1 if update_state else 0)
    if float(bound.data) <= 1e-30:
        return X
    F = l2_attention_forward(X, params)
    return add(mul(div(params.gamma, bound), F), X)


def dot_attention_block(X, params: DotAttentionParams, update_state=False) -> Tensor:
    """Standard softmax attention with a gamma-scaled residual, no certificate."""
    X = as_tensor(X)
    _check_width(X, params)
    q = matmul(X, params.w_q)
    k = matmul(X, params.w_k)
    logits = div(matmul(q, transpose_last2(k)), math.sqrt(params.d_proj))
    P = softmax_rows(logits)
    out = matmul(P, matmul(X, params.w_v))
    return add(mul(params.gamma, out), X)
