"""Invertible residual step f(z) = z + g(z).

The inner network g is a stack of spectral-normalized linears, 1-Lipschitz
activations, and optionally an attention residual, with a composed Lipschitz
budget kept below 1 so the Banach fixed-point inverse and the power-series
log-determinant both apply.  Four log-det estimators are provided: an exact
dense oracle, a deterministic truncated series, and the Hutchinson and
Russian-roulette stochastic estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (
    DotAttentionParams,
    L2AttentionParams,
    attention_block,
    dot_attention_block,
)
from .errors import (
    CertificateError,
    ConvergenceError,
    ParameterError,
    ShapeError,
)
from .layers import Activation, SpectralLinear
from .tensor import Tape, Tensor, add, as_tensor, concat, reshape, vjp

EXACT_DIM_LIMIT = 64
ATTN_CHANNEL_CHOICES = (8, 4, 2, 1)


@dataclass
class LogDetEstimate:
    value: float
    kind: str  # exact | series | hutchinson | roulette
    n_terms: int
    n_samples: int
    std_error: float


class AttentionStage:
    """Adapts flat width-w features to (positions x channels) attention input."""

    def __init__(self, width: int, variant: str = "l2", d_proj_ratio: int = 8,
                 rng=None, gamma_cap: float = None):
        channels = next(c for c in ATTN_CHANNEL_CHOICES if width % c == 0)
        self.width = int(width)
        self.channels = channels
        self.n_positions = width // channels
        self.variant = variant
        # largest |gamma| the enclosing block can absorb while staying a
        # contraction; enforced by the training-time clamp, not here
        self.gamma_cap = gamma_cap
        if variant == "l2":
            self.params = L2AttentionParams(channels, d_proj_ratio, rng=rng)
        elif variant == "dot":
            self.params = DotAttentionParams(channels, d_proj_ratio, rng=rng)
        else:
            raise ParameterError(f"unknown attention variant: {variant}")

    def __call__(self, x: Tensor, update_state=False) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[-1] != self.width:
            raise ShapeError(f"attention stage expects (batch, {self.width})")
        b = x.shape[0]
        xr = reshape(x, (b, self.n_positions, self.channels))
        if self.variant == "l2":
            out = attention_block(xr, self.params, update_state=update_state)
        else:
            out = dot_attention_block(xr, self.params, update_state=update_state)
        return reshape(out, (b, self.width))

    def budget(self) -> float:
        if self.variant != "l2":
            return float("inf")  # no certificate for dot-product attention
        return 1.0 + abs(float(self.params.gamma.data))

    def named_params(self):
        return self.params.named_params()

    def state_arrays(self):
        return self.params.state_arrays()

    def load_state_arrays(self, arrays):
        self.params.load_state_arrays(arrays)


class DenseStage:
    """One concatenation stage x -> concat(x, phi(W x)) of an invertible DenseBlock."""

    def __init__(self, linear: SpectralLinear, activation: Activation):
        self.linear = linear
        self.activation = activation

    def __call__(self, x: Tensor, update_state=False) -> Tensor:
        h = self.activation(self.linear(x, update_state=update_state))
        return concat([x, h])

    def budget(self) -> float:
        # map x -> (x, phi(Wx)) with phi 1-Lipschitz
        c = self.linear.budget()
        return float(np.sqrt(1.0 + c * c))

    def named_params(self):
        out = {f"linear.{k}": v for k, v in self.linear.named_params().items()}
        out.update({f"act.{k}": v for k, v in self.activation.named_params().items()})
        return out

    def state_arrays(self):
        return {f"linear.{k}": v for k, v in self.linear.state_arrays().items()}

    def load_state_arrays(self, arrays):
        self.linear.load_state_arrays(
            {k.split(".", 1)[1]: v for k, v in arrays.items()}
        )


class ContractiveBlock:
    """One residual step with a certified contraction budget."""

    def __init__(self, dim: int, stages, block_kind: str = "residual"):
        self.dim = int(dim)
        self.stages = list(stages)
        self.block_kind = block_kind

    def g(self, z: Tensor, update_state=False) -> Tensor:
        h = as_tensor(z)
        if h.shape[-1] != self.dim:
            raise ShapeError(f"block expects width {self.dim}, got {h.shape}")
        for stage in self.stages:
            h = stage(h, update_state=update_state)
        return h

    def forward(self, z: Tensor, update_state=False):
        z = as_tensor(z)
        gz = self.g(z, update_state=update_state)
        return add(z, gz), gz

    def budget(self) -> float:
        b = 1.0
        for stage in self.stages:
            b *= stage.budget()
        return b

    def attention_stages(self):
        return [s for s in self.stages if isinstance(s, AttentionStage)]

    def refresh_states(self, iters=100):
        for stage in self.stages:
            if isinstance(stage, SpectralLinear):
                stage.estimate_sigma(iters)
            elif isinstance(stage, DenseStage):
                stage.linear.estimate_sigma(iters)
            elif isinstance(stage, AttentionStage) and stage.variant == "l2":
                from .attention import lipschitz_bound
                lipschitz_bound(stage.params, stage.n_positions, n_iters=iters)

    def named_params(self):
        out = {}
        for j, stage in enumerate(self.stages):
            for k, v in stage.named_params().items():
                out[f"s{j}.{k}"] = v
        return out

    def state_arrays(self):
        out = {}
        for j, stage in enumerate(self.stages):
            for k, v in stage.state_arrays().items():
                out[f"s{j}.{k}"] = v
        return out

    def load_state_arrays(self, arrays):
        for j, stage in enumerate(self.stages):
            prefix = f"s{j}."
            sub = {k[len(prefix):]: v for k, v in arrays.items()
                   if k.startswith(prefix)}
            if sub:
                stage.load_state_arrays(sub)


def make_block(dim: int, hidden: int, activation: str = "lipswish",
               attention: str = "none", target_budget: float = 0.9,
               gamma_cap: float = 0.3, d_proj_ratio: int = 8,
               kind: str = "residual", dense_stages: int = 3,
               rng=None) -> ContractiveBlock:
    """Build a block whose composed budget stays below 1.

    The linear stages use the full ``target_budget`` allowance; an attention
    stage multiplies the budget by (1 + |gamma|), so gamma is capped at
    min(gamma_cap, 0.999/target_budget - 1) to keep the worst-case product
    under 1.  An attentive block therefore reduces exactly to the plain one
    at gamma = 0 instead of paying for attention with weaker linears.  The
    final linear is zero-initialized, making a fresh block the exact identity.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if not 0.0 < target_budget < 1.0:
        raise ParameterError(f"target budget must lie in (0,1), got {target_budget}")
    with_attn = attention != "none"
    eff_cap = min(float(gamma_cap), 0.999 / target_budget - 1.0)

    stages: list = []
    if kind == "residual":
        c = float(np.sqrt(target_budget))
        act = Activation(activation)
        stages.append(SpectralLinear(dim, hidden, coeff=c, rng=rng))
        stages.append(act)
        width = act.out_width(hidden)
        if with_attn:
            stages.append(AttentionStage(width, attention, d_proj_ratio,
                                         rng=rng, gamma_cap=eff_cap))
        stages.append(SpectralLinear(width, dim, coeff=c, rng=rng,
                                     weight=np.zeros((dim, width))))
    elif kind == "denseblock":
        c_d = 0.7
        width = dim
        growth = hidden
        dense_budget = 1.0
        for _ in range(dense_stages):
            act = Activation(activation)
            lin = SpectralLinear(width, growth, coeff=c_d, rng=rng)
            stages.append(DenseStage(lin, act))
            width += act.out_width(growth)
            dense_budget *= np.sqrt(1.0 + c_d * c_d)
        c_f = target_budget / dense_budget
        if not 0.0 < c_f < 1.0:
            raise ParameterError(
                f"denseblock budget {target_budget} unreachable with {dense_stages} stages"
            )
        stages.append(SpectralLinear(width, dim, coeff=c_f, rng=rng,
                                     weight=np.zeros((dim, width))))
        if with_attn:
            stages.append(AttentionStage(dim, attention, d_proj_ratio,
                                         rng=rng, gamma_cap=eff_cap))
    else:
        raise ParameterError(f"unknown block kind: {kind}")
    return ContractiveBlock(dim, stages, block_kind=kind)


def block_forward(block: ContractiveBlock, z) -> Tensor:
    out, _ = block.forward(as_tensor(z))
    return out


def block_inverse(block: ContractiveBlock, z_prime, tol: float = 1e-8,
                  max_iter: int = 200, return_history: bool = False):
    """Banach fixed-point inverse z_{k+1} = z' - g(z_k), started at z0 = z'.

    Returns z with ||z + g(z) - z'||_inf <= tol.  Accepts a single vector or
    a batch; the tolerance is enforced on the worst row.
    """
    zp = np.asarray(z_prime, dtype=np.float64)
    z = zp.copy()
    history = []
    residual = np.inf
    for _ in range(max_iter):
        gz = block.g(Tensor(z)).data
        z_next = zp - gz
        residual = float(np.max(np.abs(z - z_next)))
        history.append(residual)
        if residual <= tol:
            return (z, history) if return_history else z
        z = z_next
    raise ConvergenceError(
        f"fixed-point inversion did not reach tol={tol} in {max_iter} iterations "
        f"(last residual {residual:.3e}); contraction certificate may be violated",
        residual=residual,
    )


# log-determinant estimators ----------------------------------------------

def _as_row(z, dim: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.size != dim:
        raise ShapeError(f"z has {z.size} entries, block width is {dim}")
    return z[None, :]


def dense_jacobian(block, z) -> np.ndarray:
    """J_g built row by row from vector-Jacobian products on basis vectors."""
    d = block.dim
    row = _as_row(z, d)
    J = np.empty((d, d))
    with Tape() as tape:
        zt = Tensor(row.copy())
        gout = block.g(zt)
        for i in range(d):
            seed = np.zeros((1, d))
            seed[0, i] = 1.0
            J[i, :] = vjp(seed, gout, tape, wrt=zt).data[0]
    return J


def logdet_exact(block, z) -> LogDetEstimate:
    """Dense log det(I + J_g) via LU; asserts the determinant is positive."""
    d = block.dim
    if d > EXACT_DIM_LIMIT:
        raise ShapeError(f"exact log-det limited to dim <= {EXACT_DIM_LIMIT}")
    J = dense_jacobian(block, z)
    sign, logabs = np.linalg.slogdet(np.eye(d) + J)
    if sign <= 0:
        raise CertificateError(
            "nonpositive Jacobian determinant: contraction certificate broken"
        )
    return LogDetEstimate(float(logabs), "exact", 0, 0, 0.0)


def logdet_series(block, z, n_terms: int) -> LogDetEstimate:
    """Truncated power series with exact traces of J_g powers."""
    d = block.dim
    if d > EXACT_DIM_LIMIT:
        raise ShapeError(f"series log-det with dense traces limited to dim <= {EXACT_DIM_LIMIT}")
    J = dense_jacobian(block, z)
    P = np.eye(d)
    acc = 0.0
    for k in range(1, n_terms + 1):
        P = P @ J
        acc += ((-1.0) ** (k + 1)) * np.trace(P) / k
    return LogDetEstimate(float(acc), "series", n_terms, 0, 0.0)


def _probe(rng, shape, dist):
    if dist == "normal":
        return rng.standard_normal(shape)
    if dist == "rademacher":
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    raise ParameterError(f"unknown probe distribution: {dist}")


def logdet_hutchinson(block, z, n_terms: int, n_samples: int, seed: int,
                      dist: str = "normal", chunk: int = 20000) -> LogDetEstimate:
    """Stochastic series estimate: per probe v, iterate w^T <- w^T J_g and
    accumulate (-1)^{k+1} w^T v / k.  Deterministic given the seed."""
    d = block.dim
    row = _as_row(z, d)
    rng = np.random.default_rng(seed)
    V = _probe(rng, (n_samples, d), dist)
    est = np.empty(n_samples)
    for start in range(0, n_samples, chunk):
        Vc = V[start:start + chunk]
        s = Vc.shape[0]
        acc = np.zeros(s)
        with Tape() as tape:
            zb = Tensor(np.repeat(row, s, axis=0))
            gout = block.g(zb)
            w = Tensor(Vc.copy())
            for k in range(1, n_terms + 1):
                w = vjp(w, gout, tape, wrt=zb)
                acc += ((-1.0) ** (k + 1)) * (w.data * Vc).sum(axis=1) / k
        est[start:start + s] = acc
    std_err = float(est.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return LogDetEstimate(float(est.mean()), "hutchinson", n_terms, n_samples, std_err)


def logdet_roulette(block, z, p_geom: float, n_samples: int, seed: int,
                    chunk: int = 20000) -> LogDetEstimate:
    """Russian-roulette estimate: geometric truncation with inverse-survival
    reweighting P(K >= k) = (1 - p)^{k-1}, unbiased for the full series."""
    if not 0.0 < p_geom < 1.0:
        raise ParameterError(f"p_geom must lie in (0,1), got {p_geom}")
    d = block.dim
    row = _as_row(z, d)
    rng = np.random.default_rng(seed)
    K = rng.geometric(p_geom, size=n_samples)
    V = rng.standard_normal((n_samples, d))
    est = np.empty(n_samples)
    for start in range(0, n_samples, chunk):
        Kc = K[start:start + chunk]
        Vc = V[start:start + chunk]
        s = Vc.shape[0]
        acc = np.zeros(s)
        with Tape() as tape:
            zb = Tensor(np.repeat(row, s, axis=0))
            gout = block.g(zb)
            w = Tensor(Vc.copy())
            for k in range(1, int(Kc.max()) + 1):
                w = vjp(w, gout, tape, wrt=zb)
                survival = (1.0 - p_geom) ** (k - 1)
                coef = np.where(Kc >= k, ((-1.0) ** (k + 1)) / (k * survival), 0.0)
                acc += coef * (w.data * Vc).sum(axis=1)
        est[start:start + s] = acc
    std_err = float(est.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return LogDetEstimate(float(est.mean()), "roulette", int(K.max()), n_samples, std_err)
