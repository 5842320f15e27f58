"""Normalizing flow: composed contractive blocks over a standard-normal base.

Direction convention: blocks map data -> latent, so each block's forward
log-determinant enters the log-likelihood with a plus sign.  Sampling runs
the fixed-point inverses in reverse order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .block import ContractiveBlock, block_inverse, make_block
from .errors import CertificateError, CheckpointFormatError, ParameterError
from .tensor import Tape, Tensor, add, as_tensor, mul, tsum, vjp

LN_2PI = float(np.log(2.0 * np.pi))
CHECKPOINT_MAGIC = b"ACF1"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    data_dim: int
    blocks: int = 4
    hidden_width: int = 64
    activation: str = "lipswish"
    attention: str = "none"  # none | l2 | dot
    lip_budget: float = 0.9
    d_proj_ratio: int = 8
    gamma_cap: float = 0.3
    block_kind: str = "residual"
    dense_stages: int = 3
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_text(cls, text: str, **overrides):
        """Parse a `key = value` document; later keys win, overrides last."""
        raw: dict = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"config line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            raw[key] = val
        typed = {}
        type_by_name = {f.name: f.type for f in fields(cls)}
        for key, val in raw.items():
            if key not in type_by_name:
                raise ParameterError(f"unknown config key: {key}")
            kind = type_by_name[key]
            typed[key] = float(val) if kind == "float" else (
                int(val) if kind == "int" else val)
        typed.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(typed)


def build_model(config: ModelConfig) -> "FlowModel":
    rng = np.random.default_rng(config.seed)
    blocks = [
        make_block(
            config.data_dim,
            config.hidden_width,
            activation=config.activation,
            attention=config.attention,
            target_budget=config.lip_budget,
            gamma_cap=config.gamma_cap,
            d_proj_ratio=config.d_proj_ratio,
            kind=config.block_kind,
            dense_stages=config.dense_stages,
            rng=rng,
        )
        for _ in range(config.blocks)
    ]
    return FlowModel(blocks, config.data_dim, config)


class FlowModel:
    """Ordered block stack with a standard-normal base distribution."""

    def __init__(self, blocks, dim: int, config: ModelConfig | None = None):
        self.blocks = list(blocks)
        self.dim = int(dim)
        self.config = config

    # parameter bookkeeping ------------------------------------------------
    def named_params(self):
        out = {}
        for i, block in enumerate(self.blocks):
            for k, v in block.named_params().items():
                out[f"block{i}.{k}"] = v
        return out

    def state_entries(self):
        out = {}
        for i, block in enumerate(self.blocks):
            for k, v in block.state_arrays().items():
                out[f"block{i}.{k}"] = v
        return out

    def load_state_entries(self, arrays):
        for i, block in enumerate(self.blocks):
            prefix = f"block{i}."
            sub = {k[len(prefix):]: v for k, v in arrays.items()
                   if k.startswith(prefix)}
            block.load_state_arrays(sub)

    def attention_params(self):
        out = []
        for block in self.blocks:
            for stage in block.attention_stages():
                out.append(stage.params)
        return out

    def refresh_states(self, iters=100):
        for block in self.blocks:
            block.refresh_states(iters)

    # forward machinery ----------------------------------------------------
    def forward_latent(self, x, update_state=False, logdet=None, rng=None,
                       n_terms=10, p_geom=0.5):
        """Map x toward the latent space, optionally accumulating per-block
        log-determinants.

        ``logdet`` in {None, "exact", "series", "hutchinson", "roulette"}.
        The stochastic modes build a differentiable estimate (probe vectors
        held constant); exact/series return constant values, evaluation only.
        Returns (z, [per-block log-det tensors]).
        """
        z = as_tensor(x)
        lds = []
        for block in self.blocks:
            with Tape() as bt:
                gout = block.g(z, update_state=update_state)
                ld = None
                if logdet is not None:
                    ld = _block_logdet_terms(block, z, gout, bt, logdet,
                                             rng=rng, n_terms=n_terms,
                                             p_geom=p_geom)
            z = add(z, gout)
            lds.append(ld)
        return z, lds

    def _base_log_prob(self, z: Tensor) -> Tensor:
        return add(mul(-0.5, tsum(mul(z, z), axis=-1)), -0.5 * self.dim * LN_2PI)

    # public surface -------------------------------------------------------
    def log_prob(self, x, method=None, seed=0, n_terms=None, chunk=4096):
        """Log density of data-space points, as a numpy array of shape (batch,).

        Default estimator: deterministic series (n=20) for dim <= 10, single
        probe Hutchinson (n_terms=10) otherwise; "exact" is available for any
        dim <= 64.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if method is None:
            method = "series" if self.dim <= 10 else "hutchinson"
        if n_terms is None:
            n_terms = 20 if method == "series" else 10
        out = np.empty(x.shape[0])
        for ci, start in enumerate(range(0, x.shape[0], chunk)):
            xb = x[start:start + chunk]
            rng = np.random.default_rng([seed, ci])
            with Tape():
                z, lds = self.forward_latent(Tensor(xb), logdet=method,
                                             rng=rng, n_terms=n_terms)
                lp = self._base_log_prob(z)
                for ld in lds:
                    lp = add(lp, ld)
            out[start:start + xb.shape[0]] = lp.data
        return out

    def nll_loss(self, x, rng, update_state=True, estimator="roulette",
                 n_terms=10, p_geom=0.5) -> Tensor:
        """Mean negative log-likelihood as a differentiable scalar tensor.

        Must be called inside an active Tape; probe vectors are drawn from
        ``rng`` and treated as constants.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z, lds = self.forward_latent(Tensor(x), update_state=update_state,
                                     logdet=estimator, rng=rng,
                                     n_terms=n_terms, p_geom=p_geom)
        lp = self._base_log_prob(z)
        for ld in lds:
            lp = add(lp, ld)
        return mul(-1.0 / x.shape[0], tsum(lp))

    def forward_np(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z, _ = self.forward_latent(Tensor(x))
        return z.data

    def inverse(self, z, tol=1e-8, max_iter=200) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        for block in reversed(self.blocks):
            z = block_inverse(block, z, tol=tol, max_iter=max_iter)
        return z

    def sample(self, n: int, seed: int, tol=1e-8) -> np.ndarray:
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.dim))
        return self.inverse(z, tol=tol)


# module-level wrappers mirroring the model surface ------------------------

def log_prob(model: FlowModel, x, **kw) -> np.ndarray:
    return model.log_prob(x, **kw)


def sample(model: FlowModel, n: int, seed: int, **kw) -> np.ndarray:
    return model.sample(n, seed, **kw)


def bits_per_dim(model, x, n_levels: int, **kw) -> float:
    """Mean bits/dim of dequantized inputs in [0, 1]^D."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lp = model.log_prob(x, **kw)
    d = x.shape[-1]
    return float(np.mean((-lp / np.log(2.0) + d * np.log2(n_levels)) / d))


def bits_per_dim_rows(model, x, n_levels: int, **kw) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lp = model.log_prob(x, **kw)
    d = x.shape[-1]
    return (-lp / np.log(2.0) + d * np.log2(n_levels)) / d


# per-block log-determinant terms ------------------------------------------

def _batched_jacobian(block, z_in, gout, tape) -> np.ndarray:
    b, d = gout.shape
    J = np.empty((b, d, d))
    for i in range(d):
        seed = np.zeros((b, d))
        seed[:, i] = 1.0
        J[:, i, :] = vjp(seed, gout, tape, wrt=z_in).data
    return J


def _block_logdet_terms(block, z_in, gout, tape, mode, rng=None,
                        n_terms=10, p_geom=0.5) -> Tensor:
    b, d = gout.shape
    if mode == "exact":
        J = _batched_jacobian(block, z_in, gout, tape)
        sign, logabs = np.linalg.slogdet(np.eye(d)[None] + J)
        if np.any(sign <= 0):
            raise CertificateError(
                "nonpositive Jacobian determinant during log_prob"
            )
        return Tensor(logabs)
    if mode == "series":
        J = _batched_jacobian(block, z_in, gout, tape)
        P = J.copy()
        acc = np.trace(P, axis1=1, axis2=2).copy()
        for k in range(2, n_terms + 1):
            P = P @ J
            acc += ((-1.0) ** (k + 1)) * np.trace(P, axis1=1, axis2=2) / k
        return Tensor(acc)
    if mode == "hutchinson":
        if rng is None:
            raise ParameterError("stochastic log-det needs an rng")
        V = rng.standard_normal((b, d))
        w = Tensor(V.copy())
        acc = as_tensor(np.zeros(b))
        for k in range(1, n_terms + 1):
            w = vjp(w, gout, tape, wrt=z_in)
            acc = add(acc, mul(tsum(mul(w, Tensor(V)), axis=-1),
                               ((-1.0) ** (k + 1)) / k))
        return acc
    if mode == "roulette":
        if rng is None:
            raise ParameterError("stochastic log-det needs an rng")
        K = rng.geometric(p_geom, size=b)
        V = rng.standard_normal((b, d))
        w = Tensor(V.copy())
        acc = as_tensor(np.zeros(b))
        for k in range(1, int(K.max()) + 1):
            w = vjp(w, gout, tape, wrt=z_in)
            survival = (1.0 - p_geom) ** (k - 1)
            coef = np.where(K >= k, ((-1.0) ** (k + 1)) / (k * survival), 0.0)
            acc = add(acc, mul(tsum(mul(w, Tensor(V)), axis=-1), Tensor(coef)))
        return acc
    raise ParameterError(f"unknown log-det mode: {mode}")


# checkpointing ------------------------------------------------------------

def _collect_entries(model: FlowModel):
    entries = []
    for name, t in model.named_params().items():
        if t is None:
            continue
        entries.append((name, np.asarray(t.data, dtype=np.float64)))
    for name, arr in model.state_entries().items():
        entries.append((f"state.{name}", np.asarray(arr, dtype=np.float64)))
    return entries


def save_checkpoint(model: FlowModel, path) -> None:
    if model.config is None:
        raise ParameterError("model has no config; cannot checkpoint")
    cfg_bytes = json.dumps(model.config.to_dict(), sort_keys=True,
                           separators=(",", ":")).encode()
    entries = _collect_entries(model)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for ext in arr.shape:
                fh.write(struct.pack("<Q", ext))
            fh.write(arr.astype("<f8").tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CheckpointFormatError(
                f"truncated checkpoint at offset {self.off}", offset=self.off
            )
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path) -> FlowModel:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic: not an ACF checkpoint", offset=0)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}",
                                    offset=4)
    cfg = ModelConfig.from_dict(json.loads(r.take(r.u32()).decode()))
    model = build_model(cfg)
    params = model.named_params()
    states = {}
    n_entries = r.u32()
    for _ in range(n_entries):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        shape = tuple(r.u64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).copy()
        if name.startswith("state."):
            states[name[len("state."):]] = arr
        elif name in params:
            if params[name].data.shape != arr.shape:
                raise CheckpointFormatError(
                    f"shape mismatch for {name}: {arr.shape}", offset=r.off)
            params[name].data = arr
        else:
            raise CheckpointFormatError(f"unknown parameter {name}", offset=r.off)
    if r.off != len(r.blob):
        raise CheckpointFormatError("trailing bytes after last entry", offset=r.off)
    model.load_state_entries(states)
    return model
