"""Training loop, Adam optimizer, metrics, and the paired attention-on/off
convergence protocol.

All randomness is drawn from named per-purpose streams spawned from one seed,
so a (seed, config, dataset) triple reproduces the final parameters bit for
bit.  Wall-clock entries in metrics are the single non-reproducible field; an
injected clock makes them deterministic when byte-identical output matters.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import ToyDataset, dequantize, generate_dataset
from .errors import ParameterError
from .flow import FlowModel, ModelConfig, build_model
from .tensor import Tape, backward

LN2 = float(np.log(2.0))


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    estimator: str = "roulette"  # roulette | hutchinson
    p_geom: float = 0.5
    n_terms: int = 10
    eval_every: int = 10
    eval_fraction: float = 0.1
    metrics_path: str | None = None

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr <= 0:
            raise ParameterError("epochs, batch_size and lr must be positive")


@dataclass
class MetricsRow:
    epoch: int
    step: int
    train_nll: float
    eval_nll: float
    bpd: float | None
    wallclock_s: float
    gammas: list = field(default_factory=list)


def metrics_header() -> str:
    return "epoch,step,train_nll,eval_nll,bpd,wallclock_s,gammas"


def metrics_to_csv(rows) -> str:
    lines = [metrics_header()]
    for r in rows:
        bpd = "" if r.bpd is None else repr(float(r.bpd))
        gam = ";".join(repr(float(g)) for g in r.gammas)
        lines.append(
            f"{r.epoch},{r.step},{float(r.train_nll)!r},{float(r.eval_nll)!r},"
            f"{bpd},{float(r.wallclock_s)!r},{gam}"
        )
    return "\n".join(lines) + "\n"


def write_metrics_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(metrics_to_csv(rows))


# optimizer ----------------------------------------------------------------

def adam_step(param, grad, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update on a raw array; ``state`` is (m, v, t) and is mutated."""
    m, v, t = state
    if param.shape != grad.shape:
        raise ParameterError(f"grad shape {grad.shape} != param {param.shape}")
    b1, b2 = betas
    t += 1
    m[...] = b1 * m + (1.0 - b1) * grad
    v[...] = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    param[...] = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    state[2] = t
    return param, state


class Adam:
    def __init__(self, params: dict, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = {k: v for k, v in params.items() if v is not None}
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = {
            k: [np.zeros_like(v.data), np.zeros_like(v.data), 0]
            for k, v in self.params.items()
        }

    def step(self, grads) -> None:
        for name in self.params:
            p = self.params[name]
            g = grads.of(p).data
            adam_step(p.data, np.asarray(g, dtype=np.float64), self.state[name],
                      self.lr, self.betas, self.eps)


def _clamp_model(model: FlowModel) -> None:
    default_cap = model.config.gamma_cap if model.config else 0.3
    for block in model.blocks:
        for stage in block.attention_stages():
            if stage.variant == "l2":  # dot attention is deliberately unclamped
                cap = stage.gamma_cap if stage.gamma_cap is not None \
                    else default_cap
                stage.params.gamma.data = np.asarray(
                    np.clip(stage.params.gamma.data, -cap, cap))
        for stage in block.stages:
            beta = getattr(stage, "beta", None)
            if beta is None:
                beta = getattr(getattr(stage, "activation", None), "beta", None)
            if beta is not None:
                beta.data = np.asarray(np.maximum(beta.data, 1e-3))


def _gammas(model: FlowModel):
    return [float(p.gamma.data) for p in model.attention_params()]


def _eval_nll(model: FlowModel, x: np.ndarray, seed: int) -> float:
    return float(-np.mean(model.log_prob(x, seed=seed)))


def train(model: FlowModel, dataset: ToyDataset, config: TrainConfig,
          clock=time.perf_counter):
    """Minimize mean NLL; returns (model, metrics rows).

    A metrics row is emitted before the first step and then every
    ``eval_every`` epochs; a non-finite loss aborts with the parameters from
    the last finished epoch.
    """
    data = generate_dataset(dataset)
    is_image = dataset.kind == "tiny_digits"
    ss = np.random.SeedSequence(config.seed)
    order_rng, probe_rng, deq_rng, eval_seed = [
        np.random.default_rng(s) for s in ss.spawn(3)
    ] + [int(ss.generate_state(4)[3])]

    n_eval = max(1, int(round(len(data) * config.eval_fraction)))
    perm = np.random.default_rng(ss.spawn(1)[0]).permutation(len(data))
    data = data[perm]
    eval_raw, train_raw = data[:n_eval], data[n_eval:]
    if is_image:
        eval_x = dequantize(eval_raw, dataset.n_levels, deq_rng)
    else:
        eval_x = eval_raw

    t0 = clock()
    rows = []
    step = 0
    d = model.dim

    def emit(epoch, train_nll):
        eval_nll = _eval_nll(model, eval_x, eval_seed)
        bpd = None
        if is_image:
            bpd = (eval_nll / d + np.log(dataset.n_levels)) / LN2
        rows.append(MetricsRow(epoch, step, train_nll, eval_nll, bpd,
                               clock() - t0, _gammas(model)))

    emit(0, _eval_nll(model, train_raw if not is_image
                      else dequantize(train_raw, dataset.n_levels, deq_rng),
                      eval_seed))

    opt = Adam(model.named_params(), config.lr,
               (config.beta1, config.beta2), config.eps)
    snapshot = {k: v.data.copy() for k, v in model.named_params().items()
                if v is not None}
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(len(train_raw))
        epoch_x = train_raw[order]
        if is_image:
            epoch_x = dequantize(epoch_x, dataset.n_levels, deq_rng)
        epoch_losses = []
        aborted = False
        for start in range(0, len(epoch_x), config.batch_size):
            xb = epoch_x[start:start + config.batch_size]
            if len(xb) < 2:
                continue
            with Tape() as tape:
                loss = model.nll_loss(xb, probe_rng, update_state=True,
                                      estimator=config.estimator,
                                      n_terms=config.n_terms,
                                      p_geom=config.p_geom)
                if not np.isfinite(loss.data):
                    aborted = True
                    break
                grads = backward(loss, tape)
            opt.step(grads)
            _clamp_model(model)
            step += 1
            epoch_losses.append(float(loss.data))
        if aborted:
            for k, v in model.named_params().items():
                if v is not None:
                    v.data = snapshot[k].copy()
            break
        snapshot = {k: v.data.copy() for k, v in model.named_params().items()
                    if v is not None}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            emit(epoch, float(np.mean(epoch_losses)) if epoch_losses
                 else float("nan"))
    if config.metrics_path:
        write_metrics_csv(rows, config.metrics_path)
    return model, rows


def paired_convergence_run(dataset: ToyDataset, model_cfg: ModelConfig,
                           train_cfg: TrainConfig, clock=time.perf_counter):
    """Train two models identical except attention in {none, l2} from one seed.

    Both metric streams share the same step grid; at initialization the
    attentive model is the exact identity of the baseline (gamma = 0 and a
    zero final linear), so both start from the same NLL.
    """
    streams = {}
    for variant in ("none", "l2"):
        cfg = replace(model_cfg, attention=variant)
        model = build_model(cfg)
        model, rows = train(model, dataset, copy.deepcopy(train_cfg),
                            clock=clock)
        streams[variant] = (model, rows)
    return streams["none"], streams["l2"]
