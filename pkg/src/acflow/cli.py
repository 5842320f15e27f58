"""Command line interface.

Subcommands: train, eval, sample, invert, interpolate, perturb, certify,
paired-run.  Exit status is 0 on success, 1 on a reported failure (for
example a certification that does not pass), and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .analysis import (
    DEFAULT_SIGMAS,
    PerturbationSweep,
    certify,
    interpolate,
    perturbation_sweep,
    sweep_to_csv,
)
from .datasets import DATASET_KINDS, ToyDataset, dequantize, generate_dataset
from .errors import AcflowError
from .flow import (
    FlowModel,
    ModelConfig,
    bits_per_dim,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, paired_convergence_run, train, write_metrics_csv


def _fixed_clock():
    return 0.0


def _add_dataset_args(p, required=True):
    p.add_argument("--dataset", choices=DATASET_KINDS, required=required)
    p.add_argument("--n-samples", type=int, default=2048)
    p.add_argument("--data-seed", type=int, default=0)


def _add_model_args(p):
    p.add_argument("--config", help="model config file with key = value lines")
    p.add_argument("--blocks", type=int)
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--activation", choices=("lipswish", "clipswish", "elu"))
    p.add_argument("--attention", choices=("none", "l2", "dot"))
    p.add_argument("--lip-budget", type=float)
    p.add_argument("--d-proj-ratio", type=int)
    p.add_argument("--gamma-cap", type=float)
    p.add_argument("--block-kind", choices=("residual", "denseblock"))
    p.add_argument("--dense-stages", type=int)


def _model_config(args, data_dim: int) -> ModelConfig:
    overrides = dict(
        data_dim=data_dim,
        blocks=args.blocks,
        hidden_width=args.hidden_width,
        activation=args.activation,
        attention=args.attention,
        lip_budget=args.lip_budget,
        d_proj_ratio=args.d_proj_ratio,
        gamma_cap=args.gamma_cap,
        block_kind=args.block_kind,
        dense_stages=args.dense_stages,
        seed=args.seed,
    )
    if args.config:
        with open(args.config) as fh:
            return ModelConfig.from_text(fh.read(), **overrides)
    return ModelConfig(**{k: v for k, v in overrides.items() if v is not None})


def _add_train_args(p):
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--estimator", choices=("roulette", "hutchinson"),
                   default="roulette")
    p.add_argument("--n-terms", type=int, default=10)
    p.add_argument("--p-geom", type=float, default=0.5)
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--metrics")
    p.add_argument("--fixed-clock", action="store_true",
                   help="write 0.0 wallclock so metrics CSVs are reproducible")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        seed=args.seed, estimator=args.estimator, n_terms=args.n_terms,
        p_geom=args.p_geom, eval_every=args.eval_every,
        metrics_path=args.metrics,
    )


def _eval_points(args, model: FlowModel):
    if args.input:
        return np.atleast_2d(np.loadtxt(args.input, delimiter=",")), None
    spec = ToyDataset(args.dataset, args.n_samples, args.data_seed)
    data = generate_dataset(spec)
    if spec.kind == "tiny_digits":
        rng = np.random.default_rng(args.seed)
        return dequantize(data, spec.n_levels, rng), spec.n_levels
    return data, None


def cmd_train(args) -> int:
    spec = ToyDataset(args.dataset, args.n_samples, args.data_seed)
    model = build_model(_model_config(args, spec.dim))
    clock = _fixed_clock if args.fixed_clock else time.perf_counter
    model, rows = train(model, spec, _train_config(args), clock=clock)
    save_checkpoint(model, args.out)
    last = rows[-1]
    print(f"trained {args.epochs} epochs; final eval NLL {last.eval_nll:.4f}"
          + (f" bpd {last.bpd:.4f}" if last.bpd is not None else ""))
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    x, n_levels = _eval_points(args, model)
    if n_levels is not None:
        print(f"bpd {bits_per_dim(model, x, n_levels, seed=args.seed)!r}")
    else:
        nll = float(-np.mean(model.log_prob(x, seed=args.seed)))
        print(f"nll {nll!r}")
    return 0


def cmd_sample(args) -> int:
    model = load_checkpoint(args.model)
    pts = model.sample(args.n, args.seed)
    np.savetxt(args.out, pts, delimiter=",")
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_invert(args) -> int:
    model = load_checkpoint(args.model)
    z = np.atleast_2d(np.loadtxt(args.input, delimiter=","))
    np.savetxt(args.out, model.inverse(z, tol=args.tol), delimiter=",")
    print(f"wrote {z.shape[0]} inverted points to {args.out}")
    return 0


def cmd_interpolate(args) -> int:
    model = load_checkpoint(args.model)
    x1 = np.loadtxt(args.x1, delimiter=",").reshape(-1)
    x2 = np.loadtxt(args.x2, delimiter=",").reshape(-1)
    pts, _ = interpolate(model, x1, x2, args.steps,
                         include_overshoot=args.include_overshoot)
    np.savetxt(args.out, pts, delimiter=",")
    print(f"wrote {pts.shape[0]} interpolants to {args.out}")
    return 0


def cmd_perturb(args) -> int:
    model = load_checkpoint(args.model)
    variant = args.variant or (model.config.attention if model.config else "l2")
    x, n_levels = _eval_points(args, model)
    sweep = PerturbationSweep(tuple(args.sigmas), args.n_inputs, args.seed,
                              variant)
    rows = perturbation_sweep(model, x, sweep, n_levels=n_levels)
    csv = sweep_to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
    print(csv, end="")
    return 0


def cmd_certify(args) -> int:
    model = load_checkpoint(args.model)
    report = certify(model, seed=args.seed)
    print(report.to_text())
    return 0 if report.ok else 1


def cmd_paired_run(args) -> int:
    spec = ToyDataset(args.dataset, args.n_samples, args.data_seed)
    model_cfg = _model_config(args, spec.dim)
    train_cfg = _train_config(args)
    clock = _fixed_clock if args.fixed_clock else time.perf_counter
    (m_none, rows_none), (m_l2, rows_l2) = paired_convergence_run(
        spec, model_cfg, train_cfg, clock=clock)
    write_metrics_csv(rows_none, args.out_prefix + "_none.csv")
    write_metrics_csv(rows_l2, args.out_prefix + "_l2.csv")
    print(f"baseline final eval NLL {rows_none[-1].eval_nll:.4f}; "
          f"attentive final eval NLL {rows_l2[-1].eval_nll:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acflow",
        description="Attentive contractive normalizing flows on toy data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_dataset_args(p)
    _add_model_args(p)
    _add_train_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="mean NLL (or bits/dim) on a dataset")
    p.add_argument("--model", required=True)
    _add_dataset_args(p, required=False)
    p.add_argument("--input", help="CSV of points, overrides --dataset")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sample", help="draw samples via fixed-point inversion")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("invert", help="map latent CSV rows back to data space")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(fn=cmd_invert)

    p = sub.add_parser("interpolate",
                       help="decode the latent line between two data points")
    p.add_argument("--model", required=True)
    p.add_argument("--x1", required=True, help="CSV file with one point")
    p.add_argument("--x2", required=True, help="CSV file with one point")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--include-overshoot", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_interpolate)

    p = sub.add_parser("perturb", help="Gaussian perturbation robustness sweep")
    p.add_argument("--model", required=True)
    _add_dataset_args(p, required=False)
    p.add_argument("--input", help="CSV of points, overrides --dataset")
    p.add_argument("--variant", choices=("l2", "dot"))
    p.add_argument("--sigmas", type=float, nargs="+", default=list(DEFAULT_SIGMAS))
    p.add_argument("--n-inputs", type=int, default=256)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("certify", help="contraction certification report")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("paired-run",
                       help="train attention-off and attention-on twins")
    _add_dataset_args(p)
    _add_model_args(p)
    _add_train_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(fn=cmd_paired_run)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (AcflowError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
