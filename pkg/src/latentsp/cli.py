"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from typing import Sequence

from . import kernels
from .harness import GridSpec, evaluate_accuracy, predict, rows_to_csv, sweep
from .io import (
    SchemaError,
    atomic_write,
    dataset_digest,
    deserialize_dataset,
    deserialize_model,
    grid_dataset,
    serialize_dataset,
    serialize_model,
)
from .learning import LOG_COLUMNS, LineSearchConfig, MonotonicityError, train
from .model import HyperParams

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("latentsp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_hyper(p: argparse.ArgumentParser) -> None:
    d = HyperParams()
    g = p.add_argument_group("training")
    g.add_argument("--epsilon", type=float, default=d.epsilon, help="temperature (> 0)")
    g.add_argument("--c-reg", type=float, default=d.c_reg, help="L2 regularization weight C")
    g.add_argument("--counting", type=float, default=None,
                   help="set all four counting numbers at once")
    g.add_argument("--counting-node", type=float, default=None)
    g.add_argument("--counting-factor", type=float, default=None)
    g.add_argument("--counting-latent-node", type=float, default=None)
    g.add_argument("--counting-latent-factor", type=float, default=None)
    g.add_argument("--outer-iters", type=int, default=d.outer_iters)
    g.add_argument("--inner-iters", type=int, default=d.inner_iters,
                   help="latent-subproblem sweep cap per outer iteration")
    g.add_argument("--message-sweeps", type=int, default=d.message_sweeps,
                   help="loss-augmented message sweeps per outer iteration")
    g.add_argument("--tolerance", type=float, default=d.tolerance, help="stop when |dF| falls below")
    g.add_argument("--latent-tol", type=float, default=d.latent_tol)
    g.add_argument("--decode-eps", type=float, default=d.decode_eps)
    g.add_argument("--decode-sweeps", type=int, default=d.decode_sweeps)
    g.add_argument("--n-jobs", type=int, default=d.n_jobs)
    g.add_argument("--verify-descent", action="store_true",
                   help="fail hard if the objective ever increases")


def _hyper_from(args) -> HyperParams:
    counts = {}
    for name in ("node", "factor", "latent_node", "latent_factor"):
        v = getattr(args, f"counting_{name}")
        if v is None:
            v = args.counting if args.counting is not None else 1.0
        counts[f"counting_{name}"] = v
    try:
        return HyperParams(
            epsilon=args.epsilon, c_reg=args.c_reg, outer_iters=args.outer_iters,
            inner_iters=args.inner_iters, message_sweeps=args.message_sweeps,
            tolerance=args.tolerance, latent_tol=args.latent_tol, seed=getattr(args, "seed", 0) or 0,
            decode_eps=args.decode_eps, decode_sweeps=args.decode_sweeps, n_jobs=args.n_jobs,
            verify=args.verify_descent, **counts)
    except ValueError as err:
        raise UsageError(f"invalid hyperparameters: {err}") from None


def _add_grid(p: argparse.ArgumentParser, with_fraction: bool = True) -> None:
    d = GridSpec()
    g = p.add_argument_group("synthetic data")
    g.add_argument("--height", type=int, default=d.height)
    g.add_argument("--width", type=int, default=d.width)
    g.add_argument("--labels", type=int, default=d.num_labels)
    g.add_argument("--noise", type=float, default=d.noise_amplitude, help="uniform noise half-width")
    g.add_argument("--n-train", type=int, default=d.n_train)
    g.add_argument("--n-test", type=int, default=d.n_test)
    if with_fraction:
        g.add_argument("--latent-frac", type=float, default=d.latent_fraction)


def _grid_from(args, **over) -> GridSpec:
    try:
        return GridSpec(height=args.height, width=args.width, num_labels=args.labels,
                        noise_amplitude=args.noise,
                        latent_fraction=over.get("latent_fraction", getattr(args, "latent_frac", 0.0)),
                        n_train=args.n_train, n_test=args.n_test, seed=over["seed"] if "seed" in over else args.seed)
    except ValueError as err:
        raise UsageError(f"invalid grid settings: {err}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentsp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic tag-segmentation dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_grid(p)

    p = sub.add_parser("train", help="train a model; writes the model and a per-iteration CSV log")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--log", default=None, help="training-log CSV (default: <out>.log.csv)")
    p.add_argument("--seed", type=int, default=0)
    _add_hyper(p)

    p = sub.add_parser("predict", help="decode labelings for one split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("eval", help="pixel accuracy on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("sweep", help="latent-fraction x temperature sweep to CSV")
    p.add_argument("--fractions", type=_floats, default=[round(0.1 * k, 1) for k in range(10)])
    p.add_argument("--epsilons", type=_floats, default=[1.0, 0.1, 0.01])
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--record-wall-time", action="store_true",
                   help="fill wall_ms (makes the CSV run-dependent)")
    _add_grid(p, with_fraction=False)
    _add_hyper(p)

    p = sub.add_parser("verify", help="run oracle checks on built-in tiny instances")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_gen(args) -> int:
    ds = grid_dataset(_grid_from(args))
    serialize_dataset(ds, args.out)
    print(f"wrote {len(ds.train)} train / {len(ds.test)} test examples to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    hyper = _hyper_from(args)
    ds = deserialize_dataset(args.data)
    if not ds.train:
        raise UsageError(f"{args.data}: dataset has no training examples")
    params, state = train(ds.train, hyper, LineSearchConfig())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in state.log:
        w.writerow([r.iteration, repr(r.F), repr(r.f1), repr(r.f2), repr(r.f3),
                    repr(r.grad_norm), repr(r.eta), repr(r.latent_residual)])
    log_path = args.log or f"{args.out}.log.csv"
    atomic_write(log_path, buf.getvalue())
    serialize_model(params, hyper, args.out, dataset_digest(ds))
    print(f"status={state.status} iters={state.outer_iters_used} F={state.history[-1].F!r} "
          f"weights={[float(v) for v in params.weights]}")
    return EXIT_OK


def _load_pair(args):
    ds = deserialize_dataset(args.data)
    model = deserialize_model(args.model)
    if model.params.num_features != ds.num_features:
        raise UsageError(f"model has {model.params.num_features} weights, dataset {ds.num_features} features")
    return ds, model


def _cmd_predict(args) -> int:
    ds, model = _load_pair(args)
    h = model.hyper
    preds = [predict(ex, model.params, h.decode_eps, h.decode_sweeps).tolist() for ex in ds.split(args.split)]
    atomic_write(args.out, json.dumps({"split": args.split, "predictions": preds},
                                      separators=(",", ":")) + "\n")
    return EXIT_OK


def _cmd_eval(args) -> int:
    ds, model = _load_pair(args)
    if not ds.test:
        raise UsageError(f"{args.data}: dataset has no test examples")
    acc = evaluate_accuracy(model.params, ds.test, model.hyper.decode_eps, model.hyper.decode_sweeps)
    print(f"accuracy={acc!r}")
    if args.out:
        atomic_write(args.out, json.dumps({"accuracy": acc}) + "\n")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    hyper = _hyper_from(args)
    grid = _grid_from(args, latent_fraction=0.0, seed=args.base_seed)
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    rows = sweep(args.fractions, args.epsilons, args.runs, args.base_seed, hyper, grid,
                 n_jobs=args.jobs, time_it=args.record_wall_time)
    atomic_write(args.out, rows_to_csv(rows))
    failed = [r for r in rows if r["run_id"] != "summary" and r["status"] != "ok"]
    print(f"wrote {len(rows)} rows to {args.out} ({len(failed)} failed runs)")
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import run_checks

    ok = True
    print(f"backend: {kernels.BACKEND}")
    for res in run_checks(args.seed):
        ok &= res.passed
        print(f"{'pass' if res.passed else 'FAIL'}  {res.name}  ({res.detail})")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"gen": _cmd_gen, "train": _cmd_train, "predict": _cmd_predict, "eval": _cmd_eval,
            "sweep": _cmd_sweep, "verify": _cmd_verify}


def run_cli(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SchemaError as err:
        print(f"error: {getattr(args, 'data', '') or getattr(args, 'model', '')}: schema: {err}",
              file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, MonotonicityError, FloatingPointError, ValueError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as err:  # noqa: BLE001 - unexpected failures still map to the runtime code
        log.debug("unhandled", exc_info=True)
        print(f"error: internal: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
