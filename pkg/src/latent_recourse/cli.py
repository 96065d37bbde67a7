"""Command-line pipeline: synth -> train -> revise -> audit -> report.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric error.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import __version__
from .audit import (confounding_audit, render_flip_table, render_recourse_table, render_table,
                    sweep_report)
from .causal import train_causal
from .data import _fmt, ingest_csv, write_csv
from .errors import ContractError, DataError, NumericError
from .genmodel import train_vae
from .nn import accuracy, predict_labels, train_classifier
from .persistence import load_model, save_model
from .revise import COST_KINDS, DEFAULT_GRID, ReviseConfig, lambda_sweep_batch, lambda_sweep_causal_batch
from .schema import load_schema, save_schema
from .synth import synth_aux_confounded, synth_causal, synth_classification

log = logging.getLogger("latent_recourse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- argument helpers

def parse_rows(text, n):
    """'0..99', '3,7,10..12' (ranges inclusive) -> sorted unique indices, checked against n."""
    rows = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                a, b = part.split("..", 1)
                lo, hi = int(a), int(b)
                if hi < lo:
                    raise ValueError
                rows.update(range(lo, hi + 1))
            else:
                rows.add(int(part))
        except ValueError:
            raise UsageError(f"bad --rows element {part!r}") from None
    out = np.array(sorted(rows), dtype=np.intp)
    if len(out) and (out[0] < 0 or out[-1] >= n):
        raise DataError(f"--rows out of range for {n} data rows")
    return out


def parse_grid(text):
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad --lambda-grid {text!r}") from None
    if not vals:
        raise UsageError("--lambda-grid is empty")
    return vals


def _hidden(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer sizes {text!r}") from None


def default_seed():
    env = os.environ.get("REVISE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"REVISE_SEED must be an integer, got {env!r}") from None


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    if args.generator == "classification":
        ds = synth_classification(args.n, args.seed, margin=args.margin)
    elif args.generator == "causal":
        ds = synth_causal(args.n, k=args.k, tau=args.tau, confounded=args.confounded, seed=args.seed)
    else:
        ds = synth_aux_confounded(args.n, bias=args.bias, seed=args.seed)
    write_csv(ds, args.out)
    if args.schema_out:
        save_schema(ds.schema, args.schema_out)
    if args.truth_out:
        ds.truth.write_csv(args.truth_out)
    log.info("wrote %d rows to %s", len(ds), args.out)


def cmd_split(args):
    schema = load_schema(args.schema)
    ds = ingest_csv(args.data, schema)
    ratios = tuple(float(v) for v in args.ratios.split(","))
    if len(ratios) != 3:
        raise UsageError("--ratios needs three values")
    try:
        parts = ds.split(ratios, args.seed)
    except ContractError as e:
        raise UsageError(str(e)) from None
    os.makedirs(os.path.dirname(args.prefix) or ".", exist_ok=True)
    for name, part in zip(("train", "val", "test"), parts):
        write_csv(part, f"{args.prefix}{name}.csv")


def _load_data(args):
    schema = load_schema(args.schema)
    encoder = None
    if getattr(args, "stats_from", None):
        encoder = load_model(args.stats_from, schema=schema).encoder
    return schema, ingest_csv(args.data, schema, encoder)


def cmd_train_clf(args):
    schema, ds = _load_data(args)
    label = args.label or (schema.label_names[0] if schema.label_names else None)
    if label is None or label not in ds.targets:
        raise DataError(f"label column {label!r} not in data")
    net = train_classifier(ds.X, ds.target(label), args.arch, args.l1, args.epochs, args.seed,
                           batch_size=args.batch_size, lr=args.lr)
    save_model(net, args.out, schema, ds.encoder)
    print(f"train accuracy\t{accuracy(net, ds.X, ds.target(label)):.4f}")


def cmd_train_vae(args):
    _, ds = _load_data(args)
    vae = train_vae(ds, args.latent_dim, args.epochs, args.seed, args.conditional, args.hidden,
                    args.batch_size, args.lr)
    save_model(vae, args.out)


def cmd_train_causal(args):
    _, ds = _load_data(args)
    imm = [v.strip() for v in args.immutable.split(",") if v.strip()] if args.immutable else None
    try:
        model = train_causal(ds, imm, args.latent_dim, args.epochs, args.seed, args.hidden, args.batch_size,
                             args.lr)
    except ContractError as e:
        raise UsageError(str(e)) from None
    save_model(model, args.out)


def _config(args):
    try:
        return ReviseConfig(parse_grid(args.lambda_grid), args.eta, args.tau_max, args.cost,
                            getattr(args, "target", 1), args.seed, args.stop_at_crossing,
                            record_trajectory=bool(getattr(args, "trajectory_out", None)))
    except ContractError as e:
        raise UsageError(str(e)) from None


def _same_stats(a, b, what):
    for f in ("mean", "std", "mad"):
        if not np.array_equal(getattr(a, f), getattr(b, f)):
            raise DataError(f"{what}: models were trained with different encoding statistics")


def _result_rows(results, schema):
    head = ["row", "lambda", "success", "iterations", "crossing", "delta_z", "cost", "raw_l1", "n_changes",
            "changes"]
    body = []
    for r in results:
        ch = ";".join(f"{schema.features[j].name}={_fmt(d)}" for j, d in r.changes)
        body.append([str(r.row), repr(r.lam), str(int(r.success)), str(r.iterations), str(r.crossing),
                     f"{r.delta_z:.4f}", f"{r.cost:.4f}", f"{r.raw_l1:.4f}", str(r.n_changes), ch])
    return head, body


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _write_report(args, sweep, schema, cost_kind):
    head, body = _result_rows(sweep.best, schema)
    text = render_table(head, body, args.format) + "\n" + sweep_report(sweep, cost_kind).render(args.format)
    _emit(text, args.out)
    if getattr(args, "trajectory_out", None):
        with open(args.trajectory_out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "lambda", "iteration", "label", "prob", *schema.names])
            for r in sweep.best:
                for p in r.trajectory or ():
                    w.writerow([r.row, repr(r.lam), p.iteration, p.label, repr(p.prob),
                                *(_fmt(v) for v in p.features)])


def cmd_revise(args):
    schema, ds = _load_data(args)
    clf = load_model(args.clf, "classifier", schema)
    vae = load_model(args.vae, "vae", schema)
    _same_stats(clf.encoder, vae.encoder, "revise")
    config = _config(args)
    net = clf.model
    enc = vae.encoder.encode(ds.features)
    if args.rows:
        rows = parse_rows(args.rows, len(ds))
    else:
        rows = np.flatnonzero(predict_labels(net, enc) != config.target)
    if not len(rows):
        raise DataError("no rows selected for recourse")
    sweep = lambda_sweep_batch(ds.features[rows], net, vae.model, config, rows=rows, threads=args.threads)
    _write_report(args, sweep, schema, config.cost)


def cmd_revise_causal(args):
    schema, ds = _load_data(args)
    model = load_model(args.model, "causal", schema)
    config = _config(args)
    rows = parse_rows(args.rows, len(ds)) if args.rows else np.flatnonzero(ds.y == 0)
    if not len(rows):
        raise DataError("no rows selected for recourse")
    if np.any(ds.y[rows] == 1):
        log.warning("%d selected rows already have the desirable outcome y = 1", int(np.sum(ds.y[rows] == 1)))
    sweep = lambda_sweep_causal_batch(ds.features[rows], ds.t[rows], ds.y[rows], model.model, args.do_t,
                                      config, rows=rows, threads=args.threads)
    _write_report(args, sweep, model.schema, config.cost)


def cmd_audit_confounding(args):
    schema, ds = _load_data(args)
    vae = load_model(args.vae, "vae", schema)
    ref = load_model(args.reference, "classifier", schema)
    targets = {}
    for name, path in (("biased", args.biased), ("unbiased", args.unbiased)):
        pm = load_model(path, "classifier", schema)
        _same_stats(pm.encoder, vae.encoder, "audit-confounding")
        targets[name] = pm.model
    _same_stats(ref.encoder, vae.encoder, "audit-confounding")
    rows = parse_rows(args.rows, len(ds)) if args.rows else np.arange(len(ds))
    config = _config(args)
    flips = confounding_audit(targets, ref.model, vae.model, ds.features[rows], config, args.lam,
                              threads=args.threads)
    _emit(render_flip_table(flips, args.format), args.out)


def cmd_report(args):
    schema, ds = _load_data(args)
    clf = load_model(args.clf, "classifier", schema)
    vae = load_model(args.vae, "vae", schema)
    _same_stats(clf.encoder, vae.encoder, "report")
    config = _config(args)
    rows = parse_rows(args.rows, len(ds))
    sweep = lambda_sweep_batch(ds.features[rows], clf.model, vae.model, config, rows=rows)
    parts = []
    for i, r in enumerate(rows):
        cols = {}
        for lam in sweep.lambdas:
            res = sweep.per_lambda[lam][i]
            cols[f"REVISE-{lam!r}" + ("" if res.success else " (failed)")] = res
        title = f"row {r}" if args.format == "md" else f"# row {r}"
        parts.append(title + "\n" + render_recourse_table(ds.features[r], cols, schema, args.format))
    _emit("\n".join(parts), args.out)


# ---------------------------------------------------------------- parser

def _add_io(p, out_required=True):
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=out_required, default=None)


def _add_train(p, epochs):
    p.add_argument("--stats-from", metavar="MODEL",
                   help="reuse the encoding statistics stored in an existing model file")
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float)


def _add_revise(p):
    p.add_argument("--rows")
    p.add_argument("--lambda-grid", default=",".join(repr(v) for v in DEFAULT_GRID))
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--tau-max", type=int, default=500)
    p.add_argument("--cost", choices=COST_KINDS, default="l1-mad")
    p.add_argument("--stop-at-crossing", action="store_true",
                   help="stop each row at the first target crossing instead of spending the budget")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=("md", "tsv"), default="tsv")


def build_parser():
    p = _Parser(prog="latent-recourse", description="Latent-space recourse for classifiers and causal models.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--seed", type=int, default=None, help="global seed (default: $REVISE_SEED or 0)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("generator", choices=("classification", "causal", "aux-confounded"))
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--schema-out")
    s.add_argument("--truth-out")
    s.add_argument("--margin", type=float, default=3.0)
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--tau", type=float, default=0.2)
    s.add_argument("--confounded", action="store_true")
    s.add_argument("--bias", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="shuffle a CSV into train/val/test files")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--prefix", required=True, help="output path prefix; writes <prefix>{train,val,test}.csv")
    s.add_argument("--ratios", default="0.6,0.2,0.2")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train-clf", help="train a linear-softmax or MLP classifier")
    _add_io(s)
    s.add_argument("--label")
    s.add_argument("--arch", choices=("linear-softmax", "mlp"), default="linear-softmax")
    s.add_argument("--l1", type=float, default=0.0)
    _add_train(s, 30)
    s.set_defaults(func=cmd_train_clf, lr_default=1e-3)

    s = sub.add_parser("train-vae", help="train the heterogeneous VAE")
    _add_io(s)
    s.add_argument("--latent-dim", type=int, default=2)
    s.add_argument("--hidden", type=_hidden, default=(32, 32))
    s.add_argument("--conditional", action="store_true", help="condition the decoder on immutable columns")
    _add_train(s, 50)
    s.set_defaults(func=cmd_train_vae, lr_default=3e-3)

    s = sub.add_parser("train-causal", help="train the latent causal decision model")
    _add_io(s)
    s.add_argument("--immutable", help="comma-separated extra immutable attributes")
    s.add_argument("--latent-dim", type=int, default=2)
    s.add_argument("--hidden", type=_hidden, default=(32, 32))
    _add_train(s, 40)
    s.set_defaults(func=cmd_train_causal, lr_default=3e-3)

    s = sub.add_parser("revise", help="classifier recourse with a lambda sweep")
    _add_io(s, out_required=False)
    s.add_argument("--clf", required=True)
    s.add_argument("--vae", required=True)
    s.add_argument("--target", type=int, choices=(-1, 1), default=1)
    s.add_argument("--trajectory-out")
    _add_revise(s)
    s.set_defaults(func=cmd_revise)

    s = sub.add_parser("revise-causal", help="recourse toward y=1 under do(t)")
    _add_io(s, out_required=False)
    s.add_argument("--model", required=True)
    s.add_argument("--do-t", type=int, choices=(0, 1), required=True)
    s.add_argument("--trajectory-out")
    _add_revise(s)
    s.set_defaults(func=cmd_revise_causal)

    s = sub.add_parser("audit-confounding", help="auxiliary-attribute flip fractions along recourse paths")
    _add_io(s, out_required=False)
    s.add_argument("--biased", required=True)
    s.add_argument("--unbiased", required=True)
    s.add_argument("--reference", required=True, help="classifier for the auxiliary attribute")
    s.add_argument("--vae", required=True)
    s.add_argument("--lam", type=float, help="fixed lambda (default: sweep the grid)")
    _add_revise(s)
    s.set_defaults(func=cmd_audit_confounding)

    s = sub.add_parser("report", help="per-individual recourse table, one column per lambda")
    _add_io(s, out_required=False)
    s.add_argument("--clf", required=True)
    s.add_argument("--vae", required=True)
    _add_revise(s)
    s.set_defaults(func=cmd_report, format="md")
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.seed is None:
            args.seed = default_seed()
        if getattr(args, "lr", None) is None and hasattr(args, "lr_default"):
            args.lr = args.lr_default
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        if args.command == "report" and not args.rows:
            raise UsageError("report needs --rows")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                            format="%(levelname)s %(message)s")
        args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(run())
