"""Command-line driver: generate, partition, plan, train, infer, report.

Exit codes: 0 ok, 2 usage, 3 data error, 4 infeasible balance.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import commplan
from .engine import SimCluster, run_sgd, run_spff
from .hypergraph import cut_size, imbalance, write_hgr
from .mnist import (
    DEFAULT_THRESHOLD,
    IdxFormatError,
    load_dataset,
    synthetic_digits,
    write_idx_images,
    write_idx_labels,
)
from .model import (
    ModelFormatError,
    check_partition,
    generate_synthetic,
    load_model,
    load_partition,
    save_model,
    save_partition,
)
from .partition import DEFAULT_EPSILON, DEFAULT_RESTARTS, InfeasibleBalanceError, partition_model, phase_hypergraphs
from .sparse import DimensionError

EXIT_DATA = 3
EXIT_INFEASIBLE = 4

REPORT_COLUMNS = ["avg_vol", "max_vol", "avg_msg", "max_msg", "imb"]


def _side_for(input_dim: int) -> int:
    side = int(round(np.sqrt(input_dim)))
    if side * side != input_dim:
        raise ValueError(f"input dimension {input_dim} is not a square image size")
    return side


def _dataset(args, model):
    side = args.side or _side_for(model.input_dim)
    if side * side != model.input_dim:
        raise DimensionError(f"{side}x{side} images do not fit input dimension {model.input_dim}")
    return load_dataset(args.images, args.labels, side, model.neurons, args.threshold, args.limit)


def cmd_generate(args):
    model = generate_synthetic(
        args.layers, args.neurons, args.degree, args.seed, args.input_dim, args.topology
    )
    save_model(model, args.out)
    print(f"wrote {args.out}: {model.n_layers} layers, {model.nnz()} connections")


def cmd_make_data(args):
    images, labels = synthetic_digits(args.count, args.seed)
    write_idx_images(args.images, images)
    write_idx_labels(args.labels, labels)
    print(f"wrote {args.count} images to {args.images}")


def cmd_partition(args):
    model = load_model(args.model)
    part = partition_model(model, args.parts, args.method, args.epsilon, args.seed, args.restarts)
    save_partition(part, args.out)
    total = 0
    for k, (H, lp) in enumerate(zip(phase_hypergraphs(model, part), part.layers), start=1):
        cut = cut_size(H, lp.assignment)
        total += cut
        print(f"layer {k}\tcut {cut}\timbalance {imbalance(H, lp.assignment, part.parts):.4f}")
        if args.dump_hgr:
            os.makedirs(args.dump_hgr, exist_ok=True)
            write_hgr(H, os.path.join(args.dump_hgr, f"layer{k:04d}.hgr"))
    print(f"total cut {total}")


def cmd_plan(args):
    model = load_model(args.model)
    part = load_partition(args.partition)
    check_partition(model, part)
    plan = commplan.build_comm_plan(model, part)
    m = commplan.metrics(plan, model, part)
    commplan.write_metrics_tsv(args.out, [commplan.metrics_row(part.parts, args.label, m)])
    report = commplan.verify_volume_identity(plan, model, part)
    for line in report.lines():
        print(line)
    print(f"volume identity: {'holds' if report.ok else 'VIOLATED'}")
    return 0 if report.ok else EXIT_DATA


def cmd_train(args):
    model = load_model(args.model)
    part = load_partition(args.partition)
    data = _dataset(args, model)
    with SimCluster(model, part, threads=args.threads) as cluster:
        result = run_sgd(cluster, data, args.eta, args.steps)
        plan = cluster.plan
    save_model(result.model, args.out)
    if args.loss_log:
        with open(args.loss_log, "w") as fh:
            fh.writelines(f"{i}\t{loss!r}\n" for i, loss in enumerate(result.losses))
    xw, xm, sw, sm = commplan.plan_counts(plan)
    steps = len(result.losses)
    t = result.trace
    same = all(
        np.array_equal(a, steps * b)
        for a, b in ((t.x_words, xw), (t.x_msgs, xm), (t.s_words, sw), (t.s_msgs, sm))
    )
    print(f"trained {steps} steps, final loss {result.losses[-1] if steps else float('nan'):.6g}")
    print(f"trace vs plan: {'match' if same else 'MISMATCH'}")
    return 0 if same else EXIT_DATA


def cmd_infer(args):
    model = load_model(args.model)
    part = load_partition(args.partition)
    data = _dataset(args, model)
    lines = ["index\tpredicted\tlabel"]
    with SimCluster(model, part, threads=args.threads) as cluster:
        for i in range(len(data)):
            out, _ = run_spff(cluster, data.inputs[i])
            lines.append(f"{i}\t{int(np.argmax(out))}\t{int(np.argmax(data.labels[i]))}")
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(data)} predictions to {args.out}")


def _by_parts(rows):
    return {int(r["P"]): r for r in rows}


def cmd_report(args):
    hyper = _by_parts(commplan.read_metrics_tsv(args.hypergraph))
    rand = _by_parts(commplan.read_metrics_tsv(args.random))
    lines = ["P\trow\t" + "\t".join(REPORT_COLUMNS)]
    for P in sorted(set(hyper) & set(rand)):
        h, r = hyper[P], rand[P]
        ratios = []
        for c in REPORT_COLUMNS:
            if c == "imb":
                ratios.append("")
            else:
                den = float(r[c])
                ratios.append(f"{float(h[c]) / den:.2f}" if den else "-")
        lines.append(f"{P}\tratio\t" + "\t".join(ratios))
        lines.append(f"{P}\tH\t" + "\t".join(h[c] for c in REPORT_COLUMNS))
        lines.append(f"{P}\tR\t" + "\t".join(r[c] for c in REPORT_COLUMNS))
    text = "\n".join(lines) + "\n"
    with open(args.out, "w") as fh:
        fh.write(text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic sparse model")
    g.add_argument("--layers", type=int, required=True)
    g.add_argument("--neurons", type=int, required=True)
    g.add_argument("--degree", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--input-dim", type=int)
    g.add_argument("--topology", choices=["radix", "random"], default="radix")
    g.add_argument("--out", default="model/model.txt", help="manifest path")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("make-data", help="write seeded stand-in digit images in IDX format")
    d.add_argument("--count", type=int, default=100)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--images", required=True)
    d.add_argument("--labels", required=True)
    d.set_defaults(func=cmd_make_data)

    s = sub.add_parser("partition", help="assign layer rows to processors")
    s.add_argument("--model", required=True)
    s.add_argument("--parts", type=int, required=True)
    s.add_argument("--method", choices=["hypergraph", "random"], default="hypergraph")
    s.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    s.add_argument("--dump-hgr", metavar="DIR")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_partition)

    q = sub.add_parser("plan", help="communication metrics TSV and volume identity check")
    q.add_argument("--model", required=True)
    q.add_argument("--partition", required=True)
    q.add_argument("--label", default="hypergraph", help="value of the method column")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_plan)

    for name, func, helptext in (
        ("train", cmd_train, "SGD on the simulated processors"),
        ("infer", cmd_infer, "feedforward only on the simulated processors"),
    ):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--model", required=True)
        t.add_argument("--partition", required=True)
        t.add_argument("--images", required=True)
        t.add_argument("--labels", required=True)
        t.add_argument("--side", type=int, help="padded image side (default: sqrt of input dim)")
        t.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)
        t.add_argument("--limit", type=int)
        t.add_argument("--threads", type=int, default=1)
        t.add_argument("--out", required=True)
        if name == "train":
            t.add_argument("--eta", type=float, default=0.01)
            t.add_argument("--steps", type=int)
            t.add_argument("--loss-log")
        t.set_defaults(func=func)

    r = sub.add_parser("report", help="hypergraph vs random comparison table")
    r.add_argument("--hypergraph", required=True)
    r.add_argument("--random", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "steps", None) is not None and args.steps < 0:
        print("error: --steps must be non-negative", file=sys.stderr)
        return 2
    if getattr(args, "parts", None) is not None and args.parts < 1:
        print("error: --parts must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args) or 0
    except InfeasibleBalanceError as exc:
        print(f"error: infeasible balance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ModelFormatError, IdxFormatError) as exc:
        print(f"error: bad file: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DimensionError as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
