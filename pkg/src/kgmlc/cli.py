"""Command-line entry point: ``kgmlc {consistency,train,eval,bench-reg,synth}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
Every command writes a JSON manifest (parameters, input digests, seed,
version) before doing any work.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_regularizer, format_table, growth_ratios
from .consistency import build_consistency, knn_reduce, load_coo, save_coo
from .dataset import Dataset, DatasetError, SynthConfig, generate_synthetic, load_dataset, planted_graph, save_dataset, split
from .kgraph import RelationFilter, RwrConfig, load_edge_list, load_vocabulary, map_labels, proximity_table
from .metrics import evaluate
from .model import forward, load_checkpoint, pool_dataset, save_checkpoint
from .train import TrainConfig, TrainingAborted, train

log = logging.getLogger("kgmlc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, args: argparse.Namespace, inputs: dict[str, str]) -> dict:
    params = {k: v for k, v in vars(args).items() if k not in ("func", "command", "manifest")}
    manifest = {
        "command": args.command,
        "parameters": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(params.items())},
        "inputs": {name: {"path": str(p), "sha256": _digest(p)} for name, p in sorted(inputs.items())},
        "seed": getattr(args, "seed", None),
        "version": __version__,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _manifest_path(args, primary) -> Path:
    return Path(args.manifest) if args.manifest else Path(str(primary) + ".manifest.json")


def cmd_consistency(args) -> int:
    write_manifest(_manifest_path(args, args.out), args, {"edges": args.edges, "vocab": args.vocab})
    graph = load_edge_list(args.edges, RelationFilter())
    vocab = load_vocabulary(args.vocab)
    if not vocab:
        raise DatasetError(f"{args.vocab}: empty vocabulary")
    mapped = map_labels(graph, vocab)
    matched = [i for i, c in enumerate(mapped) if c is not None]
    print(f"matched {len(matched)}/{len(vocab)} labels to graph concepts", file=sys.stderr)
    if not matched:
        raise DatasetError("no vocabulary label matches a graph concept")
    config = RwrConfig(args.restart, args.tol, args.max_iter)
    table = proximity_table(graph, [mapped[i] for i in matched], config, workers=args.workers)

    # unmatched labels keep all-zero rows so S stays aligned with the vocabulary
    R = np.zeros((len(vocab), len(vocab)))
    R[np.ix_(matched, matched)] = table.values
    S = knn_reduce(build_consistency(R), args.knn)
    linked = int(np.count_nonzero(S.degree))
    print(f"{linked} labels have a path to at least one other label", file=sys.stderr)
    save_coo(S, args.out, metadata={
        "restart_prob": args.restart, "K": args.knn, "tolerance": args.tol,
        "max_iterations": args.max_iter, "labels": len(vocab), "matched": len(matched), "linked": linked,
    })
    if args.matched_out:
        Path(args.matched_out).write_text("".join(f"{vocab[i]}\n" for i in matched), encoding="utf-8")
    return EXIT_OK


def _load_data(args) -> Dataset:
    return load_dataset(args.features, args.labels, args.vocab)


def cmd_train(args) -> int:
    inputs = {"features": args.features, "labels": args.labels, "vocab": args.vocab}
    if args.consistency:
        inputs["consistency"] = args.consistency
    write_manifest(_manifest_path(args, args.out), args, inputs)
    config = TrainConfig(lam=args.lam, learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch,
                         seed=args.seed, num_experts=args.experts)
    data = _load_data(args)
    S = None
    if args.consistency:
        S = load_coo(args.consistency)
        if S.size != data.num_labels:
            raise DatasetError(f"consistency matrix has {S.size} labels, vocabulary has {data.num_labels}")
    elif args.lam > 0:
        raise UsageError("--consistency is required when --lambda > 0")
    if len(data) == 0:
        raise DatasetError("training set is empty")
    params, report = train(args.model, data, S, config)
    save_checkpoint(params, args.out)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    with open(log_path, "w", encoding="utf-8") as fh:
        report.write_log(fh)
    last = report.epochs[-1]
    print(f"trained {args.model} for {config.epochs} epochs: C={last.mean_cost:.6f} "
          f"reg={last.mean_knowledge:.6f} K={last.mean_total:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    write_manifest(_manifest_path(args, args.out or args.checkpoint + ".eval"), args,
                   {"checkpoint": args.checkpoint, "features": args.features, "labels": args.labels, "vocab": args.vocab})
    params = load_checkpoint(args.checkpoint)
    data = _load_data(args)
    if len(data) == 0:
        raise DatasetError("test set is empty")
    if params.num_labels != data.num_labels or params.feature_dim != data.feature_dim:
        raise DatasetError(
            f"checkpoint expects L={params.num_labels}, F={params.feature_dim}; "
            f"data has L={data.num_labels}, F={data.feature_dim}"
        )
    if args.top < 1:
        raise UsageError("--top must be >= 1")
    P = forward(params, pool_dataset(data))
    report = evaluate(P, [inst.labels for inst in data.instances], args.top, ids=[inst.id for inst in data.instances])
    sys.stdout.write(report.table())
    sys.stdout.write(report.key_values())
    if args.out:
        Path(args.out).write_text(report.table() + report.key_values(), encoding="utf-8")
    if args.per_video:
        with open(args.per_video, "w", encoding="utf-8") as fh:
            for v in report.per_video:
                ranked = " ".join(f"{lab}:{prob:.6f}" for lab, prob in v.ranked)
                fh.write(f"{v.id}\t{v.ap:.6f}\t{ranked}\n")
    return EXIT_OK


def cmd_bench_reg(args) -> int:
    if args.out:
        write_manifest(_manifest_path(args, args.out), args, {})
    if any(n < 1 for n in args.labels + args.batch):
        raise UsageError("--labels and --batch values must be positive")
    rows = bench_regularizer(args.labels, args.batch, args.nnz_per_row, args.repeats, args.seed)
    text = format_table(rows)
    text += "\nM\tL_from\tL_to\tpairwise_growth\tmatrix_growth\n"
    for M, a, b, rp, rm in growth_ratios(rows):
        text += f"{M}\t{a}\t{b}\t{rp:.2f}\t{rm:.2f}\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(_manifest_path(args, out / "synth"), args, {})
    try:
        graph = planted_graph(args.labels, args.cluster_size, seed=args.seed)
        config = SynthConfig(
            num_labels=args.labels, feature_dim=args.dim, num_instances=args.n,
            avg_labels_per_instance=args.avg_labels, correlation_graph=graph,
            feature_noise=args.noise, weak_fraction=args.weak_fraction, weak_signal=args.weak_signal,
            frames_per_instance=args.frames, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data, S = generate_synthetic(config)
    save_coo(S, out / "planted.coo", metadata={"source": "synthetic", "seed": args.seed, "cluster_size": args.cluster_size})
    if args.test_fraction:
        train_set, test_set = split(data, 1.0 - args.test_fraction, args.seed)
        for name, part in (("train", train_set), ("test", test_set)):
            save_dataset(part, out / f"{name}_features.tsv", out / f"{name}_labels.tsv", out / "vocab.txt")
    else:
        save_dataset(data, out / "features.tsv", out / "labels.tsv", out / "vocab.txt")
    print(f"wrote {len(data)} instances, L={args.labels}, F={args.dim} to {out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgmlc", description="Knowledge-aware multi-label classification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("consistency", help="knowledge graph + vocabulary -> consistency matrix (COO)")
    p.add_argument("edges")
    p.add_argument("vocab")
    p.add_argument("out")
    p.add_argument("--restart", type=float, default=0.15)
    p.add_argument("--knn", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--matched-out", help="write the vocabulary labels found in the graph here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_consistency)

    def data_args(p):
        p.add_argument("--features", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--vocab", required=True)

    p = sub.add_parser("train", help="train a classifier under the knowledge-aware cost")
    data_args(p)
    p.add_argument("--consistency")
    p.add_argument("--model", choices=("logistic", "moe"), default="moe")
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--experts", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="epoch log path (default <out>.log)")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MAP/HIT/GAP of a checkpoint on a dataset")
    p.add_argument("checkpoint")
    data_args(p)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--out", help="report file")
    p.add_argument("--per-video", help="per-video ranked predictions file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-reg", help="time pairwise vs Laplacian evaluation of the penalty")
    p.add_argument("--labels", type=_int_list, default=[256, 512, 1024])
    p.add_argument("--batch", type=_int_list, default=[1, 2])
    p.add_argument("--nnz-per-row", type=int, default=5)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_bench_reg)

    p = sub.add_parser("synth", help="generate a synthetic dataset with a planted label graph")
    p.add_argument("--labels", type=int, default=50)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--avg-labels", type=float, default=3.4)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--weak-fraction", type=float, default=0.3)
    p.add_argument("--weak-signal", type=float, default=0.05)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--cluster-size", type=int, default=5)
    p.add_argument("--test-fraction", type=float, default=0.0,
                   help="if > 0, also split into train_*/test_* files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"kgmlc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"kgmlc {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"kgmlc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
