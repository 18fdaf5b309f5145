"""Command-line interface.

Verbs: train, ablate, sweep, verify, bench, inspect. All randomness flows
from --seed; with --serial re-runs write byte-identical report files (wall
clock measurements go to a separate timing.txt, which is exempt). Exit codes:
0 success, 2 usage, 3 data problems, 4 convergence/training failures,
1 verification failure or unexpected errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import SplitSpec, load_dataset, load_manifest
from .errors import (ConvergenceError, FairformerError, IngestionError, SchemaError,
                     SplitError, TrainingError)
from .hops import build_group_graph, group_scaling_report
from .oracles import dense_eig
from .spectral import spectral_alignment_report, top_magnitude_eigenpairs
from .synth import random_connected_graph, sensitive_block_graph
from .train import (ABLATION_VARIANTS, TrainConfig, ablate, bench_scaling, sweep, sweep_table,
                    train)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Fixed-width help so --help output is environment-independent."""

    def __init__(self, prog):
        super().__init__(prog, width=96, max_help_position=34)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairformer",
        description="Fairness-aware graph transformer: train, ablate, sweep, verify, bench, inspect.",
        formatter_class=_Formatter,
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_data_flags(p, synthetic_default=None):
        p.add_argument("--manifest", type=Path, default=None,
                       help="dataset manifest (nodes=, edges=, sensitive=, label=)")
        p.add_argument("--synthetic", type=int, default=synthetic_default, metavar="N",
                       help="use the built-in planted fixture with N nodes instead of a manifest")

    def add_common_flags(p):
        p.add_argument("--out", type=Path, default=None, help="output directory for report files")
        p.add_argument("--seed", type=int, default=0, help="base random seed")
        p.add_argument("--serial", action="store_true",
                       help="single-threaded execution (byte-identical reports)")

    def add_train_flags(p):
        p.add_argument("--epochs", type=int, default=500, help="training epochs per fold")
        p.add_argument("--k", type=int, default=2, help="hop count for token sequences")
        p.add_argument("--t", type=int, default=5, help="number of structure eigenvectors")
        p.add_argument("--layers", type=int, default=1, help="transformer layers")
        p.add_argument("--heads", type=int, default=1, help="attention heads")
        p.add_argument("--hidden", type=int, default=128, help="hidden width")
        p.add_argument("--folds", type=int, default=5, help="cross-validation folds")
        p.add_argument("--ablation", choices=ABLATION_VARIANTS, default="full",
                       help="encoding variant")
        p.add_argument("--norm", choices=("raw", "group-mean"), default="group-mean",
                       help="hop aggregation normalization")
        p.add_argument("--cap", type=int, default=50, help="per-class training node cap")
        p.add_argument("--scale-structure", action="store_true",
                       help="min-max scale structure columns to [-1, 1]")

    p_train = sub.add_parser("train", help="train with cross-validation",
                             formatter_class=_Formatter)
    add_data_flags(p_train)
    add_common_flags(p_train)
    add_train_flags(p_train)

    p_ablate = sub.add_parser("ablate", help="train every encoding variant on shared splits",
                              formatter_class=_Formatter)
    add_data_flags(p_ablate)
    add_common_flags(p_ablate)
    add_train_flags(p_ablate)

    p_sweep = sub.add_parser("sweep", help="sweep t or layer count",
                             formatter_class=_Formatter)
    add_data_flags(p_sweep)
    add_common_flags(p_sweep)
    add_train_flags(p_sweep)
    p_sweep.add_argument("--param", choices=("t", "layers"), required=True,
                         help="which parameter to sweep")
    p_sweep.add_argument("--min", type=int, required=True, help="smallest value")
    p_sweep.add_argument("--max", type=int, required=True, help="largest value")

    p_verify = sub.add_parser("verify", help="numerical certificates for the encodings",
                              formatter_class=_Formatter)
    add_common_flags(p_verify)
    p_verify.add_argument("--n", type=int, default=30, help="nodes in the random test graph")
    p_verify.add_argument("--kmax", type=int, default=6, help="largest hop count to certify")
    p_verify.add_argument("--graphs", type=int, default=3, help="number of random graphs")

    p_bench = sub.add_parser("bench", help="scaling benchmark over synthetic graphs",
                             formatter_class=_Formatter)
    add_common_flags(p_bench)
    p_bench.add_argument("--sizes", type=str, default="1000,2000,4000,8000",
                         help="comma-separated node counts")
    p_bench.add_argument("--k", type=int, default=2, help="hop count")
    p_bench.add_argument("--t", type=int, default=4, help="structure eigenvectors")
    p_bench.add_argument("--hidden", type=int, default=32, help="hidden width")
    p_bench.add_argument("--epochs-timed", type=int, default=3, help="epochs timed per size")

    p_inspect = sub.add_parser("inspect", help="summarize a dataset",
                               formatter_class=_Formatter)
    add_data_flags(p_inspect)
    add_common_flags(p_inspect)
    return parser


def _load_graph(args):
    if args.manifest is not None:
        node_path, edge_path, schema = load_manifest(args.manifest)
        return load_dataset(node_path, edge_path, schema)
    if getattr(args, "synthetic", None):
        return sensitive_block_graph(n=args.synthetic, seed=args.seed)
    raise IngestionError("no input: pass --manifest PATH or --synthetic N")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, folds=args.folds, ablation=args.ablation, k=args.k, t=args.t,
        layers=args.layers, heads=args.heads, d_hidden=args.hidden,
        normalization=args.norm, scale_structure=args.scale_structure, seed=args.seed,
    )


def _write_report(out_dir, name, text):
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text + "\n")


def _cmd_train(args) -> int:
    g = _load_graph(args)
    cfg = _train_config(args)
    result = train(g, cfg, split_spec=SplitSpec(train_per_class_cap=args.cap, seed=args.seed,
                                                folds=args.folds),
                   serial=args.serial, out_dir=args.out)
    print(result.summary_text())
    return EXIT_OK


def _cmd_ablate(args) -> int:
    g = _load_graph(args)
    cfg = _train_config(args)
    results = ablate(g, cfg, split_spec=SplitSpec(train_per_class_cap=args.cap, seed=args.seed,
                                                  folds=args.folds),
                     serial=args.serial)
    lines = ["variant\taccuracy\tdelta_sp\tf1\tauc"]
    for variant, result in results.items():
        lines.append(f"{variant}\t{result.mean['accuracy']!r}\t{result.mean['delta_sp']!r}"
                     f"\t{result.mean['f1']!r}\t{result.mean['auc']!r}")
    table = "\n".join(lines)
    print(table)
    _write_report(args.out, "report.txt", table)
    if args.out is not None:
        for variant, result in results.items():
            _write_report(args.out, f"report_{variant}.txt", result.summary_text())
    return EXIT_OK


def _cmd_sweep(args) -> int:
    if args.min > args.max:
        raise FairformerError("--min must not exceed --max")
    g = _load_graph(args)
    cfg = _train_config(args)
    rows = sweep(g, cfg, args.param, range(args.min, args.max + 1),
                 split_spec=SplitSpec(train_per_class_cap=args.cap, seed=args.seed,
                                      folds=args.folds),
                 serial=args.serial)
    table = sweep_table(args.param, rows)
    print(table)
    _write_report(args.out, "sweep.tsv", table)
    return EXIT_OK


def _cmd_verify(args) -> int:
    lines = []
    all_ok = True
    for i in range(args.graphs):
        seed = args.seed + i
        g = random_connected_graph(args.n, density=0.25, seed=seed)

        scaling = group_scaling_report(build_group_graph(g), g.features, args.kmax)
        lines.append(f"graph={i} check=group_scaling q={scaling.q} k_max={scaling.k_checked} "
                     f"exact_pass={int(scaling.exact_pass)} float_pass={int(scaling.float_pass)} "
                     f"max_abs_deviation={scaling.max_abs_deviation!r}")
        all_ok &= scaling.passed

        alignment = spectral_alignment_report(g, args.kmax)
        identity_ok = alignment.identity_max_error <= 1e-8
        lines.append(f"graph={i} check=alignment_identity max_error={alignment.identity_max_error!r} "
                     f"pass={int(identity_ok)}")
        lines.append(f"graph={i} check=alignment_decay applicable={int(alignment.decay_applicable)} "
                     f"pass={int(alignment.decay_ok)}")
        all_ok &= identity_ok and alignment.decay_ok

        t = min(4, g.n)
        basis = top_magnitude_eigenpairs(g, t=t, tol=1e-11, seed=seed)
        lam_ref, vec_ref = dense_eig(g.adjacency.toarray())
        dev = max(float(np.max(np.abs(basis.eigenvalues - lam_ref[:t]))),
                  float(np.max(np.abs(basis.structure_matrix - vec_ref[:, :t]))))
        eig_ok = dev <= 1e-6
        lines.append(f"graph={i} check=eigensolver_vs_oracle t={t} deviation={dev!r} "
                     f"pass={int(eig_ok)}")
        all_ok &= eig_ok

    lines.append(f"all_pass={int(all_ok)}")
    report = "\n".join(lines)
    print(report)
    _write_report(args.out, "report.txt", report)
    return EXIT_OK if all_ok else EXIT_FAILURE


def _cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    report = bench_scaling(sizes, k=args.k, t=args.t, d_hidden=args.hidden, seed=args.seed,
                           epochs_timed=args.epochs_timed)
    print(report.table())
    _write_report(args.out, "bench.txt", report.table())
    return EXIT_OK if report.passed else EXIT_FAILURE


def _cmd_inspect(args) -> int:
    g = _load_graph(args)
    sens = g.sensitive
    labeled = g.labels[g.label_mask]
    lines = [
        f"nodes={g.n}",
        f"features={g.d}",
        f"directed_adjacency_entries={g.directed_entry_count()}",
        f"undirected_edges={g.undirected_edge_count()}",
        f"self_loops={int(g.adjacency.diagonal().sum())}",
        f"sensitive_group_sizes={int((sens == 0).sum())},{int((sens == 1).sum())}",
        f"labeled_nodes={int(g.label_mask.sum())}",
        f"label_counts={int((labeled == 0).sum())},{int((labeled == 1).sum())}",
    ]
    report = "\n".join(lines)
    print(report)
    _write_report(args.out, "report.txt", report)
    return EXIT_OK


_HANDLERS = {
    "train": _cmd_train,
    "ablate": _cmd_ablate,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.verb](args)
    except (IngestionError, SchemaError, SplitError, FileNotFoundError) as exc:
        print(f"error={type(exc).__name__} detail={str(exc)!r}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, TrainingError) as exc:
        print(f"error={type(exc).__name__} detail={str(exc)!r}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except FairformerError as exc:
        print(f"error={type(exc).__name__} detail={str(exc)!r}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
