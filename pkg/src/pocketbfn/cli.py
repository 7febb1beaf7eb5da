"""Command-line entry point: ``pocketbfn <command> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure,
3 check-suite failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_checkpoint
from .checks import LEVELS, SUITES, run_checks
from .config import ConfigError, describe_keys, load_config
from .data import ParseError, read_complex
from .geometry import center_by_protein_com
from .model import attention_maps
from .pipeline import evaluate_dir, gen_data, sample_to_dir, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("pocketbfn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_gen_data(args) -> int:
    values = load_config(args.config)
    manifest = gen_data(values)
    print(f"wrote {values['count']} complexes to {manifest.parent} (manifest {manifest.name})")
    return EXIT_OK


def cmd_train(args) -> int:
    values = load_config(args.config)
    summary = train(values, resume=args.resume, progress=print)
    print(f"trained {summary.steps} steps over {summary.epochs} epochs; final loss {summary.final_loss:.6f}; "
          f"checkpoint {summary.checkpoint}")
    return EXIT_OK


def cmd_sample(args) -> int:
    paths = sample_to_dir(args.checkpoint, args.pocket, args.n_atoms, args.count, args.seed, args.out,
                          n_steps=args.steps, trace=args.trace, threads=args.threads)
    print(f"wrote {len(paths)} samples to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = args.report or str(Path(args.samples) / "report.tsv")
    s = evaluate_dir(args.samples, args.reference, report, args.clash_threshold, args.cutoff)
    print(f"samples {len(s.rows)}  rmsd_pass_rate {s.rmsd_pass_rate:.4f}  "
          f"matched_pass_rate {s.matched_pass_rate:.4f}  mean_clashes {s.mean_clashes:.3f}")
    print(f"report {report}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_checks(args.level, args.only)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<13} {r.seconds:7.2f}s  {r.detail}")
    total = sum(r.seconds for r in results)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed in {total:.1f}s")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_attention(args) -> int:
    weights, _, _ = load_checkpoint(args.checkpoint)
    c = center_by_protein_com(read_complex(args.complex))
    maps = attention_maps(c, weights, args.t)
    if not maps:
        raise ValueError("this checkpoint was trained without the cooperative attention block")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for b, heads in enumerate(maps):
        for h, A in enumerate(heads):
            np.savetxt(out / f"attention_b{b}_h{h}.tsv", A, fmt="%.10f", delimiter="\t",
                       header=f"block {b} head {h}: rows protein atoms, columns ligand atoms")
    print(f"wrote {sum(len(h) for h in maps)} attention maps to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pocketbfn", description="Pocket-conditioned ligand generation with Bayesian flow.",
                epilog=describe_keys(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write the synthetic dataset", epilog=describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    g.add_argument("config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model; checkpoint per epoch", epilog=describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("config")
    t.add_argument("--resume", action="store_true", help="continue from out_dir/checkpoint.ckpt")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate ligands for a pocket")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--pocket", required=True, help="complex file; its ligand only sets the default size")
    s.add_argument("--n-atoms", type=int, default=None, help="ligand atoms (default: ligand size in --pocket)")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", default="samples")
    s.add_argument("--steps", type=int, default=None, help="override the checkpoint's n_steps")
    s.add_argument("--trace", action="store_true", help="also write per-step precision traces")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="score samples against a reference complex")
    e.add_argument("samples", help="directory of sample_*.txt files")
    e.add_argument("reference")
    e.add_argument("--report", default=None, help="TSV path (default: <samples>/report.tsv)")
    e.add_argument("--clash-threshold", type=float, default=2.0)
    e.add_argument("--cutoff", type=float, default=2.0, help="RMSD pass cutoff (A)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("attention", help="dump per-head protein-to-ligand attention for a complex")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--complex", required=True, help="complex file; its ligand is used as a resolved belief")
    a.add_argument("--t", type=float, default=1.0, help="flow time fed to the network")
    a.add_argument("--out", default="attention")
    a.set_defaults(func=cmd_attention)

    c = sub.add_parser("check", help="run the self-verification suites")
    c.add_argument("level", nargs="?", default="quick", choices=LEVELS)
    c.add_argument("--only", nargs="+", choices=list(SUITES), default=None)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ad.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParseError, CheckpointError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
