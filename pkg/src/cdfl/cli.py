"""Command-line entry point: gen-data, partition, run, report, gradcheck.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

from . import dataio
from .harness import REPORT_COLUMNS, ConfigError, ExperimentConfig, report, run_experiment


def _gen_data(args) -> int:
    ds = dataio.synth_generate(args.num_classes, args.samples_per_class, args.image_size, args.noise,
                               args.seed, args.channels)
    dataio.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def _partition(args) -> int:
    ds = dataio.load_dataset(args.dataset)
    assignment = dataio.dirichlet_partition(ds.labels, dataio.PartitionSpec(args.num_clients, args.alpha, args.seed))
    out = args.out or str(Path(args.dataset) / "partition.csv")
    dataio.write_partition(ds, assignment, out)
    print(f"wrote {out}: " + ", ".join(f"client {i}: {len(a)}" for i, a in enumerate(assignment)))
    return 0


def _run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    t = time.perf_counter()
    res = run_experiment(cfg, args.out)
    last = res.metrics[-1]
    print(f"{cfg.scheme}: round {last.round} mean acc {last.mean_acc:.4f} +/- {last.std_acc:.4f}, "
          f"total uplink {res.ledger.total()} scalars ({time.perf_counter() - t:.1f}s) -> {args.out}")
    return 0


def _report(args) -> int:
    rows = report(args.runs, args.target, args.out)
    if args.out is None:
        wr = csv.DictWriter(sys.stdout, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    return 0


def _gradcheck(args) -> int:
    from .gradcheck import TOL, run_all

    t = time.perf_counter()
    results = run_all(args.networks, args.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name:<18} params={r.n_params:<4} max_rel_err={r.max_rel_error:.3e}")
    bad = [r for r in results if not r.ok]
    print(f"{len(results) - len(bad)}/{len(results)} within {TOL:g} ({time.perf_counter() - t:.1f}s)")
    return 2 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cdfl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    g.add_argument("out")
    g.add_argument("--num-classes", type=int, default=4)
    g.add_argument("--samples-per-class", type=int, default=100)
    g.add_argument("--image-size", type=int, default=16)
    g.add_argument("--channels", type=int, default=1, choices=(1, 3))
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_gen_data)

    p = sub.add_parser("partition", help="Dirichlet partition of a dataset directory")
    p.add_argument("dataset")
    p.add_argument("--num-clients", "-n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="partition.csv path (default: inside the dataset directory)")
    p.set_defaults(fn=_partition)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--out", required=True, help="run directory")
    r.set_defaults(fn=_run)

    rp = sub.add_parser("report", help="comparison table over run directories")
    rp.add_argument("runs", nargs="*")
    rp.add_argument("--target", type=float, default=0.8)
    rp.add_argument("--out")
    rp.set_defaults(fn=_report)

    gc = sub.add_parser("gradcheck", help="autodiff vs finite differences self-test")
    gc.add_argument("--networks", type=int, default=20)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(fn=_gradcheck)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
