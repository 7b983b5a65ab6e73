"""Full vs. selective encryption over a sweep of entity fractions and sizes.

    python3 scripts/run_bench.py --sizes 4096 1048576 --fractions 0.05 0.1 0.25 --out sweep.csv
"""

import argparse
import csv
import sys

from maskup import bench


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[4096, 65536, 1 << 20])
    p.add_argument("--fractions", type=float, nargs="+", default=[0.05, 0.10, 0.25, 0.5])
    p.add_argument("--documents", type=int, default=5)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    args = p.parse_args(argv)

    fields = ["document_bytes", "target_fraction", "byte_ratio", "memory_ratio", "time_ratio",
              "full_ms", "selective_ms", "spans_per_doc"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(fh, fieldnames=fields)
    writer.writeheader()
    for size in args.sizes:
        for frac in args.fractions:
            cfg = bench.BenchConfig(document_count=args.documents, document_bytes=size,
                                    entity_byte_fraction=frac, repetitions=args.repetitions, seed=args.seed)
            r = bench.run_bench(cfg)
            writer.writerow({
                "document_bytes": size,
                "target_fraction": frac,
                "byte_ratio": r.byte_ratio,
                "memory_ratio": r.memory_ratio,
                "time_ratio": r.time_ratio,
                "full_ms": r.arms["full"].mean_ms,
                "selective_ms": r.arms["selective"].mean_ms,
                "spans_per_doc": sum(d.spans for d in r.documents) / len(r.documents),
            })
            fh.flush()
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
