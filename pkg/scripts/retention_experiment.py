"""Task-A retention after learning task B, with and without consolidation.

    python3 scripts/retention_experiment.py --seeds 5 --lambdas 0 10 100 1000
"""

import argparse
import csv
import sys
import time
from dataclasses import dataclass, field

from maskup import bench, continual, tagger
from maskup.tagger import TrainConfig


@dataclass
class RetentionConfig:
    seeds: int = 5
    lambdas: list[float] = field(default_factory=lambda: [0.0, 100.0])
    train_size: int = 300
    test_size: int = 200
    epochs: int = 10


def run(cfg: RetentionConfig):
    rows = []
    for seed in range(cfg.seeds):
        a_train, a_test, b_train, b_test = bench.shift_tasks(seed, cfg.train_size, cfg.test_size)
        model_a = tagger.train(a_train, TrainConfig(epochs=cfg.epochs, seed=seed))
        state = continual.estimate_fisher(model_a, a_train, "A")
        before = tagger.evaluate(model_a, a_test).micro_f1
        for lam in cfg.lambdas:
            t0 = time.perf_counter()
            model_b, _ = continual.continual_update(
                model_a, state, b_train, TrainConfig(epochs=cfg.epochs, seed=seed, ewc_lambda=lam), "B")
            rows.append({
                "seed": seed,
                "lambda": lam,
                "task_a_before": before,
                "task_a_after": tagger.evaluate(model_b, a_test).micro_f1,
                "task_b": tagger.evaluate(model_b, b_test).micro_f1,
                "seconds": time.perf_counter() - t0,
            })
            print(f"seed {seed} lambda {lam:g}: A {before:.3f} -> {rows[-1]['task_a_after']:.3f}, "
                  f"B {rows[-1]['task_b']:.3f}", file=sys.stderr)
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 100.0])
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--out", help="CSV path (default: stdout)")
    args = p.parse_args(argv)
    rows = run(RetentionConfig(seeds=args.seeds, lambdas=args.lambdas, epochs=args.epochs))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
