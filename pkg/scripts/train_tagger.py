"""Train on the bundled synthetic corpus and print the held-out report.

    python3 scripts/train_tagger.py --epochs 10 --save model.json
"""

import argparse
import time

from maskup import bench, tagger
from maskup.tagger import TrainConfig


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sentences", type=int, default=2000)
    p.add_argument("--held-out", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save")
    args = p.parse_args(argv)

    corpus = bench.bundled_corpus(args.sentences)
    cut = int(len(corpus) * (1 - args.held_out))
    t0 = time.perf_counter()
    model = tagger.train(corpus[:cut], TrainConfig(epochs=args.epochs, seed=args.seed))
    print(f"trained on {cut} sentences in {time.perf_counter() - t0:.1f}s, {len(model.vocabulary)} features")
    print(tagger.evaluate(model, corpus[cut:]).format())
    if args.save:
        tagger.save_model(model, args.save)


if __name__ == "__main__":
    main()
