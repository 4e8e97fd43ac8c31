"""Train a model on the desk corpus and sweep a grid of compression settings.

Writes the sweep CSV to stdout (or --out). The default grid covers the codec
families at one code byte per row, the k ladder for npq, and the pruned
configurations at a few cutoffs.
"""

import argparse
import logging
import sys
import time

from ftzip import synth
from ftzip.linear_model import TrainConfig, evaluate, train
from ftzip.pipeline import CompressOptions, sweep

DEFAULT_GRID = [
    CompressOptions("pq", 4),
    CompressOptions("npq", 4),
    CompressOptions("opq_norm", 4),
    CompressOptions("npq", 1),
    CompressOptions("lsh", 1),
    CompressOptions("lsh_norm", 1),
    CompressOptions("npq", 1, b=4),
    CompressOptions("npq", 1, b=4, retrain=True),
    *[CompressOptions("npq", 2, prune=p, cutoff=K) for K in (2000, 10000) for p in ("norm", "entropy", "maxcover")],
    CompressOptions("npq", 2, prune="maxcover", cutoff=10000, bloom=True),
    CompressOptions("npq", 1, prune="maxcover", cutoff=5000),
    CompressOptions("npq", 1, prune="maxcover", cutoff=5000, retrain=True, quantize_output=True),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--docs", type=int, default=20000)
    ap.add_argument("--bucket", type=int, default=2_000_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true", help="only the pruned grid points (seconds, not minutes)")
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    tr, te = synth.desk_split(n_docs=args.docs, seed=args.seed)
    t0 = time.perf_counter()
    model = train(tr, TrainConfig(dim=8, bucket=args.bucket, seed=args.seed))
    print(f"full model: test accuracy {evaluate(model, te):.4f} ({time.perf_counter() - t0:.1f}s)", file=sys.stderr)
    grid = [o for o in DEFAULT_GRID if o.prune != "none"] if args.quick else DEFAULT_GRID
    text = sweep(model, te, grid, train_corpus=tr)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
