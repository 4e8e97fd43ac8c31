"""Train on the sentiment toy corpus and show words ranked by frequency and by norm.

Frequent words are mostly stop-words; large-norm words are the polarity words,
which is why norm-based pruning keeps the informative vocabulary.
"""

import argparse

from ftzip import synth
from ftzip.cli import ranking_table
from ftzip.linear_model import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--top", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = train(synth.sentiment_toy(seed=args.seed), TrainConfig(dim=8, bucket=1000, word_ngrams=1, epochs=5))
    print(f"{'rank':>4}  {'by frequency':<14}{'norm rank':>9}   {'by norm':<14}{'freq rank':>9}")
    for r, wa, ra, wb, rb in ranking_table(model, args.top):
        print(f"{r:>4}  {wa:<14}{ra:>9}   {wb:<14}{rb:>9}")


if __name__ == "__main__":
    main()
