"""Write the generated desk corpus as fastText-format train/test files."""

import argparse
from pathlib import Path

from ftzip import synth


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("outdir", type=Path)
    ap.add_argument("--docs", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sentiment", action="store_true", help="also write the two-class sentiment toy corpus")
    args = ap.parse_args()

    args.outdir.mkdir(parents=True, exist_ok=True)
    tr, te = synth.desk_split(n_docs=args.docs, seed=args.seed)
    for name, docs in (("train", tr), ("test", te)):
        path = args.outdir / f"desk.{name}"
        path.write_text("\n".join(synth.to_lines(docs)) + "\n")
        print(f"{path}: {len(docs)} docs")
    if args.sentiment:
        path = args.outdir / "sentiment.train"
        path.write_text("\n".join(synth.to_lines(synth.sentiment_toy(seed=args.seed))) + "\n")
        print(f"{path}")


if __name__ == "__main__":
    main()
