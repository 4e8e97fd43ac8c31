"""Command-line interface with fastText-style single-dash flags.

Human-readable messages go to stderr; CSV, predictions, size tables and
rankings go to stdout. Exit codes: 0 success, 1 usage, 2 data, 3 internal.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

import numpy as np

from ftzip import model_io
from ftzip.featurizer import read_corpus, tokenize, parse_line
from ftzip.linear_model import Model, TrainConfig, evaluate, predict, train
from ftzip.pipeline import CompressedModel, CompressOptions, compress, evaluate_compressed, predict_texts, sweep
from ftzip.pruning import rank_by_entropy, rank_by_norm

logger = logging.getLogger("ftzip")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _say(*parts):
    print(*parts, file=sys.stderr)


def _print_config(name: str, cfg: dict):
    _say(f"config[{name}]: " + json.dumps(cfg, sort_keys=True))


def _corpus(path):
    try:
        corpus = read_corpus(path)
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    if not corpus:
        raise DataError(f"corpus {path} is empty")
    return corpus


def _load(path):
    try:
        return model_io.load(path)
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    except model_io.ModelFormatError as exc:
        raise DataError(f"{path}: {type(exc).__name__}: {exc}") from exc


def _accuracy(model, corpus) -> tuple[float, float]:
    try:
        if isinstance(model, CompressedModel):
            return evaluate_compressed(model, corpus)
        return evaluate(model, corpus), float("nan")
    except (KeyError, ValueError) as exc:
        raise DataError(f"model/corpus mismatch: {exc}") from exc


def _print_size(report: dict[str, int]):
    for name, n in report.items():
        if name != "total":
            _say(f"  {name:<22}{n:>12}")
    _say(f"  {'total':<22}{report['total']:>12}")


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    try:
        cfg = TrainConfig(dim=args.dim, lr=args.lr, epochs=args.epoch, word_ngrams=args.wordNgrams,
                          bucket=args.bucket, min_count=args.minCount, seed=args.seed, threads=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _print_config("train", {"input": args.input, "output": args.output, **cfg.as_dict()})
    corpus = _corpus(args.input)
    try:
        model = train(corpus, cfg)
    except (ValueError, KeyError) as exc:
        raise DataError(str(exc)) from exc
    _say(f"train accuracy: {evaluate(model, corpus):.4f}")
    report = model_io.save(model, args.output)
    _say(f"saved {args.output}")
    _print_size(report)
    return EXIT_OK


def _options(args) -> CompressOptions:
    try:
        return CompressOptions(codec=args.codec, k=args.k, b=args.b, prune=args.prune, cutoff=args.cutoff,
                               retrain=args.retrain, quantize_output=args.qout, bloom=args.bloom, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_quantize(args) -> int:
    opts = _options(args)
    if (opts.retrain or opts.prune == "maxcover") and not args.input:
        raise UsageError("-retrain and -prune maxcover need the training corpus via -input")
    model = _load(args.model)
    if not isinstance(model, Model):
        raise DataError(f"{args.model} is already compressed")
    try:
        opts.resolved_k(model.dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _print_config("quantize", {"model": args.model, "output": args.output, "input": args.input,
                               "test": args.test, **asdict(opts)})
    corpus = _corpus(args.input) if args.input else None
    test = _corpus(args.test) if args.test else None
    if test is not None:
        _say(f"accuracy before: {_accuracy(model, test)[0]:.4f}")
    try:
        cm = compress(model, corpus, opts)
    except KeyError as exc:
        raise DataError(f"model/corpus mismatch: {exc}") from exc
    if cm.prune is not None:
        _say(cm.prune.report())
    else:
        _say("coverage: 1.000000 (no pruning)")
    if test is not None:
        acc, missed = _accuracy(cm, test)
        _say(f"accuracy after: {acc:.4f}  missed: {missed:.2f}%")
    report = model_io.save(cm, args.output)
    _say(f"saved {args.output}")
    _print_size(report)
    return EXIT_OK


def cmd_test(args) -> int:
    model = _load(args.model)
    corpus = _corpus(args.corpus)
    _print_config("test", {"model": args.model, "corpus": args.corpus})
    acc, missed = _accuracy(model, corpus)
    if np.isnan(missed):
        missed = 0.0
    print(f"N\t{len(corpus)}")
    print(f"P@1\t{acc:.4f}")
    print(f"missed%\t{missed:.2f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _load(args.model)
    _print_config("predict", {"model": args.model})
    texts = [parse_line(line.rstrip(b"\r\n"))[1] for line in sys.stdin.buffer]
    if isinstance(model, CompressedModel):
        pred, probs, _ = predict_texts(model, texts)
        labels = model.labels
        rows = zip(pred, probs)
    else:
        labels = model.labels
        rows = (predict(model, model.featurize(t)) for t in texts)
    out = sys.stdout
    for y, p in rows:
        out.write(f"__label__{labels[int(y)]}\t{float(p[int(y)]):.6f}\n")
    return EXIT_OK


def cmd_size(args) -> int:
    try:
        data = open(args.model, "rb").read()
        report = model_io.size_report(data)
    except OSError as exc:
        raise DataError(f"cannot read model {args.model}: {exc}") from exc
    except model_io.ModelFormatError as exc:
        raise DataError(f"{args.model}: {type(exc).__name__}: {exc}") from exc
    _print_config("size", {"model": args.model, "dump_sections": args.dump_sections})
    if args.dump_sections:
        print(model_io.dump_sections(data))
    else:
        for name, n in report.items():
            print(f"{name}\t{n}")
    return EXIT_OK


def ranking_table(model: Model, top: int) -> list[tuple[int, str, int, str, int]]:
    """Top words by corpus frequency and by embedding norm, each with its rank in the other list."""
    V = model.vocab.nwords
    by_count = rank_by_entropy(model.vocab.counts())
    by_norm = rank_by_norm(model.A[:V])
    rank_count = np.empty(V, dtype=np.int64)
    rank_count[by_count] = np.arange(1, V + 1)
    rank_norm = np.empty(V, dtype=np.int64)
    rank_norm[by_norm] = np.arange(1, V + 1)
    words = [w.decode("utf-8", "replace") for w, _ in model.vocab.words]
    rows = []
    for i in range(min(top, V)):
        a, b = int(by_count[i]), int(by_norm[i])
        rows.append((i + 1, words[a], int(rank_norm[a]), words[b], int(rank_count[b])))
    return rows


def cmd_dump_ranks(args) -> int:
    model = _load(args.model)
    if not isinstance(model, Model):
        raise DataError("dump-ranks needs a full model (compressed models carry no dictionary)")
    _print_config("dump-ranks", {"model": args.model, "top": args.top})
    print("rank\tentropy_word\tnorm_rank\tnorm_word\tentropy_rank")
    for r, wa, ra, wb, rb in ranking_table(model, args.top):
        print(f"{r}\t{wa}\t{ra}\t{wb}\t{rb}")
    return EXIT_OK


_GRID_KEYS = {"codec": str, "k": int, "b": int, "prune": str, "cutoff": int, "retrain": None,
              "qout": None, "quantize_output": None, "bloom": None, "seed": int}


def _flag(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_grid(text: str) -> tuple[list[CompressOptions], list[str]]:
    """One option set per line as space-separated key=value pairs; '#' starts a comment.

    Returns the valid option sets and one message per malformed line.
    """
    grid, problems = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            kw = {}
            for item in line.split():
                key, sep, value = item.partition("=")
                if not sep or key not in _GRID_KEYS:
                    raise ValueError(f"bad item {item!r}")
                conv = _GRID_KEYS[key]
                key = "quantize_output" if key == "qout" else key
                kw[key] = _flag(value) if conv is None else conv(value)
            grid.append(CompressOptions(**kw))
        except (ValueError, TypeError) as exc:
            problems.append(f"grid line {lineno}: {exc}")
    return grid, problems


def cmd_sweep(args) -> int:
    model = _load(args.model)
    if not isinstance(model, Model):
        raise DataError("sweep needs a full model")
    test = _corpus(args.corpus)
    train_corpus = _corpus(args.input) if args.input else None
    try:
        grid_text = open(args.grid, encoding="utf-8").read()
    except OSError as exc:
        raise DataError(f"cannot read grid {args.grid}: {exc}") from exc
    grid, problems = parse_grid(grid_text)
    for p in problems:
        _say(p)
    _print_config("sweep", {"model": args.model, "corpus": args.corpus, "grid": args.grid,
                            "input": args.input, "points": len(grid)})
    sys.stdout.write(sweep(model, test, grid, train_corpus))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ftzip", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("-verbose", action="store_true", help="log pipeline stages")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = TrainConfig()
    t = sub.add_parser("train", help="train a full model", allow_abbrev=False)
    t.add_argument("-input", required=True)
    t.add_argument("-output", required=True)
    t.add_argument("-dim", type=int, default=d.dim)
    t.add_argument("-lr", type=float, default=d.lr)
    t.add_argument("-epoch", type=int, default=d.epochs)
    t.add_argument("-wordNgrams", type=int, default=d.word_ngrams)
    t.add_argument("-bucket", type=int, default=d.bucket)
    t.add_argument("-minCount", type=int, default=d.min_count)
    t.add_argument("-seed", type=int, default=d.seed)
    t.add_argument("-threads", type=int, default=d.threads)
    t.set_defaults(func=cmd_train)

    c = CompressOptions()
    q = sub.add_parser("quantize", help="compress a full model", allow_abbrev=False)
    q.add_argument("-model", required=True)
    q.add_argument("-output", required=True)
    q.add_argument("-input", help="training corpus (needed by -retrain and maxcover)")
    q.add_argument("-test", help="labeled corpus for before/after accuracy")
    q.add_argument("-codec", default=c.codec)
    q.add_argument("-k", type=int, default=None)
    q.add_argument("-b", type=int, default=c.b)
    q.add_argument("-prune", default=c.prune)
    q.add_argument("-cutoff", type=int, default=None)
    q.add_argument("-retrain", action="store_true")
    q.add_argument("-qout", action="store_true")
    q.add_argument("-bloom", action="store_true")
    q.add_argument("-seed", type=int, default=c.seed)
    q.set_defaults(func=cmd_quantize)

    e = sub.add_parser("test", help="P@1 and missed%% on a labeled corpus", allow_abbrev=False)
    e.add_argument("model")
    e.add_argument("corpus")
    e.set_defaults(func=cmd_test)

    r = sub.add_parser("predict", help="label<TAB>prob for each stdin line", allow_abbrev=False)
    r.add_argument("model")
    r.set_defaults(func=cmd_predict)

    s = sub.add_parser("size", help="per-section byte report", allow_abbrev=False)
    s.add_argument("model")
    s.add_argument("--dump-sections", "-dump-sections", dest="dump_sections", action="store_true")
    s.set_defaults(func=cmd_size)

    k = sub.add_parser("dump-ranks", help="top words by frequency and by norm", allow_abbrev=False)
    k.add_argument("model")
    k.add_argument("-top", type=int, default=20)
    k.set_defaults(func=cmd_dump_ranks)

    w = sub.add_parser("sweep", help="CSV over a grid of compression settings", allow_abbrev=False)
    w.add_argument("model")
    w.add_argument("corpus", help="labeled test corpus")
    w.add_argument("grid", help="one option set per line, e.g. 'codec=npq k=2 prune=maxcover cutoff=10000'")
    w.add_argument("-input", help="training corpus for retrain / maxcover points")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return EXIT_USAGE
    except DataError as exc:
        _say(f"data error: {exc}")
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        _say(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL
