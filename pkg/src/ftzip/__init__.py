"""Compact linear text classifiers: bag-of-n-grams training plus PQ-based compression."""

from ftzip.featurizer import Vocabulary, build_vocab, featurize, hash_token, ngram_bucket, tokenize
from ftzip.linear_model import Model, TrainConfig, evaluate, predict, retrain_output, train
from ftzip.pipeline import CompressedModel, CompressOptions, compress, evaluate_compressed, predict_compressed, sweep

__version__ = "0.1.0"
