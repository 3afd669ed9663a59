"""Retrieval fine-tuning over black-box embeddings with a trainable augmenting model."""

import json

from . import _mafin
from ._mafin import (
    DataError,
    MafinError,
    ProviderError,
    UsageError,
    featurize,
    lambda_mafin_embed,
    lambda_weights,
    loss,
    mafin_embed,
    ndcg_at_k,
    offline_generate,
    pl_prob,
    recall_at_k,
    stub_embed,
    top1_target,
)
from ._mafin import retrieve as _retrieve

__all__ = [
    "DataError",
    "MafinError",
    "ProviderError",
    "UsageError",
    "default_config",
    "evaluate",
    "featurize",
    "lambda_mafin_embed",
    "lambda_weights",
    "loss",
    "mafin_embed",
    "ndcg_at_k",
    "offline_generate",
    "pl_prob",
    "recall_at_k",
    "retrieve",
    "stub_embed",
    "top1_target",
    "train",
]


def default_config():
    """Run config with every default filled in, as a dict."""
    return json.loads(_mafin.default_config())


def train(config, unsupervised=False):
    """Train the configured scorer; returns the report document."""
    return json.loads(_mafin.train_json(json.dumps(config), unsupervised))


def evaluate(config, scorers, models=None):
    """One evaluation report per scorer kind, on the test side of the dataset."""
    return json.loads(_mafin.evaluate_json(json.dumps(config), list(scorers), models or {}))


def retrieve(config, scorer, queries, k=10, models=None):
    """Top-k (doc id, score) lists for free-text queries."""
    if isinstance(queries, str):
        queries = [queries]
    return _retrieve(json.dumps(config), scorer, list(queries), k, models or {})

