"""Scikit-learn style estimator wrapping training and dual-query inference.

``fit`` consumes a list of ReportRecord (images paired with report
sentences); ``predict_proba`` scores images against the grammar's classes
through averaged positive/negative prompt embeddings. Composes with
sklearn tooling via get_params/set_params.
"""

from __future__ import annotations

import tempfile

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from glocal.config import RunConfig
from glocal.evaluation import evaluate
from glocal.inference import build_prompt_sets, predict
from glocal.prompts import PromptGrammar, default_grammar
from glocal.train import train
from glocal.validation import check_images, check_label_matrix, check_records


class GlobalLocalClassifier(BaseEstimator):
    """Multi-label zero-shot classifier trained on image/report pairs.

    Parameters mirror the run-config knobs; ``grammar`` defaults to the
    built-in synthetic-benchmark vocabulary and defines the class list.
    """

    def __init__(
        self,
        grammar: PromptGrammar | None = None,
        input_size: int = 64,
        d_enc: int = 64,
        d_proj: int = 32,
        d_ss: int = 32,
        conv_channels: tuple[int, int] = (8, 16),
        init_tau: float = 0.07,
        loss_weights: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.25),
        learning_rate: float = 1e-4,
        weight_decay: float = 0.01,
        batch_size: int = 32,
        epochs: int = 30,
        schedule: str = "cosine",
        prompt_scheme: str = "detailed",
        fusion: str = "mean",
        precision: str = "float64",
        seed: int = 0,
    ):
        self.grammar = grammar
        self.input_size = input_size
        self.d_enc = d_enc
        self.d_proj = d_proj
        self.d_ss = d_ss
        self.conv_channels = conv_channels
        self.init_tau = init_tau
        self.loss_weights = loss_weights
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.schedule = schedule
        self.prompt_scheme = prompt_scheme
        self.fusion = fusion
        self.precision = precision
        self.seed = seed

    def _run_config(self) -> RunConfig:
        cfg = RunConfig(seed=self.seed, precision=self.precision)
        cfg.data.input_size = self.input_size
        cfg.model.d_enc = self.d_enc
        cfg.model.d_proj = self.d_proj
        cfg.model.d_ss = self.d_ss
        cfg.model.conv_channels = list(self.conv_channels)
        cfg.model.init_tau = self.init_tau
        cfg.loss.weights = list(self.loss_weights)
        cfg.train.learning_rate = self.learning_rate
        cfg.train.weight_decay = self.weight_decay
        cfg.train.batch_size = self.batch_size
        cfg.train.epochs = self.epochs
        cfg.train.schedule = self.schedule
        cfg.inference.prompt_scheme = self.prompt_scheme
        cfg.inference.fusion = self.fusion
        cfg.validate()
        return cfg

    def fit(self, X, y=None):
        """Train on records; ``y`` is unused (reports are the supervision)."""
        records = check_records(X)
        grammar = self.grammar if self.grammar is not None else default_grammar()
        config = self._run_config()
        with tempfile.TemporaryDirectory(prefix="glocal-fit-") as tmp:
            result = train(config, records, grammar, out_dir=tmp)
        self.model_ = result.model
        self.grammar_ = grammar
        self.classes_ = list(grammar.class_names)
        self.prompt_sets_ = build_prompt_sets(grammar, self.model_, self.prompt_scheme)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this GlobalLocalClassifier instance is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        """Per-class presence probabilities, (n_samples, n_classes) in [0,1]."""
        self._check_fitted()
        images = check_images(X, self.input_size)
        return predict(images, self.prompt_sets_, self.model_, mode=self.fusion)

    def predict(self, X) -> np.ndarray:
        """Binary presence decisions at the 0.5 threshold."""
        return (self.predict_proba(X) >= 0.5).astype(int)

    def score(self, X, y) -> float:
        """Mean AUROC over classes; labels -1/-2 are masked per protocol."""
        proba = self.predict_proba(X)
        labels = check_label_matrix(y, proba.shape[0], proba.shape[1])
        return evaluate(proba, labels, self.classes_).mean_auroc
