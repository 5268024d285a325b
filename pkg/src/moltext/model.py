"""Estimator facade over the full generation pipeline.

CrossModalGenerator wraps corpus preparation, joint fusion/decoder
training, and greedy decoding behind the familiar fit/predict surface so
the pipeline drops into sklearn tooling (clone, grid search, pipelines).
The heavy lifting lives in :mod:`moltext.decoder`.
"""

from __future__ import annotations

from typing import Callable, Sequence

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from moltext.decoder import (
    TrainConfig,
    TrainExample,
    encode_example,
    generate,
    train,
)
from moltext.embeddings import StubEmbedder, TokenEmbedder
from moltext.fusion import ABLATION_MODES
from moltext.llmclient import LlmPrediction

__all__ = ["CrossModalGenerator"]

Predictor = Callable[[str], "LlmPrediction | None"]


class CrossModalGenerator(BaseEstimator):
    """Generate molecules from descriptions (or descriptions from molecules).

    Parameters mirror the training configuration.  ``predictor`` is an
    optional callable mapping a source text to ranked candidates from an
    upstream language model; without one the prediction stream is zero.
    ``embedder`` defaults to the deterministic hash-seeded stub, which keeps
    fit/predict reproducible and offline.

    Fitted attributes: ``model_params_`` (fusion, decoder, vocabulary),
    ``history_`` (per-epoch losses and learning rate), ``best_epoch_``,
    ``n_steps_``, ``embedder_``.
    """

    def __init__(
        self,
        direction: str = "text2mol",
        d: int = 128,
        heads: int = 4,
        head_dim: int = 32,
        r: int = 4,
        lr: float = 1e-3,
        batch_size: int = 32,
        epochs: int = 100,
        scheduler_patience: int = 10,
        early_stop_patience: int = 25,
        max_steps: int | None = None,
        max_len: int = 160,
        layers: int = 2,
        seed: int = 0,
        ablation: str = "full",
        embedder: TokenEmbedder | None = None,
        predictor: Predictor | None = None,
    ):
        self.direction = direction
        self.d = d
        self.heads = heads
        self.head_dim = head_dim
        self.r = r
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.scheduler_patience = scheduler_patience
        self.early_stop_patience = early_stop_patience
        self.max_steps = max_steps
        self.max_len = max_len
        self.layers = layers
        self.seed = seed
        self.ablation = ablation
        self.embedder = embedder
        self.predictor = predictor

    def _config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            d=self.d,
            heads=self.heads,
            head_dim=self.head_dim,
            lr=self.lr,
            scheduler_patience=self.scheduler_patience,
            early_stop_patience=self.early_stop_patience,
            seed=self.seed,
            r=self.r,
            max_steps=self.max_steps,
            max_len=self.max_len,
            layers=self.layers,
            direction=self.direction,
        )

    def _examples(self, X: Sequence[str], y: Sequence[str] | None,
                  tag: str) -> list[TrainExample]:
        targets = y if y is not None else [""] * len(X)
        out = []
        for i, (source, target) in enumerate(zip(X, targets)):
            prediction = self.predictor(source) if self.predictor else None
            out.append(
                TrainExample(
                    pair_id=f"{tag}{i:05d}", source_text=source,
                    target_text=target, prediction=prediction,
                )
            )
        return out

    def fit(self, X: Sequence[str], y: Sequence[str],
            validation_data: tuple[Sequence[str], Sequence[str]] | None = None):
        """Train on paired source/target texts.

        Without ``validation_data`` the training pairs double as the
        monitor set, which suits overfitting runs; pass a held-out split
        for honest early stopping.
        """
        if len(X) != len(y):
            raise ValueError(f"length mismatch: {len(X)} sources vs {len(y)} targets")
        if not X:
            raise ValueError("cannot fit on an empty dataset")
        if self.ablation not in ABLATION_MODES:
            raise ValueError(
                f"unknown ablation {self.ablation!r}; "
                f"expected one of {sorted(ABLATION_MODES)}"
            )
        train_examples = self._examples(X, y, "TR")
        if validation_data is not None:
            val_examples = self._examples(validation_data[0], validation_data[1], "VA")
        else:
            val_examples = train_examples
        self.embedder_ = self.embedder or StubEmbedder(dim=self.d, seed=self.seed)
        result = train(
            train_examples, val_examples, self.embedder_, self._config(),
            ablation=ABLATION_MODES[self.ablation],
        )
        self.model_params_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_steps_ = result.steps
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "model_params_"):
            raise NotFittedError(
                "this CrossModalGenerator instance is not fitted yet; "
                "call fit before predict or score"
            )

    def predict(self, X: Sequence[str]) -> list[str]:
        """Greedy-decode one target string per source text."""
        self._require_fitted()
        model = self.model_params_
        flags = ABLATION_MODES[self.ablation]
        outputs = []
        for example in self._examples(X, None, "PR"):
            fused = encode_example(model, example, self.embedder_, self.r,
                                   ablation=flags)
            result = generate(model.decoder, model.vocab, fused.y_cross,
                              max_len=self.max_len)
            outputs.append(result.text)
        return outputs

    def score(self, X: Sequence[str], y: Sequence[str]) -> float:
        """Exact-match fraction of predictions against targets."""
        self._require_fitted()
        if len(X) != len(y):
            raise ValueError(f"length mismatch: {len(X)} sources vs {len(y)} targets")
        if not X:
            raise ValueError("cannot score an empty dataset")
        predictions = self.predict(X)
        hits = sum(1 for p, t in zip(predictions, y) if p == t)
        return hits / len(y)
