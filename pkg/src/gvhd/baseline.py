"""Logistic-regression reference model on aggregated patient features."""

from __future__ import annotations

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import Pipeline, make_pipeline
from sklearn.preprocessing import StandardScaler

from .cohort import Scaler, aggregate_baseline_features
from .records import PatientBatch


def baseline_features(batch: PatientBatch, scaler: Scaler) -> np.ndarray:
    """Aggregates of an already scaled batch.

    Missing labs are filled with 0 (the training mean on the scaled axis) and
    "diagnosis absent" is the scaled image of a raw 0.
    """
    return aggregate_baseline_features(batch, dx_zero=scaler.scaled_zero("dx"))


def fit_logistic_baseline(train: PatientBatch, scaler: Scaler) -> Pipeline:
    # the aggregated columns mix binary, scaled and count features; standardize before the L2 penalty
    model = make_pipeline(StandardScaler(), LogisticRegression(max_iter=5000))
    model.fit(baseline_features(train, scaler), train.labels)
    return model


def baseline_scores(model: Pipeline, batch: PatientBatch, scaler: Scaler) -> np.ndarray:
    return model.predict_proba(baseline_features(batch, scaler))[:, 1]
