"""Estimator-style wrappers around scenario reduction and robust dispatch.

These classes adapt the functional core to the fit/transform/predict
convention so the pipeline composes with standard model-selection tooling.
They hold no logic of their own; everything dispatches to
:mod:`pfropt.scenarios` and :mod:`pfropt.pipeline`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import caseio
from . import scenarios as sc
from .network import NetworkCase
from .pipeline import PipelineConfig, load_config, offline_build, online_dispatch
from .scenarios import PredictionInterval, ScenarioSet


class FastForwardReducer(BaseEstimator, TransformerMixin):
    """Greedy scenario reduction under the transport distance.

    Parameters
    ----------
    n_scenarios : int
        Number of atoms to retain.

    After ``fit``, ``atoms_`` holds the retained points, ``indices_`` their
    row positions in the training set, ``probabilities_`` the redistributed
    masses, and ``distance_`` the transport distance between the original
    and reduced sets.
    """

    def __init__(self, n_scenarios: int = 50):
        self.n_scenarios = n_scenarios

    def fit(self, X, y=None, sample_weight=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"expected 2d sample array, got shape {X.shape}")
        n = X.shape[0]
        if sample_weight is None:
            probs = np.full(n, 1.0 / n)
        else:
            probs = np.asarray(sample_weight, dtype=float)
            probs = probs / probs.sum()
        full = ScenarioSet(X, probs, "user")
        kept = sc.fast_forward_indices(full, self.n_scenarios)
        reduced = sc.redistribute_to(full, kept)
        self.n_features_in_ = X.shape[1]
        self.indices_ = kept
        self.atoms_ = reduced.outputs.copy()
        self.probabilities_ = reduced.probabilities.copy()
        self.distance_ = sc.kantorovich_distance(full, reduced)
        return self

    def predict(self, X):
        """Index of the nearest retained atom for each sample."""
        X = np.asarray(X, dtype=float)
        d = np.linalg.norm(X[:, None, :] - self.atoms_[None, :, :], axis=2)
        return np.argmin(d, axis=1)

    def transform(self, X):
        """Distances from each sample to every retained atom."""
        X = np.asarray(X, dtype=float)
        return np.linalg.norm(X[:, None, :] - self.atoms_[None, :, :], axis=2)


def _resolve_case(case) -> NetworkCase:
    if isinstance(case, NetworkCase):
        return case
    return caseio.load_bundled(str(case))


def _resolve_config(config) -> PipelineConfig:
    if config is None or isinstance(config, PipelineConfig):
        return config or PipelineConfig()
    return load_config(config)


class RobustDispatcher(BaseEstimator):
    """Two-stage robust dispatch: fit screens scenarios offline, predict
    solves the online problem for short-term uncertainty boxes.

    Parameters
    ----------
    case : NetworkCase or str
        Grid to dispatch, or the name of a bundled case.
    config : PipelineConfig, path, or None
        Study settings; None uses the defaults.

    ``fit(X)`` accepts optional day-ahead scenario samples (MW per farm,
    one row each); without X the day-ahead interval is sampled internally.
    ``predict(X)`` takes one box per row, columns ``[lower..., upper...]``,
    and returns the dispatched generator setpoints in MW.
    """

    def __init__(self, case="wscc9", config=None):
        self.case = case
        self.config = config

    def fit(self, X=None, y=None):
        case = _resolve_case(self.case)
        cfg = _resolve_config(self.config)
        sampled = None
        if X is not None:
            X = np.asarray(X, dtype=float)
            if X.ndim != 2 or X.shape[1] != len(case.wind_farms):
                raise ValueError(
                    f"expected (n, {len(case.wind_farms)}) scenario array, "
                    f"got shape {X.shape}"
                )
            probs = np.full(X.shape[0], 1.0 / X.shape[0])
            sampled = ScenarioSet(X, probs, "user")
            self.n_features_in_ = X.shape[1]
        self.db_ = offline_build(case, cfg, sampled=sampled)
        self.base_dispatch_ = np.asarray(self.db_.base.p_gen_mw, dtype=float)
        return self

    def predict(self, X):
        if not hasattr(self, "db_"):
            raise RuntimeError("fit before predict")
        cfg = _resolve_config(self.config)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        n_farms = self.db_.interval.n_farms
        if X.shape[1] != 2 * n_farms:
            raise ValueError(
                f"expected {2 * n_farms} columns (lower..., upper...), "
                f"got {X.shape[1]}"
            )
        out = np.empty((X.shape[0], len(self.base_dispatch_)))
        reports = []
        for i, row in enumerate(X):
            box = PredictionInterval(
                "short_term", tuple(row[:n_farms]), tuple(row[n_farms:])
            )
            rep = online_dispatch(self.db_, box, cfg)
            reports.append(rep)
            out[i] = rep.dispatch.p_gen_mw
        self.reports_ = reports
        return out
