"""Classical blunder baselines: logistic regression and a random forest."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from ..errors import DegenerateFeatures, OneClassOnly

log = logging.getLogger(__name__)


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y).reshape(-1).astype(np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise OneClassOnly("training labels contain a single class")
    return y


def _flatten(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(x.shape[0], -1)


@dataclass(frozen=True)
class LogitConfig:
    lr: float = 0.5
    max_iter: int = 5000
    tol: float = 1e-7
    l2: float = 0.0


class LinearModel:
    """Logistic regression on standardized features."""

    def __init__(self, weights: np.ndarray, bias: float, mean: np.ndarray, scale: np.ndarray,
                 constant_columns: Sequence[int] = (), iterations: int = 0):
        self.weights = weights
        self.bias = bias
        self.mean = mean
        self.scale = scale
        self.constant_columns = list(constant_columns)
        self.iterations = iterations

    def decision_function(self, x) -> np.ndarray:
        z = (_flatten(x) - self.mean) / self.scale
        return z @ self.weights + self.bias

    def predict_proba(self, x) -> np.ndarray:
        s = self.decision_function(x)
        return 0.5 * (1.0 + np.tanh(0.5 * s))

    def predict(self, x) -> np.ndarray:
        return (self.predict_proba(x) >= 0.5).astype(np.int64)


def train_logit(x, y, cfg: LogitConfig = LogitConfig()) -> LinearModel:
    """Full-batch gradient descent on mean log-loss until the update falls below ``cfg.tol``."""
    x = _flatten(x)
    y = _check_labels(y)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    constant = np.flatnonzero(std == 0)
    if len(constant) == x.shape[1]:
        raise DegenerateFeatures("every feature column is constant")
    if len(constant):
        log.info("logit: %d constant feature columns carry zero weight", len(constant))
    scale = np.where(std == 0, 1.0, std)
    z = (x - mean) / scale
    n, d = z.shape
    w = np.zeros(d)
    b = 0.0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        p = 0.5 * (1.0 + np.tanh(0.5 * (z @ w + b)))
        err = p - y
        gw = z.T @ err / n + cfg.l2 * w
        gb = err.mean()
        w -= cfg.lr * gw
        b -= cfg.lr * gb
        if cfg.lr * max(np.abs(gw).max(), abs(gb)) < cfg.tol:
            break
    return LinearModel(w, b, mean, scale, constant, it)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: Optional[int] = None
    max_features: Optional[str] = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


class Forest:
    """Bagged CART trees (Gini impurity, per-split feature subsampling)."""

    def __init__(self, model: RandomForestClassifier, cfg: ForestConfig):
        self.model = model
        self.cfg = cfg

    def predict_proba(self, x) -> np.ndarray:
        proba = self.model.predict_proba(_flatten(x))
        return proba[:, list(self.model.classes_).index(1.0)]

    def predict(self, x) -> np.ndarray:
        return (self.predict_proba(x) >= 0.5).astype(np.int64)


def train_forest(x, y, cfg: ForestConfig = ForestConfig()) -> Forest:
    x = _flatten(x)
    y = _check_labels(y)
    model = RandomForestClassifier(
        n_estimators=cfg.n_trees, criterion="gini", max_depth=cfg.max_depth, max_features=cfg.max_features,
        bootstrap=cfg.bootstrap, random_state=cfg.seed, n_jobs=1,
    )
    model.fit(x, y)
    return Forest(model, cfg)


FOREST_GRID: Tuple[Tuple[int, Optional[int]], ...] = tuple(
    (t, d) for t in (50, 100, 200) for d in (8, 16, None)
)


def select_forest(x, y, x_val, y_val, grid: Iterable[Tuple[int, Optional[int]]] = FOREST_GRID,
                  seed: int = 0) -> Tuple[Forest, List[dict]]:
    """Fit every (trees, depth) pair and keep the one with the best validation AUC."""
    from ..evaluation import auc

    best, best_auc, rows = None, -1.0, []
    for trees, depth in grid:
        forest = train_forest(x, y, ForestConfig(n_trees=trees, max_depth=depth, seed=seed))
        score = auc(forest.predict_proba(x_val), y_val)
        rows.append({"n_trees": trees, "max_depth": depth, "val_auc": score})
        if score > best_auc:
            best, best_auc = forest, score
    return best, rows
