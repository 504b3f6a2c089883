"""Small histogram-based gradient boosted trees with logistic loss.

Newton boosting on pre-binned feature codes: per tree, gradient/hessian
histograms per feature (see kernels.hist_gradients), greedy depth-wise
growth, leaf weights -G/(H+lambda). No row/column subsampling, so a fit is
fully deterministic; ties in split gain resolve to the lowest
(feature, code) pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ValidationError


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class _Tree:
    feature: list = field(default_factory=list)      # -1 marks a leaf
    threshold: list = field(default_factory=list)    # real-valued upper edge
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def scores(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            f = self.feature[node]
            if f < 0:
                out[idx] = self.value[node]
                continue
            mask = X[idx, f] <= self.threshold[node]
            stack.append((self.left[node], idx[mask]))
            stack.append((self.right[node], idx[~mask]))
        return out


class GradientBoostedClassifier:
    """Binary classifier; decision_scores returns log-odds margins."""

    def __init__(self, n_trees: int = 100, max_depth: int = 3,
                 learning_rate: float = 0.3, reg_lambda: float = 1.0,
                 min_child_weight: float = 1e-3, max_bins: int = 64,
                 seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.min_child_weight = min_child_weight
        self.max_bins = max_bins
        self.seed = seed
        self.trees_: list[_Tree] = []
        self.base_margin_: float = 0.0
        self.boundaries_: list[np.ndarray] = []

    # ------------------------------------------------------------- binning

    def _fit_bins(self, X: np.ndarray) -> np.ndarray:
        n, d = X.shape
        codes = np.empty((n, d), dtype=np.uint8)
        self.boundaries_ = []
        for f in range(d):
            uniq = np.unique(X[:, f])
            if uniq.size > self.max_bins:
                qs = np.linspace(0, 1, self.max_bins + 1)[1:-1]
                uniq = np.unique(np.quantile(X[:, f], qs))
            # cap so codes stay in uint8 range
            boundaries = uniq[:254]
            self.boundaries_.append(boundaries)
            codes[:, f] = np.searchsorted(boundaries, X[:, f], side="left")
        return codes

    # ------------------------------------------------------------ training

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GradientBoostedClassifier":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValidationError("X must be (n, d) with matching y")
        if X.shape[0] == 0:
            raise ValidationError("cannot fit on an empty dataset")
        codes = self._fit_bins(X)
        n_bins = max(b.size for b in self.boundaries_) + 1 if self.boundaries_ else 1
        p0 = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        self.base_margin_ = float(np.log(p0 / (1 - p0)))
        margin = np.full(X.shape[0], self.base_margin_)
        self.trees_ = []
        for _ in range(self.n_trees):
            p = _sigmoid(margin)
            g = p - y
            h = p * (1.0 - p)
            tree = self._grow_tree(codes, g, h, n_bins)
            self.trees_.append(tree)
            margin += self.learning_rate * tree.scores(X)
            if len(tree.feature) == 1 and abs(tree.value[0]) < 1e-12:
                break
        return self

    def _grow_tree(self, codes: np.ndarray, g: np.ndarray, h: np.ndarray,
                   n_bins: int) -> _Tree:
        tree = _Tree()
        root = tree.add_node()
        stack = [(root, np.arange(codes.shape[0], dtype=np.int64), 0)]
        lam = self.reg_lambda
        while stack:
            node, rows, depth = stack.pop()
            G = g[rows].sum()
            H = h[rows].sum()
            if depth >= self.max_depth or rows.size < 2 or H < 2 * self.min_child_weight:
                tree.value[node] = -G / (H + lam)
                continue
            gsum, hsum = kernels.hist_gradients(codes, g, h, rows, n_bins)
            best_gain = 0.0
            best = None
            parent_score = G * G / (H + lam)
            for f in range(codes.shape[1]):
                n_cuts = self.boundaries_[f].size
                if n_cuts == 0:
                    continue
                gl = np.cumsum(gsum[f][:n_cuts])
                hl = np.cumsum(hsum[f][:n_cuts])
                gr = G - gl
                hr = H - hl
                valid = (hl >= self.min_child_weight) & (hr >= self.min_child_weight)
                gains = np.where(
                    valid,
                    0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent_score),
                    -np.inf)
                c = int(np.argmax(gains))
                if gains[c] > best_gain + 1e-12:
                    best_gain = float(gains[c])
                    best = (f, c)
            if best is None:
                tree.value[node] = -G / (H + lam)
                continue
            f, c = best
            mask = codes[rows, f] <= c
            left_rows = rows[mask]
            right_rows = rows[~mask]
            if left_rows.size == 0 or right_rows.size == 0:
                tree.value[node] = -G / (H + lam)
                continue
            tree.feature[node] = f
            tree.threshold[node] = float(self.boundaries_[f][c])
            left = tree.add_node()
            right = tree.add_node()
            tree.left[node] = left
            tree.right[node] = right
            stack.append((right, right_rows, depth + 1))
            stack.append((left, left_rows, depth + 1))
        return tree

    # ----------------------------------------------------------- inference

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        out = np.full(X.shape[0], self.base_margin_)
        for tree in self.trees_:
            out += self.learning_rate * tree.scores(X)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision_scores(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)
