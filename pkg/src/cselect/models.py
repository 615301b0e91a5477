"""Trainable regressors: linear and boosted-tree families for conditional
quantiles (pinball loss) and conditional means, plus an exact k-nearest
neighbor estimator of conditional mean and variance.

Two families are provided. The ``linear`` family trains quantiles by
full-batch subgradient descent on the pinball loss and means by closed-form
least squares, which makes it analytically checkable. The ``gbt`` family is
gradient-boosted regression trees: each round fits a depth-limited tree to
the loss subgradient and then refits every leaf value directly on the loss
(mean of residuals for squared error, empirical quantile of residuals for
pinball). Trees are stored as flat arrays so fitted models serialize to JSON.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.tree import DecisionTreeRegressor

from .validation import (
    as_float_matrix,
    as_float_vector,
    check_alpha,
    check_feature_count,
    check_fitted,
    check_matching_rows,
    check_tau,
)

MODEL_SCHEMA = "cselect-model/1"
FAMILIES = ("linear", "gbt")


def pinball_loss(y, y_pred, tau):
    """Asymmetric absolute loss whose minimizer is the tau-quantile.

    Returns ``tau * (y - y_pred)`` where ``y >= y_pred`` and
    ``(1 - tau) * (y_pred - y)`` elsewhere; elementwise over arrays.
    """
    check_tau(tau)
    y = np.asarray(y, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    diff = y - y_pred
    return np.where(diff >= 0.0, tau * diff, (tau - 1.0) * diff)


def _lstsq_line(X, y):
    design = np.column_stack([X, np.ones(len(y))])
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    return beta[:-1], float(beta[-1])


class LinearQuantile(BaseEstimator, RegressorMixin):
    """Linear conditional-quantile model trained on the pinball loss.

    Full-batch subgradient descent with step ``step / sqrt(epoch)``. The
    iterate with the lowest training loss is kept, so exhausting the epoch
    budget is not an error. Optimization warm-starts from the least-squares
    line shifted to the empirical tau-quantile of its residuals, which for
    additive noise is already near the minimizer.
    """

    def __init__(self, tau=0.5, n_epochs=2000, step=0.05):
        self.tau = tau
        self.n_epochs = n_epochs
        self.step = step

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_matching_rows(X, y)
        if len(y) == 0:
            raise ValueError("cannot fit on an empty dataset")
        tau = check_tau(self.tau)

        coef, intercept = _lstsq_line(X, y)
        intercept += float(np.quantile(y - (X @ coef + intercept), tau))

        n = len(y)
        best = (coef.copy(), intercept)
        best_loss = float(pinball_loss(y, X @ coef + intercept, tau).mean())
        for epoch in range(1, int(self.n_epochs) + 1):
            pred = X @ coef + intercept
            grad = np.where(y > pred, -tau, 1.0 - tau)
            grad[y == pred] = 0.0
            step = self.step / np.sqrt(epoch)
            coef = coef - step * (X.T @ grad) / n
            intercept = intercept - step * float(grad.mean())
            loss = float(pinball_loss(y, X @ coef + intercept, tau).mean())
            if loss < best_loss:
                best_loss = loss
                best = (coef.copy(), intercept)

        self.coef_, self.intercept_ = best
        self.train_loss_ = best_loss
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_fitted(self, "coef_")
        X = as_float_matrix(X)
        check_feature_count(X, self.n_features_in_)
        return X @ self.coef_ + self.intercept_


class LinearLeastSquares(BaseEstimator, RegressorMixin):
    """Ordinary least squares, solved in closed form."""

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_matching_rows(X, y)
        if len(y) == 0:
            raise ValueError("cannot fit on an empty dataset")
        self.coef_, self.intercept_ = _lstsq_line(X, y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_fitted(self, "coef_")
        X = as_float_matrix(X)
        check_feature_count(X, self.n_features_in_)
        return X @ self.coef_ + self.intercept_


@dataclass
class _Tree:
    """Regression tree as flat arrays; ``children_left == -1`` marks leaves."""

    children_left: np.ndarray
    children_right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray

    @classmethod
    def from_sklearn(cls, sk_tree):
        return cls(
            children_left=sk_tree.children_left.astype(np.int64),
            children_right=sk_tree.children_right.astype(np.int64),
            feature=sk_tree.feature.astype(np.int64),
            threshold=sk_tree.threshold.astype(np.float64),
            value=np.zeros(sk_tree.node_count, dtype=np.float64),
        )

    def apply(self, X):
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            left = self.children_left[nodes]
            internal = left != -1
            if not internal.any():
                return nodes
            feat = np.where(internal, self.feature[nodes], 0)
            go_left = X[rows, feat] <= self.threshold[nodes]
            nxt = np.where(go_left, left, self.children_right[nodes])
            nodes = np.where(internal, nxt, nodes)

    def to_dict(self):
        return {
            "children_left": self.children_left.tolist(),
            "children_right": self.children_right.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            children_left=np.array(doc["children_left"], dtype=np.int64),
            children_right=np.array(doc["children_right"], dtype=np.int64),
            feature=np.array(doc["feature"], dtype=np.int64),
            threshold=np.array(doc["threshold"], dtype=np.float64),
            value=np.array(doc["value"], dtype=np.float64),
        )


class GradientBoosted(BaseEstimator, RegressorMixin):
    """Gradient-boosted regression trees for squared or pinball loss.

    Each boosting round fits a tree to the negative loss gradient at the
    current predictions, then replaces every leaf value with the exact loss
    minimizer over the residuals falling in that leaf: their mean for
    ``loss="squared"``, their empirical tau-quantile for ``loss="pinball"``.
    The model starts from the global mean (or tau-quantile) of the targets.

    Split search is delegated to scikit-learn's tree learner; fitted trees
    are kept as plain arrays, so prediction and serialization do not depend
    on pickled estimators. Training is deterministic for a fixed
    ``random_state``, including the ``subsample < 1`` path.
    """

    def __init__(self, loss="squared", tau=None, n_estimators=200, max_depth=3,
                 learning_rate=0.1, subsample=1.0, min_samples_leaf=1,
                 random_state=0):
        self.loss = loss
        self.tau = tau
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.subsample = subsample
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_matching_rows(X, y)
        if len(y) == 0:
            raise ValueError("cannot fit on an empty dataset")
        if self.loss not in ("squared", "pinball"):
            raise ValueError(f"unknown loss {self.loss!r}")
        tau = None
        if self.loss == "pinball":
            if self.tau is None:
                raise ValueError("loss='pinball' requires tau")
            tau = check_tau(self.tau)
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError(f"subsample must be in (0, 1], got {self.subsample}")

        n = len(y)
        rng = np.random.default_rng(self.random_state)
        init = float(np.quantile(y, tau)) if tau is not None else float(y.mean())
        current = np.full(n, init)
        trees: list[_Tree] = []
        for _ in range(int(self.n_estimators)):
            seed = int(rng.integers(2**31 - 1))
            if self.subsample < 1.0:
                size = max(1, int(round(self.subsample * n)))
                idx = np.sort(rng.choice(n, size=size, replace=False))
            else:
                idx = np.arange(n)
            resid = y[idx] - current[idx]
            if tau is not None:
                target = np.where(resid > 0.0, tau, tau - 1.0)
            else:
                target = resid
            learner = DecisionTreeRegressor(
                max_depth=self.max_depth,
                min_samples_leaf=self.min_samples_leaf,
                random_state=seed,
            ).fit(X[idx], target)
            tree = _Tree.from_sklearn(learner.tree_)
            leaf_of = tree.apply(X[idx])
            for leaf in np.unique(leaf_of):
                in_leaf = resid[leaf_of == leaf]
                if tau is not None:
                    tree.value[leaf] = np.quantile(in_leaf, tau)
                else:
                    tree.value[leaf] = in_leaf.mean()
            current += self.learning_rate * tree.value[tree.apply(X)]
            trees.append(tree)

        self.init_ = init
        self.trees_ = trees
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_fitted(self, "trees_")
        X = as_float_matrix(X)
        check_feature_count(X, self.n_features_in_)
        out = np.full(X.shape[0], self.init_)
        for tree in self.trees_:
            out += self.learning_rate * tree.value[tree.apply(X)]
        return out


class KnnMeanVariance(BaseEstimator, RegressorMixin):
    """Conditional mean and variance from the k nearest training rows.

    Neighbors are found by an exact linear scan under Euclidean distance;
    ties in distance are broken toward the lower row index. The variance is
    the population form: the average squared deviation from the neighborhood
    mean, with divisor k.
    """

    _CHUNK = 256

    def __init__(self, k=10):
        self.k = k

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_matching_rows(X, y)
        if not 1 <= int(self.k) <= len(y):
            raise ValueError(
                f"k={self.k} must be between 1 and the {len(y)} stored rows"
            )
        self.X_ = X
        self.y_ = y
        self.n_features_in_ = X.shape[1]
        return self

    def kneighbors(self, X):
        """Indices of the k nearest stored rows, one row per query."""
        check_fitted(self, "X_")
        X = as_float_matrix(X)
        check_feature_count(X, self.n_features_in_)
        k = int(self.k)
        out = np.empty((X.shape[0], k), dtype=np.int64)
        for start in range(0, X.shape[0], self._CHUNK):
            chunk = X[start:start + self._CHUNK]
            d2 = np.zeros((chunk.shape[0], self.X_.shape[0]))
            for j in range(self.X_.shape[1]):
                d2 += (chunk[:, j, None] - self.X_[None, :, j]) ** 2
            order = np.argsort(d2, axis=1, kind="stable")
            out[start:start + self._CHUNK] = order[:, :k]
        return out

    def mean_variance(self, X):
        neighbors = self.kneighbors(X)
        values = self.y_[neighbors]
        mean = values.mean(axis=1)
        variance = ((values - mean[:, None]) ** 2).mean(axis=1)
        return mean, variance

    def predict(self, X):
        return self.mean_variance(X)[0]


def _make_quantile_estimator(family, tau, params):
    params = dict(params or {})
    if family == "linear":
        return LinearQuantile(tau=tau, **params)
    if family == "gbt":
        return GradientBoosted(loss="pinball", tau=tau, **params)
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


def _make_mean_estimator(family, params):
    params = dict(params or {})
    if family == "linear":
        params.pop("n_epochs", None)
        params.pop("step", None)
        return LinearLeastSquares(**params)
    if family == "gbt":
        return GradientBoosted(loss="squared", **params)
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


class QuantilePairRegressor(BaseEstimator):
    """Lower and upper conditional-quantile models fitted on the same data.

    For a miscoverage budget ``alpha`` the lower model targets the
    ``alpha / 2`` quantile and the upper model the ``1 - alpha / 2``
    quantile, so the raw band aims at central ``1 - alpha`` probability.
    Bounds are returned as predicted and may occasionally cross; callers
    that need ordered bounds repair them downstream.
    """

    def __init__(self, alpha=0.05, family="linear", params=None):
        self.alpha = alpha
        self.family = family
        self.params = params

    def fit(self, X, y):
        alpha = check_alpha(self.alpha)
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_matching_rows(X, y)
        self.lower_ = _make_quantile_estimator(self.family, alpha / 2.0, self.params).fit(X, y)
        self.upper_ = _make_quantile_estimator(self.family, 1.0 - alpha / 2.0, self.params).fit(X, y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_bounds(self, X):
        check_fitted(self, "lower_")
        X = as_float_matrix(X)
        if self.n_features_in_ is not None:
            check_feature_count(X, self.n_features_in_)
        return self.lower_.predict(X), self.upper_.predict(X)

    @classmethod
    def from_fitted(cls, lower, upper, alpha, family="custom"):
        """Wrap two already-fitted predictors as a quantile pair."""
        pair = cls(alpha=alpha, family=family)
        pair.lower_ = lower
        pair.upper_ = upper
        pair.n_features_in_ = getattr(lower, "n_features_in_", None)
        return pair


def fit_point_model(X, y, family="linear", params=None):
    """Train the shared point predictor (mean regression) for a family."""
    return _make_mean_estimator(family, params).fit(X, y)


def fit_quantile_pair(X, y, alpha, family="linear", params=None):
    return QuantilePairRegressor(alpha=alpha, family=family, params=params).fit(X, y)


# ---------------------------------------------------------------------------
# JSON round trip. Documents carry a schema tag, the estimator kind, the
# constructor parameters, and the fitted state.

def model_to_dict(model) -> dict:
    doc = {"schema": MODEL_SCHEMA}
    if isinstance(model, LinearQuantile):
        doc.update(kind="linear_quantile", coef=model.coef_.tolist(),
                   intercept=model.intercept_,
                   n_features_in=model.n_features_in_)
    elif isinstance(model, LinearLeastSquares):
        doc.update(kind="least_squares", coef=model.coef_.tolist(),
                   intercept=model.intercept_,
                   n_features_in=model.n_features_in_)
    elif isinstance(model, GradientBoosted):
        doc.update(kind="gradient_boosted", init=model.init_,
                   trees=[t.to_dict() for t in model.trees_],
                   n_features_in=model.n_features_in_)
    elif isinstance(model, KnnMeanVariance):
        doc.update(kind="knn_mean_variance", X=model.X_.tolist(),
                   y=model.y_.tolist(), n_features_in=model.n_features_in_)
    elif isinstance(model, QuantilePairRegressor):
        doc.update(kind="quantile_pair", lower=model_to_dict(model.lower_),
                   upper=model_to_dict(model.upper_),
                   n_features_in=model.n_features_in_)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    doc["params"] = model.get_params()
    return doc


def model_from_dict(doc) -> BaseEstimator:
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
    kind = doc["kind"]
    params = doc.get("params", {})
    if kind == "linear_quantile":
        model = LinearQuantile(**params)
        model.coef_ = np.array(doc["coef"], dtype=np.float64)
        model.intercept_ = float(doc["intercept"])
    elif kind == "least_squares":
        model = LinearLeastSquares(**params)
        model.coef_ = np.array(doc["coef"], dtype=np.float64)
        model.intercept_ = float(doc["intercept"])
    elif kind == "gradient_boosted":
        model = GradientBoosted(**params)
        model.init_ = float(doc["init"])
        model.trees_ = [_Tree.from_dict(t) for t in doc["trees"]]
    elif kind == "knn_mean_variance":
        model = KnnMeanVariance(**params)
        model.X_ = np.array(doc["X"], dtype=np.float64)
        model.y_ = np.array(doc["y"], dtype=np.float64)
    elif kind == "quantile_pair":
        model = QuantilePairRegressor(**params)
        model.lower_ = model_from_dict(doc["lower"])
        model.upper_ = model_from_dict(doc["upper"])
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    model.n_features_in_ = doc["n_features_in"]
    return model
