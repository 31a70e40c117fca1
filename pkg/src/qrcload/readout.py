"""Elastic-net linear readout and forecasting metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
MODEL_MAGIC = "qrc-readout-model"
MODEL_VERSION = 1


class ConvergenceError(RuntimeError):
    """Coordinate descent hit ``max_iter`` sweeps; carries the last iterate."""

    def __init__(self, coef, n_sweeps, max_change):
        super().__init__(f"coordinate descent did not converge in {n_sweeps} sweeps "
                         f"(last max change {max_change:.3g})")
        self.coef = coef
        self.n_sweeps = n_sweeps
        self.max_change = max_change


def soft_threshold(x, t):
    return math.copysign(max(abs(x) - t, 0.0), x)


def enet_objective(w, gram, corr, yy, alpha, l1_ratio):
    """Objective in standardized coordinates using Gram statistics (already / n)."""
    smooth = 0.5 * (yy - 2.0 * corr @ w + w @ gram @ w)
    return smooth + alpha * (l1_ratio * np.abs(w).sum() + 0.5 * (1 - l1_ratio) * (w @ w))


def coordinate_descent(gram, corr, yy, alpha, l1_ratio, tol=1e-7, max_iter=10_000,
                       w0=None):
    """Cyclic coordinate descent with soft-thresholding on Gram statistics.

    Minimizes ``0.5 * (yy - 2 c.w + w.G.w) + alpha * (l1_ratio |w|_1 +
    (1 - l1_ratio)/2 |w|^2)``. Coordinates with zero Gram diagonal stay at 0.
    Returns ``(w, n_sweeps, objective_history)``; history[0] is the start point.
    """
    p = gram.shape[0]
    w = np.zeros(p) if w0 is None else np.array(w0, dtype=float)
    gw = gram @ w
    l1 = alpha * l1_ratio
    l2 = alpha * (1.0 - l1_ratio)
    diag = np.diag(gram).copy()
    active = np.flatnonzero(diag > 0)
    w[diag <= 0] = 0.0
    history = [enet_objective(w, gram, corr, yy, alpha, l1_ratio)]
    for sweep in range(1, max_iter + 1):
        max_change = 0.0
        for j in active:
            old = w[j]
            rho = corr[j] - gw[j] + diag[j] * old
            new = soft_threshold(rho, l1) / (diag[j] + l2)
            delta = new - old
            if delta != 0.0:
                w[j] = new
                gw += delta * gram[:, j]
                if abs(delta) > max_change:
                    max_change = abs(delta)
        obj = enet_objective(w, gram, corr, yy, alpha, l1_ratio)
        if obj > history[-1] + 1e-10 * max(1.0, abs(history[-1])):
            raise FloatingPointError(
                f"objective increased at sweep {sweep}: {history[-1]!r} -> {obj!r}")
        history.append(obj)
        if max_change < tol:
            return w, sweep, history
    raise ConvergenceError(w, max_iter, max_change)


def kkt_residuals(w, gram, corr, alpha, l1_ratio):
    """Per-coordinate optimality violation (0 at an exact solution)."""
    grad = -(corr - gram @ w) + alpha * (1 - l1_ratio) * w
    l1 = alpha * l1_ratio
    return np.where(w == 0, np.maximum(np.abs(grad) - l1, 0.0),
                    np.abs(grad + l1 * np.sign(w)))


class ElasticNetReadout(RegressorMixin, BaseEstimator):
    """Linear readout trained by coordinate descent on standardized features.

    Columns are standardized internally (population std); constant columns
    get weight 0. ``coef_``/``intercept_`` act on the raw features.
    """

    def __init__(self, alpha=1e-3, l1_ratio=0.5, tol=1e-7, max_iter=10_000):
        self.alpha = alpha
        self.l1_ratio = l1_ratio
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True,
                         ensure_all_finite=True, ensure_min_samples=2)
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not 0.0 <= self.l1_ratio <= 1.0:
            raise ValueError(f"l1_ratio must lie in [0, 1], got {self.l1_ratio}")
        n = X.shape[0]
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        constant = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
        scale = np.where(constant, 1.0, scale)
        Z = (X - mean) / scale
        Z[:, constant] = 0.0
        y_mean = y.mean()
        yc = y - y_mean

        self.gram_ = Z.T @ Z / n
        self.corr_ = Z.T @ yc / n
        self.yy_ = float(yc @ yc / n)
        w, sweeps, hist = coordinate_descent(self.gram_, self.corr_, self.yy_,
                                             self.alpha, self.l1_ratio,
                                             tol=self.tol, max_iter=self.max_iter)
        self.coef_std_ = w
        self.intercept_std_ = float(y_mean)
        self.mean_ = mean
        self.scale_ = scale
        self.coef_ = w / scale
        self.intercept_ = float(y_mean - mean @ self.coef_)
        self.n_iter_ = sweeps
        self.objective_history_ = np.asarray(hist)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_

    def kkt_residuals(self):
        check_is_fitted(self, "coef_")
        return kkt_residuals(self.coef_std_, self.gram_, self.corr_, self.alpha, self.l1_ratio)

    def fp32_params(self):
        """Weights and bias rounded to single precision (the 32-bit baseline)."""
        check_is_fitted(self, "coef_")
        return (self.coef_.astype(np.float32).astype(np.float64),
                float(np.float32(self.intercept_)))


def select_alpha(R_train, y_train, R_val, y_val, l1_ratio, alphas=DEFAULT_ALPHA_GRID,
                 **kwargs):
    """Fit one readout per alpha and keep the lowest validation RMSE.

    Alphas whose fit does not converge are skipped with a warning; if none
    converge the last ConvergenceError is raised.
    """
    if not alphas:
        raise ValueError("empty alpha grid")
    best = None
    last_err = None
    for alpha in alphas:
        try:
            model = ElasticNetReadout(alpha=alpha, l1_ratio=l1_ratio, **kwargs).fit(R_train, y_train)
        except ConvergenceError as exc:
            logger.warning("alpha=%g skipped: %s", alpha, exc)
            last_err = exc
            continue
        score = rmse(model.predict(R_val), y_val)
        if best is None or score < best[0]:
            best = (score, model)
    if best is None:
        raise last_err
    return best[1]


def rmse(pred, target):
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


def mae(pred, target):
    return float(np.mean(np.abs(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))))


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    n: int


def metrics(pred_raw, target_raw):
    pred_raw = np.asarray(pred_raw, dtype=float)
    target_raw = np.asarray(target_raw, dtype=float)
    if pred_raw.shape != target_raw.shape:
        raise ValueError(f"shape mismatch {pred_raw.shape} vs {target_raw.shape}")
    return Metrics(rmse(pred_raw, target_raw), mae(pred_raw, target_raw), len(target_raw))


def evaluate(model, R, y_raw, scaler):
    """Metrics in physical units: predictions are inverted through the target scaler."""
    from .ingest import invert_target

    return metrics(invert_target(model.predict(R), scaler), y_raw)


def aggregate_over_seeds(values):
    """``(mean, sample std)`` over per-seed values; needs at least two."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two values to aggregate")
    return float(values.mean()), float(values.std(ddof=1))


def _fmt(values):
    return ",".join(repr(float(v)) for v in values)


def model_to_text(model, config_hash="", extra=None):
    """Serialize a fitted readout to the versioned key=value format."""
    check_is_fitted(model, "coef_")
    lines = [f"{MODEL_MAGIC} v{MODEL_VERSION}",
             f"kind={'quantized' if extra else 'fp'}",
             f"n_features={model.n_features_in_}",
             f"alpha={float(model.alpha)!r}",
             f"l1_ratio={float(model.l1_ratio)!r}",
             f"config_hash={config_hash}",
             f"intercept={float(model.intercept_)!r}",
             f"coef={_fmt(model.coef_)}",
             f"mean={_fmt(model.mean_)}",
             f"scale={_fmt(model.scale_)}"]
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_model_text(text):
    """Parse the key=value model format into a dict of raw strings."""
    lines = text.splitlines()
    if not lines or lines[0] != f"{MODEL_MAGIC} v{MODEL_VERSION}":
        raise ValueError(f"not a {MODEL_MAGIC} v{MODEL_VERSION} file")
    out = {}
    for line in lines[1:]:
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"bad model line {line!r}")
        out[key] = value
    return out


def model_from_text(text):
    d = parse_model_text(text)
    vec = lambda s: np.array([float(v) for v in s.split(",")]) if s else np.zeros(0)
    model = ElasticNetReadout(alpha=float(d["alpha"]), l1_ratio=float(d["l1_ratio"]))
    model.coef_ = vec(d["coef"])
    model.intercept_ = float(d["intercept"])
    model.mean_ = vec(d["mean"])
    model.scale_ = vec(d["scale"])
    model.n_features_in_ = int(d["n_features"])
    if model.coef_.shape != (model.n_features_in_,):
        raise ValueError("coef length does not match n_features")
    return model, d
