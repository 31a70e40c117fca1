"""Post-training fixed-point quantization of the linear readout.

Weights use a symmetric per-tensor quantizer with ``2**(k-1) - 1`` positive
levels; the bias stays in floating point. ``k = 32`` is treated as the
identity (the full-precision baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .readout import ElasticNetReadout, model_to_text

BIT_WIDTHS = (8, 6, 4, 3, 2)
FULL_PRECISION = 32
CLIP_GRID = np.arange(20, 101) / 100.0


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def qmax(k):
    return (1 << (k - 1)) - 1


def quantize_with_clip(w, k, clip):
    """Integer codes and step size for weights ``w`` clipped at ``+-clip``."""
    if not clip > 0:
        raise ValueError(f"clip must be positive, got {clip}")
    if k < 2:
        raise ValueError(f"bit width must be >= 2, got {k}")
    levels = qmax(k)
    scale = clip / levels
    codes = np.clip(round_half_away(np.asarray(w, dtype=float) / scale), -levels, levels)
    return codes.astype(np.int64), scale


def dequantize(codes, scale):
    return codes * scale


def quantization_mse(w, k, clip):
    codes, scale = quantize_with_clip(w, k, clip)
    d = np.asarray(w, dtype=float) - codes * scale
    return float(np.mean(d * d))


def optimal_clip_search(w, k, grid=CLIP_GRID):
    """Clip in ``grid * max|w|`` with least weight MSE; ties go to the larger clip.

    An all-zero ``w`` returns the sentinel clip 1.0.
    """
    w = np.asarray(w, dtype=float)
    top = np.max(np.abs(w)) if w.size else 0.0
    if top == 0.0:
        return 1.0
    best_clip, best_err = None, None
    for p in grid:
        clip = p * top
        err = quantization_mse(w, k, clip)
        if best_err is None or err <= best_err:
            best_clip, best_err = clip, err
    return best_clip


@dataclass
class QuantizedReadout:
    """``y_hat = (codes * scale) . r + bias``; ``history`` holds train MSE per accepted round."""

    codes: np.ndarray
    scale: float
    k: int
    bias: float
    clip: float
    history: list = field(default_factory=list)

    @property
    def weights(self):
        return self.codes * self.scale

    def predict(self, R):
        return np.asarray(R, dtype=float) @ self.weights + self.bias

    def model_fields(self):
        return {"bits": self.k, "quant_scale": repr(float(self.scale)),
                "clip": repr(float(self.clip)), "quant_bias": repr(float(self.bias)),
                "codes": ",".join(str(int(c)) if self.k < FULL_PRECISION else repr(float(c))
                                  for c in self.codes)}


def _mse(R, y, w, b):
    d = y - (R @ w + b)
    return float(np.mean(d * d))


def naive_quantize(w, b, k):
    """Baseline: clip at max|w|, bias untouched."""
    w = np.asarray(w, dtype=float)
    top = np.max(np.abs(w))
    clip = top if top > 0 else 1.0
    codes, scale = quantize_with_clip(w, k, clip)
    return QuantizedReadout(codes, scale, k, float(b), clip)


def iterative_refine(w, b, k, R_train, y_train, rounds=5, tol=1e-10):
    """Quantize ``(w, b)`` to ``k`` bits with clip search, bias and scale correction.

    Each round: pick the MSE-optimal clip for the current target weights and
    quantize; set the bias to the mean training residual; rescale the step
    size by the closed-form least-squares factor and re-centre the bias. The
    full-range clip goes through the same corrections and competes on
    training MSE, so the result never loses to naive quantization. The
    next round's target adds back what the dequantized weights miss from the
    FP32 weights. A round is kept only if it lowers training MSE by at least
    ``tol``; otherwise refinement stops.
    """
    w = np.asarray(w, dtype=float)
    R_train = np.asarray(R_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    if R_train.ndim != 2 or R_train.shape[1] != w.shape[0] or R_train.shape[0] != y_train.shape[0]:
        raise ValueError(f"dimension mismatch: R {R_train.shape}, w {w.shape}, y {y_train.shape}")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if k >= FULL_PRECISION:
        return QuantizedReadout(w.copy(), 1.0, FULL_PRECISION, float(b),
                                float(np.max(np.abs(w))) if w.size else 1.0,
                                [_mse(R_train, y_train, w, b)])

    best = None
    target = w.copy()
    for _ in range(rounds):
        # the full-range clip is also tried so round 1 can never lose to naive
        searched = optimal_clip_search(target, k)
        top = float(np.max(np.abs(target)))
        candidates = [searched] if top in (0.0, searched) else [searched, top]
        cand = min((_corrected(target, k, c, R_train, y_train) for c in candidates),
                   key=lambda q: q[-1])
        codes, scale, bias, clip, mse = cand
        if best is not None and mse > best.history[-1] - tol:
            break
        history = (best.history if best else []) + [mse]
        best = QuantizedReadout(codes, scale, k, bias, clip, history)
        target = target + (w - codes * scale)
    return best


def _corrected(target, k, clip, R_train, y_train):
    """Quantize at ``clip``, then bias correction and least-squares step rescale."""
    codes, scale = quantize_with_clip(target, k, clip)
    pred = R_train @ (codes * scale)
    bias = float(np.mean(y_train - pred))
    denom = float(pred @ pred)
    factor = float((y_train - bias) @ pred) / denom if denom > 0 else 1.0
    if factor > 0:
        scale *= factor
        clip *= factor
        pred = pred * factor
        bias = float(np.mean(y_train - pred))
    d = y_train - pred - bias
    return codes, scale, bias, clip, float(np.mean(d * d))


def memory_saved(k):
    """Readout weight memory saved vs 32-bit floats, in percent (one decimal)."""
    if not 1 <= k <= 32:
        raise ValueError(f"bit width must be in [1, 32], got {k}")
    return round((1 - k / 32) * 100, 1)


def degradation(rmse_k, rmse_fp32):
    """Percent RMSE above the FP32 baseline (negative means better)."""
    if not rmse_fp32 > 0:
        raise ValueError("baseline RMSE must be positive")
    return (rmse_k - rmse_fp32) / rmse_fp32 * 100.0


class FixedPointReadout(RegressorMixin, BaseEstimator):
    """Quantized readout: fits ``estimator`` in float, then quantizes its weights.

    ``bits=32`` keeps full precision. Training data passed to ``fit`` is reused
    for bias/scale refinement.
    """

    def __init__(self, estimator=None, bits=8, rounds=5):
        self.estimator = estimator
        self.bits = bits
        self.rounds = rounds

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        est = clone(self.estimator) if self.estimator is not None else ElasticNetReadout()
        self.estimator_ = est.fit(X, y)
        return self._quantize(X, y)

    @classmethod
    def from_fitted(cls, estimator, X, y, bits=8, rounds=5):
        self = cls(estimator=estimator, bits=bits, rounds=rounds)
        self.estimator_ = estimator
        return self._quantize(np.asarray(X, dtype=float), np.asarray(y, dtype=float))

    def _quantize(self, X, y):
        w, b = self.estimator_.coef_, self.estimator_.intercept_
        if self.bits >= FULL_PRECISION and hasattr(self.estimator_, "fp32_params"):
            w, b = self.estimator_.fp32_params()
        self.quantized_ = iterative_refine(w, b, self.bits, X, y, rounds=self.rounds)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "quantized_")
        X = check_array(X, dtype=np.float64)
        return self.quantized_.predict(X)

    def to_text(self, config_hash=""):
        check_is_fitted(self, "quantized_")
        return model_to_text(self.estimator_, config_hash, self.quantized_.model_fields())
