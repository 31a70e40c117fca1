"""Window-to-feature extraction with the fixed quantum reservoir.

Each time step of a window is encoded into a freshly prepared circuit (no
quantum state carries over between steps); the per-step observable vectors
are then averaged with normalized exponential kernels, one block per decay
rate. Temporal memory therefore lives entirely in the kernels.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import qsim
from .colfile import ColumnFileError, array_digest, read_columns, write_columns

logger = logging.getLogger(__name__)

ENCODING_STRIDES = {"cheb_stride1": 1, "cheb_stride3": 3}
DEFAULT_DECAYS = (0.1, 0.4, 1.6)

# incremented once per circuit batch actually simulated; tests use it to
# confirm cache hits
CIRCUIT_COUNTER = {"rows": 0}


@dataclass(frozen=True)
class ReservoirConfig:
    n_qubits: int = 7
    n_layers: int = 4
    encoding_strategy: str = "cheb_stride1"
    coupling_strength: float = 0.5
    l1_ratio: float = 0.5
    kernel_decays: tuple = DEFAULT_DECAYS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel_decays", tuple(float(d) for d in self.kernel_decays))
        if self.encoding_strategy not in ENCODING_STRIDES:
            raise ValueError(f"unknown encoding strategy {self.encoding_strategy!r}")
        if self.n_qubits < 1 or self.n_layers < 0:
            raise ValueError("n_qubits must be >= 1 and n_layers >= 0")
        if not self.coupling_strength > 0:
            raise ValueError("coupling_strength must be positive")
        if not 0.0 <= self.l1_ratio <= 1.0:
            raise ValueError("l1_ratio must lie in [0, 1]")
        if not self.kernel_decays or any(not d > 0 for d in self.kernel_decays):
            raise ValueError("kernel decays must be positive")

    @property
    def stride(self):
        return ENCODING_STRIDES[self.encoding_strategy]

    @property
    def n_observables(self):
        return qsim.n_observables(self.n_qubits)

    @property
    def n_features(self):
        return self.n_observables * len(self.kernel_decays)

    def to_dict(self):
        d = asdict(self)
        d["kernel_decays"] = list(self.kernel_decays)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_seed(self, seed):
        return ReservoirConfig(**{**self.to_dict(), "seed": int(seed)})


def generate_params(config):
    return qsim.haar_params(config.n_qubits, config.n_layers, config.seed)


def kernel_weights(T, decay):
    """Normalized weights ``exp(-decay*(T-1-tau))``; the last step weighs most."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not decay > 0:
        raise ValueError("decay must be positive")
    lag = (T - 1) - np.arange(T)
    w = np.exp(-decay * lag)
    return w / w.sum()


def _aggregate(step_obs, weights):
    # fixed-order accumulation so single-window and batched paths agree bitwise
    T = step_obs.shape[-2]
    blocks = []
    for w in weights:
        acc = w[0] * step_obs[..., 0, :]
        for tau in range(1, T):
            acc = acc + w[tau] * step_obs[..., tau, :]
        blocks.append(acc)
    return np.concatenate(blocks, axis=-1)


def _circuit_observables(rows, params, config):
    CIRCUIT_COUNTER["rows"] += len(rows)
    state = qsim.run_reservoir_circuit(rows, params, config.n_qubits, config.n_layers,
                                       config.stride, config.coupling_strength)
    return qsim.exact_observables(state)


def window_rng(base_seed, index):
    """Independent stream for window ``index``."""
    return np.random.default_rng([int(base_seed), int(index)])


def extract_window(window, params, config, shots=None, rng=None):
    """Feature vector ``r`` (length M*D, kernel-major) for one (T, 11) window."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[1] != qsim.N_INPUT_FEATURES:
        raise ValueError(f"window must be (T, {qsim.N_INPUT_FEATURES}), got {window.shape}")
    obs = _circuit_observables(window, params, config)
    if shots is not None:
        if rng is None:
            raise ValueError("finite shots need an rng")
        obs = qsim.sample_from_expectations(obs, shots, rng)
    T = window.shape[0]
    return _aggregate(obs, [kernel_weights(T, d) for d in config.kernel_decays])


def _chunks(n, n_chunks):
    edges = np.linspace(0, n, n_chunks + 1).astype(int)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _features_from_obs(obs, index, weights, shots, base_seed):
    if shots is None:
        return _aggregate(obs, weights)
    out = np.empty((obs.shape[0], obs.shape[2] * len(weights)))
    for j, i in enumerate(index):
        sampled = qsim.sample_from_expectations(obs[j], shots, window_rng(base_seed, i))
        out[j] = _aggregate(sampled, weights)
    return out


def extract_dataset(windows, params, config, shots=None, base_seed=0,
                    cache_dir=None, n_jobs=1):
    """Feature matrix R (n_windows x M*D) for stacked windows (n, T, 11).

    Row ``i`` equals ``extract_window(windows[i], ..., rng=window_rng(base_seed, i))``.
    Steps shared between overlapping windows are simulated once. When
    ``cache_dir`` is given the result is cached under a key derived from the
    config, shot setting, seed and input data.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or windows.shape[2] != qsim.N_INPUT_FEATURES:
        raise ValueError(f"windows must be (n, T, {qsim.N_INPUT_FEATURES}), got {windows.shape}")
    n, T, _ = windows.shape

    cache_path = None
    if cache_dir is not None:
        data_hash = array_digest(windows)
        key_src = json.dumps([config.config_hash(), shots, int(base_seed), data_hash,
                              params.seed])
        key = hashlib.sha256(key_src.encode()).hexdigest()[:24]
        cache_path = Path(cache_dir) / f"features-{key}.qrc"
        cached = _load_cache(cache_path, key)
        if cached is not None and cached.shape == (n, config.n_features):
            return cached

    flat = windows.reshape(n * T, -1)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    spans = _chunks(len(uniq), max(1, n_jobs))
    parts = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_circuit_observables)(uniq[a:b], params, config) for a, b in spans)
    uobs = np.concatenate(parts, axis=0)
    obs = uobs[inverse].reshape(n, T, -1)

    weights = [kernel_weights(T, d) for d in config.kernel_decays]
    spans = _chunks(n, max(1, n_jobs))
    parts = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_features_from_obs)(obs[a:b], range(a, b), weights, shots, base_seed)
        for a, b in spans)
    R = np.concatenate(parts, axis=0)

    if cache_path is not None:
        meta = {"key": key, "config_hash": config.config_hash(),
                "shots": "None" if shots is None else shots, "base_seed": base_seed,
                "data_hash": data_hash, "digest": array_digest(R)}
        cols = [f"r{j}" for j in range(R.shape[1])]
        write_columns(cache_path, cols, R, meta)
    return R


def _load_cache(path, key):
    if not path.exists():
        return None
    try:
        _, data, meta = read_columns(path)
    except (ColumnFileError, OSError) as exc:
        logger.warning("discarding unreadable feature cache %s: %s", path, exc)
        return None
    if meta.get("key") != key or meta.get("digest") != array_digest(data):
        logger.warning("feature cache %s failed its hash check; recomputing", path)
        return None
    return data


def check_windows(X, n_features=qsim.N_INPUT_FEATURES):
    """Validate a stack of windows: finite float array shaped (n, T, n_features)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 3:
        raise ValueError(f"expected a 3D array (n_windows, T, features), got {X.ndim}D")
    if X.shape[2] != n_features:
        raise ValueError(f"expected {n_features} features per step, got {X.shape[2]}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"empty window stack {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("windows contain non-finite values")
    return X


class QuantumReservoirFeatures(TransformerMixin, BaseEstimator):
    """Fixed quantum reservoir as a scikit-learn transformer.

    ``fit`` only draws the Haar-random parameters; nothing is learned from
    the data. ``transform`` maps windows (n, T, 11) to features (n, M*D).
    Row ``i`` of a finite-shot transform uses the stream ``(shot_seed, i)``,
    so the same array always yields the same features.
    """

    def __init__(self, n_qubits=7, n_layers=4, encoding_strategy="cheb_stride1",
                 coupling_strength=0.5, kernel_decays=DEFAULT_DECAYS, seed=0,
                 shots=None, shot_seed=0, cache_dir=None, n_jobs=1):
        self.n_qubits = n_qubits
        self.n_layers = n_layers
        self.encoding_strategy = encoding_strategy
        self.coupling_strength = coupling_strength
        self.kernel_decays = kernel_decays
        self.seed = seed
        self.shots = shots
        self.shot_seed = shot_seed
        self.cache_dir = cache_dir
        self.n_jobs = n_jobs

    def _config(self):
        return ReservoirConfig(n_qubits=self.n_qubits, n_layers=self.n_layers,
                               encoding_strategy=self.encoding_strategy,
                               coupling_strength=self.coupling_strength,
                               kernel_decays=tuple(self.kernel_decays), seed=self.seed)

    def fit(self, X, y=None):
        X = check_windows(X)
        self.config_ = self._config()
        self.params_ = generate_params(self.config_)
        self.window_length_ = X.shape[1]
        self.n_features_out_ = self.config_.n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_windows(X)
        if X.shape[1] != self.window_length_:
            raise ValueError(f"fitted on windows of length {self.window_length_}, got {X.shape[1]}")
        return extract_dataset(X, self.params_, self.config_, shots=self.shots,
                               base_seed=self.shot_seed, cache_dir=self.cache_dir,
                               n_jobs=self.n_jobs)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "params_")
        names = [f"{o.kind}{o.qubit}" for o in qsim.observable_set(self.n_qubits)]
        return np.array([f"k{d}_{nm}" for d in range(len(self.config_.kernel_decays))
                         for nm in names], dtype=object)
