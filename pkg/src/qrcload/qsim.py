"""Dense statevector simulation of the reservoir circuit.

States are complex arrays whose last axis has length ``2**n``; any leading
axes are a batch (one circuit per row). Qubit ``q`` is bit ``q`` of the basis
index (qubit 0 is the least significant bit).

Gate conventions::

    RY(t) = [[cos t/2, -sin t/2], [sin t/2, cos t/2]]
    RZ(t) = diag(exp(-i t/2), exp(i t/2))
    U(a, b, c) = RZ(a) @ RY(b) @ RZ(c)          (ZYZ Euler form)
    brickwork coupling on (q, q+1) = exp(-i g Z_q Z_{q+1})
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_INPUT_FEATURES = 11
PAULI_KINDS = ("Z", "X", "Y", "ZZ", "XX")


def n_qubits_of(state):
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim != 1 << n:
        raise ValueError(f"state dimension {dim} is not a power of two")
    return n


def zero_state(n_qubits, batch=None):
    shape = (1 << n_qubits,) if batch is None else (batch, 1 << n_qubits)
    state = np.zeros(shape, dtype=complex)
    state[..., 0] = 1.0
    return state


def _check_qubit(q, n):
    if not 0 <= q < n:
        raise IndexError(f"qubit {q} out of range for {n} qubits")


def ry_matrix(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2).astype(complex)


def rz_matrix(theta):
    theta = np.asarray(theta, dtype=float)
    m = np.zeros(theta.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = np.exp(-0.5j * theta)
    m[..., 1, 1] = np.exp(0.5j * theta)
    return m


def zyz_matrix(alpha, beta, gamma):
    return rz_matrix(alpha) @ ry_matrix(beta) @ rz_matrix(gamma)


def apply_1q(state, q, matrix):
    """Apply a 2x2 ``matrix`` (or a batch of them, shape (B, 2, 2)) to qubit ``q``."""
    n = n_qubits_of(state)
    _check_qubit(q, n)
    lead = state.shape[:-1]
    view = state.reshape(lead + (1 << (n - q - 1), 2, 1 << q))
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim == 2:
        out = np.einsum("ij,...hjl->...hil", matrix, view)
    else:
        out = np.einsum("bij,bhjl->bhil", matrix, view)
    return out.reshape(state.shape)


def apply_ry(state, q, theta):
    return apply_1q(state, q, ry_matrix(theta))


def apply_rz(state, q, theta):
    return apply_1q(state, q, rz_matrix(theta))


def apply_unitary_zyz(state, q, alpha, beta, gamma):
    return apply_1q(state, q, zyz_matrix(alpha, beta, gamma))


def _bits(n):
    idx = np.arange(1 << n)
    return (idx[:, None] >> np.arange(n)) & 1


def brickwork_pairs(n, parity):
    if parity not in ("even", "odd"):
        raise ValueError(f"parity must be 'even' or 'odd', got {parity!r}")
    start = 0 if parity == "even" else 1
    return [(q, q + 1) for q in range(start, n - 1, 2)]


def brickwork_phases(n, parity, g):
    """Diagonal of the even/odd coupling layer as a length ``2**n`` vector."""
    z = 1 - 2 * _bits(n)
    total = np.zeros(1 << n)
    for a, b in brickwork_pairs(n, parity):
        total += z[:, a] * z[:, b]
    return np.exp(-1j * g * total)


def apply_brickwork_layer(state, parity, g):
    n = n_qubits_of(state)
    if n < 2:
        raise ValueError("brickwork layer needs at least 2 qubits")
    return state * brickwork_phases(n, parity, g)


def chebyshev_angle(x, order, shift):
    """``order * arccos(clip(2x - 1, -1, 1)) + shift``; works elementwise."""
    u = np.clip(2.0 * np.asarray(x, dtype=float) - 1.0, -1.0, 1.0)
    return order * np.arccos(u) + shift


def layer_shift(layer, n_layers):
    """Encoding phase for 1-based ``layer``."""
    return layer * np.pi / (2 * n_layers)


@dataclass(frozen=True, eq=False)
class ReservoirParams:
    """Fixed reservoir parameters; ``fixed_rotations`` is (L, N, 3) ZYZ angles."""

    fixed_rotations: np.ndarray
    layer_shifts: np.ndarray
    seed: int

    def __post_init__(self):
        self.fixed_rotations.setflags(write=False)
        self.layer_shifts.setflags(write=False)

    @property
    def n_layers(self):
        return self.fixed_rotations.shape[0]

    @property
    def n_qubits(self):
        return self.fixed_rotations.shape[1]

    def __eq__(self, other):
        return (isinstance(other, ReservoirParams) and self.seed == other.seed
                and np.array_equal(self.fixed_rotations, other.fixed_rotations)
                and np.array_equal(self.layer_shifts, other.layer_shifts))

    __hash__ = None


def haar_params(n_qubits, n_layers, seed):
    """Haar-random single-qubit rotations from ``seed`` (ZYZ, beta = arccos(1-2u))."""
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.0, 2 * np.pi, (n_layers, n_qubits))
    beta = np.arccos(1.0 - 2.0 * rng.uniform(0.0, 1.0, (n_layers, n_qubits)))
    gamma = rng.uniform(0.0, 2 * np.pi, (n_layers, n_qubits))
    rot = np.stack([alpha, beta, gamma], axis=-1)
    shifts = np.array([layer_shift(l, n_layers) for l in range(1, n_layers + 1)])
    return ReservoirParams(rot, shifts, int(seed))


def run_reservoir_circuit(x, params, n_qubits, n_layers, stride=1, coupling=0.5):
    """Prepare the reservoir state for input ``x`` (11,) or a batch (B, 11).

    Per layer l = 1..L: RY(chebyshev_angle(x[(q + l*stride) % 11], l, phi_l)) on
    each qubit, then the fixed ZYZ rotation, then even then odd ZZ couplings.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != N_INPUT_FEATURES or x.ndim not in (1, 2):
        raise ValueError(f"expected {N_INPUT_FEATURES} features, got shape {x.shape}")
    if params.n_qubits != n_qubits or params.n_layers != n_layers:
        raise ValueError("params were generated for a different architecture")
    batched = x.ndim == 2
    xb = x if batched else x[None, :]
    state = zero_state(n_qubits, batch=xb.shape[0])
    if n_layers and n_qubits >= 2:
        even = brickwork_phases(n_qubits, "even", coupling)
        odd = brickwork_phases(n_qubits, "odd", coupling)
    for l in range(1, n_layers + 1):
        shift = params.layer_shifts[l - 1]
        for q in range(n_qubits):
            theta = chebyshev_angle(xb[:, (q + l * stride) % N_INPUT_FEATURES], l, shift)
            state = apply_1q(state, q, ry_matrix(theta))
        for q in range(n_qubits):
            a, b, c = params.fixed_rotations[l - 1, q]
            state = apply_1q(state, q, zyz_matrix(a, b, c))
        if n_qubits >= 2:
            state = state * even
            state = state * odd
    return state if batched else state[0]


@dataclass(frozen=True)
class PauliObservable:
    kind: str
    qubit: int

    def __post_init__(self):
        if self.kind not in PAULI_KINDS:
            raise ValueError(f"unknown Pauli kind {self.kind!r}")

    def validate(self, n):
        hi = n - 1 if len(self.kind) == 2 else n
        if not 0 <= self.qubit < hi:
            raise IndexError(f"{self.kind} on qubit {self.qubit} invalid for {n} qubits")


def observable_set(n_qubits):
    """Measurement order: Z_0.., X_0.., Y_0.., ZZ_(0,1).., XX_(0,1).."""
    obs = [PauliObservable(k, q) for k in ("Z", "X", "Y") for q in range(n_qubits)]
    obs += [PauliObservable(k, q) for k in ("ZZ", "XX") for q in range(n_qubits - 1)]
    return obs


def n_observables(n_qubits):
    return 3 * n_qubits + 2 * (n_qubits - 1)


def expectation(state, obs):
    """Exact <psi|P|psi>; batched over leading axes."""
    n = n_qubits_of(state)
    obs.validate(n)
    idx = np.arange(1 << n)
    q = obs.qubit
    if obs.kind in ("Z", "ZZ"):
        z = 1 - 2 * ((idx >> q) & 1)
        if obs.kind == "ZZ":
            z = z * (1 - 2 * ((idx >> (q + 1)) & 1))
        # elementwise sum keeps each row independent of the batch size
        return np.sum(np.abs(state) ** 2 * z, axis=-1)
    if obs.kind == "X":
        partner = state[..., idx ^ (1 << q)]
    elif obs.kind == "XX":
        partner = state[..., idx ^ (3 << q)]
    else:
        phase = np.where((idx >> q) & 1, 1j, -1j)
        partner = phase * state[..., idx ^ (1 << q)]
    val = np.sum(np.conj(state) * partner, axis=-1)
    if np.max(np.abs(np.imag(val))) >= 1e-10:
        raise FloatingPointError(f"non-real expectation for {obs}")
    return np.real(val)


def exact_observables(state):
    """All observables of :func:`observable_set` stacked on the last axis."""
    n = n_qubits_of(state)
    return np.stack([expectation(state, o) for o in observable_set(n)], axis=-1)


def sample_from_expectations(exact, shots, rng):
    """Finite-shot estimates: per entry ``shots`` +/-1 outcomes with P(+1) = (1+e)/2."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = np.clip((1.0 + np.asarray(exact, dtype=float)) / 2.0, 0.0, 1.0)
    plus = rng.binomial(shots, p)
    return (2.0 * plus - shots) / shots


def sample_expectation(state, obs, shots, rng):
    return sample_from_expectations(expectation(state, obs), shots, rng)


def measure_observable_set(state, shots=None, rng=None):
    """Exact (``shots=None``) or sampled observable vector, length 3N + 2(N-1)."""
    exact = exact_observables(state)
    if shots is None:
        return exact
    if rng is None:
        raise ValueError("a random generator is required for finite shots")
    return sample_from_expectations(exact, shots, rng)
