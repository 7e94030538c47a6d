"""Randomly-weighted single-hidden-layer regressors with an analytic solve.

Hidden weights and biases are drawn once from a seeded PRNG; output weights
are the minimum-norm least-squares solution obtained through the
Moore-Penrose pseudoinverse of the hidden-layer matrix. No iteration, no
gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import DataError, NumericalError

#: SVD cutoff: singular values below rcond * sigma_max are treated as zero.
DEFAULT_RCOND = 1e-10

ACTIVATIONS = {
    "sigmoid": expit,
    "tanh": np.tanh,
}


@dataclass(frozen=True)
class ElmUnit:
    """One trained unit: hidden weights (L, k), biases (L,), output weights (L,).

    The target is scalar, so the output-weight matrix collapses to a vector.
    ``seed`` is kept when the hidden layer was drawn here and is None for
    units deserialized from a bank.
    """

    omega: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray
    activation: str = "sigmoid"
    seed: int | None = None

    def __post_init__(self):
        omega = np.asarray(self.omega)
        bias = np.asarray(self.bias)
        gamma = np.asarray(self.gamma)
        if omega.ndim != 2:
            raise DataError("unit: omega must be (L, k)")
        L = omega.shape[0]
        if bias.shape != (L,) or gamma.shape != (L,):
            raise DataError("unit: bias/gamma shape mismatch")
        for name, a in (("omega", omega), ("bias", bias), ("gamma", gamma)):
            if not np.isfinite(a).all():
                raise NumericalError(f"unit: non-finite {name}")
        if self.activation not in ACTIVATIONS:
            raise DataError(f"unit: unknown activation {self.activation!r}")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "gamma", gamma)

    @property
    def input_dim(self) -> int:
        return self.omega.shape[1]

    @property
    def hidden(self) -> int:
        return self.omega.shape[0]

    def quantized(self) -> "ElmUnit":
        """Round all weights to float32, the precision banks persist."""
        return ElmUnit(
            self.omega.astype(np.float32),
            self.bias.astype(np.float32),
            self.gamma.astype(np.float32),
            self.activation,
            self.seed,
        )


@dataclass(frozen=True)
class TrainingSet:
    """Feature rows X (N, k) and scalar targets Y (N,) with values in [0, 1]."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DataError("training set: X must be (N, k) with N >= 1")
        if Y.shape != (X.shape[0],):
            raise DataError("training set: Y must be (N,)")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise NumericalError("training set: non-finite values")
        if Y.size and (Y.min() < 0.0 or Y.max() > 1.0):
            raise DataError("training set: targets outside [0, 1]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)


def init_hidden(k: int, L: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw hidden weights and biases i.i.d. uniform on [-1, 1] (PCG64)."""
    if k < 1 or L < 1:
        raise DataError("init_hidden: k and L must be >= 1")
    rng = np.random.default_rng(seed)
    omega = rng.uniform(-1.0, 1.0, size=(L, k))
    bias = rng.uniform(-1.0, 1.0, size=L)
    return omega, bias


def hidden_matrix(
    X: np.ndarray, omega: np.ndarray, bias: np.ndarray, activation: str = "sigmoid"
) -> np.ndarray:
    """H[i, j] = f(omega_j . x_i + b_j), shape (N, L)."""
    X = np.asarray(X, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if X.ndim != 2 or omega.ndim != 2 or X.shape[1] != omega.shape[1]:
        raise DataError(
            f"hidden_matrix: X {X.shape} incompatible with omega {omega.shape}"
        )
    if not np.isfinite(X).all():
        raise NumericalError("hidden_matrix: non-finite input")
    try:
        f = ACTIVATIONS[activation]
    except KeyError:
        raise DataError(f"unknown activation {activation!r}") from None
    return f(X @ omega.T + bias)


def solve_output_weights(
    H: np.ndarray,
    Y: np.ndarray,
    rcond: float = DEFAULT_RCOND,
    ridge: float = 0.0,
) -> np.ndarray:
    """Minimum-norm least squares: gamma = pinv(H) @ Y.

    The pseudoinverse goes through SVD with singular values below
    rcond * sigma_max zeroed. With ridge > 0 the solution is
    (H'H + ridge I)^-1 H'Y instead.
    """
    H = np.asarray(H, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if H.ndim != 2 or Y.shape[0] != H.shape[0]:
        raise DataError(f"solve: H {H.shape} incompatible with Y {Y.shape}")
    if not (np.isfinite(H).all() and np.isfinite(Y).all()):
        raise NumericalError("solve: non-finite input")
    if ridge < 0:
        raise DataError("solve: ridge must be >= 0")
    if ridge > 0:
        L = H.shape[1]
        return np.linalg.solve(H.T @ H + ridge * np.eye(L), H.T @ Y)
    return np.linalg.pinv(H, rcond=rcond) @ Y


def train(
    ts: TrainingSet,
    L: int,
    seed: int,
    activation: str = "sigmoid",
    ridge: float = 0.0,
) -> ElmUnit:
    """Random hidden layer + analytic output weights for one training set."""
    k = ts.X.shape[1]
    omega, bias = init_hidden(k, L, seed)
    H = hidden_matrix(ts.X, omega, bias, activation)
    gamma = solve_output_weights(H, ts.Y, ridge=ridge)
    return ElmUnit(omega, bias, gamma, activation, seed)


def predict(unit: ElmUnit, X: np.ndarray) -> np.ndarray:
    """Raw unit outputs H(X) @ gamma, shape (N,). No clamping here."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != unit.input_dim:
        raise DataError(
            f"predict: X {X.shape} incompatible with input_dim {unit.input_dim}"
        )
    H = hidden_matrix(X, unit.omega, unit.bias, unit.activation)
    return H @ np.asarray(unit.gamma, dtype=np.float64)


def training_residual(unit: ElmUnit, ts: TrainingSet) -> float:
    """RMS residual of the unit on its own training set."""
    r = predict(unit, ts.X) - ts.Y
    return float(np.sqrt(np.mean(r * r)))
