"""Exact Gaussian-process posterior with a square-exponential kernel.

The state keeps a lower Cholesky factor of ``K + lam * I`` that grows one row
at a time.  Optionally it is attached to a fixed set of query points (the
search grid of the policy); in that case the matrix ``L^{-1} K(X, grid)`` is
carried along so that posterior means and variances on the grid cost O(n G)
per new observation instead of O(n^2 G).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

PIVOT_FLOOR = 1e-12
JITTER = 1e-10


class CholeskyError(RuntimeError):
    """Raised when the factor cannot be extended even after jitter."""

    def __init__(self, message: str, round_index: int | None = None):
        super().__init__(message)
        self.round_index = round_index


def se_kernel(x, y, u: float) -> float:
    """Square-exponential kernel ``exp(-|x - y|^2 / (2 u^2))`` for two points."""
    if u <= 0:
        raise ValueError(f"lengthscale must be positive, got {u}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d2 = float(np.sum((x - y) ** 2))
    return math.exp(-d2 / (2.0 * u * u))


@dataclass(frozen=True)
class SquaredExponential:
    """SE kernel with unit prior variance, so ``k(x, x) == 1``."""

    lengthscale: float = 1.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")

    def __call__(self, X, Y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape[1] != Y.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        d2 = (
            np.sum(X * X, axis=1)[:, None]
            + np.sum(Y * Y, axis=1)[None, :]
            - 2.0 * X @ Y.T
        )
        np.maximum(d2, 0.0, out=d2)
        return np.exp(-d2 / (2.0 * self.lengthscale**2))

    def diag(self, X) -> np.ndarray:
        return np.ones(np.atleast_2d(X).shape[0])


@dataclass(frozen=True)
class PosteriorValue:
    mean: float
    std: float


class GPState:
    """Posterior state for one black-box function.

    Parameters
    ----------
    kernel : SquaredExponential
    lam : float
        Regulariser added to the Gram diagonal.
    dim : int
        Input dimension.
    target_kind : str
        ``"reward"`` or ``"cost"``; informational only.
    """

    def __init__(self, kernel: SquaredExponential, lam: float, dim: int,
                 target_kind: str = "reward", capacity: int = 16):
        if not lam > 0:
            raise ValueError(f"lam must be positive, got {lam}")
        self.kernel = kernel
        self.lam = float(lam)
        self.dim = int(dim)
        self.target_kind = target_kind
        self._n = 0
        self._cap = max(int(capacity), 1)
        self._X = np.zeros((self._cap, self.dim))
        self._y = np.zeros(self._cap)
        self._L = np.zeros((self._cap, self._cap))
        self._alpha = np.zeros(self._cap)
        self._grid = None
        self._A = None
        self._grid_mean = None
        self._grid_sumsq = None

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------
    @classmethod
    def from_data(cls, kernel, lam, X, y, target_kind="reward", grid=None):
        """Batch-build a state from data with one dense factorisation."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        n, d = X.shape if X.size else (0, None)
        if d is None:
            if grid is None:
                raise ValueError("cannot infer dimension from empty data")
            d = np.atleast_2d(grid).shape[1]
        state = cls(kernel, lam, d, target_kind, capacity=max(n, 16))
        if n:
            if len(y) != n:
                raise ValueError("points and targets differ in length")
            _check_finite(X, "points")
            _check_finite(y, "targets")
            K = kernel(X, X) + lam * np.eye(n)
            L = _cholesky_with_jitter(K, round_index=n)
            state._X[:n] = X
            state._y[:n] = y
            state._L[:n, :n] = L
            state._alpha[:n] = solve_triangular(L, y, lower=True)
            state._n = n
        if grid is not None:
            state.attach_grid(grid)
        return state

    def copy(self) -> "GPState":
        new = GPState(self.kernel, self.lam, self.dim, self.target_kind, self._cap)
        n = self._n
        new._n = n
        new._X[:n] = self._X[:n]
        new._y[:n] = self._y[:n]
        new._L[:n, :n] = self._L[:n, :n]
        new._alpha[:n] = self._alpha[:n]
        if self._grid is not None:
            new._grid = self._grid
            new._A = self._A.copy()
            new._grid_mean = self._grid_mean.copy()
            new._grid_sumsq = self._grid_sumsq.copy()
        return new

    def attach_grid(self, grid) -> "GPState":
        """Track posterior values on ``grid`` incrementally from now on."""
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        if grid.shape[1] != self.dim:
            raise ValueError("grid dimension does not match state")
        self._grid = grid
        self._A = np.zeros((self._cap, grid.shape[0]))
        self._refresh_grid()
        return self

    # ------------------------------------------------------------------
    # accessors
    # ------------------------------------------------------------------
    def __len__(self) -> int:
        return self._n

    @property
    def points(self) -> np.ndarray:
        return self._X[: self._n].copy()

    @property
    def targets(self) -> np.ndarray:
        return self._y[: self._n].copy()

    @property
    def chol(self) -> np.ndarray:
        return self._L[: self._n, : self._n].copy()

    @property
    def grid(self):
        return self._grid

    # ------------------------------------------------------------------
    # updates
    # ------------------------------------------------------------------
    def append(self, x, y: float, round_index: int | None = None) -> "GPState":
        """Add one observation by extending the Cholesky factor by a row."""
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: {x.shape[0]} vs {self.dim}")
        _check_finite(x, "point")
        y = float(y)
        if not math.isfinite(y):
            raise ValueError(f"non-finite target {y}")
        n = self._n
        if n == self._cap:
            self._grow()
        k = self.kernel(self._X[:n], x[None, :])[:, 0] if n else np.zeros(0)
        ell = solve_triangular(self._L[:n, :n], k, lower=True) if n else k
        pivot2 = 1.0 + self.lam - float(ell @ ell)
        if pivot2 < PIVOT_FLOOR:
            pivot2 += JITTER
            if pivot2 < PIVOT_FLOOR:
                idx = round_index if round_index is not None else n + 1
                raise CholeskyError(
                    f"Cholesky breakdown at round {idx} (pivot^2 = {pivot2:.3e})", idx)
        pivot = math.sqrt(pivot2)
        self._X[n] = x
        self._y[n] = y
        self._L[n, :n] = ell
        self._L[n, n] = pivot
        alpha_new = (y - float(ell @ self._alpha[:n])) / pivot
        self._alpha[n] = alpha_new
        if self._grid is not None:
            kg = self.kernel(x[None, :], self._grid)[0]
            row = kg - ell @ self._A[:n] if n else kg
            row /= pivot
            self._A[n] = row
            self._grid_mean += row * alpha_new
            self._grid_sumsq += row * row
        self._n = n + 1
        return self

    def set_targets(self, y) -> "GPState":
        """Replace all targets; the factor is reused since points are unchanged."""
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != self._n:
            raise ValueError(f"expected {self._n} targets, got {len(y)}")
        _check_finite(y, "targets")
        n = self._n
        self._y[:n] = y
        if n:
            self._alpha[:n] = solve_triangular(self._L[:n, :n], y, lower=True)
        if self._grid is not None:
            self._grid_mean = self._A[:n].T @ self._alpha[:n] if n else np.zeros(len(self._grid))
        return self

    def drop_oldest(self, count: int = 1) -> "GPState":
        """Remove the ``count`` oldest observations.

        The trailing block of the factor receives a rank-one update per removed
        point (Givens rotations); the grid projection and ``alpha`` are carried
        through the same rotations.
        """
        for _ in range(int(count)):
            if self._n == 0:
                raise ValueError("no observation to drop")
            self._drop_first()
        return self

    def _drop_first(self):
        n = self._n
        if n == 1:
            self._n = 0
            if self._grid is not None:
                self._grid_mean = np.zeros(len(self._grid))
                self._grid_sumsq = np.zeros(len(self._grid))
            return
        L = self._L[:n, :n]
        x = L[1:, 0].copy()            # rank-one update vector
        Lt = L[1:, 1:].copy()          # trailing block, lower triangular
        alpha_x = self._alpha[0]
        alpha = self._alpha[1:n].copy()
        track = self._grid is not None
        if track:
            A = self._A
            a_x = A[0].copy()
        for k in range(n - 1):
            lkk = Lt[k, k]
            r = math.hypot(lkk, x[k])
            c = lkk / r
            s = x[k] / r
            col = Lt[k:, k].copy()
            Lt[k:, k] = c * col + s * x[k:]
            x[k:] = -s * col + c * x[k:]
            ak = alpha[k]
            alpha[k] = c * ak + s * alpha_x
            alpha_x = -s * ak + c * alpha_x
            if track:
                rowk = A[k + 1]
                new_k = c * rowk + s * a_x
                a_x = -s * rowk + c * a_x
                A[k + 1] = new_k
        m = n - 1
        self._L[:m, :m] = Lt
        self._L[m, : n] = 0.0
        self._L[:n, m] = 0.0
        self._L[:m, m:n] = 0.0
        self._X[:m] = self._X[1:n].copy()
        self._y[:m] = self._y[1:n].copy()
        self._alpha[:m] = alpha
        if track:
            self._A[:m] = self._A[1:n]
            self._grid_mean -= a_x * alpha_x
            self._grid_sumsq -= a_x * a_x
        self._n = m

    def _grow(self):
        cap = self._cap * 2
        X = np.zeros((cap, self.dim))
        X[: self._n] = self._X[: self._n]
        y = np.zeros(cap)
        y[: self._n] = self._y[: self._n]
        L = np.zeros((cap, cap))
        L[: self._n, : self._n] = self._L[: self._n, : self._n]
        alpha = np.zeros(cap)
        alpha[: self._n] = self._alpha[: self._n]
        self._X, self._y, self._L, self._alpha = X, y, L, alpha
        if self._grid is not None:
            A = np.zeros((cap, self._A.shape[1]))
            A[: self._n] = self._A[: self._n]
            self._A = A
        self._cap = cap

    def _refresh_grid(self):
        n = self._n
        G = self._grid.shape[0]
        if n == 0:
            self._grid_mean = np.zeros(G)
            self._grid_sumsq = np.zeros(G)
            return
        A = solve_triangular(self._L[:n, :n], self.kernel(self._X[:n], self._grid), lower=True)
        self._A[:n] = A
        self._grid_mean = A.T @ self._alpha[:n]
        self._grid_sumsq = np.sum(A * A, axis=0)

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------
    def predict(self, Xq):
        """Posterior mean and standard deviation at each row of ``Xq``."""
        if self._grid is not None and Xq is self._grid:
            var = 1.0 - self._grid_sumsq
            return self._grid_mean.copy(), np.sqrt(np.maximum(var, 0.0))
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: {Xq.shape[1]} vs {self.dim}")
        _check_finite(Xq, "query")
        n = self._n
        if n == 0:
            return np.zeros(len(Xq)), np.ones(len(Xq))
        V = solve_triangular(self._L[:n, :n], self.kernel(self._X[:n], Xq), lower=True)
        mean = V.T @ self._alpha[:n]
        var = 1.0 - np.sum(V * V, axis=0)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def posterior(self, x) -> PosteriorValue:
        mean, std = self.predict(np.asarray(x, dtype=float).reshape(1, -1))
        return PosteriorValue(float(mean[0]), float(std[0]))

    def info_gain(self) -> float:
        """Plug-in ``0.5 * log det(I + K / lam)`` on the stored points."""
        n = self._n
        if n == 0:
            return 0.0
        logdet_half = float(np.sum(np.log(np.diag(self._L[:n, :n]))))
        return max(logdet_half - 0.5 * n * math.log(self.lam), 0.0)


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite {what}")


def _cholesky_with_jitter(K, round_index=None):
    try:
        L = np.linalg.cholesky(K)
        if np.min(np.diag(L)) ** 2 >= PIVOT_FLOOR:
            return L
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(K + JITTER * np.eye(len(K)))
    except np.linalg.LinAlgError as exc:
        raise CholeskyError(f"Cholesky breakdown at round {round_index}", round_index) from exc


# ----------------------------------------------------------------------
# functional surface
# ----------------------------------------------------------------------
def posterior(state: GPState, x) -> PosteriorValue:
    return state.posterior(x)


def append_observation(state: GPState, x, y: float) -> GPState:
    """Append in place and return the same state."""
    return state.append(x, y)


def plugin_info_gain(state: GPState) -> float:
    return state.info_gain()


def window_start(t: int, W: int) -> int:
    """First round in the sliding window used at round ``t``."""
    if W < 1:
        raise ValueError(f"W must be >= 1, got {W}")
    return max(1, t - W)


def windowed_state(history: Sequence, t: int, W: int, kernel, lam, grid=None) -> GPState:
    """GP on the observations of rounds ``window_start(t, W) .. t-1``.

    ``history[s - 1]`` is the ``(point, value)`` pair of round ``s``.
    """
    t0 = window_start(t, W)
    window = list(history[t0 - 1: t - 1])
    if not window:
        dim = np.atleast_2d(grid).shape[1] if grid is not None else len(np.ravel(history[0][0]))
        state = GPState(kernel, lam, dim)
        if grid is not None:
            state.attach_grid(grid)
        return state
    X = np.array([np.ravel(p) for p, _ in window], dtype=float)
    y = np.array([v for _, v in window], dtype=float)
    return GPState.from_data(kernel, lam, X, y, grid=grid)


def censored_targets(events: Iterable, t: int, m: int, which: str) -> list:
    """Censored target vector for round ``t``.

    Entry ``s`` (rounds ``1 .. t-1``) is the raw observation when its delay
    satisfies ``delay <= min(m, t - s)`` and 0 otherwise.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if which not in ("reward", "cost"):
        raise ValueError(f"which must be 'reward' or 'cost', got {which!r}")
    out = [0.0] * (t - 1)
    for ev in events:
        s = ev.issued_round
        if s >= t:
            continue
        if which == "reward":
            value, delay = ev.reward_obs, ev.reward_delay
        else:
            value, delay = ev.cost_obs, ev.cost_delay
        if delay <= min(m, t - s):
            out[s - 1] = float(value)
    return out
