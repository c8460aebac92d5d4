"""Discrete-time LTI plant with an attackable linear channel and a secure
quadratic channel.

    x[k+1] = A x[k] + B u[k] + w[k]        w ~ N(0, Q)
    y[k]   = C x[k] + a[k] + v[k]          v ~ N(0, R), a = attack
    z[k]   = x[k]' V x[k]  (+ optional scalar noise)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.linalg as sla


class ModelError(ValueError):
    """Raised for inconsistent or invalid system matrices."""


class NumericError(ArithmeticError):
    """Raised when a factorization or solve fails irrecoverably."""


def _as_matrix(name: str, M: Any, shape: tuple[int, int]) -> np.ndarray:
    M = np.array(M, dtype=float)
    if M.ndim == 1 and shape[1] == 1:
        M = M.reshape(shape)
    if M.shape != shape:
        raise ModelError(f"{name} has shape {M.shape}, expected {shape}")
    if not np.all(np.isfinite(M)):
        raise ModelError(f"{name} contains non-finite entries")
    return M


def _check_vec(name: str, x: Any, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"{name} has shape {x.shape}, expected ({n},)")
    return x


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Immutable container for (A, B, C, Q, R, V).

    Validation on construction: A invertible (reciprocal condition >= 1e-12),
    Q symmetric PSD, R symmetric PD, V symmetric PD. Set ``require_pd_V=False``
    to admit a PSD quadratic form (used by feasibility-only tests).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    V: np.ndarray
    require_pd_V: bool = True
    _lu: Any = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ModelError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(n, -1)
        m = B.shape[1]
        C = np.array(self.C, dtype=float)
        if C.ndim == 1:
            C = C.reshape(1, -1)
        p = C.shape[0]
        B = _as_matrix("B", B, (n, m))
        C = _as_matrix("C", C, (p, n))
        Q = _as_matrix("Q", self.Q, (n, n))
        R = _as_matrix("R", self.R, (p, p))
        V = _as_matrix("V", self.V, (n, n))

        for name, M in (("Q", Q), ("R", R), ("V", V)):
            if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ModelError(f"{name} is not symmetric")
        Q, R, V = (0.5 * (M + M.T) for M in (Q, R, V))

        if np.linalg.eigvalsh(Q).min() < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ModelError("Q is not positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0.0:
            raise ModelError("R is not positive definite")
        vmin = np.linalg.eigvalsh(V).min()
        if self.require_pd_V and vmin <= 0.0:
            raise ModelError("V is not positive definite")
        if not self.require_pd_V and vmin < -1e-12 * max(1.0, np.abs(V).max()):
            raise ModelError("V is not positive semidefinite")

        lu = sla.lu_factor(A, check_finite=False)
        rcond = np.linalg.cond(A, 1)
        if not np.isfinite(rcond) or 1.0 / rcond < 1e-12:
            raise ModelError("A is singular or too ill-conditioned (Assumption: A invertible)")

        for arr in (A, B, C, Q, R, V):
            arr.setflags(write=False)
        for name, arr in (("A", A), ("B", B), ("C", C), ("Q", Q), ("R", R), ("V", V)):
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_lu", lu)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def spectral_norm_V(self) -> float:
        """L = ||V||_2, the curvature bound used by the adaptive constraint slack."""
        return float(np.linalg.norm(self.V, 2))

    def solve_A(self, b: np.ndarray) -> np.ndarray:
        """Return A^{-1} b using the cached LU factorization."""
        return sla.lu_solve(self._lu, b, check_finite=False)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "V": self.V.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, require_pd_V: bool = True) -> "SystemModel":
        return cls(d["A"], d["B"], d["C"], d["Q"], d["R"], d["V"], require_pd_V=require_pd_V)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path, require_pd_V: bool = True) -> "SystemModel":
        return cls.from_dict(json.loads(Path(path).read_text()), require_pd_V=require_pd_V)


@dataclass(frozen=True)
class StepRecord:
    k: int
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    z: float


class RngStream:
    """Seeded counter-based random stream (numpy Philox4x64).

    Sub-streams are derived deterministically from the parent seed and a
    tuple of integer keys, so parallel trials draw from disjoint streams.
    """

    def __init__(self, seed: int, keys: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.keys = tuple(int(k) for k in keys)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.keys)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def derive(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.keys + tuple(keys))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def rademacher(self, size) -> np.ndarray:
        return self._gen.integers(0, 2, size=size).astype(float) * 2.0 - 1.0

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state


def step_dynamics(model: SystemModel, x, u, w) -> np.ndarray:
    x = _check_vec("x", x, model.n)
    u = _check_vec("u", u, model.m)
    w = _check_vec("w", w, model.n)
    return model.A @ x + model.B @ u + w


def linear_measurement(model: SystemModel, x, a, v) -> np.ndarray:
    x = _check_vec("x", x, model.n)
    a = _check_vec("a", a, model.p)
    v = _check_vec("v", v, model.p)
    return model.C @ x + a + v


def quadratic_measurement(model: SystemModel, x) -> float:
    x = _check_vec("x", x, model.n)
    return float(x @ model.V @ x)


def psd_sqrt_factor(cov) -> np.ndarray:
    """Lower-triangular L with L L' = cov.

    Symmetrizes, tries Cholesky, retries once with jitter 1e-12*trace/d*I.
    An all-zero covariance returns the zero factor.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    if not np.any(cov):
        return np.zeros((d, d))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * max(np.trace(cov), 0.0) / d
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise NumericError("covariance is not positive semidefinite") from exc


def sample_gaussian(rng: RngStream, cov) -> np.ndarray:
    L = psd_sqrt_factor(cov)
    return L @ rng.standard_normal(L.shape[0])
