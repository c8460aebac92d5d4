"""Wild-bootstrap MMD two-sample test between two observers' estimate windows."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .system import RngStream


@dataclass(frozen=True)
class KernelConfig:
    """RBF width; ``sigma=None`` selects the median heuristic on the pooled sample."""

    sigma: float | None = None

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class WildBootstrapConfig:
    B: int = 500
    alpha: float = 0.05
    multiplier: str = "rademacher"

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.multiplier not in ("rademacher", "gaussian"):
            raise ValueError(f"unknown multiplier law {self.multiplier!r}")


@dataclass(frozen=True)
class DetectionOutcome:
    statistic: float
    threshold: float
    reject: bool
    k: int
    sigma_used: float


def _window(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def rbf(x, y, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.exp(-(d @ d) / (2.0 * sigma ** 2)))


def rbf_matrix(X, Y, sigma: float) -> np.ndarray:
    return np.exp(-cdist(_window(X), _window(Y), "sqeuclidean") / (2.0 * sigma ** 2))


def median_heuristic(pooled) -> float:
    """Median of nonzero pairwise Euclidean distances; 1.0 if all vanish."""
    Z = _window(pooled)
    if Z.shape[0] < 2:
        raise ValueError("median heuristic needs at least two samples")
    d = pdist(Z)
    d = d[d > 0.0]
    if d.size == 0:
        return 1.0
    return float(np.median(d))


def mmd_squared(X, Y, sigma: float) -> float:
    """Biased (V-statistic) squared MMD with an RBF kernel."""
    X, Y = _window(X), _window(Y)
    k = X.shape[0]
    if k == 0 or Y.shape[0] != k:
        raise ValueError("windows must be nonempty and of equal length")
    total = (rbf_matrix(X, X, sigma).sum() + rbf_matrix(Y, Y, sigma).sum()
             - rbf_matrix(X, Y, sigma).sum() - rbf_matrix(Y, X, sigma).sum())
    return float(total / k ** 2)


def center_kernel(K) -> np.ndarray:
    """H K H with H = I - 11'/m."""
    K = np.asarray(K, dtype=float)
    Kc = K - K.mean(axis=0, keepdims=True)
    Kc = Kc - Kc.mean(axis=1, keepdims=True)
    return 0.5 * (Kc + Kc.T)


def _multipliers(rng: RngStream, cfg: WildBootstrapConfig, m: int) -> np.ndarray:
    if cfg.multiplier == "rademacher":
        return rng.rademacher((cfg.B, m))
    return rng.standard_normal((cfg.B, m))


def wild_bootstrap_null(Ktilde, cfg: WildBootstrapConfig, rng: RngStream,
                        multipliers=None) -> np.ndarray:
    """B replicates of (1/k^2) v' Kc v, with m = 2k multipliers per replicate.

    The 1/k^2 factor matches the observed statistic so the two are comparable.
    ``multipliers`` (B x 2k) overrides the random draws.
    """
    Ktilde = np.asarray(Ktilde, dtype=float)
    m = Ktilde.shape[0]
    k = m / 2.0
    V = _multipliers(rng, cfg, m) if multipliers is None else np.atleast_2d(multipliers)
    return np.einsum("bi,ij,bj->b", V, Ktilde, V) / k ** 2


def critical_value(stats: Sequence[float], alpha: float) -> float:
    """Ascending order statistic at rank ceil((1 - alpha) * B)."""
    s = np.sort(np.asarray(stats, dtype=float))
    B = s.size
    if B < 1:
        raise ValueError("need at least one replicate")
    # round first so (1 - 0.25) * 4 = 3 does not become ceil(3.0000000000000004)
    rank = math.ceil(round((1.0 - alpha) * B, 9))
    rank = min(max(rank, 1), B)
    return float(s[rank - 1])


def detect(X, Y, kcfg: KernelConfig, bcfg: WildBootstrapConfig, rng: RngStream,
           k: int = 0) -> DetectionOutcome:
    X, Y = _window(X), _window(Y)
    w = X.shape[0]
    if w == 0 or Y.shape != X.shape:
        raise ValueError("windows must be nonempty and of equal shape")
    Z = np.vstack([X, Y])
    sigma = kcfg.sigma if kcfg.sigma is not None else median_heuristic(Z)
    Kt = center_kernel(rbf_matrix(Z, Z, sigma))
    a = np.concatenate([np.ones(w), -np.ones(w)])
    stat = float(a @ Kt @ a) / w ** 2
    gamma = critical_value(wild_bootstrap_null(Kt, bcfg, rng), bcfg.alpha)
    return DetectionOutcome(stat, gamma, stat > gamma, k, sigma)


def online_detect(seriesL, seriesQ, W: int, kcfg: KernelConfig, bcfg: WildBootstrapConfig,
                  rng: RngStream, start_index: int = 0) -> list[DetectionOutcome]:
    """Sliding-window detection; outcome at k uses entries k-W+1 .. k.

    Each window draws its bootstrap multipliers from ``rng.derive(k)`` so the
    thresholds do not depend on evaluation order. ``start_index`` is the time
    index of the first series entry.
    """
    L, Q = _window(seriesL), _window(seriesQ)
    if L.shape != Q.shape:
        raise ValueError("series must have equal shape")
    if W < 2:
        raise ValueError("W must be at least 2")
    if W > L.shape[0]:
        raise ValueError("window longer than series")
    out = []
    for j in range(W - 1, L.shape[0]):
        k = start_index + j
        out.append(detect(L[j - W + 1:j + 1], Q[j - W + 1:j + 1], kcfg, bcfg, rng.derive(k), k=k))
    return out
