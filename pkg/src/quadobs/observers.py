"""Linear Kalman filter on the attackable channel and the projection-
constrained EKF-style observer on the secure quadratic channel."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from . import feasible
from .feasible import InfeasibleProjectionError, ProjectionConfig, ProjectionStatus
from .system import NumericError, SystemModel

EIG_FLOOR = 1e-12
EIG_JITTER = 1e-10


def condition_covariance(P: np.ndarray) -> np.ndarray:
    """Symmetrize; add 1e-10*I if the smallest eigenvalue falls below 1e-12."""
    P = 0.5 * (P + P.T)
    if np.linalg.eigvalsh(P).min() < EIG_FLOOR:
        P = P + EIG_JITTER * np.eye(P.shape[0])
    return P


@dataclass(frozen=True)
class LinearObserverState:
    xhat: np.ndarray
    P: np.ndarray


def _predict(xhat, P, model: SystemModel, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (model.m,):
        raise ValueError(f"u has shape {u.shape}, expected ({model.m},)")
    A = model.A
    xp = A @ xhat + model.B @ u
    Pp = A @ P @ A.T + model.Q
    return xp, 0.5 * (Pp + Pp.T)


def kf_predict(s: LinearObserverState, model: SystemModel, u) -> LinearObserverState:
    xp, Pp = _predict(s.xhat, s.P, model, u)
    return LinearObserverState(xp, Pp)


def kalman_gain(P, model: SystemModel) -> np.ndarray:
    C = model.C
    S = C @ P @ C.T + model.R
    try:
        cho = sla.cho_factor(0.5 * (S + S.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError("innovation covariance is not positive definite") from exc
    # K = P C' S^-1  <=>  S K' = C P
    return sla.cho_solve(cho, C @ P).T


def kf_update(s: LinearObserverState, model: SystemModel, y) -> LinearObserverState:
    y = np.asarray(y, dtype=float)
    if y.shape != (model.p,):
        raise ValueError(f"y has shape {y.shape}, expected ({model.p},)")
    K = kalman_gain(s.P, model)
    xhat = s.xhat + K @ (y - model.C @ s.xhat)
    P = (np.eye(model.n) - K @ model.C) @ s.P
    if not (np.all(np.isfinite(xhat)) and np.all(np.isfinite(P))):
        raise NumericError("non-finite Kalman update")
    return LinearObserverState(xhat, condition_covariance(P))


# --- quadratic observer -----------------------------------------------------

@dataclass(frozen=True)
class HistoryEntry:
    anchor: np.ndarray
    Hrow: np.ndarray
    ztilde: float
    age: int = 0

    @classmethod
    def at(cls, model: SystemModel, anchor, z: float, age: int = 0) -> "HistoryEntry":
        anchor = np.asarray(anchor, dtype=float)
        return cls(anchor, qobs_jacobian(model, anchor), float(z - anchor @ model.V @ anchor), age)


@dataclass(frozen=True)
class QuadObserverConfig:
    """Tuning of the quadratic observer.

    ``L`` must be ||V||_2 for the model in use; ``for_model`` fills it in.
    """

    eta: float = 1e-6
    zeta: float = 0.0
    N: int = 3
    L: float = 1.0
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.zeta < 0:
            raise ValueError("zeta must be non-negative")
        if not 0 <= self.N:
            raise ValueError("N must be non-negative")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @classmethod
    def for_model(cls, model: SystemModel, **kwargs) -> "QuadObserverConfig":
        return cls(L=model.spectral_norm_V, **kwargs)

    @classmethod
    def for_noise(cls, model: SystemModel, z_noise_std: float, **kwargs) -> "QuadObserverConfig":
        """Defaults for a noisy quadratic channel: eta = max(1e-6, var),
        zeta = 3*std + 1e-9."""
        kwargs.setdefault("eta", max(1e-6, z_noise_std ** 2))
        kwargs.setdefault("zeta", 3.0 * z_noise_std + 1e-9 if z_noise_std > 0 else 0.0)
        return cls.for_model(model, **kwargs)


@dataclass(frozen=True)
class QuadObserverState:
    """Posterior of the quadratic observer plus the rolling constraint history.

    ``history`` and ``inputs`` are newest-first. The diagnostic fields describe
    the most recent step: the unprojected estimate, whether a projection moved
    it, the failure flag if the projection could not be certified, and the
    constraint set it was projected onto.
    """

    xhat: np.ndarray
    P: np.ndarray
    history: tuple = ()
    inputs: tuple = ()
    k: int = 0
    xtilde: np.ndarray | None = None
    projected: bool = False
    flag: str | None = None
    status: ProjectionStatus | None = None
    feasible_set: feasible.FeasibleSet | None = field(default=None, repr=False)


def qobs_init(model: SystemModel, x0, P0, z0: float | None = None) -> QuadObserverState:
    """Initial state at k = 0; ``z0`` seeds the history with the age-0 entry."""
    x0 = np.asarray(x0, dtype=float)
    history = () if z0 is None else (HistoryEntry.at(model, x0, z0),)
    return QuadObserverState(x0, condition_covariance(np.asarray(P0, dtype=float)), history)


def qobs_predict(s: QuadObserverState, model: SystemModel, u) -> QuadObserverState:
    xp, Pp = _predict(s.xhat, s.P, model, u)
    return replace(s, xhat=xp, P=Pp)


def qobs_jacobian(model: SystemModel, x) -> np.ndarray:
    """Row Jacobian of h(x) = x'Vx, i.e. (2 V x)'."""
    x = np.asarray(x, dtype=float)
    return 2.0 * (model.V @ x)


def qobs_ekf_correct(s_prior: QuadObserverState, model: SystemModel, z: float, eta: float):
    """EKF-style correction with the scalar quadratic measurement.

    Returns ``(xtilde, P_post, Hrow)``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    x, P = s_prior.xhat, s_prior.P
    H = qobs_jacobian(model, x)
    PH = P @ H
    denom = H @ PH + eta
    K = PH / denom
    xtilde = x + K * (z - x @ model.V @ x)
    P_post = P - np.outer(K, H @ P)
    P_post = 0.5 * (P_post + P_post.T)
    if not (np.isfinite(denom) and np.all(np.isfinite(xtilde)) and np.all(np.isfinite(P_post))):
        raise NumericError("non-finite quadratic-observer correction")
    return xtilde, P_post, H


def qobs_step(s: QuadObserverState, model: SystemModel, cfg: QuadObserverConfig,
              u_prev, z: float) -> QuadObserverState:
    """One full predict / correct / project cycle."""
    prior = qobs_predict(s, model, u_prev)
    xtilde, P_post, H = qobs_ekf_correct(prior, model, z, cfg.eta)
    P_post = condition_covariance(P_post)

    current = HistoryEntry(prior.xhat, H, float(z - prior.xhat @ model.V @ prior.xhat), 0)
    past = [replace(h, age=i + 1) for i, h in enumerate(s.history)]
    inputs = (np.asarray(u_prev, dtype=float),) + tuple(s.inputs)
    F = feasible.build([current] + past, model, cfg.zeta, cfg.L, cfg.N, inputs=inputs)

    flag = None
    try:
        x_post, status = feasible.project(F, xtilde, P_post, cfg.projection)
    except InfeasibleProjectionError as exc:
        x_post, status, flag = xtilde.copy(), exc.status, "projection-failed"

    newest = HistoryEntry.at(model, x_post, z)
    history = ((newest,) + tuple(s.history))[: cfg.N + 1]
    return QuadObserverState(
        xhat=x_post,
        P=P_post,
        history=history,
        inputs=inputs[: cfg.N],
        k=s.k + 1,
        xtilde=xtilde,
        projected=not status.already_feasible,
        flag=flag,
        status=status,
        feasible_set=F,
    )
