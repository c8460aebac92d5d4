"""Planar two-agent pursuit-evasion game on double-integrator dynamics.

State layout (n = 8): [pA(2), vA(2), pB(2), vB(2)], A = evader, B = pursuer.
Input u = [uA(2), uB(2)]. The linear channel measures (pA, pB); the
quadratic channel measures ||pA - pB||^2 (+ eps_V ||x||^2).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .system import RngStream, SystemModel

PA, VA, PB, VB = slice(0, 2), slice(2, 4), slice(4, 6), slice(6, 8)


@dataclass(frozen=True)
class InitSpec:
    pA_mean: tuple = (0.0, 0.0)
    pA_std: float = 0.5
    pB_mean: tuple = (2.0, 2.0)
    pB_std: float = 1.5
    speedA_mean: float = 0.5
    speedA_std: float = 0.05
    speedB_mean: float = 0.2
    speedB_std: float = 0.05
    speed_floor: float = 0.1

    def __post_init__(self):
        for name in ("pA_std", "pB_std", "speedA_std", "speedB_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.speed_floor > 0:
            raise ValueError("speed_floor must be positive")


@dataclass(frozen=True)
class AttackSpec:
    onset: int = 10
    beta: float = 7.0

    def __post_init__(self):
        if self.onset < 0 or self.beta < 0:
            raise ValueError("attack onset and beta must be non-negative")


@dataclass(frozen=True)
class GameConfig:
    dt: float = 0.1
    horizon: int = 20
    noise_std: float = 0.005
    quad_noise: bool = True
    a_max: float = 3.0
    vmaxA: float = 1.5
    vmaxB: float = 2.5
    eps_V: float = 1e-6
    init: InitSpec = field(default_factory=InitSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if min(self.a_max, self.vmaxA, self.vmaxB) <= 0:
            raise ValueError("a_max, vmaxA and vmaxB must be positive")
        if self.noise_std < 0 or self.eps_V < 0:
            raise ValueError("noise_std and eps_V must be non-negative")

    @property
    def z_noise_std(self) -> float:
        return self.noise_std if self.quad_noise else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GameConfig":
        d = dict(d)
        init = InitSpec(**{k: tuple(v) if isinstance(v, list) else v
                           for k, v in d.pop("init", {}).items()})
        attack = AttackSpec(**d.pop("attack", {}))
        return cls(init=init, attack=attack, **d)


@dataclass
class PolicyMemory:
    """Last unit directions, reused when a direction degenerates."""

    pursuer_dir: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    evader_dir: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    attack_dir: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))


def _unit(v, fallback):
    nv = np.linalg.norm(v)
    if nv < 1e-9:
        return np.asarray(fallback, dtype=float).copy()
    return v / nv


def relative_distance_form() -> np.ndarray:
    """M with x'Mx = ||pA - pB||^2."""
    M = np.zeros((8, 8))
    I2 = np.eye(2)
    M[PA, PA] = I2
    M[PB, PB] = I2
    M[PA, PB] = -I2
    M[PB, PA] = -I2
    return M


def build_model(cfg: GameConfig) -> SystemModel:
    dt = cfg.dt
    I2 = np.eye(2)
    Ablk = np.block([[I2, dt * I2], [np.zeros((2, 2)), I2]])
    Bblk = np.vstack([0.5 * dt ** 2 * I2, dt * I2])
    A = np.zeros((8, 8))
    B = np.zeros((8, 4))
    A[0:4, 0:4] = Ablk
    A[4:8, 4:8] = Ablk
    B[0:4, 0:2] = Bblk
    B[4:8, 2:4] = Bblk
    C = np.zeros((4, 8))
    C[0:2, PA] = I2
    C[2:4, PB] = I2
    var = cfg.noise_std ** 2
    Q = var * np.eye(8)
    # the filter needs R > 0 even in noise-free runs
    R = max(var, 1e-12) * np.eye(4)
    V = relative_distance_form() + cfg.eps_V * np.eye(8)
    return SystemModel(A, B, C, Q, R, V, require_pd_V=cfg.eps_V > 0)


def sample_initial_state(cfg: GameConfig, rng: RngStream) -> np.ndarray:
    spec = cfg.init
    pA = np.asarray(spec.pA_mean, dtype=float) + spec.pA_std * rng.standard_normal(2)
    pB = np.asarray(spec.pB_mean, dtype=float) + spec.pB_std * rng.standard_normal(2)
    speedA = max(spec.speedA_mean + spec.speedA_std * rng.standard_normal(), spec.speed_floor)
    speedB = max(spec.speedB_mean + spec.speedB_std * rng.standard_normal(), spec.speed_floor)
    thA, thB = rng.uniform(0.0, 2.0 * np.pi, size=2)
    vA = speedA * np.array([np.cos(thA), np.sin(thA)])
    vB = speedB * np.array([np.cos(thB), np.sin(thB)])
    return np.concatenate([pA, vA, pB, vB])


def saturate(u, a_max: float) -> np.ndarray:
    if not a_max > 0:
        raise ValueError("a_max must be positive")
    return np.clip(np.asarray(u, dtype=float), -a_max, a_max)


def intercept_time(d, dv, r: float) -> float | None:
    """Smallest t > 0 with ||d + t dv||^2 = (0.1 r)^2, or None."""
    d = np.asarray(d, dtype=float)
    dv = np.asarray(dv, dtype=float)
    a = dv @ dv
    if np.sqrt(a) < 1e-12:
        return None
    b = 2.0 * (d @ dv)
    c = d @ d - 0.01 * r ** 2
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return None
    sq = np.sqrt(disc)
    roots = sorted(((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)))
    for t in roots:
        if t > 0:
            return float(t)
    return None


def pursuit_speed(r: float, vmaxB: float) -> float:
    return vmaxB if r > 2 else vmaxB * (0.5 + 0.25 * r)


def pursuer_policy(x_true, cfg: GameConfig, memory: PolicyMemory | None = None) -> np.ndarray:
    """Intercept-point pursuit with range-dependent speed (uses the true state)."""
    x = np.asarray(x_true, dtype=float)
    pA, vA, pB, vB = x[PA], x[VA], x[PB], x[VB]
    dt = cfg.dt
    p_pred = pA + vA * dt
    d = pA - pB
    r = float(np.linalg.norm(d))
    p_int = p_pred
    if np.linalg.norm(vA) > 0.1 and r > 0:
        t = intercept_time(d, vA - vB, r)
        if t is not None:
            p_int = pA + vA * t
    fallback = memory.pursuer_dir if memory is not None else (1.0, 0.0)
    direction = _unit(p_int - pB, fallback)
    if memory is not None:
        memory.pursuer_dir = direction
    match = 0.5 if r < 1 else 0.0
    v_des = pursuit_speed(r, cfg.vmaxB) * direction + match * vA
    return saturate((v_des - vB) / dt, cfg.a_max)


def evader_policy(xhat, cfg: GameConfig, memory: PolicyMemory | None = None) -> np.ndarray:
    """Escape from the predicted pursuer position (uses an estimate)."""
    x = np.asarray(xhat, dtype=float)
    pA, vA, pB, vB = x[PA], x[VA], x[PB], x[VB]
    pB_pred = pB + vB * cfg.dt
    e = pA - pB_pred
    r = float(np.linalg.norm(pA - pB))
    fallback = memory.evader_dir if memory is not None else (1.0, 0.0)
    direction = _unit(e, fallback)
    if memory is not None:
        memory.evader_dir = direction
    gamma = 0.2 if r > 2 else 0.0
    v_des = cfg.vmaxA * direction + gamma * vB
    return saturate((v_des - vA) / cfg.dt, cfg.a_max)


def attack_vector(x_true, spec: AttackSpec, k: int, memory: PolicyMemory | None = None) -> np.ndarray:
    """Relative-position bias on the pursuer's measured position from k >= onset."""
    a = np.zeros(4)
    if k < spec.onset or spec.beta == 0:
        return a
    x = np.asarray(x_true, dtype=float)
    fallback = memory.attack_dir if memory is not None else (1.0, 0.0)
    direction = _unit(x[PB] - x[PA], fallback)
    if memory is not None:
        memory.attack_dir = direction
    a[2:4] = spec.beta * direction
    return a
