"""Consistency constraints from the secure quadratic channel and the
covariance-weighted projection onto them.

Each history entry i (age i, anchor ``a``, Jacobian row ``H = 2 a'V``,
residual ``zt = z - a'Va``) yields a pair of scalar constraints on the
current state x, evaluated through the backward map d = A^{-i} x - b_i - a:

    phi+ =  H d - zt - delta(d) <= 0
    phi- = -H d + zt - delta(d) <= 0,      delta(d) = zeta + L ||d||^2

``b_i`` carries the contribution of the known inputs applied between
k-i and k (it is zero for an autonomous system).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .system import ModelError, NumericError, SystemModel


class InfeasibleProjectionError(NumericError):
    """The penalty solver could not reach the feasibility tolerance."""

    def __init__(self, msg, x_best=None, status=None):
        super().__init__(msg)
        self.x_best = x_best
        self.status = status


@dataclass(frozen=True)
class ConstraintRecord:
    age: int
    Hrow: np.ndarray
    anchor: np.ndarray
    ztilde: float
    offset: np.ndarray | None = None


@dataclass(frozen=True)
class ProjectionConfig:
    tol_feas: float = 1e-8
    tol_step: float = 1e-10
    rho0: float = 1.0
    rho_growth: float = 10.0
    rho_max: float = 1e8
    max_outer: int = 9
    max_inner: int = 200
    cross_check: bool = True

    def __post_init__(self):
        for name in ("tol_feas", "tol_step", "rho0", "rho_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rho_growth <= 1:
            raise ValueError("rho_growth must exceed 1")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class ProjectionStatus:
    already_feasible: bool
    converged: bool
    outer_iters: int = 0
    inner_iters: int = 0
    restoration_iters: int = 0
    violation: float = 0.0
    rho: float = 0.0
    method: str = "penalty"


class FeasibleSet:
    """Immutable stack of constraint records for one time step."""

    def __init__(self, constraints: Sequence[ConstraintRecord], zeta: float, L: float,
                 Ainv_powers: Sequence[np.ndarray]):
        if zeta < 0:
            raise ValueError("zeta must be non-negative")
        ages = [c.age for c in constraints]
        if any(b <= a for a, b in zip(ages, ages[1:])):
            raise ValueError("constraint ages must be strictly increasing")
        self.constraints = tuple(constraints)
        self.zeta = float(zeta)
        self.L = float(L)
        self.Ainv_powers = tuple(np.asarray(G, dtype=float) for G in Ainv_powers)

        n = self.Ainv_powers[0].shape[0]
        self.n = n
        c = len(self.constraints)
        self._G = np.empty((c, n, n))
        self._H = np.empty((c, n))
        self._ref = np.empty((c, n))
        self._zt = np.empty(c)
        for j, rec in enumerate(self.constraints):
            self._G[j] = self.Ainv_powers[rec.age]
            self._H[j] = rec.Hrow
            off = np.zeros(n) if rec.offset is None else rec.offset
            self._ref[j] = rec.anchor + off
            self._zt[j] = rec.ztilde

    def __len__(self):
        return len(self.constraints)

    def _residuals(self, x):
        d = self._G @ x - self._ref          # (c, n)
        lin = np.einsum("ij,ij->i", self._H, d) - self._zt
        delta = self.zeta + self.L * np.einsum("ij,ij->i", d, d)
        return d, lin, delta

    def evaluate(self, x) -> np.ndarray:
        """Stacked constraint values [phi0+, phi0-, phi1+, phi1-, ...]."""
        x = np.asarray(x, dtype=float)
        _, lin, delta = self._residuals(x)
        out = np.empty(2 * len(lin))
        out[0::2] = lin - delta
        out[1::2] = -lin - delta
        return out

    def jacobian(self, x) -> np.ndarray:
        """Rows are the gradients of the stacked constraint values in x."""
        x = np.asarray(x, dtype=float)
        d, _, _ = self._residuals(x)
        curv = -2.0 * self.L * d
        J = np.empty((2 * len(d), self.n))
        GT = np.transpose(self._G, (0, 2, 1))
        J[0::2] = np.einsum("ijk,ik->ij", GT, self._H + curv)
        J[1::2] = np.einsum("ijk,ik->ij", GT, -self._H + curv)
        return J

    def max_violation(self, x) -> float:
        if not len(self):
            return 0.0
        return float(np.max(self.evaluate(x)))


def build(history, model: SystemModel, zeta: float, L: float, N: int,
          inputs=None) -> FeasibleSet:
    """Assemble F_k from newest-first history entries.

    ``history[i]`` is used as the age-i constraint for i = 0..min(N, len-1).
    ``inputs`` (newest first: u[k-1], u[k-2], ...) adds the known-input
    offset to the backward map; omitted means an autonomous system.
    """
    if not len(history):
        raise ValueError("history must be nonempty")
    if N < 0:
        raise ValueError("N must be non-negative")
    count = min(N + 1, len(history))
    n = model.n

    powers = [np.eye(n)]
    for _ in range(1, count):
        powers.append(model.solve_A(powers[-1]))
    for i, G in enumerate(powers):
        if not np.all(np.isfinite(G)):
            raise ModelError(f"A^-{i} is not finite")

    offsets = [np.zeros(n)]
    if inputs is not None:
        inputs = list(inputs)
        if len(inputs) < count - 1:
            raise ValueError("not enough inputs to map history entries back in time")
        for i in range(1, count):
            offsets.append(model.solve_A(offsets[-1] + model.B @ np.asarray(inputs[i - 1], dtype=float)))
    else:
        offsets.extend(np.zeros(n) for _ in range(1, count))

    records = []
    for i in range(count):
        h = history[i]
        records.append(ConstraintRecord(age=i, Hrow=np.asarray(h.Hrow, dtype=float),
                                        anchor=np.asarray(h.anchor, dtype=float),
                                        ztilde=float(h.ztilde), offset=offsets[i]))
    return FeasibleSet(records, zeta, L, powers)


def evaluate(F: FeasibleSet, x) -> np.ndarray:
    return F.evaluate(x)


def is_feasible(F: FeasibleSet, x, tol: float = 0.0) -> bool:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return F.max_violation(x) <= tol


def weighted_sq_norm(d, P) -> float:
    """||d||^2 in the P^{-1} metric, via a Cholesky solve."""
    d = np.asarray(d, dtype=float)
    c = sla.cho_factor(P, lower=True)
    return float(d @ sla.cho_solve(c, d))


def _restore(F, x, Lc, tol, max_iter=50, origin=None, band=None):
    """Gauss-Newton feasibility restoration in whitened coordinates.

    A pair |lin| <= delta is "moving" once its residual comes within a
    margin tau of the band edge; moving pairs are driven to the level
    sign(lin) * (delta - tau) while the other pairs are held at their current
    residual, so one violated pair is not traded for another. By default tau
    is a small multiple of ``tol`` (a minimal correction); ``band`` sets
    tau = band * delta instead, which pushes deeper inside and is more robust
    on thin overlapping bands. Steps are Levenberg-Marquardt damped and the
    total displacement is capped at the starting distance from ``origin``.
    Returns (x, iterations).
    """
    origin = x if origin is None else origin
    x0 = x
    budget = max(np.linalg.norm(sla.solve_triangular(Lc, x0 - origin, lower=True)), 1e-3)

    def sq_viol(y):
        return float(np.sum(np.maximum(F.evaluate(y), 0.0) ** 2))

    mu = 1e-12
    moved = np.zeros(Lc.shape[0])      # whitened displacement from x0
    base = sq_viol(x)
    stalls = 0
    it = 0
    for it in range(1, max_iter + 1):
        if F.max_violation(x) <= 0.1 * tol:
            return x, it - 1
        _, lin, delta = F._residuals(x)
        if band is None:
            tau = np.minimum(0.5 * delta, 10.0 * tol + 1e-6 * delta)
        else:
            tau = band * delta
        sgn = np.sign(lin)
        moving = np.abs(lin) > delta - tau
        J = F.jacobian(x)
        grad_lin = 0.5 * (J[0::2] - J[1::2])
        grad_delta = -0.5 * (J[0::2] + J[1::2])
        frac = 1.0 - tau / np.maximum(delta, 1e-300)
        R = (grad_lin - (moving * sgn * frac)[:, None] * grad_delta) @ Lc
        resid = np.where(moving, sgn * (delta - tau) - lin, 0.0)
        lam, U = np.linalg.eigh(R.T @ R)
        g = U.T @ (R.T @ resid)
        scale = max(lam.mean(), 1e-300)
        for _ in range(24):
            ds = U @ (g / (np.maximum(lam, 0.0) + mu * scale))
            x_new = x + Lc @ ds
            new = sq_viol(x_new)
            if np.linalg.norm(moved + ds) <= budget and new < base:
                mu = max(mu * 0.1, 1e-12)
                break
            mu *= 10.0
        else:
            return x, it
        stalls = stalls + 1 if new > 0.99 * base else 0
        x, moved, base = x_new, moved + ds, new
        if stalls >= 5:
            break
    return x, it


def _restore_any(F, x, Lc, tol, origin):
    """Minimal correction first, then the deeper half-band variant."""
    y, it = _restore(F, x, Lc, tol, origin=origin)
    if F.max_violation(y) <= tol:
        return y, it
    y2, it2 = _restore(F, x, Lc, tol, origin=origin, band=0.5)
    if F.max_violation(y2) < F.max_violation(y):
        return y2, it + it2
    return y, it + it2


def _sqp_fallback(F, xtilde, Lc, starts, tol, maxiter=100):
    """SLSQP on the whitened problem; best certified-feasible result or None.

    Only runs that SLSQP reports as converged are considered, so a point that
    merely wandered into the far, trivially feasible region is never kept.
    """
    best, best_val = None, np.inf
    cons = {"type": "ineq",
            "fun": lambda s: -F.evaluate(xtilde + Lc @ s),
            "jac": lambda s: -F.jacobian(xtilde + Lc @ s) @ Lc}
    for s0 in starts:
        res = minimize(lambda s: s @ s, s0, jac=lambda s: 2.0 * s, constraints=[cons],
                       method="SLSQP", options={"maxiter": maxiter, "ftol": 1e-14})
        if not res.success:
            continue
        x = xtilde + Lc @ res.x
        if F.max_violation(x) > tol:
            x, _ = _restore_any(F, x, Lc, tol, xtilde)
        if F.max_violation(x) <= tol:
            val = float(np.sum(np.linalg.solve(Lc, x - xtilde) ** 2))
            if val < best_val:
                best, best_val = x, val
    return best


def project(F: FeasibleSet, xtilde, P, cfg: ProjectionConfig | None = None):
    """Local P^{-1}-weighted projection of ``xtilde`` onto F.

    Works in whitened coordinates x = xtilde + Lc s (P = Lc Lc'), minimizing
    ||s||^2 under an exterior quadratic penalty with multiplier shifts
    (Powell-Hestenes-Rockafellar augmented Lagrangian). Each inner problem is
    solved by Gauss-Newton descent with Armijo backtracking, started from the
    previous iterate (the first from xtilde itself). The penalty weight grows
    by ``rho_growth`` whenever the violation fails to drop fourfold. A final
    minimum-norm restoration clears any residual violation. If that still
    leaves the point infeasible (thin, nonconvex constraint bands), SLSQP on
    the same whitened problem is tried from xtilde and from the best iterate.
    With ``cross_check`` (default) an SLSQP solve from xtilde is also run on
    success and the closer of the two feasible points is returned.

    Returns ``(x, status)``; raises InfeasibleProjectionError if feasibility
    cannot be certified at ``tol_feas``.
    """
    cfg = cfg or ProjectionConfig()
    xtilde = np.asarray(xtilde, dtype=float)
    if not len(F) or F.max_violation(xtilde) <= cfg.tol_feas:
        return xtilde.copy(), ProjectionStatus(already_feasible=True, converged=True,
                                               violation=F.max_violation(xtilde))
    try:
        Lc = np.linalg.cholesky(0.5 * (P + P.T))
    except np.linalg.LinAlgError as exc:
        raise NumericError("projection metric P is not positive definite") from exc

    n = F.n
    lam = np.zeros(2 * len(F))

    def merit(s):
        x = xtilde + Lc @ s
        phi = F.evaluate(x)
        shifted = np.maximum(lam + rho * phi, 0.0)
        return s @ s + (shifted @ shifted - lam @ lam) / (2.0 * rho), x, phi, shifted

    status = ProjectionStatus(already_feasible=False, converged=False)
    s = np.zeros(n)
    rho = cfg.rho0
    x = xtilde
    prev_viol = np.inf
    for outer in range(1, cfg.max_outer + 1):
        status.outer_iters = outer
        f, x, phi, shifted = merit(s)
        step_norm = np.inf
        for _ in range(cfg.max_inner):
            status.inner_iters += 1
            act = shifted > 0.0
            Js = F.jacobian(x)[act] @ Lc
            grad = 2.0 * s + Js.T @ shifted[act]
            hess = 2.0 * np.eye(n) + rho * (Js.T @ Js)
            direction = -np.linalg.solve(hess, grad)
            slope = grad @ direction
            if slope >= 0.0:
                direction, slope = -grad, -(grad @ grad)
            t = 1.0
            while True:
                f_new, x_new, phi_new, sh_new = merit(s + t * direction)
                if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                    break
                t *= 0.5
            step = t * direction
            s = s + step
            f, x, phi, shifted = f_new, x_new, phi_new, sh_new
            step_norm = float(np.linalg.norm(Lc @ step))
            if step_norm <= cfg.tol_step:
                break
        viol = max(float(phi.max()), 0.0)
        status.rho, status.violation = rho, viol
        if viol <= cfg.tol_feas and step_norm <= cfg.tol_step:
            status.converged = True
            break
        lam = shifted
        if viol > 0.25 * prev_viol:
            rho = min(rho * cfg.rho_growth, cfg.rho_max)
        prev_viol = viol

    if F.max_violation(x) > 0.1 * cfg.tol_feas:
        x, status.restoration_iters = _restore_any(F, x, Lc, cfg.tol_feas, xtilde)
    status.violation = F.max_violation(x)
    if status.violation > cfg.tol_feas:
        x_sqp = _sqp_fallback(F, xtilde, Lc, [np.zeros(n), np.linalg.solve(Lc, x - xtilde)],
                              cfg.tol_feas, maxiter=1000)
        if x_sqp is not None:
            x, status.method = x_sqp, "slsqp"
            status.violation = F.max_violation(x)
    elif cfg.cross_check:
        # the penalty path can drift into a distant basin of the nonconvex set;
        # keep whichever local solution started from xtilde lies closer
        x_sqp = _sqp_fallback(F, xtilde, Lc, [np.zeros(n)], cfg.tol_feas)
        if x_sqp is not None:
            wd = lambda y: float(np.sum(sla.solve_triangular(Lc, y - xtilde, lower=True) ** 2))
            if wd(x_sqp) < wd(x) * (1.0 - 1e-9):
                x, status.method = x_sqp, "slsqp"
                status.violation = F.max_violation(x)
    if status.violation > cfg.tol_feas:
        raise InfeasibleProjectionError(
            f"projection violation {status.violation:.3e} exceeds {cfg.tol_feas:.1e}",
            x_best=x, status=status)
    status.converged = True
    return x, status


@dataclass
class NondegeneracyReport:
    active: list = field(default_factory=list)      # (row, age, sign, value)
    gradients: list = field(default_factory=list)
    flagged: list = field(default_factory=list)     # rows with vanishing gradient
    min_singular_value: float | None = None

    def to_rows(self):
        rows = []
        for (row, age, sign, value), g in zip(self.active, self.gradients):
            rows.append({"row": row, "age": age, "sign": sign, "value": value,
                         "grad_norm": float(np.linalg.norm(g)),
                         "flagged": row in self.flagged})
        return rows


def check_nondegeneracy(F: FeasibleSet, x, tol_active: float = 1e-8) -> NondegeneracyReport:
    """List active constraints at x and flag vanishing gradients. Diagnostic only."""
    report = NondegeneracyReport()
    if not len(F):
        return report
    phi = F.evaluate(x)
    J = F.jacobian(x)
    rows = np.flatnonzero(np.abs(phi) <= tol_active)
    for row in rows:
        age = F.constraints[row // 2].age
        sign = "+" if row % 2 == 0 else "-"
        report.active.append((int(row), age, sign, float(phi[row])))
        report.gradients.append(J[row].copy())
        if np.linalg.norm(J[row]) < 1e-10:
            report.flagged.append(int(row))
    if len(rows):
        report.min_singular_value = float(np.linalg.svd(J[rows], compute_uv=False).min())
    return report
