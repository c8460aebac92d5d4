"""Built-in numerical property suites.

Each suite returns a ``SuiteResult``; the CLI ``check`` command and the
acceptance tests share these so both exercise exactly the same code.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from . import feasible, mmd, observers as obs
from .feasible import ConstraintRecord, FeasibleSet, weighted_sq_norm
from .system import RngStream, SystemModel


@dataclass
class SuiteResult:
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.summary} ({self.seconds:.1f} s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --- random systems -----------------------------------------------------------

def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def random_dynamics(rng: np.random.Generator, n: int, smin=0.5, smax=1.2) -> np.ndarray:
    """A = U diag(s) W' with singular values s in [smin, smax] (so ||A||_2 <= smax).

    Bounding the singular values away from zero keeps A^-i well conditioned;
    plain Gaussian matrices are occasionally near singular.
    """
    return random_orthogonal(rng, n) @ np.diag(rng.uniform(smin, smax, n)) @ random_orthogonal(rng, n).T


def random_spd(rng: np.random.Generator, n: int, floor=0.1) -> np.ndarray:
    M = rng.standard_normal((n, n))
    return M @ M.T / n + floor * np.eye(n)


# --- noise-free observer runs ---------------------------------------------------

@dataclass
class NoiseFreeStats:
    trajectories: int = 0
    steps: int = 0
    feas_violations: int = 0
    feas_worst: float = -np.inf
    events: int = 0
    flags: int = 0
    bound_violations: int = 0
    bound_worst: float = -np.inf
    cross_violations: int = 0
    cross_worst: float = -np.inf


def noise_free_runs(n_traj: int = 500, seed: int = 0, perturb: float = 0.1, horizon: int = 20,
                    dims=(2, 4, 8), depths=(0, 1, 3), eta: float = 1e-6) -> NoiseFreeStats:
    """Noise-free runs (zeta = 0) that check the projection properties at every step.

    Trajectory j uses n = dims[j % 3] and N = depths[(j // 3) % 3]; the initial
    estimate is offset from the truth by a random vector of length ``perturb``.
    """
    base = RngStream(seed)
    st = NoiseFreeStats()
    for j in range(n_traj):
        rng = base.derive(j).generator
        n = dims[j % len(dims)]
        N = depths[(j // len(dims)) % len(depths)]
        A = random_dynamics(rng, n)
        V = random_spd(rng, n)
        model = SystemModel(A, np.zeros((n, 1)), np.eye(n), np.zeros((n, n)), np.eye(n), V)
        cfg = obs.QuadObserverConfig.for_model(model, eta=eta, zeta=0.0, N=N)
        x = rng.standard_normal(n)
        d = rng.standard_normal(n)
        d *= perturb / np.linalg.norm(d)
        s = obs.qobs_init(model, x + d, 0.01 * np.eye(n), x @ V @ x)
        u = np.zeros(1)
        st.trajectories += 1
        for _ in range(horizon):
            x = A @ x
            s = obs.qobs_step(s, model, cfg, u, float(x @ V @ x))
            st.steps += 1
            v1 = s.feasible_set.max_violation(x)
            st.feas_worst = max(st.feas_worst, v1)
            st.feas_violations += v1 > 1e-9
            if s.flag:
                st.flags += 1
                continue
            if not s.projected:
                continue
            st.events += 1
            P = s.P
            pre = weighted_sq_norm(x - s.xtilde, P)
            post = weighted_sq_norm(x - s.xhat, P)
            st.bound_worst = max(st.bound_worst, post - pre)
            st.bound_violations += post > pre + 1e-9
            e_t = s.xtilde - x
            e_o = s.xtilde - s.xhat
            Pinv_eo = sla.cho_solve(sla.cho_factor(P), e_o)
            gap = (e_o @ Pinv_eo) - (e_t @ Pinv_eo)
            st.cross_worst = max(st.cross_worst, gap)
            st.cross_violations += gap > 1e-8
    return st


@_timed
def feasibility_suite(n_traj: int = 500, seed: int = 0) -> SuiteResult:
    """True state inside F_k at every step (exact and perturbed initialization)."""
    exact = noise_free_runs(n_traj, seed, perturb=0.0)
    pert = noise_free_runs(n_traj, seed, perturb=0.1)
    bad = exact.feas_violations + pert.feas_violations
    worst = max(exact.feas_worst, pert.feas_worst)
    return SuiteResult(
        "True-state feasibility", bad == 0,
        f"{bad} violations in {exact.steps + pert.steps} steps, worst phi {worst:.2e}",
        {"exact": exact, "perturbed": pert})


@_timed
def error_bound_suite(n_traj: int = 500, seed: int = 0, stats: NoiseFreeStats | None = None) -> SuiteResult:
    """Weighted error after projection no larger than before, at every event."""
    st = stats or noise_free_runs(n_traj, seed, perturb=0.1)
    return SuiteResult(
        "Projection error bound", st.bound_violations == 0,
        f"{st.bound_violations} of {st.events} projection events violate "
        f"(worst excess {st.bound_worst:.3e}); {st.flags} flagged steps",
        {"stats": st})


@_timed
def cross_error_suite(n_traj: int = 500, seed: int = 0, stats: NoiseFreeStats | None = None) -> SuiteResult:
    st = stats or noise_free_runs(n_traj, seed, perturb=0.1)
    return SuiteResult(
        "Cross-error inequality", st.cross_violations == 0,
        f"{st.cross_violations} of {st.events} projection events violate "
        f"(worst gap {st.cross_worst:.3e})",
        {"stats": st})


# --- projection vs grid oracle ---------------------------------------------------

def random_projection_instance(rng: np.random.Generator):
    """One n = 2 single-constraint instance with an infeasible xtilde."""
    while True:
        anchor = rng.standard_normal(2)
        H = 2.0 * rng.standard_normal(2)
        zt = rng.standard_normal()
        zeta = rng.uniform(0.0, 0.5)
        L = rng.uniform(0.2, 2.0)
        R = random_orthogonal(rng, 2)
        P = R @ np.diag(rng.uniform(0.1, 1.0, 2)) @ R.T
        F = FeasibleSet([ConstraintRecord(0, H, anchor, zt)], zeta, L, [np.eye(2)])
        xt = anchor + rng.standard_normal(2)
        if F.max_violation(xt) > 1e-6:
            return F, xt, P


def grid_oracle(F: FeasibleSet, xtilde, P, bound: float, half_width: float = 5.0,
                step: float = 1e-3, chunk: int = 500):
    """Smallest weighted distance over feasible grid points of the box
    xtilde +- half_width (spacing ``step``).

    Grid points farther than ``bound`` in the weighted metric cannot undercut
    ``bound``, so only rows and columns that meet the ellipse of that radius
    are scanned; the answer below ``bound`` is the same as a full scan.
    Returns (best value, point) or (inf, None) when no such point exists.
    """
    m = int(round(half_width / step))
    offs = np.arange(-m, m + 1) * step
    reach = np.sqrt(max(bound, 0.0) * np.diag(P)) + step
    gx = offs[np.abs(offs) <= reach[0]]
    gy = offs[np.abs(offs) <= reach[1]]
    Pinv = np.linalg.inv(P)
    best, arg = np.inf, None
    for i in range(0, gx.size, chunk):
        dx = gx[i:i + chunk]
        D = np.stack(np.meshgrid(dx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
        w = np.einsum("ij,jk,ik->i", D, Pinv, D)
        keep = w <= bound
        if not keep.any():
            continue
        D, w = D[keep], w[keep]
        X = xtilde + D
        dd = X @ F._G[0].T - F._ref[0]
        lin = dd @ F._H[0] - F._zt[0]
        delta = F.zeta + F.L * np.einsum("ij,ij->i", dd, dd)
        ok = np.abs(lin) <= delta
        if ok.any():
            j = np.argmin(np.where(ok, w, np.inf))
            if w[j] < best:
                best, arg = float(w[j]), X[j]
    return best, arg


@_timed
def projection_oracle_suite(n_inst: int = 200, seed: int = 1) -> SuiteResult:
    rng = RngStream(seed).generator
    worse, infeasible, flagged = 0, 0, 0
    worst_gap = -np.inf
    for _ in range(n_inst):
        F, xt, P = random_projection_instance(rng)
        try:
            x, _ = feasible.project(F, xt, P)
        except feasible.InfeasibleProjectionError:
            flagged += 1
            continue
        if F.max_violation(x) > 1e-8:
            infeasible += 1
        val = weighted_sq_norm(x - xt, P)
        g, _ = grid_oracle(F, xt, P, bound=val + 0.02)
        gap = val - g
        worst_gap = max(worst_gap, gap)
        worse += gap > 1e-2
    ok = worse == 0 and infeasible == 0 and flagged == 0
    return SuiteResult("Projection vs grid oracle", ok,
                       f"{worse} worse than grid + 1e-2, {infeasible} infeasible, {flagged} "
                       f"failed of {n_inst} (worst gap {worst_gap:.2e})",
                       {"worse": worse, "infeasible": infeasible, "flagged": flagged})


# --- Kalman filter -----------------------------------------------------------------

def riccati_residual(P, model: SystemModel) -> float:
    A, C, Q, R = model.A, model.C, model.Q, model.R
    S = C @ P @ C.T + R
    rhs = A @ P @ A.T - A @ P @ C.T @ np.linalg.solve(S, C @ P @ A.T) + Q
    return float(np.max(np.abs(P - rhs)))


def random_detectable_system(rng: np.random.Generator, n=4, p=2, m=1) -> SystemModel:
    A = random_dynamics(rng, n, 0.3, 1.1)
    C = rng.standard_normal((p, n))
    G = rng.standard_normal((n, n))
    Q = G @ G.T / n + 0.1 * np.eye(n)
    R = rng.uniform(0.5, 2.0) * np.eye(p)
    return SystemModel(A, rng.standard_normal((n, m)), C, Q, R, np.eye(n))


@_timed
def kalman_suite(n_sys: int = 20, seed: int = 2, max_iter: int = 5000) -> SuiteResult:
    rng = RngStream(seed).generator
    worst, worst_dare = 0.0, 0.0
    for _ in range(n_sys):
        model = random_detectable_system(rng)
        s = obs.LinearObserverState(np.zeros(model.n), np.eye(model.n))
        u = np.zeros(model.m)
        y = np.zeros(model.p)
        Pp = None
        for _ in range(max_iter):
            pred = obs.kf_predict(s, model, u)
            if Pp is not None and np.max(np.abs(pred.P - Pp)) < 1e-15:
                break
            Pp = pred.P
            s = obs.kf_update(pred, model, y)
        worst = max(worst, riccati_residual(pred.P, model))
        X = sla.solve_discrete_are(model.A.T, model.C.T, model.Q, model.R)
        worst_dare = max(worst_dare, float(np.max(np.abs(X - pred.P))))
    ok = worst <= 1e-8 and worst_dare <= 1e-6
    return SuiteResult("Kalman Riccati fixed point", ok,
                       f"max residual {worst:.2e}, max gap to DARE solver {worst_dare:.2e}",
                       {"residual": worst, "dare_gap": worst_dare})


@_timed
def jacobian_suite(n_pairs: int = 100, seed: int = 3, h: float = 1e-5) -> SuiteResult:
    rng = RngStream(seed).generator
    worst = 0.0
    for _ in range(n_pairs):
        n = int(rng.integers(1, 9))
        V = random_spd(rng, n)
        model = SystemModel(np.eye(n), np.zeros((n, 1)), np.eye(n), np.zeros((n, n)), np.eye(n), V)
        x = rng.standard_normal(n)
        g = obs.qobs_jacobian(model, x)
        fd = np.array([((x + h * e) @ V @ (x + h * e) - (x - h * e) @ V @ (x - h * e)) / (2 * h)
                       for e in np.eye(n)])
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-300)))
    return SuiteResult("Jacobian finite differences", worst <= 1e-5,
                       f"worst relative error {worst:.2e}", {"worst": worst})


# --- MMD -----------------------------------------------------------------------------

def naive_mmd(X, Y, sigma: float) -> float:
    """Scalar double loop over the kernel definition."""
    k = len(X)
    total = 0.0
    for i in range(k):
        for j in range(k):
            total += (mmd.rbf(X[i], X[j], sigma) + mmd.rbf(Y[i], Y[j], sigma)
                      - 2.0 * mmd.rbf(X[i], Y[j], sigma))
    return total / k ** 2


@_timed
def mmd_oracle_suite(n_pairs: int = 50, seed: int = 4) -> SuiteResult:
    rng = RngStream(seed)
    g = rng.generator
    e_naive = e_center = e_ident = 0.0
    for j in range(n_pairs):
        k = int(g.integers(2, 21))
        d = int(g.integers(1, 9))
        X = g.standard_normal((k, d))
        Y = g.standard_normal((k, d)) + g.uniform(0, 2)
        sigma = mmd.median_heuristic(np.vstack([X, Y]))
        fast = mmd.mmd_squared(X, Y, sigma)
        e_naive = max(e_naive, abs(fast - naive_mmd(X, Y, sigma)))
        Kt = mmd.center_kernel(mmd.rbf_matrix(np.vstack([X, Y]), np.vstack([X, Y]), sigma))
        e_center = max(e_center, float(np.abs(Kt.sum(axis=0)).max()), float(np.abs(Kt.sum(axis=1)).max()))
        out = mmd.detect(X, Y, mmd.KernelConfig(sigma), mmd.WildBootstrapConfig(B=10), rng.derive(j))
        e_ident = max(e_ident, abs(out.statistic - fast))
    ok = e_naive <= 1e-12 and e_center <= 1e-10 and e_ident <= 1e-10
    return SuiteResult("MMD oracle equivalence", ok,
                       f"naive {e_naive:.1e}, centering {e_center:.1e}, identity {e_ident:.1e}",
                       {"naive": e_naive, "centering": e_center, "identity": e_ident})


@_timed
def h0_iid_suite(reps: int = 1000, k: int = 10, d: int = 2, B: int = 500, alpha: float = 0.05,
                 seed: int = 5) -> SuiteResult:
    """Rejection rate when both windows come from the same Gaussian."""
    rng = RngStream(seed)
    bcfg = mmd.WildBootstrapConfig(B=B, alpha=alpha)
    rej = 0
    for r in range(reps):
        sub = rng.derive(r)
        Z = sub.standard_normal((2 * k, d))
        rej += mmd.detect(Z[:k], Z[k:], mmd.KernelConfig(), bcfg, sub.derive(0)).reject
    rate = rej / reps
    return SuiteResult("H0 calibration (i.i.d.)", 0.02 <= rate <= 0.09,
                       f"rejection rate {rate:.3f} over {reps} repetitions", {"rate": rate})


@_timed
def h0_closed_loop_suite(M: int = 200, seed: int = 6, limit: float = 0.12) -> SuiteResult:
    """Per-step rejection rate of the online detector in attack-free runs."""
    from .harness import ExperimentConfig, run_experiment, with_overrides
    cfg = with_overrides(ExperimentConfig(M=M, master_seed=seed), no_attack=True)
    report, _ = run_experiment(cfg)
    rates = report.detection_rate[np.isfinite(report.detection_rate)]
    worst = float(rates.max()) if rates.size else 0.0
    return SuiteResult("H0 calibration (closed loop, no attack)", worst <= limit,
                       f"max per-step rejection rate {worst:.3f} over {M} trials",
                       {"rates": report.detection_rate.tolist(), "worst": worst})


SUITES = {
    "feasibility": feasibility_suite,
    "error_bound": error_bound_suite,
    "cross_error": cross_error_suite,
    "projection": projection_oracle_suite,
    "kalman": kalman_suite,
    "jacobian": jacobian_suite,
    "mmd": mmd_oracle_suite,
    "h0": h0_iid_suite,
    "h0_closed_loop": h0_closed_loop_suite,
}


def run_all(names=None, seed: int = 0, report=print) -> list[SuiteResult]:
    """Run the named suites (all by default); error-bound and cross-error suites
    share one batch of perturbed runs."""
    names = list(SUITES) if names is None else list(names)
    results = []
    shared = None
    for name in names:
        if name in ("error_bound", "cross_error"):
            spent = 0.0
            if shared is None:
                t0 = time.perf_counter()
                shared = noise_free_runs(500, seed, perturb=0.1)
                spent = time.perf_counter() - t0
            res = SUITES[name](stats=shared)
            res.seconds += spent
        elif name in ("feasibility", "error_bound", "cross_error"):
            res = SUITES[name](seed=seed)
        else:
            res = SUITES[name]()
        results.append(res)
        if report is not None:
            report(res.line())
    return results
