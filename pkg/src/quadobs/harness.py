"""Closed-loop Monte Carlo harness for the pursuit-evasion experiment."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mmd, observers as obs, pursuit
from .feasible import ProjectionConfig
from .system import (NumericError, RngStream, linear_measurement, quadratic_measurement,
                     sample_gaussian, step_dynamics)

CONTROL_ESTIMATORS = ("linear", "quadratic", "truth")


class TrialError(NumericError):
    def __init__(self, trial: int, cause: Exception):
        super().__init__(f"trial {trial}: {cause}")
        self.trial = trial
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one Monte Carlo experiment.

    ``eta`` and ``zeta`` left as None are derived from the quadratic-channel
    noise level (see ``QuadObserverConfig.for_noise``).
    """

    game: pursuit.GameConfig = field(default_factory=pursuit.GameConfig)
    N: int = 3
    eta: float | None = None
    zeta: float | None = None
    P0_scale: float = 0.01
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    M: int = 100
    master_seed: int = 0
    control_estimator: str = "linear"
    sigma: float | None = None
    B: int = 500
    alpha: float = 0.05
    W: int = 10
    output_dir: str = "out"

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not 2 <= self.W <= self.game.horizon:
            raise ValueError("W must satisfy 2 <= W <= horizon")
        if self.control_estimator not in CONTROL_ESTIMATORS:
            raise ValueError(f"control_estimator must be one of {CONTROL_ESTIMATORS}")
        if not self.P0_scale > 0:
            raise ValueError("P0_scale must be positive")
        # validate detector settings early
        self.kernel_config
        self.bootstrap_config

    @property
    def kernel_config(self) -> mmd.KernelConfig:
        return mmd.KernelConfig(self.sigma)

    @property
    def bootstrap_config(self) -> mmd.WildBootstrapConfig:
        return mmd.WildBootstrapConfig(self.B, self.alpha)

    def quad_config(self, model) -> obs.QuadObserverConfig:
        kw = {"N": self.N, "projection": self.projection}
        if self.eta is not None:
            kw["eta"] = self.eta
        if self.zeta is not None:
            kw["zeta"] = self.zeta
        return obs.QuadObserverConfig.for_noise(model, self.game.z_noise_std, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        game = pursuit.GameConfig.from_dict(d.pop("game", {}))
        proj = ProjectionConfig(**d.pop("projection", {}))
        return cls(game=game, projection=proj, **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class RunLog:
    """One trial. States, measurements and estimates are indexed k = 0..H;
    inputs k = 0..H-1 (u[k] drives the step from k to k+1)."""

    trial: int
    seed: int
    x_true: np.ndarray
    u: np.ndarray
    y: np.ndarray
    a: np.ndarray
    z: np.ndarray
    xhat_L: np.ndarray
    xhat_Q: np.ndarray
    xtilde_Q: np.ndarray
    projected: np.ndarray
    flags: list
    detections: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.u.shape[0]

    @property
    def projection_failures(self) -> int:
        return sum(1 for f in self.flags if f)


def trial_stream(cfg: ExperimentConfig, trial_index: int) -> RngStream:
    return RngStream(cfg.master_seed, (trial_index,))


def _estimate_for_control(mode, x, sL, sQ):
    if mode == "truth":
        return x
    return sL.xhat if mode == "linear" else sQ.xhat


def run_trial(cfg: ExperimentConfig, trial_index: int, detect: bool = True) -> RunLog:
    try:
        return _run_trial(cfg, trial_index, detect)
    except NumericError as exc:
        if isinstance(exc, TrialError):
            raise
        raise TrialError(trial_index, exc) from exc


def _run_trial(cfg: ExperimentConfig, trial_index: int, detect: bool) -> RunLog:
    g = cfg.game
    model = pursuit.build_model(g)
    qcfg = cfg.quad_config(model)
    rng = trial_stream(cfg, trial_index)
    r_init, r_noise, r_det = rng.derive(0), rng.derive(1), rng.derive(2)
    H, n, p = g.horizon, model.n, model.p
    zstd = g.z_noise_std
    Rtrue = g.noise_std ** 2 * np.eye(p)

    x_true = np.zeros((H + 1, n))
    u_log = np.zeros((H, model.m))
    y_log = np.zeros((H + 1, p))
    a_log = np.zeros((H + 1, p))
    z_log = np.zeros(H + 1)
    xL = np.zeros((H + 1, n))
    xQ = np.zeros((H + 1, n))
    xtQ = np.full((H + 1, n), np.nan)
    projected = np.zeros(H + 1, dtype=bool)
    flags = [""] * (H + 1)

    mem = pursuit.PolicyMemory()

    def measure(x, k):
        a = pursuit.attack_vector(x, g.attack, k, mem)
        y = linear_measurement(model, x, a, sample_gaussian(r_noise, Rtrue))
        z = quadratic_measurement(model, x) + zstd * r_noise.standard_normal()
        return a, y, z

    x = pursuit.sample_initial_state(g, r_init)
    a_log[0], y_log[0], z_log[0] = measure(x, 0)
    P0 = cfg.P0_scale * np.eye(n)
    sL = obs.LinearObserverState(x.copy(), P0.copy())
    sQ = obs.qobs_init(model, x, P0, z_log[0])
    x_true[0], xL[0], xQ[0] = x, sL.xhat, sQ.xhat

    for k in range(H):
        uB = pursuit.pursuer_policy(x, g, mem)
        uA = pursuit.evader_policy(_estimate_for_control(cfg.control_estimator, x, sL, sQ), g, mem)
        u = np.concatenate([uA, uB])
        x = step_dynamics(model, x, u, sample_gaussian(r_noise, model.Q))
        a, y, z = measure(x, k + 1)

        sL = obs.kf_update(obs.kf_predict(sL, model, u), model, y)
        sQ = obs.qobs_step(sQ, model, qcfg, u, z)

        u_log[k] = u
        x_true[k + 1], a_log[k + 1], y_log[k + 1], z_log[k + 1] = x, a, y, z
        xL[k + 1], xQ[k + 1], xtQ[k + 1] = sL.xhat, sQ.xhat, sQ.xtilde
        projected[k + 1] = sQ.projected
        flags[k + 1] = sQ.flag or ""

    log = RunLog(trial_index, cfg.master_seed, x_true, u_log, y_log, a_log, z_log,
                 xL, xQ, xtQ, projected, flags)
    if detect:
        log.detections = mmd.online_detect(xL, xQ, cfg.W, cfg.kernel_config,
                                           cfg.bootstrap_config, r_det, start_index=0)
    return log


def mse_series(log: RunLog) -> tuple[np.ndarray, np.ndarray]:
    """Per-step full-state squared error of the linear and quadratic observers."""
    eL = log.x_true - log.xhat_L
    eQ = log.x_true - log.xhat_Q
    return np.einsum("ki,ki->k", eL, eL), np.einsum("ki,ki->k", eQ, eQ)


def mean_se(values) -> tuple[np.ndarray, np.ndarray]:
    """Column mean and standard error (sample std / sqrt(M)); SE = 0 when M = 1."""
    V = np.atleast_2d(np.asarray(values, dtype=float))
    M = V.shape[0]
    mean = V.mean(axis=0)
    if M == 1:
        return mean, np.zeros_like(mean)
    return mean, V.std(axis=0, ddof=1) / np.sqrt(M)


@dataclass
class AggregateReport:
    k: np.ndarray
    mse_L_mean: np.ndarray
    mse_L_se: np.ndarray
    mse_Q_mean: np.ndarray
    mse_Q_se: np.ndarray
    mmd_mean: np.ndarray
    mmd_se: np.ndarray
    thr_mean: np.ndarray
    thr_se: np.ndarray
    detection_rate: np.ndarray
    metadata: dict = field(default_factory=dict)
    onset: int | None = None

    COLUMNS = ("k", "mse_linear_mean", "mse_linear_se", "mse_quadratic_mean",
               "mse_quadratic_se", "mmd_mean", "mmd_se", "threshold_mean",
               "threshold_se", "detection_rate")

    def rows(self):
        cols = (self.k, self.mse_L_mean, self.mse_L_se, self.mse_Q_mean, self.mse_Q_se,
                self.mmd_mean, self.mmd_se, self.thr_mean, self.thr_se, self.detection_rate)
        return [tuple(c[i] for c in cols) for i in range(len(self.k))]

    @classmethod
    def empty(cls) -> "AggregateReport":
        e = np.zeros(0)
        return cls(np.zeros(0, dtype=int), *([e] * 9))


def detection_matrix(logs, H: int):
    """(M, H+1) arrays of statistic, threshold, reject; NaN where no outcome."""
    M = len(logs)
    stat = np.full((M, H + 1), np.nan)
    thr = np.full((M, H + 1), np.nan)
    rej = np.full((M, H + 1), np.nan)
    for i, log in enumerate(logs):
        for d in log.detections:
            stat[i, d.k], thr[i, d.k], rej[i, d.k] = d.statistic, d.threshold, float(d.reject)
    return stat, thr, rej


def aggregate(logs, cfg: ExperimentConfig | None = None) -> AggregateReport:
    if not logs:
        return AggregateReport.empty()
    H = logs[0].horizon
    mL, mQ = zip(*(mse_series(l) for l in logs))
    mLm, mLs = mean_se(np.array(mL))
    mQm, mQs = mean_se(np.array(mQ))
    stat, thr, rej = detection_matrix(logs, H)
    has = ~np.isnan(stat[0])
    sm, ss = np.full(H + 1, np.nan), np.full(H + 1, np.nan)
    tm, ts = np.full(H + 1, np.nan), np.full(H + 1, np.nan)
    rate = np.full(H + 1, np.nan)
    if has.any():
        sm[has], ss[has] = mean_se(stat[:, has])
        tm[has], ts[has] = mean_se(thr[:, has])
        rate[has] = rej[:, has].mean(axis=0)
    meta = {
        "trials": len(logs),
        "trial_indices": [l.trial for l in logs],
        "projection_failures": int(sum(l.projection_failures for l in logs)),
        "projection_events": int(sum(int(l.projected.sum()) for l in logs)),
    }
    if cfg is not None:
        meta.update(config_sha256=cfg.digest(), master_seed=cfg.master_seed)
    onset = cfg.game.attack.onset if cfg is not None and cfg.game.attack.beta > 0 else None
    return AggregateReport(np.arange(H + 1), mLm, mLs, mQm, mQs, sm, ss, tm, ts, rate, meta, onset)


def run_experiment(cfg: ExperimentConfig, progress=None) -> tuple[AggregateReport, list[RunLog]]:
    """Run ``cfg.M`` trials in index order and aggregate.

    Trials use independent sub-streams, so the aggregate does not depend on
    the order in which they are executed.
    """
    logs = []
    for i in range(cfg.M):
        logs.append(run_trial(cfg, i))
        if progress is not None:
            progress(i)
    return aggregate(logs, cfg), logs


# --- CSV ---------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if np.isnan(v):
        return "nan"
    return f"{v:.16e}"


def _write(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def log_columns(n: int = 8, m: int = 4, p: int = 4) -> list[str]:
    cols = ["k"]
    cols += [f"x{i}" for i in range(n)]
    cols += [f"u{i}" for i in range(m)]
    cols += [f"y{i}" for i in range(p)]
    cols += [f"a{i}" for i in range(p)]
    cols += ["z"]
    cols += [f"xhatL{i}" for i in range(n)]
    cols += [f"xhatQ{i}" for i in range(n)]
    cols += [f"xtildeQ{i}" for i in range(n)]
    cols += ["projected", "flag"]
    return cols


DETECTION_COLUMNS = ("k", "statistic", "threshold", "reject", "sigma_used")


def export_log_csv(log: RunLog, path) -> None:
    n, m, p = log.x_true.shape[1], log.u.shape[1], log.y.shape[1]
    rows = []
    for k in range(log.x_true.shape[0]):
        u = log.u[k] if k < log.horizon else np.full(m, np.nan)
        rows.append([k, *log.x_true[k], *u, *log.y[k], *log.a[k], log.z[k], *log.xhat_L[k],
                     *log.xhat_Q[k], *log.xtilde_Q[k], bool(log.projected[k]), log.flags[k]])
    _write(path, log_columns(n, m, p), rows)


def export_detections_csv(outcomes, path) -> None:
    _write(path, DETECTION_COLUMNS,
           [(d.k, d.statistic, d.threshold, bool(d.reject), d.sigma_used) for d in outcomes])


def export_report_csv(report: AggregateReport, path) -> None:
    _write(path, AggregateReport.COLUMNS, report.rows())


def export_csv(obj, path) -> list[Path]:
    """Write a RunLog (trajectory + detections) or an AggregateReport.

    ``path`` is a directory; returns the files written.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(obj, RunLog):
        files = [out / f"trial_{obj.trial:04d}.csv", out / f"trial_{obj.trial:04d}_detections.csv"]
        export_log_csv(obj, files[0])
        export_detections_csv(obj.detections, files[1])
        return files
    if isinstance(obj, AggregateReport):
        files = [out / "aggregate.csv", out / "metadata.json"]
        export_report_csv(obj, files[0])
        files[1].write_text(json.dumps(obj.metadata, indent=2, sort_keys=True) + "\n")
        return files
    raise TypeError(f"cannot export {type(obj).__name__}")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Numeric read-back; non-numeric cells become NaN."""
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = []
        for row in r:
            vals = []
            for c in row:
                try:
                    vals.append(float(c))
                except ValueError:
                    vals.append(np.nan)
            rows.append(vals)
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def load_estimates(path) -> tuple[np.ndarray, np.ndarray]:
    """Linear and quadratic estimate series from an exported trial CSV."""
    header, data = read_csv(path)
    iL = [i for i, h in enumerate(header) if h.startswith("xhatL")]
    iQ = [i for i, h in enumerate(header) if h.startswith("xhatQ")]
    if not iL or len(iL) != len(iQ):
        raise ValueError(f"{path} has no estimate columns")
    return data[:, iL], data[:, iQ]


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Apply CLI-style overrides (seed, trials, beta, attack_step, ...)."""
    game = cfg.game
    attack = game.attack
    if kw.get("beta") is not None:
        attack = replace(attack, beta=kw["beta"])
    if kw.get("attack_step") is not None:
        attack = replace(attack, onset=kw["attack_step"])
    if kw.get("no_attack"):
        attack = replace(attack, beta=0.0)
    game = replace(game, attack=attack)
    top = {"game": game}
    for key, field_name in (("seed", "master_seed"), ("trials", "M"),
                            ("control_estimator", "control_estimator"), ("out", "output_dir")):
        if kw.get(key) is not None:
            top[field_name] = kw[key]
    return replace(cfg, **top)
