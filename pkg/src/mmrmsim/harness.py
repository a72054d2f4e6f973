"""Seeded Monte Carlo engine for power and type-I-error studies.

Every replication is a pure function of ``(config, rep_index)``, so results
do not depend on how replications are spread across worker processes.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .dgp import (DEFAULT_BS, DEFAULT_DELTAS, DEFAULT_RHOS, DropoutKind,
                  ScenarioConfig, derive_seed, simulate_full_trial,
                  simulate_trial)
from .estimators import ModelSpec, fit, wald_test
from .exceptions import EstimationError, InvalidSe, NotConverged
from .trial_data import Variant

log = logging.getLogger(__name__)

ESTIMATORS = (Variant.ANCOVA, Variant.MMRM, Variant.MMRM_INTERACT)

RESULT_COLUMNS = ["delta", "rho", "b", "n", "n_reps", "estimator", "rejection_rate",
                  "mc_se", "mean_tau", "sd_tau", "mean_se", "n_fail"]
REPLICATION_COLUMNS = ["scenario", "rep", "estimator", "tau_hat", "se", "p_value",
                       "reject", "converged", "failed", "n_used"]


@dataclass(frozen=True)
class EstimateRecord:
    tau_hat: float = math.nan
    se: float = math.nan
    p_value: float = math.nan
    reject: bool = False
    converged: bool = False
    n_used: int = 0
    failed: bool = True
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.converged and not self.failed


@dataclass(frozen=True)
class ReplicationRecord:
    scenario_id: int
    rep_index: int
    estimates: dict  # Variant -> EstimateRecord


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: Variant
    rejection_rate: float
    mc_se: float
    n_ok: int
    n_reject: int
    mean_tau: float
    sd_tau: float
    mean_se: float
    n_fail: int


@dataclass(frozen=True)
class ScenarioResult:
    config: ScenarioConfig
    summaries: dict  # Variant -> EstimatorSummary
    records: list = field(default_factory=list, repr=False)

    def __getitem__(self, estimator) -> EstimatorSummary:
        return self.summaries[Variant.parse(estimator)]


def replication_seed(cfg: ScenarioConfig, rep_index: int) -> int:
    return derive_seed(cfg.seed, rep_index)


def _fit_one(ds, variant, alpha_level, se_kind):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConverged)
            res = fit(ds, ModelSpec(variant, se_kind=se_kind))
        z, p, reject = wald_test(res.tau_J, res.se_tau_J, alpha_level)
    except (EstimationError, InvalidSe, np.linalg.LinAlgError) as exc:
        return EstimateRecord(error=type(exc).__name__)
    return EstimateRecord(res.tau_J, res.se_tau_J, p, bool(reject), res.converged,
                          res.n_used, failed=False)


def run_replication(cfg: ScenarioConfig, rep_index: int, scenario_id: int = 0,
                    se_kind: str = "model") -> ReplicationRecord:
    """Simulate one trial and fit all three estimators to it.

    Estimator failures are recorded in the returned record, never raised.
    """
    ds = simulate_trial(cfg, replication_seed(cfg, rep_index))
    est = {v: _fit_one(ds, v, cfg.alpha_level, se_kind) for v in ESTIMATORS}
    return ReplicationRecord(scenario_id, rep_index, est)


def full_outcomes(cfg: ScenarioConfig, rep_index: int) -> np.ndarray:
    """Complete outcome draws of a replication, before any dropout."""
    return simulate_full_trial(cfg, replication_seed(cfg, rep_index)).outcomes


def summarize(cfg: ScenarioConfig, records) -> ScenarioResult:
    """Fold replication records into per-estimator summaries.

    Failed or non-converged fits are left out of every statistic and
    counted in ``n_fail``.
    """
    summaries = {}
    for v in ESTIMATORS:
        ok = [r.estimates[v] for r in records if r.estimates[v].ok]
        n_ok = len(ok)
        n_reject = sum(e.reject for e in ok)
        rate = n_reject / n_ok if n_ok else math.nan
        mc_se = math.sqrt(rate * (1.0 - rate) / n_ok) if n_ok else math.nan
        taus = np.array([e.tau_hat for e in ok])
        ses = np.array([e.se for e in ok])
        summaries[v] = EstimatorSummary(
            estimator=v, rejection_rate=rate, mc_se=mc_se, n_ok=n_ok, n_reject=n_reject,
            mean_tau=float(taus.mean()) if n_ok else math.nan,
            sd_tau=float(taus.std(ddof=1)) if n_ok > 1 else math.nan,
            mean_se=float(ses.mean()) if n_ok else math.nan,
            n_fail=len(records) - n_ok,
        )
    return ScenarioResult(cfg, summaries, list(records))


def _run_chunk(args):
    cfg, scenario_id, start, stop, se_kind = args
    with threadpool_limits(1):
        return [run_replication(cfg, r, scenario_id, se_kind) for r in range(start, stop)]


def run_scenario(cfg: ScenarioConfig, se_kind: str = "model") -> ScenarioResult:
    return run_grid([cfg], workers=1, se_kind=se_kind)[0]


def run_grid(grid, workers: int = 1, base_seed: int | None = None, *,
             se_kind: str = "model", chunk_size: int = 100) -> list[ScenarioResult]:
    """Run every scenario of ``grid``; results come back in input order.

    With ``base_seed`` set, scenario ``i`` is reseeded with
    ``derive_seed(base_seed, i)``; otherwise each scenario keeps its own seed.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid is empty")
    if base_seed is not None:
        grid = [cfg.replace(seed=derive_seed(base_seed, i)) for i, cfg in enumerate(grid)]
    tasks = [(cfg, i, start, min(start + chunk_size, cfg.n_reps), se_kind)
             for i, cfg in enumerate(grid)
             for start in range(0, cfg.n_reps, chunk_size)]
    if workers <= 1:
        chunks = map(_run_chunk, tasks)
        collected = _collect(grid, tasks, chunks)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            collected = _collect(grid, tasks, pool.map(_run_chunk, tasks))
    return [summarize(cfg, recs) for cfg, recs in zip(grid, collected)]


def _collect(grid, tasks, chunks):
    collected = [[] for _ in grid]
    for (cfg, i, *_), recs in zip(tasks, chunks):
        collected[i].extend(recs)
        if len(collected[i]) == cfg.n_reps:
            log.info("scenario %d/%d done", i + 1, len(grid))
    return collected


# -- study grids --------------------------------------------------------------

def power_grid(n_reps: int = 1000, seed: int = 0, **overrides) -> list[ScenarioConfig]:
    """Power grid: MCAR dropout, treatment effect 1/3 at every time."""
    base = ScenarioConfig(n_reps=n_reps, seed=seed, dropout_kind=DropoutKind.MCAR, **overrides)
    return [base.replace(delta=d, rho=r, b=b)
            for b in DEFAULT_BS for r in DEFAULT_RHOS for d in DEFAULT_DELTAS]


ERROR_DELTAS = (0.3,)


def error_grid(n_reps: int = 1000, seed: int = 0, deltas=ERROR_DELTAS,
               **overrides) -> list[ScenarioConfig]:
    """Type-I-error grid: MAR dropout, no treatment effect."""
    base = ScenarioConfig(n_reps=n_reps, seed=seed, dropout_kind=DropoutKind.MAR,
                          tau=0.0, delta=deltas[0], **overrides)
    return [base.replace(delta=d, rho=r, b=b)
            for b in DEFAULT_BS for r in DEFAULT_RHOS for d in deltas]


# -- CSV ----------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def results_rows(results) -> list[list[str]]:
    rows = []
    for res in results:
        c = res.config
        for v in ESTIMATORS:
            s = res.summaries[v]
            rows.append([_fmt(c.delta), _fmt(c.rho), _fmt(c.b), _fmt(c.n), _fmt(c.n_reps),
                         v.value, _fmt(s.rejection_rate), _fmt(s.mc_se), _fmt(s.mean_tau),
                         _fmt(s.sd_tau), _fmt(s.mean_se), _fmt(s.n_fail)])
    return rows


def results_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    w.writerows(results_rows(results))
    return buf.getvalue()


def replications_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLICATION_COLUMNS)
    for sid, res in enumerate(results):
        for rec in res.records:
            for v in ESTIMATORS:
                e = rec.estimates[v]
                w.writerow([sid, rec.rep_index, v.value, _fmt(e.tau_hat), _fmt(e.se),
                            _fmt(e.p_value), _fmt(e.reject), _fmt(e.converged),
                            _fmt(e.failed), _fmt(e.n_used)])
    return buf.getvalue()


# -- large-sample checks ------------------------------------------------------

@dataclass(frozen=True)
class AsymptoticReport:
    n: int
    interact_beta: np.ndarray          # (J, K) fitted timepoint-specific effects
    interact_beta_oracle: np.ndarray   # (J, K) V[X]^-1 C[X, Y_j]
    mmrm_beta: np.ndarray              # (K,)
    mmrm_beta_oracle: np.ndarray       # (K,) V[X]^-1 C[X, Y] S^-1 1 / (1' S^-1 1)
    final_beta_oracle: np.ndarray      # (K,) V[X]^-1 C[X, Y_J]
    se_tau: dict                       # variant -> (fitted SE, block-inversion SE)
    discrepancy_interact_beta: float
    discrepancy_mmrm_beta: float
    discrepancy_se: float              # max relative error over models
    mmrm_vs_final_gap: float

    def passed(self, beta_tol=0.02, se_rel_tol=0.02) -> bool:
        return (self.discrepancy_interact_beta < beta_tol
                and self.discrepancy_mmrm_beta < beta_tol
                and self.discrepancy_se < se_rel_tol)

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, dict):
                v = {getattr(key, "value", key): list(val) for key, val in v.items()}
            out[k] = v
        out["passed"] = self.passed()
        return out


def asymptotic_check(cfg: ScenarioConfig, n_large: int = 200_000,
                     rep_index: int = 0) -> AsymptoticReport:
    """Compare large-sample fits against sample-moment limits.

    Uses one complete-data trial of ``n_large`` subjects.
    """
    if cfg.delta != 0.0 and cfg.dropout_kind is not DropoutKind.NONE:
        raise ValueError("asymptotic_check needs a configuration without dropout")
    cfg = cfg.replace(n=n_large, dropout_kind=DropoutKind.NONE, delta=0.0)
    ds = simulate_full_trial(cfg, replication_seed(cfg, rep_index))
    X, Y, W = ds.covariates, ds.outcomes, ds.treatment
    n, K, J = ds.n, ds.K, ds.J

    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    vx = Xc.T @ Xc / n
    cxy = Xc.T @ Yc / n                       # (K, J)
    per_time = np.linalg.solve(vx, cxy).T     # (J, K)

    with threadpool_limits(1):
        rx = fit(ds, ModelSpec(Variant.MMRM_INTERACT))
        rm = fit(ds, ModelSpec(Variant.MMRM))
    beta_x = rx.theta_hat[J:J + J * K].reshape(J, K)
    beta_m = rm.theta_hat[J:J + K]
    sinv1 = np.linalg.solve(rm.sigma_hat, np.ones(J))
    mmrm_oracle = np.linalg.solve(vx, cxy @ sinv1) / sinv1.sum()

    pi1 = W.mean()
    se_pairs = {}
    rel = []
    for v, r in ((Variant.MMRM, rm), (Variant.MMRM_INTERACT, rx)):
        limit = math.sqrt(r.sigma_hat[-1, -1] / (n * pi1 * (1.0 - pi1)))
        se_pairs[v] = (r.se_tau_J, limit)
        rel.append(abs(r.se_tau_J / limit - 1.0))

    return AsymptoticReport(
        n=n, interact_beta=beta_x, interact_beta_oracle=per_time,
        mmrm_beta=beta_m, mmrm_beta_oracle=mmrm_oracle, final_beta_oracle=per_time[-1],
        se_tau=se_pairs,
        discrepancy_interact_beta=float(np.max(np.abs(beta_x - per_time))),
        discrepancy_mmrm_beta=float(np.max(np.abs(beta_m - mmrm_oracle))),
        discrepancy_se=float(max(rel)),
        mmrm_vs_final_gap=float(np.max(np.abs(beta_m - per_time[-1]))),
    )
