"""Maximum-likelihood fitting of ANCOVA, MMRM and MMRM with time-by-covariate terms.

All three models share one engine. For subject ``i`` with design rows
``Z_i^T`` (J x p) and outcome vector ``Y_i``, observed up to time
``T_i - 1``, the estimates solve

    0 = sum_i Z_i Omega_i (Y_i - Z_i^T theta)
    Sigma_jk = mean over subjects observed at j and k of R_j R_k

where ``Omega_i`` holds the inverse of the leading block of ``Sigma`` that
matches the subject's observed prefix and zeros elsewhere. The fit
alternates an exact weighted least-squares solve for ``theta`` with the
pairwise residual update for ``Sigma``. ANCOVA is the ``J = 1`` case,
applied to complete cases at the final timepoint.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .exceptions import (EmptyOverlap, InsufficientData, InvalidSe,
                         NonPositiveDefinite, NotConverged,
                         SingularInformation, SingularNormalEquations)
from .trial_data import (TrialDataset, Variant, build_design, covariate_center,
                         parameter_names)

PD_EPS = 1e-10


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.MMRM
    centering: bool = True
    tol: float = 1e-8
    max_iter: int = 200
    se_kind: str = "model"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be an integer >= 1, got {self.max_iter}")
        kind = str(self.se_kind).lower()
        if kind not in ("model", "sandwich"):
            raise ValueError(f"se_kind must be 'model' or 'sandwich', got {self.se_kind!r}")
        object.__setattr__(self, "se_kind", kind)


@dataclass(frozen=True)
class FitResult:
    variant: Variant
    se_kind: str
    theta_hat: np.ndarray
    sigma_hat: np.ndarray
    cov_theta: np.ndarray
    tau_J: float
    se_tau_J: float
    z: float
    p_value: float
    converged: bool
    iterations: int
    n_used: int
    param_names: list = field(default_factory=list)
    covariate_center: np.ndarray | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class WaldResult(NamedTuple):
    z: float
    p_value: float
    reject: bool


# -- weights ------------------------------------------------------------------

def _check_pd(a, what):
    if a.size and np.linalg.eigvalsh(a)[0] <= PD_EPS:
        raise NonPositiveDefinite(f"{what} is not positive definite")


def omega_j(sigma, j: int) -> np.ndarray:
    """J x J matrix with the inverse of ``sigma[:j, :j]`` in its top-left corner."""
    sigma = np.asarray(sigma, dtype=float)
    J = sigma.shape[0]
    if not 0 <= j <= J:
        raise ValueError(f"j must be in 0..{J}")
    out = np.zeros((J, J))
    if j:
        block = sigma[:j, :j]
        _check_pd(block, f"leading {j}x{j} block of Sigma")
        out[:j, :j] = np.linalg.inv(block)
    return out


def omega_stack(sigma) -> np.ndarray:
    """``omega_j(sigma, j)`` for ``j = 0..J``, shape (J+1, J, J).

    Uses one Cholesky factor: the inverse of a lower-triangular factor's
    leading block is the leading block of its inverse.
    """
    sigma = np.asarray(sigma, dtype=float)
    _check_pd(sigma, "Sigma")
    return _omega_stack(sigma)


def _omega_stack(sigma):
    J = sigma.shape[0]
    linv = np.linalg.inv(np.linalg.cholesky(sigma))
    masked = linv[None, :, :] * (np.arange(J)[None, :, None] < np.arange(J + 1)[:, None, None])
    return masked.transpose(0, 2, 1) @ masked


def omega_weights(ds: TrialDataset, sigma) -> np.ndarray:
    """Per-subject weights ``Omega_i``, shape (n, J, J)."""
    return omega_stack(sigma)[ds.n_observed]


# -- moments ------------------------------------------------------------------

class _Moments:
    """Cross-products of design rows and outcomes, grouped by dropout pattern.

    With these, the normal equations for any ``Sigma`` cost O(J^4 p^2)
    instead of a pass over all subjects.
    """

    def __init__(self, Z, Y, n_obs, J):
        p = Z.shape[2]
        self.p = p
        zz = np.zeros((J + 1, J, J, p, p))
        zy = np.zeros((J + 1, J, J, p))
        for g in range(1, J + 1):
            rows = n_obs == g
            if not rows.any():
                continue
            Zg = Z[rows, :g].reshape(-1, g * p)
            Yg = Y[rows, :g]
            zz[g, :g, :g] = (Zg.T @ Zg).reshape(g, p, g, p).transpose(0, 2, 1, 3)
            zy[g, :g, :g] = (Zg.T @ Yg).reshape(g, p, g).transpose(0, 2, 1)
        self.zz = zz.reshape(-1, p * p)
        self.zy = zy.reshape(-1, p)

    def normal_equations(self, omegas):
        w = omegas.reshape(-1)
        return (w @ self.zz).reshape(self.p, self.p), w @ self.zy


def _solve_normal(A, b, check=True):
    A = 0.5 * (A + A.T)
    if check:
        evals = np.linalg.eigvalsh(A)
        if evals[-1] <= 0 or evals[0] <= PD_EPS * evals[-1]:
            raise SingularNormalEquations(
                "normal equations are singular; the design is rank deficient")
    return np.linalg.solve(A, b)


def _as_design(Z):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 2:
        Z = Z[:, None, :]
    return Z


def _residuals(ds, Z, theta):
    return np.where(ds.observed, ds.outcomes - Z @ theta, 0.0)


# -- score-equation steps -----------------------------------------------------

def gls_step(ds: TrialDataset, Z, sigma) -> np.ndarray:
    """Weighted least-squares solve for ``theta`` at fixed ``Sigma``.

    Assembled subject by subject with zero-padded outcomes; the zero blocks
    of ``Omega_i`` remove the missing entries.
    """
    Z = _as_design(Z)
    omega = omega_weights(ds, sigma)
    ZO = Z.transpose(0, 2, 1) @ omega
    A = np.einsum("npk,nkq->pq", ZO, Z)
    b = np.einsum("npk,nk->p", ZO, ds.outcomes)
    return _solve_normal(A, b)


def sigma_step(ds: TrialDataset, Z, theta) -> np.ndarray:
    """Pairwise available-case residual covariance at fixed ``theta``."""
    Z = _as_design(Z)
    R = _residuals(ds, Z, theta)
    obs = ds.observed.astype(float)
    counts = obs.T @ obs
    if np.any(counts == 0):
        j, k = np.argwhere(counts == 0)[0] + 1
        raise EmptyOverlap(f"no subject observed at both times {j} and {k}")
    sigma = (R.T @ R) / counts
    _check_pd(sigma, "estimated Sigma")
    return sigma


def fisher_information(ds: TrialDataset, Z, sigma_hat) -> np.ndarray:
    """Unnormalized empirical information ``sum_i Z_i Omega_i Z_i^T``."""
    Z = _as_design(Z)
    omega = omega_weights(ds, sigma_hat)
    return np.einsum("npk,nkq->pq", Z.transpose(0, 2, 1) @ omega, Z)


def model_based_covariance(info) -> np.ndarray:
    info = np.asarray(info, dtype=float)
    info = 0.5 * (info + info.T)
    try:
        evals = np.linalg.eigvalsh(info)
    except np.linalg.LinAlgError:
        raise SingularInformation("information matrix is not finite") from None
    if evals[-1] <= 0 or evals[0] <= PD_EPS * evals[-1]:
        raise SingularInformation("information matrix is singular")
    cov = np.linalg.inv(info)
    return 0.5 * (cov + cov.T)


def score_contributions(ds: TrialDataset, Z, sigma_hat, theta_hat) -> np.ndarray:
    """Per-subject score ``Z_i Omega_i R_i``, shape (n, p)."""
    Z = _as_design(Z)
    R = _residuals(ds, Z, theta_hat)
    omega = omega_weights(ds, sigma_hat)
    return np.einsum("njp,nj->np", Z, (omega @ R[:, :, None])[:, :, 0])


def sandwich_covariance(ds: TrialDataset, Z, sigma_hat, theta_hat, info=None) -> np.ndarray:
    """Misspecification-robust covariance ``I^-1 (sum_i u_i u_i^T) I^-1``."""
    if info is None:
        info = fisher_information(ds, Z, sigma_hat)
    bread = model_based_covariance(info)
    u = score_contributions(ds, Z, sigma_hat, theta_hat)
    cov = bread @ (u.T @ u) @ bread
    return 0.5 * (cov + cov.T)


def wald_test(tau_hat: float, se: float, alpha_level: float = 0.05) -> WaldResult:
    """Two-sided normal-reference Wald test; rejects when ``p < alpha_level``."""
    if not (np.isfinite(se) and se > 0):
        raise InvalidSe(f"standard error must be positive and finite, got {se}")
    z = float(tau_hat) / float(se)
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return WaldResult(z, p, p < alpha_level)


# -- fitting ------------------------------------------------------------------

def _alternate(ds, Z, tol, max_iter):
    J = ds.J
    moments = _Moments(Z, ds.outcomes, ds.n_observed, J)
    sigma = np.eye(J)
    theta_prev = None
    sigma_prev = sigma
    for it in range(1, max_iter + 1):
        # rank deficiency does not depend on Sigma: check once, at the OLS step
        theta = _solve_normal(*moments.normal_equations(_omega_stack(sigma)), check=it == 1)
        sigma = sigma_step(ds, Z, theta)
        if theta_prev is not None:
            change = max(np.max(np.abs(theta - theta_prev)), np.max(np.abs(sigma - sigma_prev)))
            if change < tol:
                return theta, sigma, it, True, moments
        theta_prev, sigma_prev = theta, sigma
    return theta, sigma, max_iter, False, moments


def _fit_reduced(ds: TrialDataset, variant: Variant, spec: ModelSpec, names):
    # ``ds`` here is what the likelihood sees: J timepoints, design per ``variant``
    used = ds.dropout_time > 1
    if not (np.any(ds.treatment[used] == 1) and np.any(ds.treatment[used] == 0)):
        raise InsufficientData("both arms need at least one subject with an observed outcome")
    center = covariate_center(ds, variant) if spec.centering else None
    Z = build_design(ds.covariates, ds.treatment, ds.J, variant, center)

    theta, sigma, iterations, converged, moments = _alternate(ds, Z, spec.tol, spec.max_iter)
    if not converged:
        warnings.warn(f"{spec.variant.value} fit did not converge in {spec.max_iter} iterations",
                      NotConverged, stacklevel=3)

    info = moments.normal_equations(_omega_stack(sigma))[0]
    if spec.se_kind == "sandwich":
        cov = sandwich_covariance(ds, Z, sigma, theta, info=info)
    else:
        cov = model_based_covariance(info)
    tau = float(theta[-1])
    se = float(np.sqrt(max(cov[-1, -1], 0.0)))
    if se > 0:
        z, p, _ = wald_test(tau, se)
    else:
        z, p = float("nan"), float("nan")
    return FitResult(
        variant=spec.variant, se_kind=spec.se_kind, theta_hat=theta, sigma_hat=sigma,
        cov_theta=cov, tau_J=tau, se_tau_J=se, z=z, p_value=p, converged=converged,
        iterations=iterations, n_used=int(used.sum()), param_names=names,
        covariate_center=center if center is not None else np.zeros(ds.K),
    )


def fit(ds: TrialDataset, spec: ModelSpec | str = ModelSpec()) -> FitResult:
    """Fit one of the three models and test the final-timepoint treatment effect.

    ANCOVA uses only subjects whose final outcome is observed; the
    repeated-measures models use every observed outcome.
    """
    if not isinstance(spec, ModelSpec):
        spec = ModelSpec(variant=spec)
    if spec.variant is Variant.ANCOVA:
        complete = ds.dropout_time == ds.J + 1
        arms = ds.treatment[complete]
        if complete.sum() < ds.K + 3 or arms.sum() == 0 or arms.sum() == len(arms):
            raise InsufficientData(
                f"ANCOVA needs >= {ds.K + 3} complete cases in both arms, got {complete.sum()}")
        cc = ds.complete_case_final()
        return _fit_reduced(cc, Variant.MMRM, spec, parameter_names(Variant.ANCOVA, 1, ds.K))
    return _fit_reduced(ds, spec.variant, spec, parameter_names(spec.variant, ds.J, ds.K))


# -- scikit-learn front end ---------------------------------------------------

class _LongitudinalModel(BaseEstimator):
    """Shared estimator logic; subclasses pin the mean model."""

    _variant: Variant

    def __init__(self, *, centering=True, tol=1e-8, max_iter=200, se="model"):
        self.centering = centering
        self.tol = tol
        self.max_iter = max_iter
        self.se = se

    def _spec(self):
        return ModelSpec(self._variant, self.centering, self.tol, self.max_iter, self.se)

    def fit(self, X, y=None, treatment=None, observed=None):
        """Fit the model.

        Parameters
        ----------
        X : TrialDataset or array-like of shape (n_samples, n_covariates)
            Either a full dataset (then ``y`` and ``treatment`` are ignored)
            or the baseline covariates.
        y : array-like of shape (n_samples, n_timepoints)
            Outcomes; NaN marks a missing value unless ``observed`` is given.
        treatment : array-like of shape (n_samples,)
            Arm indicator in {0, 1}.
        observed : array-like of bool, optional
            Presence mask for ``y``.
        """
        if isinstance(X, TrialDataset):
            ds = X
        else:
            if y is None or treatment is None:
                raise ValueError("y and treatment are required when X is an array")
            X = check_array(X, ensure_min_features=1)
            y = check_array(y, ensure_2d=False, ensure_all_finite="allow-nan")
            treatment = check_array(treatment, ensure_2d=False, dtype=None)
            check_consistent_length(X, y, treatment)
            ds = TrialDataset.from_arrays(X, treatment, y, observed=observed)
        self.result_ = fit(ds, self._spec())
        r = self.result_
        self.coef_ = r.theta_hat
        self.sigma_ = r.sigma_hat
        self.cov_ = r.cov_theta
        self.tau_ = r.tau_J
        self.se_ = r.se_tau_J
        self.pvalue_ = r.p_value
        self.converged_ = r.converged
        self.n_iter_ = r.iterations
        self.n_features_in_ = ds.K
        self.n_timepoints_ = ds.J
        return self

    def predict(self, X, treatment):
        """Model mean of the outcomes, shape (n_samples, J) (``(n_samples,)`` for ANCOVA)."""
        check_is_fitted(self, "result_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        W = np.asarray(treatment, dtype=float).ravel()
        check_consistent_length(X, W)
        J = 1 if self._variant is Variant.ANCOVA else self.n_timepoints_
        variant = Variant.MMRM if self._variant is Variant.ANCOVA else self._variant
        Z = build_design(X, W, J, variant, self.result_.covariate_center)
        mean = Z @ self.coef_
        return mean[:, 0] if self._variant is Variant.ANCOVA else mean

    def wald_test(self, alpha_level=0.05) -> WaldResult:
        check_is_fitted(self, "result_")
        return wald_test(self.tau_, self.se_, alpha_level)


class ANCOVA(_LongitudinalModel):
    """Complete-case regression of the final outcome on covariates and treatment."""

    _variant = Variant.ANCOVA


class MMRM(_LongitudinalModel):
    """Repeated-measures model with covariate effects shared across time."""

    _variant = Variant.MMRM


class MMRMInteract(_LongitudinalModel):
    """Repeated-measures model with timepoint-specific covariate effects."""

    _variant = Variant.MMRM_INTERACT
