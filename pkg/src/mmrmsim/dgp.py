"""Simulated longitudinal trials with MCAR or MAR geometric dropout.

Randomness is drawn from independent counter-based streams keyed by
``(replication seed, stream id)``. Covariates, treatment, residuals and
dropout each have their own stream, so switching the dropout mechanism (or
turning it off) leaves the complete outcome draws untouched.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, InvalidCorrelation, InvalidHazard
from .trial_data import TrialDataset

MAR_SLOPE = 0.1

STREAM_COVARIATES = 0
STREAM_TREATMENT = 1
STREAM_RESIDUALS = 2
STREAM_DROPOUT = 3

DEFAULT_DELTAS = (0.0, 0.1, 0.2, 0.3)
DEFAULT_RHOS = (0.0, 0.3, 0.6, 0.9)
DEFAULT_BS = (0.8, 1.0, 1.2)

_UINT64 = 2**64


class DropoutKind(str, enum.Enum):
    NONE = "none"
    MCAR = "mcar"
    MAR = "mar"


def derive_seed(seed: int, *key: int) -> int:
    """Hash ``(seed, *key)`` to a fresh 64-bit seed."""
    ss = np.random.SeedSequence(int(seed) % _UINT64, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def stream(rep_seed: int, stream_id: int) -> np.random.Generator:
    """Philox generator for one named stream of one replication."""
    ss = np.random.SeedSequence(int(rep_seed) % _UINT64, spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ScenarioConfig:
    """One point of a simulation grid.

    ``alpha``, ``beta_base`` and ``tau`` default to the reference design
    (zero intercepts, covariate effects of 5, treatment effect 1/3 at every
    timepoint). ``beta_base`` applies to timepoints ``1..J-1``; the final
    timepoint uses ``b * beta_base``.
    """

    n: int = 400
    K: int = 2
    J: int = 3
    alpha: tuple | None = None
    beta_base: tuple | None = None
    b: float = 1.0
    tau: tuple | None = None
    rho: float = 0.0
    delta: float = 0.0
    dropout_kind: DropoutKind = DropoutKind.NONE
    treat_prob: float = 0.5
    n_reps: int = 1000
    alpha_level: float = 0.05
    seed: int = 0

    def __post_init__(self):
        set_ = object.__setattr__
        for name in ("n", "K", "J", "n_reps"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or int(v) != v:
                raise ConfigError(name, f"must be an integer, got {v!r}")
            set_(self, name, int(v))
        for name in ("b", "rho", "delta", "treat_prob", "alpha_level"):
            v = getattr(self, name)
            try:
                v = float(v)
            except (TypeError, ValueError):
                raise ConfigError(name, f"must be a number, got {v!r}") from None
            if not math.isfinite(v):
                raise ConfigError(name, f"must be finite, got {v!r}")
            set_(self, name, v)
        if self.n < 4:
            raise ConfigError("n", f"must be >= 4, got {self.n}")
        if self.K < 1:
            raise ConfigError("K", f"must be >= 1, got {self.K}")
        if self.J < 1:
            raise ConfigError("J", f"must be >= 1, got {self.J}")
        if self.n_reps < 1:
            raise ConfigError("n_reps", f"must be >= 1, got {self.n_reps}")
        set_(self, "alpha", self._vector("alpha", self.alpha, self.J, 0.0))
        set_(self, "tau", self._vector("tau", self.tau, self.J, 1.0 / 3.0))
        set_(self, "beta_base", self._vector("beta_base", self.beta_base, self.K, 5.0))
        if not 0.0 <= self.rho < 1.0:
            raise InvalidCorrelation(f"must be in [0, 1), got {self.rho}")
        if not 0.0 < self.treat_prob < 1.0:
            raise ConfigError("treat_prob", f"must be in (0, 1), got {self.treat_prob}")
        if not 0.0 <= self.alpha_level <= 1.0:
            raise ConfigError("alpha_level", f"must be in [0, 1], got {self.alpha_level}")
        try:
            set_(self, "dropout_kind", DropoutKind(str(getattr(self.dropout_kind, "value", self.dropout_kind)).lower()))
        except ValueError:
            raise ConfigError("dropout_kind", f"must be one of none, mcar, mar; got {self.dropout_kind!r}") from None
        if not 0.0 <= self.delta < 1.0:
            raise InvalidHazard(f"must be in [0, 1), got {self.delta}")
        if self.dropout_kind is DropoutKind.MAR and not MAR_SLOPE < self.delta < 1.0 - MAR_SLOPE:
            raise InvalidHazard(
                f"MAR dropout needs delta in ({MAR_SLOPE}, {1 - MAR_SLOPE}), got {self.delta}")
        try:
            seed = int(self.seed)
        except (TypeError, ValueError):
            raise ConfigError("seed", f"must be an integer, got {self.seed!r}") from None
        if seed != self.seed or not 0 <= seed < _UINT64:
            raise ConfigError("seed", f"must be an integer in [0, 2**64), got {self.seed!r}")
        set_(self, "seed", seed)

    @staticmethod
    def _vector(name, value, length, default):
        if value is None:
            return (default,) * length
        if np.isscalar(value):
            value = [value] * length
        try:
            vec = tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(name, f"must be a number or list of numbers, got {value!r}") from None
        if len(vec) != length:
            raise ConfigError(name, f"must have length {length}, got {len(vec)}")
        if not all(math.isfinite(v) for v in vec):
            raise ConfigError(name, "entries must be finite")
        return vec

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def beta_by_time(self) -> np.ndarray:
        """Covariate effects per timepoint, shape (J, K)."""
        beta = np.tile(np.asarray(self.beta_base), (self.J, 1))
        beta[-1] *= self.b
        return beta

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dropout_kind"] = self.dropout_kind.value
        for k in ("alpha", "beta_base", "tau"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "") -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError(prefix or "<root>", "scenario must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(prefix + unknown[0], "unknown field")
        try:
            return cls(**data)
        except ConfigError as exc:
            raise ConfigError(prefix + exc.field, str(exc).split(": ", 1)[1]) from None
        except TypeError as exc:
            raise ConfigError(prefix or "<root>", str(exc)) from None


def load_grid(text: str) -> tuple[list[ScenarioConfig], int | None]:
    """Parse a JSON grid document.

    Accepts either a single scenario object or
    ``{"seed": int?, "defaults": {...}?, "scenarios": [{...}, ...]}``.
    Returns the scenarios and the top-level base seed (None if absent).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    if isinstance(doc, dict) and "scenarios" in doc:
        extra = sorted(set(doc) - {"seed", "defaults", "scenarios"})
        if extra:
            raise ConfigError(extra[0], "unknown top-level field")
        defaults = doc.get("defaults", {})
        if not isinstance(defaults, dict):
            raise ConfigError("defaults", "must be a JSON object")
        if not isinstance(doc["scenarios"], list) or not doc["scenarios"]:
            raise ConfigError("scenarios", "must be a non-empty list")
        grid = [ScenarioConfig.from_dict({**defaults, **s} if isinstance(s, dict) else s,
                                         prefix=f"scenarios[{i}].")
                for i, s in enumerate(doc["scenarios"])]
        seed = doc.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < _UINT64):
            raise ConfigError("seed", f"must be an integer in [0, 2**64), got {seed!r}")
        return grid, seed
    return [ScenarioConfig.from_dict(doc)], None


# -- generation ---------------------------------------------------------------

def interchangeable_covariance(J: int, rho: float) -> np.ndarray:
    """Unit-variance covariance with a common off-diagonal correlation."""
    if J < 1:
        raise ValueError("J must be >= 1")
    if not 0.0 <= rho < 1.0:
        raise InvalidCorrelation(f"must be in [0, 1), got {rho}")
    sigma = np.full((J, J), float(rho))
    np.fill_diagonal(sigma, 1.0)
    return sigma


def simulate_full_trial(cfg: ScenarioConfig, rep_seed: int) -> TrialDataset:
    """Draw one fully observed trial.

    Covariates are uniform on (-1, 1), treatment is allocated by complete
    randomization with ``round(n * treat_prob)`` treated subjects, and the
    residual vector is ``L z`` with ``L`` the lower Cholesky factor of the
    interchangeable covariance.
    """
    n, K, J = cfg.n, cfg.K, cfg.J
    X = -1.0 + 2.0 * stream(rep_seed, STREAM_COVARIATES).random((n, K))

    n_treated = min(max(int(round(n * cfg.treat_prob)), 1), n - 1)
    W = np.zeros(n, dtype=np.int64)
    W[:n_treated] = 1
    W = stream(rep_seed, STREAM_TREATMENT).permutation(W)

    chol = np.linalg.cholesky(interchangeable_covariance(J, cfg.rho))
    eps = stream(rep_seed, STREAM_RESIDUALS).standard_normal((n, J)) @ chol.T

    Y = np.asarray(cfg.alpha) + X @ cfg.beta_by_time().T + W[:, None] * np.asarray(cfg.tau) + eps
    return TrialDataset(np.arange(1, n + 1), X, W, Y, np.full(n, J + 1))


def _geometric_dropout(ds: TrialDataset, hazard: np.ndarray, rep_seed: int) -> TrialDataset:
    # T_i is the first timepoint whose uniform falls below the hazard
    u = stream(rep_seed, STREAM_DROPOUT).random((ds.n, ds.J))
    fail = u < hazard[:, None]
    T = np.where(fail.any(axis=1), fail.argmax(axis=1) + 1, ds.J + 1)
    return ds.with_dropout(T)


def apply_mcar_dropout(ds: TrialDataset, delta: float, rep_seed: int) -> TrialDataset:
    if not 0.0 <= delta < 1.0:
        raise InvalidHazard(f"must be in [0, 1), got {delta}")
    if delta == 0.0:
        return ds
    return _geometric_dropout(ds, np.full(ds.n, float(delta)), rep_seed)


def mar_hazard(covariates, treatment, delta: float) -> np.ndarray:
    """Per-subject hazard ``delta +/- 0.1 * X_1``: plus for treated, minus for control."""
    x1 = np.asarray(covariates, dtype=float)[:, 0]
    sign = np.where(np.asarray(treatment) == 1, 1.0, -1.0)
    return delta + sign * MAR_SLOPE * x1


def apply_mar_dropout(ds: TrialDataset, delta: float, rep_seed: int) -> TrialDataset:
    hazard = mar_hazard(ds.covariates, ds.treatment, delta)
    if np.any(hazard <= 0.0) or np.any(hazard >= 1.0):
        raise InvalidHazard(f"per-subject hazard leaves (0, 1) for delta={delta}")
    return _geometric_dropout(ds, hazard, rep_seed)


def simulate_trial(cfg: ScenarioConfig, rep_seed: int) -> TrialDataset:
    """Full trial followed by the configured dropout mechanism."""
    ds = simulate_full_trial(cfg, rep_seed)
    if cfg.dropout_kind is DropoutKind.MCAR:
        return apply_mcar_dropout(ds, cfg.delta, rep_seed)
    if cfg.dropout_kind is DropoutKind.MAR:
        return apply_mar_dropout(ds, cfg.delta, rep_seed)
    return ds
