"""Cox proportional-hazards fitting by Newton-Raphson on the partial likelihood."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .baseline import restricted_mean
from .core import (
    BaselineSurvival,
    Cohort,
    HazardAssignment,
    NoEventsError,
    PredictionModel,
    Provenance,
)


class CollinearityError(ValueError):
    pass


class TieMethod(str, enum.Enum):
    BRESLOW = "breslow"
    EFRON = "efron"


@dataclass(frozen=True)
class CoxOptions:
    tie_method: TieMethod = TieMethod.BRESLOW
    max_iter: int = 100
    tolerance: float = 1e-9
    gradient_tolerance: float = 1e-6
    standardize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tie_method", TieMethod(self.tie_method))
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class CoxFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    tie_method: TieMethod
    gradient_norm: float
    center: np.ndarray
    scale: np.ndarray
    covariate_names: tuple[str, ...] = ()
    history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("coefficients", "standard_errors", "center", "scale"):
            d[k] = np.asarray(d[k]).tolist()
        d["tie_method"] = self.tie_method.value
        d["covariate_names"] = list(self.covariate_names)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _RiskSets:
    """Event bookkeeping shared by every likelihood evaluation on one cohort."""

    def __init__(self, time, event, tie_method: TieMethod):
        if not np.any(event):
            raise NoEventsError("no events")
        order = np.argsort(time, kind="stable")
        self.order = order
        ts = time[order]
        ev = event[order]
        self.ev_pos = np.flatnonzero(ev)
        ev_t = ts[self.ev_pos]
        uniq, grp = np.unique(ev_t, return_inverse=True)
        self.grp = grp
        self.n_groups = len(uniq)
        # first sorted position with time >= event time: start of risk set
        self.risk_start = np.searchsorted(ts, uniq, side="left")
        if tie_method is TieMethod.EFRON:
            sizes = np.bincount(grp)
            starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
            self.frac = (np.arange(len(grp)) - starts[grp]) / sizes[grp]
        else:
            self.frac = np.zeros(len(grp))

    def evaluate(self, Z: np.ndarray, beta: np.ndarray, derivs: bool = True):
        """Log partial likelihood, gradient and Hessian at ``beta`` (Z in sorted order)."""
        eta = Z @ beta if Z.shape[1] else np.zeros(Z.shape[0])
        shift = eta.max()
        w = np.exp(eta - shift)
        rev = lambda a: np.cumsum(a[::-1], axis=0)[::-1]  # noqa: E731
        s0 = rev(w)[self.risk_start][self.grp]
        ew = w[self.ev_pos]
        tied0 = np.bincount(self.grp, weights=ew, minlength=self.n_groups)[self.grp]
        den = s0 - self.frac * tied0
        ll = float(np.sum(eta[self.ev_pos]) - np.sum(np.log(den) + shift))
        if not derivs:
            return ll
        p = Z.shape[1]
        wz = w[:, None] * Z
        s1 = rev(wz)[self.risk_start][self.grp]
        ez = Z[self.ev_pos]
        tied1 = np.zeros((self.n_groups, p))
        np.add.at(tied1, self.grp, ew[:, None] * ez)
        num1 = s1 - self.frac[:, None] * tied1[self.grp]
        mean1 = num1 / den[:, None]
        grad = ez.sum(axis=0) - mean1.sum(axis=0)
        wzz = wz[:, :, None] * Z[:, None, :]
        s2 = rev(wzz)[self.risk_start][self.grp]
        tied2 = np.zeros((self.n_groups, p, p))
        np.add.at(tied2, self.grp, ew[:, None, None] * ez[:, :, None] * ez[:, None, :])
        num2 = s2 - self.frac[:, None, None] * tied2[self.grp]
        hess = -(num2 / den[:, None, None]).sum(axis=0) + np.einsum("ki,kj->ij", mean1, mean1)
        return ll, grad, hess


def _check_dim(cohort: Cohort, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != cohort.dim:
        raise ValueError(f"expected {cohort.dim} coefficients, got {beta.shape[0]}")
    return beta


def partial_loglik(cohort: Cohort, coefficients, tie_method="breslow") -> float:
    """Log partial likelihood of ``coefficients`` under Breslow or Efron ties."""
    beta = _check_dim(cohort, coefficients)
    rs = _RiskSets(cohort.time, cohort.event, TieMethod(tie_method))
    return rs.evaluate(cohort.covariates[rs.order], beta, derivs=False)


def partial_loglik_gradient(cohort: Cohort, coefficients, tie_method="breslow"):
    """Analytic gradient and Hessian of :func:`partial_loglik`."""
    beta = _check_dim(cohort, coefficients)
    rs = _RiskSets(cohort.time, cohort.event, TieMethod(tie_method))
    _, g, h = rs.evaluate(cohort.covariates[rs.order], beta)
    return g, h


def fit_cox(cohort: Cohort, options: CoxOptions | None = None) -> CoxFit:
    """Maximise the partial likelihood with step-halving Newton-Raphson.

    Covariates are standardised internally when ``options.standardize``;
    coefficients and standard errors are reported on the original scale.
    """
    opts = options or CoxOptions()
    if int(cohort.event.sum()) < 2:
        raise NoEventsError("need at least 2 events to fit a Cox model")
    X = cohort.covariates
    p = X.shape[1]
    if opts.standardize and p:
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        if np.any(scale == 0):
            raise CollinearityError("collinear predictors: constant column")
    else:
        center = np.zeros(p)
        scale = np.ones(p)
    Z = (X - center) / scale
    if p and np.linalg.matrix_rank(Z) < p:
        raise CollinearityError("collinear predictors")

    rs = _RiskSets(cohort.time, cohort.event, opts.tie_method)
    Zs = Z[rs.order]
    beta = np.zeros(p)
    ll, grad, hess = rs.evaluate(Zs, beta)
    history = [ll]
    converged = p == 0 or np.max(np.abs(grad)) <= opts.gradient_tolerance
    it = 0
    while not converged and it < opts.max_iter:
        it += 1
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise CollinearityError("collinear predictors: singular information matrix") from None
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            ll_new = rs.evaluate(Zs, cand, derivs=False)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            t *= 0.5
        else:
            break
        rel = abs(ll_new - ll) / max(abs(ll), 1e-300)
        beta = cand
        ll, grad, hess = rs.evaluate(Zs, beta)
        history.append(ll)
        if rel <= opts.tolerance or np.max(np.abs(grad)) <= opts.gradient_tolerance:
            converged = True

    info = -hess
    if p:
        if np.linalg.cond(info) > 1e14:
            raise CollinearityError("collinear predictors: singular information matrix")
        se_std = np.sqrt(np.diag(np.linalg.inv(info)))
    else:
        se_std = np.zeros(0)
    return CoxFit(
        coefficients=beta / scale,
        standard_errors=se_std / scale,
        log_likelihood=ll,
        iterations=it,
        converged=bool(converged),
        tie_method=opts.tie_method,
        gradient_norm=float(np.max(np.abs(grad))) if p else 0.0,
        center=center,
        scale=scale,
        covariate_names=cohort.covariate_names,
        history=history,
    )


def predict_hazard_ratios(fit: CoxFit, cohort: Cohort) -> HazardAssignment:
    """rates[i] = exp(beta' z_i) on the original covariate scale."""
    beta = np.asarray(fit.coefficients)
    if beta.shape[0] != cohort.dim:
        raise ValueError(f"fit has {beta.shape[0]} coefficients, cohort has {cohort.dim} covariates")
    return HazardAssignment(cohort.ids, np.exp(cohort.covariates @ beta), Provenance.MODEL_FITTED)


def model_from_hazards(hazards: HazardAssignment, baseline: BaselineSurvival) -> PredictionModel:
    """Predicted survival = restricted mean of S_0(t)**h for each member."""
    return PredictionModel(hazards.ids, restricted_mean(baseline, hazards.rates))
