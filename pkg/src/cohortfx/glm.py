"""Regression core: logistic MLE, least squares with robust errors, L1 paths.

Everything here works on dense design matrices and is deterministic. The
logistic solver backs the propensity model, the robust OLS backs the
adjustment estimate, and the lasso path / CV selector back the important-
covariate screen.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50
KKT_TOL = 1e-6


class SeparationError(RuntimeError):
    """Logistic MLE diverged (perfect or quasi-separation).

    Separation in a propensity model usually means a covariate fully
    determines treatment; refit with ``ridge=1e-6`` only if that is
    understood and intended.
    """


class RankDeficientError(ValueError):
    """Design matrix is rank deficient; carries the offending column names."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; suspect columns: {self.columns}")


@dataclass
class DesignMatrix:
    """Dense n x p predictor block with named columns; intercept is implicit."""

    values: np.ndarray
    columns: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("design matrix must be 2-dimensional")
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column names do not match matrix width")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names in design matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("design matrix contains non-finite cells")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass
class FittedModel:
    """Coefficients plus convergence info for a logistic or linear fit."""

    family: str  # "logistic" | "linear"
    intercept: float
    coefficients: np.ndarray
    columns: list[str]
    n_iter: int = 0
    grad_norm: float = 0.0
    standard_errors: np.ndarray | None = None  # intercept first, linear family
    log_likelihood: float | None = None
    ll_trace: tuple[float, ...] = ()  # per-iteration log-likelihood (logistic)

    def coef_dict(self) -> dict[str, float]:
        return dict(zip(self.columns, (float(c) for c in self.coefficients)))

    def linear_index(self, X: DesignMatrix) -> np.ndarray:
        if X.columns != self.columns:
            raise ValueError("column names do not match the training design")
        return self.intercept + X.values @ self.coefficients


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ez = np.exp(eta[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_likelihood_logistic(y: np.ndarray, eta: np.ndarray) -> float:
    # log p(y|eta) = y*eta - log(1+exp(eta)), stable via logaddexp
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic_irls(
    X: DesignMatrix,
    y: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    ridge: float = 0.0,
) -> FittedModel:
    """Fit a logistic regression by Newton/IRLS with step-halving.

    Iterates until the max-norm of the log-likelihood gradient is <= ``tol``
    or ``max_iter`` is hit. The log-likelihood is non-decreasing across
    iterations (the Newton step is halved until it improves). ``ridge`` adds
    an L2 penalty on the slopes (not the intercept); it is off by default so
    separation fails loudly rather than silently shrinking.

    Raises:
        SeparationError: coefficients diverging or IRLS weights collapsing,
            the classic separation signature.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (X.n,):
        raise ValueError("outcome length does not match design matrix")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("logistic outcome must be coded 0/1")
    if X.n <= X.p:
        logger.warning("logistic fit with n=%d <= p=%d predictors", X.n, X.p)

    Z = np.column_stack([np.ones(X.n), X.values])
    beta = np.zeros(X.p + 1)
    penalty = np.zeros(X.p + 1)
    penalty[1:] = ridge

    eta = Z @ beta
    ll = _log_likelihood_logistic(y, eta) - 0.5 * float(penalty @ beta**2)
    trace = [ll]
    grad_norm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        p = _sigmoid(eta)
        grad = Z.T @ (y - p) - penalty * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol:
            break
        if float(np.max(np.abs(eta))) > 30.0 and ridge == 0.0:
            # fitted probabilities numerically at 0/1 while the gradient is
            # still vanishing along a diverging direction
            raise SeparationError(
                "fitted probabilities numerically 0/1; data are separated. "
                "Consider refitting with ridge=1e-6."
            )

        w = p * (1.0 - p)
        if float(np.max(w)) < 1e-10:
            raise SeparationError(
                "IRLS weights degenerate (all probabilities at 0/1); data are "
                "separated. Consider refitting with ridge=1e-6."
            )
        H = Z.T @ (Z * w[:, None]) + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise SeparationError(
                "singular IRLS Hessian; data are separated or collinear. "
                "Consider refitting with ridge=1e-6."
            ) from None

        # Step-halving keeps the (penalized) log-likelihood non-decreasing.
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            eta_cand = Z @ cand
            ll_cand = _log_likelihood_logistic(y, eta_cand) - 0.5 * float(penalty @ cand**2)
            if ll_cand >= ll - 1e-12:
                break
            scale *= 0.5
        else:
            raise SeparationError("IRLS line search failed to make progress")
        beta, eta, ll = cand, eta_cand, ll_cand
        trace.append(ll)

        if float(np.linalg.norm(beta)) > 1e4:
            raise SeparationError(
                "coefficient norm exploding; data look separated. "
                "Consider refitting with ridge=1e-6."
            )
    else:
        p = _sigmoid(eta)
        grad = Z.T @ (y - p) - penalty * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm > tol:
            raise SeparationError(
                f"IRLS did not converge in {max_iter} iterations "
                f"(gradient max-norm {grad_norm:.3e}); suspect separation."
            )

    return FittedModel(
        family="logistic",
        intercept=float(beta[0]),
        coefficients=beta[1:].copy(),
        columns=list(X.columns),
        n_iter=it,
        grad_norm=grad_norm,
        log_likelihood=_log_likelihood_logistic(y, eta),
        ll_trace=tuple(trace),
    )


def predict_proba(model: FittedModel, X: DesignMatrix) -> np.ndarray:
    """Per-row treatment probability from a fitted logistic model."""
    if model.family != "logistic":
        raise ValueError("predict_proba requires a logistic model")
    p = _sigmoid(model.linear_index(X))
    # strictly inside (0,1) so downstream logit/caliper math stays finite
    tiny = np.finfo(float).tiny
    return np.clip(p, tiny, 1.0 - 1e-16)


def fit_ols_robust(X: DesignMatrix, y: np.ndarray) -> FittedModel:
    """Least squares with HC1 heteroskedasticity-robust standard errors.

    Solves via QR. Raises ``RankDeficientError`` naming the collinear
    columns when the design (with intercept) is not full column rank.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (X.n,):
        raise ValueError("outcome length does not match design matrix")
    k = X.p + 1
    if X.n <= k:
        raise ValueError(f"need n > p + 1 observations (n={X.n}, p={X.p})")

    Z = np.column_stack([np.ones(X.n), X.values])
    rank = np.linalg.matrix_rank(Z)
    if rank < k:
        raise RankDeficientError(_suspect_collinear_columns(Z, X.columns))

    q, r = np.linalg.qr(Z)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - Z @ beta

    # HC1: (Z'Z)^-1 Z' diag(e^2) Z (Z'Z)^-1 * n/(n-k)
    r_inv = np.linalg.inv(r)
    zTz_inv = r_inv @ r_inv.T
    meat = Z.T @ (Z * (resid**2)[:, None])
    cov = zTz_inv @ meat @ zTz_inv * (X.n / (X.n - k))
    se = np.sqrt(np.diag(cov))

    return FittedModel(
        family="linear",
        intercept=float(beta[0]),
        coefficients=beta[1:].copy(),
        columns=list(X.columns),
        n_iter=1,
        grad_norm=float(np.max(np.abs(Z.T @ resid))),
        standard_errors=se,
    )


def _suspect_collinear_columns(Z: np.ndarray, names: list[str]) -> list[str]:
    """Name columns involved in the rank deficiency via pivoted elimination."""
    full = ["(intercept)"] + list(names)
    _, r = np.linalg.qr(Z)
    diag = np.abs(np.diag(r))
    thresh = max(Z.shape) * np.finfo(float).eps * (diag.max() if diag.size else 1.0)
    return [full[j] for j in np.nonzero(diag <= thresh)[0]]


def _soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


@dataclass
class LassoPath:
    """Solutions over a geometric lambda grid, on the standardized scale."""

    family: str
    lambdas: np.ndarray  # descending
    coefs: np.ndarray  # (n_lambda, p) standardized-scale slopes
    intercepts: np.ndarray  # (n_lambda,) original-scale intercepts
    columns: list[str]
    x_center: np.ndarray
    x_scale: np.ndarray
    dropped_columns: list[str] = field(default_factory=list)

    def coefs_original_scale(self) -> np.ndarray:
        """Slopes mapped back to the unstandardized predictor scale."""
        return self.coefs / self.x_scale[None, :]

    def active_sets(self) -> list[list[str]]:
        return [
            [self.columns[j] for j in np.nonzero(self.coefs[i] != 0.0)[0]]
            for i in range(len(self.lambdas))
        ]


def _standardize(X: np.ndarray):
    center = X.mean(axis=0)
    # population sd, matching the 1/n loss convention
    scale = X.std(axis=0)
    keep = scale > 0.0
    return center, scale, keep


def _cd_gram(G, c, lam, beta, indices, max_sweeps=2000, tol=1e-12):
    """Coordinate descent on the Gram form of (1/2n)||y - Xb||^2 + lam*||b||_1.

    ``G = X'X/n`` and ``c = X'y/n``; each coordinate update is then O(p)
    instead of O(n). Mutates ``beta`` in place, sweeping only ``indices``.
    """
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in indices:
            bj = beta[j]
            gjj = G[j, j]
            rho = c[j] - float(G[j] @ beta) + gjj * bj
            bj_new = _soft_threshold(rho, lam) / gjj
            if bj_new != bj:
                beta[j] = bj_new
                max_delta = max(max_delta, abs(bj_new - bj))
        if max_delta <= tol:
            break
    return beta


def _kkt_violations_gram(G, c, beta, lam, tol=KKT_TOL / 2):
    g = c - G @ beta
    zero = beta == 0.0
    viol = np.zeros(len(beta), dtype=bool)
    viol[zero] = np.abs(g[zero]) > lam + tol
    viol[~zero] = np.abs(g[~zero] - lam * np.sign(beta[~zero])) > tol
    return viol


def fit_lasso_path(
    X: DesignMatrix,
    y: np.ndarray,
    family: str = "linear",
    n_lambda: int = 100,
    lambda_min_ratio: float = 1e-3,
    lambdas: np.ndarray | None = None,
) -> LassoPath:
    """L1-regularized path by coordinate descent with soft-thresholding.

    Predictors are standardized internally to unit variance (constant
    columns are dropped with a warning); for the linear family the response
    is centered. The grid is geometric from lambda_max (the smallest lambda
    with an all-zero solution) down to ``lambda_min_ratio * lambda_max``,
    unless an explicit descending ``lambdas`` grid is given. Every grid
    solution satisfies the KKT conditions to within 1e-6.
    """
    if family not in ("linear", "logistic"):
        raise ValueError(f"unknown family {family!r}")
    y = np.asarray(y, dtype=float)
    if y.shape != (X.n,):
        raise ValueError("outcome length does not match design matrix")
    if family == "logistic" and not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("logistic outcome must be coded 0/1")

    center, scale, keep = _standardize(X.values)
    dropped = [c for c, k in zip(X.columns, keep) if not k]
    if dropped:
        logger.warning("dropping constant columns from lasso path: %s", dropped)
    cols = [c for c, k in zip(X.columns, keep) if k]
    Xs = (X.values[:, keep] - center[keep]) / scale[keep]
    n, p = Xs.shape

    if family == "linear":
        y_center = float(y.mean())
        y_c = y - y_center
        lam_max = float(np.max(np.abs(Xs.T @ y_c)) / n) if p else 1.0
    else:
        p0 = float(y.mean())
        lam_max = float(np.max(np.abs(Xs.T @ (y - p0))) / n) if p else 1.0

    if lambdas is None:
        # hair above the analytic value so the first grid solution is exactly
        # all-zero despite dot-product re-association noise
        lam_max = max(lam_max, 1e-12) * (1.0 + 1e-10)
        grid = lam_max * np.power(lambda_min_ratio, np.linspace(0.0, 1.0, n_lambda))
    else:
        grid = np.asarray(lambdas, dtype=float)
        if np.any(np.diff(grid) > 0):
            raise ValueError("explicit lambda grid must be descending")

    coefs = np.zeros((len(grid), p))
    intercepts = np.zeros(len(grid))
    beta = np.zeros(p)
    b0 = math.log(p0 / (1.0 - p0)) if family == "logistic" and 0.0 < y.mean() < 1.0 else 0.0

    if family == "linear":
        G = Xs.T @ Xs / n if p else np.zeros((0, 0))
        c_vec = Xs.T @ y_c / n if p else np.zeros(0)

    for i, lam in enumerate(grid):
        if family == "linear":
            beta = _solve_linear_at(G, c_vec, lam, beta)
            intercepts[i] = y_center - float((center[keep] / scale[keep]) @ beta)
        else:
            beta, b0 = _solve_logistic_at(Xs, y, lam, beta, b0)
            intercepts[i] = b0 - float((center[keep] / scale[keep]) @ beta)
        coefs[i] = beta

    return LassoPath(
        family=family,
        lambdas=grid,
        coefs=coefs,
        intercepts=intercepts,
        columns=cols,
        x_center=center[keep],
        x_scale=scale[keep],
        dropped_columns=dropped,
    )


def _solve_linear_at(G, c, lam, beta_warm):
    """Exact grid-point solution: CD to find the support, then a direct
    solve of the sign-restricted stationarity system on the active set."""
    beta = beta_warm.copy()
    all_idx = list(range(len(beta)))
    for _ in range(100):
        _cd_gram(G, c, lam, beta, all_idx, max_sweeps=3)
        active = np.nonzero(beta != 0.0)[0]
        if active.size:
            signs = np.sign(beta[active])
            try:
                sol = np.linalg.solve(G[np.ix_(active, active)], c[active] - lam * signs)
            except np.linalg.LinAlgError:
                sol = None
            if sol is not None and np.all(np.sign(sol) == signs):
                cand = np.zeros_like(beta)
                cand[active] = sol
                if not _kkt_violations_gram(G, c, cand, lam).any():
                    return cand
        if not _kkt_violations_gram(G, c, beta, lam).any():
            return beta
    raise RuntimeError(f"lasso coordinate descent failed KKT at lambda={lam:g}")


def _solve_weighted_lasso(Gw, cw, d, sw, sz, lam, beta_warm, b0_warm, max_rounds=60):
    """Weighted-surrogate lasso with an unpenalized intercept, in Gram form.

    ``Gw = X'WX/n``, ``cw = X'Wz/n``, ``d = X'W1/n``, ``sw = 1'W1/n``,
    ``sz = 1'Wz/n``. A few CD sweeps stabilize the support, then the
    sign-restricted stationarity system is solved directly; CD resumes if
    the sign pattern was wrong or a zero coordinate violates its bound.
    """
    beta = beta_warm.copy()
    b0 = b0_warm
    p = len(beta)

    def cd_sweeps(n_sweeps):
        nonlocal b0
        for _ in range(n_sweeps):
            md = 0.0
            b0_new = (sz - float(d @ beta)) / sw
            md = abs(b0_new - b0)
            b0 = b0_new
            for j in range(p):
                bj = beta[j]
                gjj = Gw[j, j]
                rho = cw[j] - b0 * d[j] - float(Gw[j] @ beta) + gjj * bj
                bn = _soft_threshold(rho, lam) / gjj
                if bn != bj:
                    beta[j] = bn
                    md = max(md, abs(bn - bj))
            if md <= 1e-12:
                break

    def surrogate_kkt_ok(b, i0):
        g = cw - i0 * d - Gw @ b
        zero = b == 0.0
        if np.any(np.abs(g[zero]) > lam + 1e-9):
            return False
        if np.any(np.abs(g[~zero] - lam * np.sign(b[~zero])) > 1e-9):
            return False
        return abs(sz - sw * i0 - float(d @ b)) <= 1e-9

    for _ in range(max_rounds):
        cd_sweeps(3)
        active = np.nonzero(beta != 0.0)[0]
        signs = np.sign(beta[active])
        k = active.size
        lhs = np.empty((k + 1, k + 1))
        lhs[0, 0] = sw
        lhs[0, 1:] = d[active]
        lhs[1:, 0] = d[active]
        lhs[1:, 1:] = Gw[np.ix_(active, active)]
        rhs = np.concatenate([[sz], cw[active] - lam * signs])
        try:
            sol = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            continue
        if k and not np.all(np.sign(sol[1:]) == signs):
            continue
        cand = np.zeros_like(beta)
        cand[active] = sol[1:]
        if surrogate_kkt_ok(cand, sol[0]):
            return cand, float(sol[0])
    # direct solves kept disagreeing (pathological signs); finish with CD
    cd_sweeps(2000)
    return beta, b0


def _solve_logistic_at(Xs, y, lam, beta_warm, b0_warm, max_newton=100):
    """Proximal-Newton: IRLS surrogates solved by coordinate descent.

    Each Newton step folds the weighted surrogate into Gram form so the
    inner CD sweeps cost O(p^2) scalar work instead of O(n*p).
    """
    beta = beta_warm.copy()
    b0 = b0_warm
    n, p = Xs.shape
    for _ in range(max_newton):
        eta = b0 + Xs @ beta
        mu = _sigmoid(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        z = eta + (y - mu) / w

        # Gram pieces of (1/2n) sum w(z - b0 - Xb)^2 + lam|b|
        Xw = Xs * w[:, None]
        Gw = Xw.T @ Xs / n
        cw = Xw.T @ z / n
        d = Xw.sum(axis=0) / n  # X'W1/n
        sw = float(w.sum()) / n
        sz = float(w @ z) / n

        beta, b0 = _solve_weighted_lasso(Gw, cw, d, sw, sz, lam, beta, b0)

        # KKT on the true logistic objective
        mu = _sigmoid(b0 + Xs @ beta)
        g = Xs.T @ (mu - y) / n
        g0 = float(np.sum(mu - y)) / n
        zero = beta == 0.0
        ok = (
            abs(g0) <= KKT_TOL / 4
            and np.all(np.abs(g[zero]) <= lam + KKT_TOL / 4)
            and np.all(np.abs(g[~zero] + lam * np.sign(beta[~zero])) <= KKT_TOL / 4)
        )
        if ok:
            return beta, b0
    raise RuntimeError(f"logistic lasso failed to meet KKT at lambda={lam:g}")


def kkt_residual(path: LassoPath, X: DesignMatrix, y: np.ndarray) -> np.ndarray:
    """Max KKT residual at each grid point (diagnostic; should be <= 1e-6)."""
    y = np.asarray(y, dtype=float)
    keep = [X.columns.index(c) for c in path.columns]
    Xs = (X.values[:, keep] - path.x_center) / path.x_scale
    n = Xs.shape[0]
    out = np.zeros(len(path.lambdas))
    for i, lam in enumerate(path.lambdas):
        beta = path.coefs[i]
        if path.family == "linear":
            y_c = y - y.mean()
            g = Xs.T @ (y_c - Xs @ beta) / n
            grad_plus = g - lam * np.sign(beta)
        else:
            eta = (path.intercepts[i] + float((path.x_center / path.x_scale) @ beta)) + Xs @ beta
            mu = _sigmoid(eta)
            g = -(Xs.T @ (mu - y)) / n
            grad_plus = g - lam * np.sign(beta)
        zero = beta == 0.0
        res_zero = np.maximum(np.abs(g[zero]) - lam, 0.0)
        res_active = np.abs(grad_plus[~zero])
        parts = [res_zero, res_active]
        out[i] = max((float(np.max(v)) for v in parts if v.size), default=0.0)
    return out


@dataclass
class CvResult:
    """Cross-validated lambda choice and the covariates active there."""

    family: str
    rule: str
    lambda_selected: float
    lambda_index: int
    cv_mean: np.ndarray
    cv_se: np.ndarray
    lambdas: np.ndarray
    active_set: list[str]


def _fold_assignments(y: np.ndarray, folds: int, seed: int, stratify: bool) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = len(y)
    assign = np.empty(n, dtype=int)
    if stratify:
        for cls in (0.0, 1.0):
            idx = np.nonzero(y == cls)[0]
            perm = rng.permutation(idx)
            assign[perm] = np.arange(len(perm)) % folds
    else:
        perm = rng.permutation(n)
        assign[perm] = np.arange(n) % folds
    return assign


def cv_select_lambda(
    X: DesignMatrix,
    y: np.ndarray,
    family: str = "linear",
    folds: int = 10,
    rule: str = "min",
    seed: int = 0,
    n_lambda: int = 100,
    lambda_min_ratio: float = 1e-3,
) -> CvResult:
    """Pick a lasso lambda by K-fold cross-validation.

    The grid comes from the full-data path; each fold refits over that grid
    and scores held-out loss (mean deviance for logistic, mean squared error
    for linear). ``rule="min"`` takes the loss-minimizing grid point;
    ``rule="1se"`` the largest lambda within one standard error of it. Folds
    are a deterministic function of ``seed`` and are stratified by outcome
    for the logistic family.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if rule not in ("min", "1se"):
        raise ValueError(f"unknown rule {rule!r}")
    y = np.asarray(y, dtype=float)

    full = fit_lasso_path(X, y, family=family, n_lambda=n_lambda, lambda_min_ratio=lambda_min_ratio)
    grid = full.lambdas

    stratify = family == "logistic"
    assign = _fold_assignments(y, folds, seed, stratify)
    if family == "logistic":
        for f in range(folds):
            tr = y[assign != f]
            if tr.min() == tr.max():
                raise ValueError(f"fold {f} training split has a single outcome class")

    losses = np.zeros((folds, len(grid)))
    for f in range(folds):
        tr = assign != f
        te = ~tr
        Xtr = DesignMatrix(X.values[tr], list(X.columns))
        sub = fit_lasso_path(Xtr, y[tr], family=family, lambdas=grid)
        # columns may differ if a fold sees a constant column; map back
        col_idx = [X.columns.index(c) for c in sub.columns]
        Xte = X.values[te][:, col_idx]
        slopes = sub.coefs_original_scale()
        eta = sub.intercepts[:, None] + slopes @ Xte.T  # (n_lambda, n_test)
        if family == "linear":
            losses[f] = np.mean((y[te][None, :] - eta) ** 2, axis=1)
        else:
            yt = y[te][None, :]
            losses[f] = np.mean(2.0 * (np.logaddexp(0.0, eta) - yt * eta), axis=1)

    cv_mean = losses.mean(axis=0)
    cv_se = losses.std(axis=0, ddof=1) / math.sqrt(folds)

    i_min = int(np.argmin(cv_mean))
    if rule == "min":
        i_sel = i_min
    else:
        ok = np.nonzero(cv_mean <= cv_mean[i_min] + cv_se[i_min])[0]
        i_sel = int(ok.min())  # grid is descending, so min index = largest lambda

    active = full.active_sets()[i_sel]
    return CvResult(
        family=family,
        rule=rule,
        lambda_selected=float(grid[i_sel]),
        lambda_index=i_sel,
        cv_mean=cv_mean,
        cv_se=cv_se,
        lambdas=grid,
        active_set=active,
    )
