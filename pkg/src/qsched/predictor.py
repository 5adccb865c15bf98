"""Convergence-curve fitting and loss forecasting.

Two parametric families cover the common optimizer classes:

  sublinear    g(k) = 1/(a*k^2 + b*k + c) + d      (gradient-descent-like)
  exponential  h(k) = mu^(k - b) + c, 0 < mu < 1   (quasi-Newton-like)

Fits minimize an exponentially weighted sum of squared residuals so that
recent iterations dominate: the weight of the point at iteration k_i is
decay^(k_latest - k_i). Each fit is a closed-form initialization followed
by damped Gauss-Newton refinement; the refined curve must be non-increasing
with a positive denominator over the observed range and beyond, otherwise
the fit is rejected outright rather than silently returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Family, LossHistory

_EXP_CLAMP = 700.0  # exp() overflow guard


class FitError(ValueError):
    """A curve fit could not be produced from the given history."""


@dataclass(frozen=True, slots=True)
class SublinearFit:
    a: float
    b: float
    c: float
    d: float  # asymptote

    @property
    def asymptote(self) -> float:
        return self.d


@dataclass(frozen=True, slots=True)
class ExponentialFit:
    mu: float
    b: float  # iteration shift
    c: float  # asymptote

    @property
    def asymptote(self) -> float:
        return self.c


@dataclass(frozen=True, slots=True)
class FittedModel:
    family: Family
    params: SublinearFit | ExponentialFit
    weighted_rms_residual: float
    n_points: int

    @property
    def asymptote(self) -> float:
        return self.params.asymptote


@dataclass(frozen=True, slots=True)
class FitConfig:
    decay: float = 0.9            # weight base per iteration of distance
    min_history: int = 5          # records required before any fit is trusted
    max_refine_steps: int = 50
    refine_tolerance: float = 1e-9  # relative parameter change

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.min_history < 4:
            raise ValueError(f"min_history must be >= 4, got {self.min_history}")
        if self.refine_tolerance <= 0:
            raise ValueError("refine_tolerance must be > 0")


def sublinear_value(a: float, b: float, c: float, d: float, k: float) -> float:
    return 1.0 / (a * k * k + b * k + c) + d


def exponential_value(mu: float, b: float, c: float, k: float) -> float:
    z = (k - b) * math.log(mu)
    return math.exp(min(z, _EXP_CLAMP)) + c


def predict_loss_at(model: FittedModel, k: float) -> float:
    """Evaluate the fitted curve at (possibly fractional) iteration k.

    Clamped below at the curve's asymptote so forecasts never promise more
    quality than the model allows.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    p = model.params
    if model.family is Family.SUBLINEAR:
        value = sublinear_value(p.a, p.b, p.c, p.d, k)
    else:
        value = exponential_value(p.mu, p.b, p.c, k)
    return max(value, p.asymptote)


# ---------------------------------------------------------------------------
# fitting internals (array based; public functions unwrap LossHistory)
# ---------------------------------------------------------------------------

def _extract(history: LossHistory, cfg: FitConfig):
    n = len(history)
    if n < cfg.min_history:
        raise FitError(f"insufficient history: {n} records < min_history {cfg.min_history}")
    ks = np.fromiter((r.iteration for r in history.records), dtype=float, count=n)
    losses = np.fromiter((r.loss for r in history.records), dtype=float, count=n)
    return ks, losses


def _weights(ks: np.ndarray, decay: float) -> np.ndarray:
    if decay == 1.0:
        return np.ones_like(ks)
    return decay ** (ks[-1] - ks)


def _weighted_rms(resid: np.ndarray, w: np.ndarray) -> float:
    return math.sqrt(float(np.dot(w, resid * resid)) / float(np.sum(w)))


def _refine(theta, residual_fn, jacobian_fn, lb, ub, w, max_steps, tol):
    """Damped Gauss-Newton on weighted least squares with box bounds.

    The damping factor multiplies by 10 whenever a step raises the weighted
    residual (step rejected) and divides by 10 when it lowers it. When the
    plain step lands outside the bounds, the violating coordinates are pinned
    to their bound and the remaining ones re-solved (one active-set pass);
    without this the clipped step zigzags along the boundary and stalls.
    """
    theta = np.clip(np.asarray(theta, dtype=float), lb, ub)
    r = residual_fn(theta)
    if r is None or not np.all(np.isfinite(r)):
        raise FitError("fit infeasible: initialization outside the model domain")
    cost = float(np.dot(w, r * r))
    lam = 1e-3

    def try_candidate(cand):
        rc = residual_fn(cand)
        if rc is None or not np.all(np.isfinite(rc)):
            return None, math.inf
        with np.errstate(over="ignore"):
            return rc, float(np.dot(w, rc * rc))

    for _ in range(max_steps):
        J = jacobian_fn(theta)
        if not np.all(np.isfinite(J)):
            break
        A = J.T @ (J * w[:, None])
        g = J.T @ (w * r)
        damp = np.diag(np.maximum(np.diag(A), 1e-12))
        step_ok = False
        while lam <= 1e10:
            M = A + lam * damp
            try:
                delta = np.linalg.solve(M, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = np.clip(theta + delta, lb, ub)
            rc, cand_cost = try_candidate(cand)
            pinned = cand != theta + delta
            if np.any(pinned) and not np.all(pinned):
                free = ~pinned
                rhs = -g - A[:, pinned] @ (cand[pinned] - theta[pinned])
                try:
                    d_free = np.linalg.solve(M[np.ix_(free, free)], rhs[free])
                    cand2 = cand.copy()
                    cand2[free] = np.clip(theta[free] + d_free, lb[free], ub[free])
                    rc2, cost2 = try_candidate(cand2)
                    if cost2 < cand_cost:
                        cand, rc, cand_cost = cand2, rc2, cost2
                except np.linalg.LinAlgError:
                    pass
            if cand_cost <= cost:
                rel_change = float(np.max(np.abs(cand - theta) / (np.abs(theta) + 1e-12)))
                improvement = cost - cand_cost
                theta, r, cost = cand, rc, cand_cost
                lam = max(lam / 10.0, 1e-12)
                step_ok = True
                break
            lam *= 10.0
        if not step_ok:
            break
        if rel_change < tol:
            break
        if improvement <= 1e-12 * max(cost, 1e-300):
            break  # at the noise floor; further steps cannot matter
    return theta


def _final_cost(residual_fn, theta, w):
    r = residual_fn(theta)
    if r is None or not np.all(np.isfinite(r)):
        return math.inf
    return float(np.dot(w, r * r))


def fit_sublinear(history: LossHistory, cfg: FitConfig = FitConfig()) -> SublinearFit:
    """Fit g(k) = 1/(a*k^2 + b*k + c) + d by weighted least squares."""
    ks, losses = _extract(history, cfg)
    a, b, c, d = _fit_sublinear_arrays(ks, losses, cfg)
    return SublinearFit(a, b, c, d)


def _fit_sublinear_arrays(ks, losses, cfg):
    lo, hi = float(np.min(losses)), float(np.max(losses))
    if hi - lo <= 0.0:
        raise FitError("degenerate history: loss is constant")
    w = _weights(ks, cfg.decay)

    # (1) asymptote guess below the observed minimum
    d0 = lo - 0.1 * (hi - lo)
    # (2) closed-form weighted quadratic fit on the reciprocal targets
    y = 1.0 / (losses - d0)
    ks2 = ks * ks
    ones = np.ones_like(ks)
    X = np.column_stack((ks2, ks, ones))
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    a_raw, b0, c0 = (float(v) for v in coef)
    a0 = max(a_raw, 0.0)

    def repaired(a, b, c):
        # shift c so the initial denominator is positive everywhere observed
        den = a * ks2 + b * ks + c
        m = float(np.min(den))
        if m <= 0.0:
            c += -m + 1e-9 + 1e-4 * (float(np.max(den)) - m)
        return a, b, c

    def residual(theta):
        a, b, c, d = theta
        den = a * ks2 + b * ks + c
        if np.min(den) <= 0.0:
            return None
        return 1.0 / den + d - losses

    def jacobian(theta):
        a, b, c, _ = theta
        den = a * ks2 + b * ks + c
        inv2 = -1.0 / (den * den)
        return np.column_stack((ks2 * inv2, ks * inv2, inv2, ones))

    # (3) damped Gauss-Newton on all four parameters, a kept >= 0
    lb = np.array([0.0, -np.inf, -np.inf, -np.inf])
    ub = np.array([np.inf, np.inf, np.inf, np.inf])
    a, b, c, d = _refine((*repaired(a0, b0, c0), d0), residual, jacobian, lb, ub,
                         w, cfg.max_refine_steps, cfg.refine_tolerance)

    # The reciprocal transform can tilt the curvature negative even when the
    # generating curve has a > 0; the clipped start then converges onto the
    # a = 0 boundary, which is a separate basin. When that happens, refine a
    # second time from the mirrored curvature and keep the better fit.
    if a_raw < 0.0 and a <= 1e-9:
        a1 = -a_raw
        Xl = np.column_stack((ks, ones))
        coef1, *_ = np.linalg.lstsq(Xl * sw[:, None], (y - a1 * ks2) * sw, rcond=None)
        b1, c1 = (float(v) for v in coef1)
        alt = _refine((*repaired(a1, b1, c1), d0), residual, jacobian, lb, ub,
                      w, cfg.max_refine_steps, cfg.refine_tolerance)
        if _final_cost(residual, alt, w) < _final_cost(residual, (a, b, c, d), w):
            a, b, c, d = alt

    # (4) constraint checks: positive denominator and a non-increasing curve
    # from the first observed iteration onward. With a >= 0 the denominator
    # slope 2*a*k + b is non-decreasing, so checking at k0 covers all k >= k0.
    k0 = float(ks[0])
    slope0 = 2.0 * a * k0 + b
    if slope0 < 0.0:
        if slope0 >= -1e-9 * (1.0 + abs(b)):
            b = -2.0 * a * k0  # round-off projection
        else:
            raise FitError("fit infeasible: curve not non-increasing over the data range")
    if a * k0 * k0 + b * k0 + c <= 0.0:
        raise FitError("fit infeasible: non-positive denominator")
    return float(a), float(b), float(c), float(d)


def fit_exponential(history: LossHistory, cfg: FitConfig = FitConfig()) -> ExponentialFit:
    """Fit h(k) = mu^(k - b) + c by weighted least squares."""
    ks, losses = _extract(history, cfg)
    mu, b, c = _fit_exponential_arrays(ks, losses, cfg)
    return ExponentialFit(mu, b, c)


def _fit_exponential_arrays(ks, losses, cfg):
    lo, hi = float(np.min(losses)), float(np.max(losses))
    if hi - lo <= 0.0:
        raise FitError("degenerate history: loss is constant")
    w = _weights(ks, cfg.decay)

    span = hi - lo
    c0 = lo - 0.1 * span
    # rate guess: median ratio of consecutive loss drops
    drops = losses[:-1] - losses[1:]
    tiny = 1e-12 * span
    valid = (drops[:-1] > tiny) & (drops[1:] > tiny)
    if np.any(valid):
        ratios = drops[1:][valid] / drops[:-1][valid]
        mu0 = float(np.clip(np.median(ratios), 0.01, 0.99))
    else:
        mu0 = 0.5
    # shift guess from a weighted log-linear regression of log(loss - c0) on k,
    # restricted to the points where the decaying term still dominates the
    # asymptote-guess error (a long converged tail would poison the slope)
    informative = losses - c0 >= 0.2 * span
    z = np.log(losses[informative] - c0)
    if z.size >= 3:
        s, t = np.polyfit(ks[informative], z, 1, w=np.sqrt(w[informative]))
        b0 = -t / s if s < -1e-12 else 0.0
    else:
        # nearly everything converged; anchor the shift on the first point
        b0 = float(ks[0]) - float(np.log(losses[0] - c0)) / math.log(mu0)

    def residual(theta):
        mu, b, c = theta
        z = (ks - b) * math.log(mu)
        return np.exp(np.minimum(z, _EXP_CLAMP)) + c - losses

    def jacobian(theta):
        mu, b, c = theta
        lmu = math.log(mu)
        e = np.exp(np.minimum((ks - b) * lmu, _EXP_CLAMP))
        return np.column_stack((e * (ks - b) / mu, -lmu * e, np.ones_like(ks)))

    lb = np.array([1e-6, -np.inf, -np.inf])
    ub = np.array([1.0 - 1e-6, np.inf, np.inf])
    mu, b, c = _refine((mu0, b0, c0), residual, jacobian, lb, ub,
                       w, cfg.max_refine_steps, cfg.refine_tolerance)
    return float(mu), float(b), float(c)


def weighted_rms_residual(history: LossHistory, params, cfg: FitConfig = FitConfig()) -> float:
    """Weighted RMS of the fit residuals, same weights as used for fitting."""
    ks, losses = _extract(history, cfg)
    w = _weights(ks, cfg.decay)
    if isinstance(params, SublinearFit):
        fitted = 1.0 / (params.a * ks * ks + params.b * ks + params.c) + params.d
    else:
        z = (ks - params.b) * math.log(params.mu)
        fitted = np.exp(np.minimum(z, _EXP_CLAMP)) + params.c
    return _weighted_rms(fitted - losses, w)


def select_model(history: LossHistory, cfg: FitConfig = FitConfig(),
                 family: Family | None = None) -> FittedModel:
    """Fit both families and keep the one with the lower weighted residual.

    When the job's optimizer family is known, pass it as ``family`` and only
    that family is fitted. Residual ties (within 1e-12) go to sublinear.
    """
    ks, losses = _extract(history, cfg)
    n = len(ks)
    w = _weights(ks, cfg.decay)

    candidates = []
    failures = []
    if family in (None, Family.SUBLINEAR):
        try:
            a, b, c, d = _fit_sublinear_arrays(ks, losses, cfg)
            fitted = 1.0 / (a * ks * ks + b * ks + c) + d
            rms = _weighted_rms(fitted - losses, w)
            candidates.append(FittedModel(Family.SUBLINEAR, SublinearFit(a, b, c, d), rms, n))
        except FitError as exc:
            failures.append(f"sublinear: {exc}")
    if family in (None, Family.EXPONENTIAL):
        try:
            mu, b, c = _fit_exponential_arrays(ks, losses, cfg)
            z = (ks - b) * math.log(mu)
            fitted = np.exp(np.minimum(z, _EXP_CLAMP)) + c
            rms = _weighted_rms(fitted - losses, w)
            candidates.append(FittedModel(Family.EXPONENTIAL, ExponentialFit(mu, b, c), rms, n))
        except FitError as exc:
            failures.append(f"exponential: {exc}")

    if not candidates:
        raise FitError("no model: " + "; ".join(failures))
    if len(candidates) == 1:
        return candidates[0]
    sub, exp = candidates
    if exp.weighted_rms_residual < sub.weighted_rms_residual - 1e-12:
        return exp
    return sub


def backtest_error(history: LossHistory, cfg: FitConfig, horizon: int,
                   family: Family | None = None) -> float:
    """Mean relative error of forecasts ``horizon`` iterations ahead.

    For each prefix with at least min_history records, fits on the prefix
    and compares the prediction at (last prefix iteration + horizon) with
    the recorded loss there. Prefixes whose target iteration was never
    recorded are skipped.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    n = len(history)
    if n <= cfg.min_history + horizon:
        raise FitError(
            f"insufficient history: need more than {cfg.min_history + horizon} records, have {n}"
        )
    ks, losses = _extract(history, cfg)
    errors = []
    for m in range(cfg.min_history, n - horizon + 1):
        k_target = int(ks[m - 1]) + horizon
        if not history.has_iteration(k_target):
            continue
        actual = history.record_at(k_target).loss
        prefix = LossHistory(history.records[:m])
        try:
            model = select_model(prefix, cfg, family)
        except FitError:
            continue
        predicted = predict_loss_at(model, float(k_target))
        errors.append(abs(predicted - actual) / max(abs(actual), 1e-12))
    if not errors:
        raise FitError("no model could be fitted on any prefix")
    return float(np.mean(errors))
