"""Implicit integrator for semi-explicit DAE systems with a 0/1 mass mask.

Systems have the form  mask * y' = f(t, y)  where mask is a diagonal 0/1
vector: rows with mask 0 are algebraic constraints f_row(t, y) = 0, as
produced by collocation discretizations whose boundary and interface rows
were replaced by condition residuals.

The stepper is variable-step BDF1/BDF2 with a chord Newton iteration and
dense LU solves. Local error is estimated from the predictor-corrector
difference over the differential rows only; steps land exactly on requested
output times, so constraints hold at outputs to Newton accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericError


@dataclass(eq=False)
class DAESystem:
    dim: int
    rhs: object  # f(t, y) -> (dim,)
    mass_mask: np.ndarray  # 0/1 vector; 0 marks an algebraic row
    jacobian: object = None  # optional f(t, y) -> (dim, dim); else finite differences

    def __post_init__(self):
        mask = np.asarray(self.mass_mask, dtype=float)
        if mask.shape != (self.dim,) or not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mass_mask must be a 0/1 vector of length dim")
        self.mass_mask = mask
        self.diff_rows = np.flatnonzero(mask == 1)
        self.alg_rows = np.flatnonzero(mask == 0)

    def jac(self, t, y):
        if self.jacobian is not None:
            return self.jacobian(t, y)
        return _fd_jacobian(self.rhs, t, y)


@dataclass
class StepperConfig:
    rtol: float = 1e-9
    atol: float = 1e-9
    dt_init: float = 0.0  # 0 -> automatic
    dt_min: float = 1e-14
    dt_max: float = np.inf
    max_newton_iters: int = 8
    max_steps: int = 200_000
    adaptive: bool = True
    order: int = 2  # highest BDF order used

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if not (self.dt_min <= (self.dt_init or self.dt_min) <= self.dt_max):
            raise ValueError("need dt_min <= dt_init <= dt_max")


def _fd_jacobian(rhs, t, y):
    n = len(y)
    base = rhs(t, y)
    jac = np.empty((n, n))
    for k in range(n):
        h = 1e-7 * max(abs(y[k]), 1.0)
        yp = y.copy()
        yp[k] += h
        jac[:, k] = (rhs(t, yp) - base) / h
    return jac


def consistent_init(system: DAESystem, y0_guess, t0: float = 0.0, atol: float = 1e-10, max_iters: int = 25):
    """Project the algebraic rows onto their constraints, Newton on algebraic vars.

    Differential entries of the guess are left untouched.
    """
    y = np.array(y0_guess, dtype=float)
    alg = system.alg_rows
    if len(alg) == 0:
        return y
    for _ in range(max_iters):
        g = system.rhs(t0, y)[alg]
        if np.max(np.abs(g)) <= atol:
            return y
        jac = system.jac(t0, y)[np.ix_(alg, alg)]
        try:
            delta = np.linalg.solve(jac, g)
        except np.linalg.LinAlgError as exc:
            raise NumericError("consistent_init: singular constraint Jacobian") from exc
        y[alg] -= delta
    g = system.rhs(t0, y)[alg]
    if np.max(np.abs(g)) <= atol:
        return y
    raise NumericError(
        "consistent_init did not converge; provide a better initial guess "
        f"(constraint residual {np.max(np.abs(g)):.3e})"
    )


# local error is controlled against this fraction of the user tolerance, so
# accumulated (global) error stays near the requested tolerances despite the
# low method order
ERR_TARGET = 0.05


class _NewtonWorkspace:
    """Holds the chord-iteration Jacobian and its factorization."""

    def __init__(self, system):
        self.system = system
        self.jac = None
        self.fresh = False
        self.lu = None
        self.scale = None  # alpha/h the factorization was built for

    def refresh(self, t, y):
        self.jac = self.system.jac(t, y)
        self.fresh = True
        self.scale = None

    def ensure_factor(self, coeff):
        # keep a slightly stale factorization: the chord iteration absorbs
        # small coefficient drift and we avoid an LU per step
        if self.lu is not None and self.scale is not None:
            if abs(self.scale - coeff) <= 0.15 * coeff:
                return
        mat = np.diag(self.system.mass_mask * coeff) - self.jac
        if not np.all(np.isfinite(mat)):
            raise NumericError("non-finite Jacobian")
        self.lu = scipy.linalg.lu_factor(mat)
        self.scale = coeff

    def solve(self, res):
        return scipy.linalg.lu_solve(self.lu, res)


def integrate(system: DAESystem, y0, t_span, config: StepperConfig = None, output_times=None):
    """Integrate mask * y' = f(t, y) over t_span, returning states at output_times.

    y0 must be consistent (see consistent_init). Steps are clipped to land
    exactly on every output time.
    """
    config = config or StepperConfig()
    t0, t_end = float(t_span[0]), float(t_span[1])
    if output_times is None:
        output_times = np.array([t_end])
    output_times = np.asarray(output_times, dtype=float)
    if np.any(output_times < t0 - 1e-14) or np.any(output_times > t_end + 1e-14):
        raise ValueError("output_times must lie within t_span")
    y = np.array(y0, dtype=float)

    outputs = np.empty((len(output_times), system.dim))
    emitted = 0
    if np.isclose(output_times[0], t0):
        outputs[0] = y
        emitted = 1

    work = _NewtonWorkspace(system)
    work.refresh(t0, y)

    # never let the step grow to a scale where the iteration matrix turns
    # into the bare (possibly singular) rhs Jacobian
    h_cap = min(config.dt_max, (t_end - t0) / 5.0) if t_end > t0 else config.dt_max
    h = config.dt_init if config.dt_init > 0 else _initial_step(system, t0, y, config)
    h = min(h, h_cap)
    t = t0
    hist_t = [t0]
    hist_y = [y.copy()]
    steps = 0

    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        steps += 1
        if steps > config.max_steps:
            raise NumericError(f"step limit {config.max_steps} exceeded at t={t:.6g}")
        h = min(h, t_end - t)
        if emitted < len(output_times):
            next_out = output_times[emitted]
            if t + h > next_out - 1e-14 * max(1.0, abs(next_out)):
                h = next_out - t
        if h < config.dt_min:
            raise NumericError(f"step size {h:.3e} fell below dt_min at t={t:.6g}")

        order = 2 if (len(hist_t) >= 2 and config.order >= 2) else 1
        y_new, err_norm, converged = _attempt_step(system, work, hist_t, hist_y, t, h, order, config)

        if not converged:
            if not work.fresh:
                work.refresh(t, hist_y[-1])
                continue
            h *= 0.5
            continue
        ratio = err_norm / ERR_TARGET
        if config.adaptive and ratio > 1.0:
            h *= max(0.2, 0.9 * ratio ** (-1.0 / (order + 1)))
            continue

        t = t + h
        y = y_new
        hist_t.append(t)
        hist_y.append(y.copy())
        if len(hist_t) > 3:
            hist_t.pop(0)
            hist_y.pop(0)
        while emitted < len(output_times) and output_times[emitted] <= t + 1e-12 * max(1.0, abs(t)):
            outputs[emitted] = y
            emitted += 1
        work.fresh = False
        if config.adaptive:
            grow = 0.9 * ratio ** (-1.0 / (order + 1)) if ratio > 0 else 5.0
            h = min(h_cap, h * min(5.0, max(0.2, grow)))

    if emitted < len(output_times):
        # end time reached within rounding of remaining outputs
        outputs[emitted:] = y
    return output_times, outputs


def _initial_step(system, t0, y, config):
    f0 = system.rhs(t0, y)
    d = system.diff_rows
    wt = config.atol + config.rtol * np.abs(y[d])
    rate = np.max(np.abs(f0[d]) / wt) if len(d) else 1.0
    return max(config.dt_min, min(1e-2, 0.01 / max(rate, 1e-8)))


def _predict(hist_t, hist_y, t_new, order):
    """Polynomial extrapolation through the retained history, degree <= order."""
    if len(hist_t) < 2:
        return hist_y[-1].copy()
    if order == 1 or len(hist_t) < 3:
        t1, t0v = hist_t[-2], hist_t[-1]
        y1, y0v = hist_y[-2], hist_y[-1]
        return y0v + (y0v - y1) / (t0v - t1) * (t_new - t0v)
    ta, tb, tc = hist_t[-3], hist_t[-2], hist_t[-1]
    ya, yb, yc = hist_y[-3], hist_y[-2], hist_y[-1]
    la = (t_new - tb) * (t_new - tc) / ((ta - tb) * (ta - tc))
    lb = (t_new - ta) * (t_new - tc) / ((tb - ta) * (tb - tc))
    lc = (t_new - ta) * (t_new - tb) / ((tc - ta) * (tc - tb))
    return la * ya + lb * yb + lc * yc


def _attempt_step(system, work, hist_t, hist_y, t, h, order, config):
    """One implicit BDF step; returns (y_new, error_norm, converged)."""
    t_new = t + h
    y_prev = hist_y[-1]
    if order == 2:
        h_prev = hist_t[-1] - hist_t[-2]
        r = h / h_prev
        a0 = (1 + 2 * r) / (1 + r)
        a1 = -(1 + r)
        a2 = r**2 / (1 + r)
        hist_part = a1 * hist_y[-1] + a2 * hist_y[-2]
    else:
        a0, hist_part = 1.0, -y_prev

    mask = system.mass_mask
    coeff = a0 / h
    try:
        work.ensure_factor(coeff)
    except (NumericError, ValueError):
        return y_prev.copy(), np.inf, False

    y = _predict(hist_t, hist_y, t_new, order)
    alg = system.alg_rows
    converged = False
    disp = np.inf
    disp_prev = np.inf
    for it in range(config.max_newton_iters + 1):
        res = mask * (a0 * y + hist_part) / h - system.rhs(t_new, y)
        if not np.all(np.isfinite(res)):
            return y_prev.copy(), np.inf, False
        wt = config.atol + config.rtol * np.abs(y)
        # displacement criterion with a contraction-rate guard: a stalled
        # iteration (rate near 1) can shrink updates without solving the
        # stiff residual directions, so it must not count as converged
        if it > 0 and disp <= 0.05:
            rate = disp / disp_prev if np.isfinite(disp_prev) and disp_prev > 0 else np.inf
            alg_ok = len(alg) == 0 or np.max(np.abs(res[alg]) / wt[alg]) <= 1.0
            if alg_ok and (disp == 0.0 or rate <= 0.9):
                converged = True
                break
        if it == config.max_newton_iters:
            break
        delta = work.solve(res)
        if not np.all(np.isfinite(delta)):
            return y_prev.copy(), np.inf, False
        y = y - delta
        disp_prev = disp
        disp = np.max(np.abs(delta) / wt)
    if not converged:
        return y, np.inf, False

    if not config.adaptive:
        return y, 0.0, True
    if len(hist_t) < 2:
        # first step: compare against the explicit-Euler prediction
        f_prev = system.rhs(t, y_prev)
        y_pred = y_prev + h * f_prev
    else:
        y_pred = _predict(hist_t, hist_y, t_new, order)
    est = (y - y_pred) / (2.0 if order == 1 else 3.0)
    d = system.diff_rows
    wt = config.atol + config.rtol * np.abs(y[d])
    err_norm = float(np.sqrt(np.mean((est[d] / wt) ** 2))) if len(d) else 0.0
    return y, err_norm, True
