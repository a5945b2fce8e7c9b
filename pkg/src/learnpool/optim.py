"""Box-projected first- and quasi-second-order minimizers on flat vectors.

Both drivers take ``fun(x) -> (f, g)`` and per-coordinate bounds (``-inf``
/ ``inf`` for free coordinates) and keep every iterate feasible.
"""

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search

from .errors import InvalidArgument, NumericFailure

CLAMP_TOL = 1e-12


@dataclass
class OptimResult:
    x: np.ndarray
    f: float
    trace: list = field(default_factory=list)
    clamps: list = field(default_factory=list)
    iterations: int = 0
    message: str = ""


def _bounds(n, lower, upper):
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=np.float64)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=np.float64)
    if lower.shape != (n,) or upper.shape != (n,) or np.any(lower > upper):
        raise InvalidArgument("bounds must be length-n vectors with lower <= upper")
    return lower, upper


class _Evaluator:
    """Memoizes the last evaluation and rejects non-finite values."""

    def __init__(self, fun):
        self.fun = fun
        self.key = None
        self.value = None
        self.iteration = 0
        self.count = 0

    def __call__(self, x):
        key = x.tobytes()
        if key != self.key:
            f, g = self.fun(x)
            self.count += 1
            if not np.isfinite(f) or not np.all(np.isfinite(g)):
                raise NumericFailure("objective or gradient is not finite", self.iteration)
            self.key, self.value = key, (float(f), np.asarray(g, dtype=np.float64))
        return self.value

    def f(self, x):
        return self(x)[0]

    def g(self, x):
        return self(x)[1]


def projected_gradient_norm(x, g, lower, upper):
    step = np.clip(x - g, lower, upper) - x
    return float(np.max(np.abs(step))) if step.size else 0.0


def projected_gd(fun, x0, gamma, max_iter, lower=None, upper=None, backtrack=True,
                 c1=1e-4, tol=1e-9, callback=None):
    """Projected gradient descent ``x <- P(x - t g)``.

    With ``backtrack`` the step starts at ``gamma`` every iteration and is
    halved until the Armijo condition holds on the projected point.
    """
    if gamma <= 0:
        raise InvalidArgument("step size gamma must be positive")
    if max_iter < 1:
        raise InvalidArgument("max_iter must be at least 1")
    x = np.asarray(x0, dtype=np.float64).copy()
    lower, upper = _bounds(x.size, lower, upper)
    x = np.clip(x, lower, upper)
    ev = _Evaluator(fun)
    f, g = ev(x)
    res = OptimResult(x=x, f=f, trace=[f], clamps=[0])
    if callback is not None:
        callback(0, x, f, 0)
    message = "max iterations reached"
    for it in range(1, max_iter + 1):
        ev.iteration = it
        t = gamma
        while True:
            raw = x - t * g
            x_new = np.clip(raw, lower, upper)
            f_new, g_new = ev(x_new)
            if not backtrack or f_new <= f + c1 * g @ (x_new - x):
                break
            t *= 0.5
            if t < 1e-20:
                x_new, f_new, g_new = x, f, g
                break
        step = float(np.max(np.abs(x_new - x))) if x.size else 0.0
        clamped = int(np.count_nonzero(np.abs(x_new - raw) > CLAMP_TOL))
        x, f, g = x_new, f_new, g_new
        res.trace.append(f)
        res.clamps.append(clamped)
        res.iterations = it
        if callback is not None:
            callback(it, x, f, clamped)
        if step <= tol:
            message = "step below tolerance"
            break
    res.x, res.f, res.message = x, f, message
    return res


def _two_loop(g, history):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if history:
        s, y, _ = history[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _mask_direction(d, x, lower, upper):
    blocked = ((x <= lower) & (d < 0)) | ((x >= upper) & (d > 0))
    d = d.copy()
    d[blocked] = 0.0
    return d


def _max_feasible_step(x, d, lower, upper):
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (upper - x) / d, np.inf)
        down = np.where(d < 0, (lower - x) / d, np.inf)
    return float(min(up.min(initial=np.inf), down.min(initial=np.inf)))


def lbfgs(fun, x0, max_iter, lower=None, upper=None, history_size=10, c1=1e-4, c2=0.9,
          grad_tol=1e-7, f_tol=1e-12, min_capped_step=1e-9, callback=None):
    """Limited-memory BFGS with a strong-Wolfe line search and box clamping.

    Search directions are zeroed on coordinates that sit on a bound and
    point outward.  The line search is capped at the largest step that
    stays inside the box, so a coordinate that runs into a bound stops
    exactly on it.  When that cap is below ``min_capped_step`` the search
    runs uncapped instead and the iterate is clamped into the box; whenever
    clamping moves a coordinate by more than CLAMP_TOL the curvature
    history is dropped.  If clamping undoes the decrease, a projected
    backtracking search along the same direction takes over, so the
    objective never increases.
    """
    if max_iter < 1:
        raise InvalidArgument("max_iter must be at least 1")
    x = np.asarray(x0, dtype=np.float64).copy()
    lower, upper = _bounds(x.size, lower, upper)
    x = np.clip(x, lower, upper)
    ev = _Evaluator(fun)
    f, g = ev(x)
    res = OptimResult(x=x, f=f, trace=[f], clamps=[0])
    if callback is not None:
        callback(0, x, f, 0)
    history = deque(maxlen=history_size)
    f_prev = None
    message = "max iterations reached"
    for it in range(1, max_iter + 1):
        ev.iteration = it
        if projected_gradient_norm(x, g, lower, upper) <= grad_tol:
            message = "projected gradient below tolerance"
            break
        d = _mask_direction(_two_loop(g, history), x, lower, upper)
        if not history or g @ d >= 0:
            history.clear()
            d = _mask_direction(-g, x, lower, upper)
            # unit-scale first step, as in minFunc
            d *= min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300))
        slope = g @ d
        if slope >= 0:
            message = "no feasible descent direction"
            break

        max_step = _max_feasible_step(x, d, lower, upper)
        capped = max_step >= min_capped_step
        accepted, limited = None, False
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # LineSearchWarning on non-convergence
            alpha = line_search(ev.f, ev.g, x, d, gfk=g, old_fval=f, c1=c1, c2=c2, maxiter=20,
                                amax=max_step if capped and np.isfinite(max_step) else None)[0]
        if alpha is None and capped and np.isfinite(max_step):
            # the Wolfe point lies beyond the box; settle for the largest feasible step
            raw = x + max_step * d
            x_new = np.clip(raw, lower, upper)
            f_new, g_new = ev(x_new)
            if f_new <= f + c1 * max_step * slope:
                accepted = (x_new, f_new, g_new,
                            int(np.count_nonzero(np.abs(x_new - raw) > CLAMP_TOL)))
                limited = True
        elif alpha is not None and alpha > 0:
            raw = x + alpha * d
            x_new = np.clip(raw, lower, upper)
            f_new, g_new = ev(x_new)
            clamped = int(np.count_nonzero(np.abs(x_new - raw) > CLAMP_TOL))
            if f_new <= f:
                accepted = (x_new, f_new, g_new, clamped)
                limited = capped and alpha >= max_step
        if accepted is None:
            # projected Armijo backtracking along d
            t = 1.0 if alpha is None or alpha <= 0 else alpha
            for _ in range(60):
                raw = x + t * d
                x_new = np.clip(raw, lower, upper)
                f_new, g_new = ev(x_new)
                if f_new <= f + c1 * g @ (x_new - x) and np.any(x_new != x):
                    clamped = int(np.count_nonzero(np.abs(x_new - raw) > CLAMP_TOL))
                    accepted = (x_new, f_new, g_new, clamped)
                    break
                t *= 0.5
            history.clear()
        if accepted is None:
            message = "line search failed to make progress"
            break

        x_new, f_new, g_new, clamped = accepted
        if clamped:
            history.clear()
        else:
            s, y = x_new - x, g_new - g
            sy = s @ y
            if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
                history.append((s, y, 1.0 / sy))
        f_prev = f
        x, f, g = x_new, f_new, g_new
        res.trace.append(f)
        res.clamps.append(clamped)
        res.iterations = it
        if callback is not None:
            callback(it, x, f, clamped)
        # a step stopped short by a bound says nothing about convergence
        if not limited and abs(f_prev - f) <= f_tol * max(1.0, abs(f)):
            message = "objective change below tolerance"
            break
    res.x, res.f, res.message = x, f, message
    return res
