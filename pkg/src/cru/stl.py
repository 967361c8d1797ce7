"""Loess smoothing and additive seasonal-trend decomposition (STL).

The decomposition follows the classic inner/outer loop layout: the inner
loop alternates cycle-subseries smoothing, a low-pass filter and trend
smoothing; the outer loop recomputes bisquare robustness weights from the
remainder and feeds them back into every loess fit.
"""

from dataclasses import dataclass

import numpy as np


class StlError(ValueError):
    """Invalid STL configuration or input."""


def _next_odd(x: float) -> int:
    n = int(np.ceil(x))
    return n if n % 2 == 1 else n + 1


@dataclass(frozen=True)
class StlConfig:
    period: int
    seasonal_span: int | None = None
    trend_span: int | None = None
    inner_iters: int = 2
    outer_iters: int = 1
    loess_degree: int = 1

    def __post_init__(self):
        if self.seasonal_span is None:
            object.__setattr__(self, "seasonal_span", 7)
        if self.trend_span is None:
            object.__setattr__(self, "trend_span", _next_odd(1.5 * self.period))
        if int(self.period) != self.period or self.period < 2:
            raise StlError(f"period must be an integer >= 2, got {self.period}")
        for name in ("seasonal_span", "trend_span"):
            span = getattr(self, name)
            if int(span) != span or span < 3 or span % 2 == 0:
                raise StlError(f"{name} must be an odd integer >= 3, got {span}")
        if self.inner_iters < 1:
            raise StlError("inner_iters must be >= 1")
        if self.outer_iters < 0:
            raise StlError("outer_iters must be >= 0")
        if self.loess_degree not in (0, 1):
            raise StlError("loess_degree must be 0 or 1")

    def check_length(self, n: int) -> None:
        if n < 2 * self.period:
            raise StlError(
                f"series of length {n} is shorter than two periods ({2 * self.period})"
            )
        if self.trend_span > n or self.seasonal_span > n:
            raise StlError(
                f"loess spans ({self.seasonal_span}, {self.trend_span}) exceed series length {n}"
            )

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "seasonal_span": self.seasonal_span,
            "trend_span": self.trend_span,
            "inner_iters": self.inner_iters,
            "outer_iters": self.outer_iters,
            "loess_degree": self.loess_degree,
        }


@dataclass(frozen=True)
class StlComponents:
    trend: np.ndarray
    seasonal: np.ndarray
    remainder: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.trend + self.seasonal + self.remainder


def tricube(u):
    """Tricube kernel ``(1 - |u|^3)^3`` on ``|u| < 1``, zero elsewhere."""
    a = np.abs(np.asarray(u, dtype=np.float64))
    w = np.where(a < 1.0, (1.0 - a**3) ** 3, 0.0)
    return float(w) if w.ndim == 0 else w


def bisquare(u):
    """Bisquare weight ``(1 - u^2)^2`` for ``0 <= u < 1``, zero for ``u >= 1``."""
    a = np.asarray(u, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("bisquare is defined for non-negative arguments only")
    c = np.minimum(a, 1.0)
    w = np.where(a < 1.0, (1.0 - c**2) ** 2, 0.0)
    return float(w) if w.ndim == 0 else w


def robustness_weights(remainder) -> np.ndarray:
    r = np.abs(np.asarray(remainder, dtype=np.float64))
    if r.size == 0:
        raise StlError("remainder must be non-empty")
    scale = 6.0 * np.median(r)
    if scale == 0.0:
        return np.ones_like(r)
    with np.errstate(over="ignore"):
        return bisquare(r / scale)


def _neighbourhoods(x, x0, span):
    """Index windows and radii of the ``span`` nearest points to each ``x0``.

    When ``span`` exceeds the number of points every point is used and the
    radius is the farthest distance widened by ``(span - n) / 2``, the usual
    convention for integer-spaced abscissae.
    """
    n = x.size
    if span >= n:
        idx = np.broadcast_to(np.arange(n), (x0.size, n))
        radius = np.abs(x0[:, None] - x[None, :]).max(axis=1) + (span - n) / 2.0
        return idx, radius
    if np.array_equal(x, x[0] + np.arange(n)):
        # unit spacing: the window is centred, clipped at the ends
        left = np.clip(np.rint(x0 - x[0] - (span - 1) / 2.0).astype(int), 0, n - span)
        idx = left[:, None] + np.arange(span)
        radius = np.abs(x[idx] - x0[:, None]).max(axis=1)
        return idx, radius
    d = np.abs(x0[:, None] - x[None, :])
    idx = np.sort(np.argsort(d, axis=1, kind="stable")[:, :span], axis=1)
    radius = np.take_along_axis(d, idx, axis=1).max(axis=1)
    return idx, radius


def _loess_eval(x, y, x0, span, degree, weights=None):
    """Evaluate a loess smoother of ``(x, y)`` at the points ``x0``.

    ``y`` (and ``weights``) may carry leading batch axes sharing ``x``.
    """
    idx, radius = _neighbourhoods(x, x0, span)
    radius = np.where(radius > 0, radius, 1.0)
    xs = x[idx]
    ys = y[..., idx]
    w = tricube((xs - x0[:, None]) / radius[:, None])
    if weights is not None:
        w = w * weights[..., idx]
    w = np.broadcast_to(w, ys.shape)

    sw = w.sum(axis=-1)
    empty = sw <= 0.0
    safe = np.where(empty, 1.0, sw)
    mean_y = np.einsum("...ij,...ij->...i", w, ys) / safe
    # all-zero neighbourhood: plain mean of the window
    fallback = ys.mean(axis=-1)
    if degree == 0:
        return np.where(empty, fallback, mean_y)
    mean_x = np.einsum("...ij,ij->...i", w, xs) / safe
    dx = xs - mean_x[..., None]
    sxx = np.einsum("...ij,...ij->...i", w, dx * dx)
    sxy = np.einsum("...ij,...ij->...i", w, dx * ys)
    # fewer than two distinct weighted abscissae: slope is undetermined
    spread = np.abs(dx).max(axis=-1, initial=0.0, where=w > 0)
    flat = spread <= 1e-12 * max(1.0, float(np.ptp(x)))
    slope = np.where(flat, 0.0, sxy / np.where(flat, 1.0, sxx))
    return np.where(empty, fallback, mean_y + slope * (x0 - mean_x))


def loess_fit(x, y, span: int, degree: int = 1, point_weights=None) -> np.ndarray:
    """Fitted values of a local polynomial (degree 0 or 1) regression.

    Each point uses its ``span`` nearest neighbours with tricube distance
    weights, optionally multiplied by ``point_weights``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise StlError(f"x and y must be equal-length vectors, got {x.shape} and {y.shape}")
    if x.size > 1 and np.any(np.diff(x) <= 0):
        raise StlError("x must be strictly increasing")
    if int(span) != span or span < 3 or span % 2 == 0:
        raise StlError(f"span must be an odd integer >= 3, got {span}")
    if span > x.size:
        raise StlError(f"span {span} exceeds number of points {x.size}")
    if degree not in (0, 1):
        raise StlError("degree must be 0 or 1")
    w = None
    if point_weights is not None:
        w = np.asarray(point_weights, dtype=np.float64)
        if w.shape != x.shape:
            raise StlError("point_weights must match x in length")
    return _loess_eval(x, y, x, int(span), degree, w)


def moving_average(v, window: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if int(window) != window or window < 1 or window > v.size:
        raise StlError(f"window {window} out of range for length {v.size}")
    return np.lib.stride_tricks.sliding_window_view(v, int(window)).mean(axis=1)


def _cycle_subseries(detrended, period, span, degree, rho):
    """Smooth every cycle-subseries and interleave, one extra cycle at each end."""
    n = detrended.size
    out = np.empty(n + 2 * period)
    full, extra = divmod(n, period)
    # phases j < extra have full + 1 points, the rest have full
    for phases, k in ((np.arange(extra), full + 1), (np.arange(extra, period), full)):
        if phases.size == 0:
            continue
        rows = phases[:, None] + period * np.arange(k)
        pos = np.arange(k, dtype=np.float64)
        at = np.arange(-1, k + 1, dtype=np.float64)
        fitted = _loess_eval(pos, detrended[rows], at, span, degree, rho[rows])
        out[phases[:, None] + period * np.arange(k + 2)] = fitted
    return out


def inner_loop_pass(y, trend_prev, cfg: StlConfig, rho=None):
    """One inner-loop pass; returns ``(seasonal, trend)``."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    cfg.check_length(n)
    trend_prev = np.asarray(trend_prev, dtype=np.float64)
    if trend_prev.shape != y.shape:
        raise StlError("trend_prev must match the series length")
    rho = np.ones(n) if rho is None else np.asarray(rho, dtype=np.float64)
    p = cfg.period

    detrended = y - trend_prev
    cycle = _cycle_subseries(detrended, p, cfg.seasonal_span, cfg.loess_degree, rho)

    low = moving_average(cycle, p)
    low = moving_average(low, p)
    low = moving_average(low, 3)
    t = np.arange(n, dtype=np.float64)
    low = _loess_eval(t, low, t, cfg.trend_span, 1)

    seasonal = cycle[p : p + n] - low
    trend = _loess_eval(t, y - seasonal, t, cfg.trend_span, cfg.loess_degree, rho)
    return seasonal, trend


def stl_decompose(y, cfg: StlConfig) -> StlComponents:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise StlError("stl_decompose expects a 1-D series")
    if not np.all(np.isfinite(y)):
        raise StlError("series contains non-finite values")
    cfg.check_length(y.size)

    trend = np.zeros_like(y)
    seasonal = np.zeros_like(y)
    rho = np.ones_like(y)
    for outer in range(cfg.outer_iters + 1):
        for _ in range(cfg.inner_iters):
            seasonal, trend = inner_loop_pass(y, trend, cfg, rho)
        if outer < cfg.outer_iters:
            rho = robustness_weights(y - trend - seasonal)
    return StlComponents(trend=trend, seasonal=seasonal, remainder=y - trend - seasonal)
