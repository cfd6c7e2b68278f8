"""Cumulative traffic traces: piecewise-linear sample paths and the
measurements the bound checks need.

A trace is a list of (time, cumulative) events; between events the path
interpolates linearly, past the last event it stays flat, and a jump is
written as two events at the same time.  Evaluation mirrors the curve
conventions: ``eval`` is the left-continuous value, ``eval_right`` the
limit from above.

Float evaluation of exact curves lives here too, as cached numpy
tables, so simulation loops never touch Fraction arithmetic.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from .curves import INF, Curve

__all__ = [
    "TraceError",
    "CausalityError",
    "Trace",
    "curve_values",
    "curve_values_right",
    "backlog_of",
    "delay_of",
    "max_backlog",
    "max_delay",
    "mod_conv",
    "mod_conv_alt",
    "time_shift",
    "is_envelope_of",
    "trace_add",
    "dump_trace",
    "load_trace",
]


class TraceError(ValueError):
    """Malformed trace data."""


class CausalityError(TraceError):
    """A departure trace exceeds its arrival trace somewhere."""


@dataclass(frozen=True, eq=False)
class Trace:
    """Event times and cumulative values, both nondecreasing from (0, 0)."""

    times: np.ndarray
    values: np.ndarray
    horizon: float = field(default=None)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or v.ndim != 1 or t.size != v.size or t.size == 0:
            raise TraceError("times and values must be equal-length 1-d arrays")
        if not (np.isfinite(t).all() and np.isfinite(v).all()):
            raise TraceError("trace events must be finite")
        if t[0] != 0.0 or v[0] != 0.0:
            raise TraceError("traces start at (0, 0)")
        if (np.diff(t) < 0).any() or (np.diff(v) < 0).any():
            raise TraceError("times and values must be nondecreasing")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "horizon",
                           float(t[-1]) if self.horizon is None else float(self.horizon))

    @classmethod
    def from_pairs(cls, pairs: Iterable, horizon: Optional[float] = None) -> "Trace":
        pts = list(pairs)
        return cls(np.array([p[0] for p in pts], dtype=float),
                   np.array([p[1] for p in pts], dtype=float), horizon)

    @property
    def total(self) -> float:
        return float(self.values[-1])

    def eval(self, t):
        """Left-continuous value at t (first of duplicate events); 0 before 0."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        idx = np.searchsorted(self.times, tt, side="left")
        out = np.empty(tt.shape)
        n = self.times.size
        past = idx >= n
        out[past] = self.values[-1]
        at = ~past & (self.times[np.minimum(idx, n - 1)] == tt)
        out[at] = self.values[idx[at]]
        lo = ~past & ~at & (idx == 0)
        out[lo] = 0.0
        mid = ~past & ~at & (idx > 0)
        i = idx[mid]
        t0, t1 = self.times[i - 1], self.times[i]
        v0, v1 = self.values[i - 1], self.values[i]
        out[mid] = v0 + (v1 - v0) * (tt[mid] - t0) / (t1 - t0)
        return float(out[0]) if scalar else out

    def eval_right(self, t):
        """Limit from above at t (last of duplicate events); 0 before 0."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        idx = np.searchsorted(self.times, tt, side="right")
        out = np.empty(tt.shape)
        n = self.times.size
        past = idx >= n
        out[past] = self.values[-1]
        at = ~past & (idx > 0)
        at_exact = np.zeros_like(at)
        at_exact[at] = self.times[idx[at] - 1] == tt[at]
        out[at_exact] = self.values[idx[at_exact] - 1]
        lo = ~past & ~at_exact & (idx == 0)
        out[lo] = 0.0
        mid = ~past & ~at_exact & (idx > 0)
        i = idx[mid]
        t0, t1 = self.times[i - 1], self.times[i]
        v0, v1 = self.values[i - 1], self.values[i]
        out[mid] = v0 + (v1 - v0) * (tt[mid] - t0) / (t1 - t0)
        return float(out[0]) if scalar else out

    def first_at_level(self, y, strict: bool = False):
        """Earliest time the trace reaches (or, if strict, exceeds) level y."""
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        yy = np.atleast_1d(y)
        side = "right" if strict else "left"
        idx = np.searchsorted(self.values, yy, side=side)
        out = np.empty(yy.shape)
        n = self.values.size
        never = idx >= n
        out[never] = np.inf
        zero = ~never & (idx == 0)
        out[zero] = self.times[0]
        mid = ~never & (idx > 0)
        i = idx[mid]
        v0, v1 = self.values[i - 1], self.values[i]
        t0, t1 = self.times[i - 1], self.times[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(v1 > v0, (yy[mid] - v0) / (v1 - v0), 1.0)
        out[mid] = t0 + frac * (t1 - t0)
        return float(out[0]) if scalar else out


# --- float evaluation of exact curves -----------------------------------


@lru_cache(maxsize=512)
def _curve_table(curve: Curve):
    t = np.array([float(r[0]) for r in curve.bps])
    v = np.array([float(r[1]) for r in curve.bps])
    s = np.array([np.inf if r[2] == INF else float(r[2]) for r in curve.bps])
    return t, v, s


def curve_values(curve: Curve, x):
    """Float curve values (left-continuous), vectorized."""
    tk, vk, sk = _curve_table(curve)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xx = np.atleast_1d(x)
    idx = np.searchsorted(tk, xx, side="left") - 1
    neg = idx < 0  # x <= 0
    i = np.maximum(idx, 0)
    with np.errstate(invalid="ignore"):
        out = vk[i] + sk[i] * (xx - tk[i])  # t strictly past the knot: inf*dt is inf
    out[neg] = 0.0
    return float(out[0]) if scalar else out


def curve_values_right(curve: Curve, x):
    """Float right-limits of a curve, vectorized."""
    tk, vk, sk = _curve_table(curve)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xx = np.atleast_1d(x)
    idx = np.searchsorted(tk, xx, side="right") - 1
    neg = idx < 0  # x < 0
    i = np.maximum(idx, 0)
    dt = xx - tk[i]
    out = np.where(np.isinf(sk[i]), np.inf, vk[i] + np.where(np.isinf(sk[i]), 0.0, sk[i]) * dt)
    out[neg] = 0.0
    return float(out[0]) if scalar else out


# --- measurements --------------------------------------------------------


def _check_causal(arrivals: Trace, departures: Trace, tol: float) -> None:
    merged = np.union1d(arrivals.times, departures.times)
    worst = max((departures.eval(merged) - arrivals.eval(merged)).max(),
                (departures.eval_right(merged) - arrivals.eval_right(merged)).max())
    if worst > tol:
        raise CausalityError(f"departures exceed arrivals by {worst:.3g}")


def backlog_of(arrivals: Trace, departures: Trace, t, tol: float = 1e-9):
    """Backlog arrivals(t) - departures(t); raises if causality fails."""
    _check_causal(arrivals, departures, tol)
    return arrivals.eval(t) - departures.eval(t)


def delay_of(arrivals: Trace, departures: Trace, t, tol: float = 1e-9):
    """Virtual delay at t: the smallest d >= 0 with arrivals(t-d) <= departures(t).

    For a left-continuous nondecreasing trace the set of x with
    arrivals(x) <= level is closed, so the infimum is t minus the last
    such x, clamped at zero.
    """
    _check_causal(arrivals, departures, tol)
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    tt = np.atleast_1d(t)
    y = np.atleast_1d(departures.eval(tt))
    last_below = arrivals.first_at_level(y, strict=True)  # sup{x : arrivals(x) <= y}
    w = np.where(np.isinf(last_below), 0.0, np.maximum(tt - last_below, 0.0))
    return float(w[0]) if scalar else w


def max_backlog(arrivals: Trace, departures: Trace) -> float:
    """Largest vertical gap, scanning event corners on both sides."""
    merged = np.union1d(arrivals.times, departures.times)
    g1 = arrivals.eval(merged) - departures.eval(merged)
    g2 = arrivals.eval_right(merged) - departures.eval_right(merged)
    return float(max(g1.max(), g2.max(), 0.0))


def max_delay(arrivals: Trace, departures: Trace) -> float:
    """Largest virtual delay over the whole trace, horizon included.

    The delay is piecewise linear in t between corners, which sit at
    event times and wherever the departure level crosses an event value
    of either trace; the level crossings enter as one-sided limits via
    first-crossing differences.  Scanning all of them is exact for PL
    traces.
    """
    hz = max(arrivals.horizon, departures.horizon)
    tc = np.union1d(np.union1d(arrivals.times, departures.times), [hz])
    y = departures.eval(tc)
    last_below = arrivals.first_at_level(y, strict=True)
    w1 = np.where(np.isinf(last_below), 0.0, tc - last_below)
    best = w1.max()
    levels = np.union1d(arrivals.values, departures.values)
    levels = levels[(levels >= 0.0) & (levels <= departures.total)]
    if levels.size:
        w2 = departures.first_at_level(levels) - arrivals.first_at_level(levels)
        best = max(best, w2.max())
        ds = departures.first_at_level(levels, strict=True)
        as_ = arrivals.first_at_level(levels, strict=True)
        ok = np.isfinite(ds) & np.isfinite(as_)
        if ok.any():
            best = max(best, (ds[ok] - as_[ok]).max())
    return float(max(best, 0.0))


# --- interval service ----------------------------------------------------


def _inner_candidates(arrivals: Trace, g: Curve, t0: float, t: float) -> np.ndarray:
    u = t - t0
    tk, _, _ = _curve_table(g)
    ks = tk[(tk > 0) & (tk < u)]
    ev = arrivals.times[(arrivals.times > t0) & (arrivals.times < t)]
    return np.unique(np.concatenate([[0.0, u], ks, t - ev]))


def mod_conv(arrivals: Trace, g: Curve, t0: float, t: float, backlog0: float) -> float:
    """Service floor over (t0, t]: fresh curve from t0, or the backlog at t0
    plus the curve applied to arrivals inside the interval.

        min( g(t - t0),
             backlog0 + inf over 0 <= u <= t-t0 of
                 arrivals(t0, t-u] + g(u) )
    """
    if not 0 <= t0 <= t:
        raise TraceError("need 0 <= t0 <= t")
    taus = _inner_candidates(arrivals, g, t0, t)
    a0 = arrivals.eval(t0)
    inner = (arrivals.eval(t - taus) - a0 + curve_values(g, taus)).min()
    return float(min(curve_values(g, t - t0), backlog0 + inner))


def mod_conv_alt(arrivals: Trace, departures: Trace, g: Curve, t0: float, t: float) -> float:
    """Same floor, written against the departure level at t0 instead of the
    backlog; equal to mod_conv with backlog0 = arrivals(t0) - departures(t0)."""
    if not 0 <= t0 <= t:
        raise TraceError("need 0 <= t0 <= t")
    taus = _inner_candidates(arrivals, g, t0, t)
    d0 = departures.eval(t0)
    inner = (arrivals.eval(t - taus) - d0 + curve_values(g, taus)).min()
    return float(min(curve_values(g, t - t0), inner))


def time_shift(arrivals: Trace, departures: Trace, t0: float):
    """Re-root both traces at t0: the shifted arrivals start with the
    backlog as an immediate burst, the shifted departures from zero."""
    a0, d0 = arrivals.eval(t0), departures.eval(t0)
    b0 = a0 - d0
    at = arrivals.times[arrivals.times > t0]
    av = arrivals.eval(at) if at.size else np.empty(0)
    sa = Trace(np.concatenate([[0.0, 0.0], at - t0]),
               np.concatenate([[0.0, b0], av - a0 + b0]),
               horizon=arrivals.horizon - t0)
    dt = departures.times[departures.times > t0]
    dv = departures.eval(dt) if dt.size else np.empty(0)
    sd = Trace(np.concatenate([[0.0], dt - t0]),
               np.concatenate([[0.0], dv - d0]),
               horizon=departures.horizon - t0)
    return sa, sd


# --- envelopes and composition -------------------------------------------


def is_envelope_of(env: Curve, trace: Trace, tol: float = 1e-9) -> bool:
    """Whether every window of the trace stays within the envelope.

    Candidate window ends are event times and event times plus envelope
    breakpoints; matched left/right corner pairs cover the jumps.
    """
    ev = trace.times
    tk, _, _ = _curve_table(env)
    ks = tk[np.isfinite(tk)]
    for s in ev:
        ends = np.unique(np.concatenate([ev[ev >= s], s + ks[ks > 0]]))
        ends = ends[ends <= ev[-1]]
        if ends.size == 0:
            continue
        win = ends - s
        if (trace.eval(ends) - trace.eval(s) - curve_values(env, win) > tol).any():
            return False
        if (trace.eval_right(ends) - trace.eval_right(s)
                - curve_values_right(env, win) > tol).any():
            return False
    return True


def trace_add(a: Trace, b: Trace) -> Trace:
    """Pointwise sum, preserving jumps from either side."""
    merged = np.union1d(a.times, b.times)
    lows = a.eval(merged) + b.eval(merged)
    highs = a.eval_right(merged) + b.eval_right(merged)
    times, vals = [], []
    for t, lo, hi in zip(merged, lows, highs):
        times.append(t)
        vals.append(lo)
        if hi > lo:
            times.append(t)
            vals.append(hi)
    return Trace(np.array(times), np.array(vals),
                 horizon=max(a.horizon, b.horizon))


# --- serialization --------------------------------------------------------


def dump_trace(trace: Trace, fp) -> None:
    """Write `t,cumulative` rows (header included) with round-trip floats."""
    fp.write("t,cumulative\n")
    for t, v in zip(trace.times, trace.values):
        fp.write(f"{float(t)!r},{float(v)!r}\n")


def load_trace(fp) -> Trace:
    times, vals = [], []
    for ln, line in enumerate(fp):
        line = line.strip()
        if not line or (ln == 0 and line.lower() == "t,cumulative"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TraceError(f"line {ln + 1}: expected t,cumulative")
        try:
            times.append(float(parts[0]))
            vals.append(float(parts[1]))
        except ValueError as exc:
            raise TraceError(f"line {ln + 1}: bad number") from exc
    if not times:
        raise TraceError("no events in trace data")
    return Trace(np.array(times), np.array(vals))
