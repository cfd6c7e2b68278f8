"""Fluid-traffic simulation: arrival generators, node service models, and
the seeded Monte-Carlo harness that checks analytic bounds empirically.

Service through a rate-latency element is simulated as a fixed delay
followed by a work-conserving fluid queue.  The queue sweep emits an
output event at every input event and every internal transition
(catch-up, idle end), so the departure trace is the exact convolution
of the arrivals with the service curve, kinks included.  General
service curves fall back to the exact rational curve engine.

Reproducibility: every random draw comes from a counter-based
generator keyed by (seed, run index, stream), so results depend only on
(scenario, seed, run count) no matter how runs are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .curves import INF, Curve, conv
from .deterministic import concat_min, det_bounds, propagate_envelopes
from .statistical import (
    EffectiveServiceCurve,
    ServiceKind,
    choose_time_scale,
    concat_plain,
    concat_strong,
    concat_t_bounded,
    concat_window,
)
from .traces import (
    Trace,
    TraceError,
    curve_values,
    curve_values_right,
    delay_of,
    mod_conv,
    trace_add,
)

__all__ = [
    "SimError",
    "split_rng",
    "Const",
    "Uniform",
    "Exponential",
    "OnOff",
    "ClippedRenewal",
    "gen_greedy",
    "gen_regulated",
    "minorant_buckets",
    "shape_token_bucket",
    "delay_shift",
    "rate_queue",
    "trace_to_curve",
    "curve_to_trace",
    "serve_exact",
    "conv_floor_at",
    "ExactService",
    "ExactAdaptive",
    "ViolatingLatencyRate",
    "CrossTraffic",
    "serve",
    "min_window_server",
    "check_adaptive",
    "find_adaptive_violation",
    "find_window_counterexample",
    "default_checkpoints",
    "hoeffding_radius",
    "McRow",
    "McReport",
    "mc_estimate",
    "calibrate_epsilon",
]

BOUND_TOL = 1e-9
_EVENT_CAP = 200_000
_CAL_STREAM = 1 << 18  # rng stream offset for calibration pre-runs


class SimError(ValueError):
    """Simulation setup or model error."""


def split_rng(seed: int, run: int, stream: int) -> np.random.Generator:
    """Independent generator for (seed, run, stream); order of use never
    affects other streams."""
    key = np.array([seed & (2**64 - 1), ((run << 20) + stream) & (2**64 - 1)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# --- distributions --------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float

    def sample(self, rng) -> float:
        return float(self.value)


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def sample(self, rng) -> float:
        return float(rng.uniform(self.low, self.high))


@dataclass(frozen=True)
class Exponential:
    mean: float

    def sample(self, rng) -> float:
        return float(rng.exponential(self.mean))


# --- arrival models -------------------------------------------------------


@dataclass(frozen=True)
class OnOff:
    """Instantaneous bursts separated by silent gaps, both drawn per cycle."""

    burst: object
    gap: object

    def generate(self, rng, horizon: float) -> Trace:
        ts, vs = [0.0], [0.0]
        t, c = 0.0, 0.0
        while True:
            b = max(0.0, float(self.burst.sample(rng)))
            if b > 0.0:
                ts.extend([t, t])
                vs.extend([c, c + b])
                c += b
            g = max(1e-6, float(self.gap.sample(rng)))
            t += g
            if t >= horizon:
                break
            if len(ts) > _EVENT_CAP:
                raise SimError("arrival model generated too many events")
        ts.append(horizon)
        vs.append(c)
        return Trace(np.array(ts), np.array(vs), horizon=horizon)


@dataclass(frozen=True)
class ClippedRenewal:
    """Piecewise-constant rate redrawn every `step`, clipped at zero."""

    rate: object
    step: float = 1.0

    def generate(self, rng, horizon: float) -> Trace:
        if self.step <= 0:
            raise SimError("renewal step must be positive")
        n = int(math.ceil(horizon / self.step))
        if n > _EVENT_CAP:
            raise SimError("arrival model generated too many events")
        edges = np.minimum((np.arange(n) + 1) * self.step, horizon)
        ts = np.concatenate([[0.0], edges])
        rates = np.array([max(0.0, float(self.rate.sample(rng))) for _ in range(n)])
        vs = np.concatenate([[0.0], np.cumsum(rates * np.diff(ts))])
        return Trace(ts, vs, horizon=horizon)


def gen_greedy(flow, horizon: float) -> Trace:
    """The trace that follows its envelope exactly, truncated to horizon."""
    env: Curve = getattr(flow, "envelope", flow)
    ts, vs = [0.0], [0.0]
    v0 = curve_values_right(env, 0.0)
    if not np.isfinite(v0):
        raise SimError("envelope is infinite at 0+; no greedy trace exists")
    if v0 > 0.0:
        ts.append(0.0)
        vs.append(float(v0))
    for k in env.knots[1:]:
        kf = float(k)
        if not 0.0 < kf < horizon:
            continue
        vl = curve_values(env, kf)
        vr = curve_values_right(env, kf)
        if not np.isfinite(vl):
            raise SimError("envelope is infinite inside the horizon")
        ts.append(kf)
        vs.append(float(vl))
        if np.isfinite(vr) and vr > vl:
            ts.append(kf)
            vs.append(float(vr))
    vh = curve_values(env, horizon)
    if not np.isfinite(vh):
        raise SimError("envelope is infinite inside the horizon")
    ts.append(horizon)
    vs.append(float(vh))
    return Trace(np.array(ts), np.array(vs), horizon=horizon)


# --- regulator ------------------------------------------------------------


def minorant_buckets(envelope: Curve) -> List[Tuple[float, float]]:
    """Token buckets (sigma, rho) whose minimum is a concave floor of the
    envelope: shaping through all of them guarantees compliance.

    The chain walk keeps envelope knots only while slopes decrease, which
    reproduces a concave envelope exactly and otherwise yields a valid
    concave minorant (shaping to it is stricter, never looser).
    """
    y0 = envelope.eval_right(0)
    if y0 == INF:
        raise SimError("envelope allows unbounded instantaneous bursts")
    verts = [(0.0, float(y0))]
    cap = math.inf
    for k in envelope.knots[1:]:
        if k == 0:
            continue
        vl = envelope.eval(k)
        if vl == INF:
            break
        t, y = float(k), float(vl)
        lt, ly = verts[-1]
        ext = math.inf if cap == math.inf else ly + cap * (t - lt)
        if y < ext - 1e-12:
            verts.append((t, y))
            cap = (y - ly) / (t - lt)
    tail = envelope.tail_slope
    if envelope.inf_start is not None or tail == INF:
        tail_f = math.inf
    else:
        tail_f = float(tail)
    tail_slope = min(cap, tail_f)
    buckets: List[Tuple[float, float]] = []
    for (t0, u0), (t1, u1) in zip(verts, verts[1:]):
        rho = (u1 - u0) / (t1 - t0)
        buckets.append((max(0.0, u0 - rho * t0), rho))
    lt, ly = verts[-1]
    if tail_slope != math.inf:
        buckets.append((max(0.0, ly - tail_slope * lt), tail_slope))
    seen, out = set(), []
    for b in buckets:
        if b not in seen:
            seen.add(b)
            out.append(b)
    return out


def _emit(ts: List[float], vs: List[float], t: float, v: float) -> None:
    if ts:
        if t < ts[-1]:
            t = ts[-1]
        if v < vs[-1]:
            v = vs[-1]  # float dust only; sweeps are monotone by construction
        if t == ts[-1] and v == vs[-1]:
            return
    ts.append(t)
    vs.append(v)


def _pieces(trace: Trace) -> List[Tuple[float, float, float, float]]:
    """(t0, t1, v0, v1) linear pieces, jumps as zero-length pieces, plus a
    flat terminal piece out to the horizon."""
    seq_t = list(trace.times)
    seq_v = list(trace.values)
    if trace.horizon > seq_t[-1]:
        seq_t.append(trace.horizon)
        seq_v.append(seq_v[-1])
    return [(seq_t[k], seq_t[k + 1], seq_v[k], seq_v[k + 1])
            for k in range(len(seq_t) - 1)]


def shape_token_bucket(trace: Trace, sigma: float, rho: float) -> Trace:
    """Greedy token-bucket shaper: releases as much as the bucket allows,
    never more than has arrived.  Output is min(A(t), sigma + rho*t + M(t))
    with M the running minimum of A(u) - rho*u; on each linear piece that
    collapses to one affine comparison, so every switch point is emitted
    and the result is exact.
    """
    out_t, out_v = [0.0], [0.0]
    m = 0.0  # running min of A(u) - rho*u over [0, t]
    for t0, t1, v0, v1 in _pieces(trace):
        if t1 == t0:  # jump: admit what the bucket allows instantly
            _emit(out_t, out_v, t0, min(v0, sigma + rho * t0 + m))
            _emit(out_t, out_v, t0, min(v1, sigma + rho * t0 + m))
            continue
        sl = (v1 - v0) / (t1 - t0)
        # On (t0, t1]: R(t) = min(A(t), sigma + rho*t + m); in-piece dips of
        # A(u) - rho*u below m only make the bucket term exceed A(t).
        if sl != rho:
            tc = (sigma + rho * t0 + m - v0) / (sl - rho) + t0
            if t0 < tc < t1:
                vc = v0 + sl * (tc - t0)
                _emit(out_t, out_v, tc, min(vc, sigma + rho * tc + m))
        _emit(out_t, out_v, t1, min(v1, sigma + rho * t1 + m))
        m = min(m, v1 - rho * t1)
    return Trace(np.array(out_t), np.array(out_v), horizon=trace.horizon)


def gen_regulated(flow, model, rng, horizon: float) -> Trace:
    """Random arrivals forced through token buckets so the result always
    satisfies the flow envelope."""
    env: Curve = getattr(flow, "envelope", flow)
    raw = model.generate(rng, horizon)
    for sigma, rho in minorant_buckets(env):
        raw = shape_token_bucket(raw, sigma, rho)
    return raw


# --- exact service elements ------------------------------------------------


def delay_shift(trace: Trace, latency: float) -> Trace:
    if latency <= 0:
        return trace
    ts = np.concatenate([[0.0], trace.times + latency])
    vs = np.concatenate([[0.0], trace.values])
    return Trace(ts, vs, horizon=trace.horizon)


def rate_queue(trace: Trace, rate: float, *, p_violate: float = 0.0,
               extra=None, rng=None) -> Trace:
    """Work-conserving fluid queue at a constant rate.

    With p_violate > 0 the server flips a seeded coin at the start of
    each busy period and, on失 heads, stays idle for an extra duration
    drawn from `extra` before serving; this realizes a latency-rate
    guarantee that fails with a controlled frequency.
    """
    if rate == math.inf:
        return trace
    if rate < 0:
        raise SimError("service rate must be nonnegative")
    out_t, out_v = [0.0], [0.0]
    w = 0.0
    busy = False
    sleep_end = 0.0

    def begin_busy(t: float) -> None:
        nonlocal sleep_end
        if rng is not None and p_violate > 0.0 and rng.random() < p_violate:
            dur = float(extra.sample(rng)) if extra is not None else 0.0
            if dur > 0.0:
                sleep_end = t + dur

    for t0, t1, v0, v1 in _pieces(trace):
        if t1 == t0:
            if v1 > w and not busy:
                busy = True
                begin_busy(t0)
            continue
        sl = (v1 - v0) / (t1 - t0)
        t = t0
        while t < t1:
            if not busy:
                if sl <= rate:
                    w = v1
                    _emit(out_t, out_v, t1, w)
                    t = t1
                else:
                    busy = True
                    begin_busy(t)
            else:
                if t < sleep_end:
                    te = min(sleep_end, t1)
                    _emit(out_t, out_v, te, w)
                    t = te
                    continue
                vt = v0 + sl * (t - t0)
                if rate > sl:
                    tc = t + max(0.0, (vt - w) / (rate - sl))
                    if tc < t1:
                        w = v0 + sl * (tc - t0)
                        _emit(out_t, out_v, tc, w)
                        t = tc
                        busy = False
                        continue
                w2 = w + rate * (t1 - t)
                if w2 >= v1:
                    w2 = v1
                    busy = False
                w = w2
                _emit(out_t, out_v, t1, w)
                t = t1
    return Trace(np.array(out_t), np.array(out_v), horizon=trace.horizon)


def _as_delay_rate(curve: Curve) -> Optional[Tuple[float, float]]:
    """(latency, rate) when the curve is a pure delay plus constant rate."""
    bps = curve.bps
    if any(r[1] != 0 for r in bps):
        return None
    if len(bps) == 1:
        s = bps[0][2]
        return (0.0, math.inf if s == INF else float(s))
    if len(bps) == 2 and bps[0][2] == 0:
        s = bps[1][2]
        return (float(bps[1][0]), math.inf if s == INF else float(s))
    return None


def trace_to_curve(trace: Trace) -> Curve:
    """Exact rational curve with the same graph (flat past the last event)."""
    ts, vs = trace.times, trace.values
    pts = []  # (t, v_left, v_right) at distinct times
    i, n = 0, len(ts)
    while i < n:
        j = i
        while j + 1 < n and ts[j + 1] == ts[i]:
            j += 1
        pts.append((ts[i], vs[i], vs[j]))
        i = j + 1
    rows = []
    for k, (t, _vl, vr) in enumerate(pts):
        if k + 1 < len(pts):
            tn, vln, _ = pts[k + 1]
            slope = (Fraction(vln) - Fraction(vr)) / (Fraction(tn) - Fraction(t))
        else:
            slope = Fraction(0)
        rows.append((Fraction(t), Fraction(vr), slope))
    return Curve(tuple(rows))


def curve_to_trace(curve: Curve, horizon: float) -> Trace:
    ts, vs = [0.0], [0.0]
    hz = Fraction(horizon)
    for k in curve.knots:
        if k <= 0 or k > hz:
            continue
        vl = curve.eval(k)
        vr = curve.eval_right(k)
        if vl == INF:
            raise SimError("curve is infinite inside the horizon")
        _emit(ts, vs, float(k), float(vl))
        if vr != INF and vr > vl:
            _emit(ts, vs, float(k), float(vr))
    v0r = curve.eval_right(Fraction(0))
    if v0r == INF:
        raise SimError("curve is infinite inside the horizon")
    if v0r > 0:
        ts.insert(1, 0.0)
        vs.insert(1, float(v0r))
    vh = curve.eval(hz)
    if vh == INF:
        raise SimError("curve is infinite inside the horizon")
    _emit(ts, vs, horizon, float(vh))
    return Trace(np.array(ts), np.array(vs), horizon=horizon)


def serve_exact(arrivals: Trace, service: Curve, horizon: Optional[float] = None) -> Trace:
    """Tight server: departures equal the convolution of arrivals with the
    service curve.  Delay-plus-rate curves run through the fluid queue;
    anything else goes through the exact rational engine."""
    hz = arrivals.horizon if horizon is None else horizon
    lr = _as_delay_rate(service)
    if lr is not None:
        latency, rate = lr
        return rate_queue(delay_shift(arrivals, latency), rate)
    return curve_to_trace(conv(trace_to_curve(arrivals), service), hz)


def conv_floor_at(arrivals: Trace, service: Curve, ts) -> np.ndarray:
    """Exact pointwise values of the convolution of a PL trace with a PL
    curve: the infimum is attained on service knots or reflected arrival
    event times, all evaluated with left-continuous values."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    knots = np.array([float(k) for k in service.knots])
    ev = arrivals.times
    # candidates u = service knots
    u1 = knots[None, :].repeat(len(ts), axis=0)
    ok1 = u1 <= ts[:, None]
    a1 = arrivals.eval(np.maximum(ts[:, None] - u1, 0.0).ravel()).reshape(u1.shape)
    s1 = curve_values(service, u1.ravel()).reshape(u1.shape)
    phi1 = np.where(ok1, a1 + s1, np.inf)
    # candidates u = t - event
    u2 = ts[:, None] - ev[None, :]
    ok2 = u2 >= 0.0
    a2 = arrivals.eval(ev)[None, :].repeat(len(ts), axis=0)
    s2 = curve_values(service, np.maximum(u2, 0.0).ravel()).reshape(u2.shape)
    phi2 = np.where(ok2, a2 + s2, np.inf)
    return np.minimum(phi1.min(axis=1), phi2.min(axis=1))


# --- node models ------------------------------------------------------------


@dataclass(frozen=True)
class ExactService:
    """Serves exactly the convolution floor (tight server)."""

    curve: Curve


@dataclass(frozen=True)
class ExactAdaptive:
    """Least departures meeting the interval guarantee on a grid: within
    every window of length `window` (everywhere when None)."""

    curve: Curve
    window: Optional[float] = None
    step: float = 0.25


@dataclass(frozen=True)
class ViolatingLatencyRate:
    """Latency-rate plant that oversleeps at busy starts with probability
    p_violate, by an extra duration drawn from `extra`."""

    rate: float
    latency: float
    extra: object = Const(1.0)
    p_violate: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.p_violate <= 1.0:
            raise SimError("p_violate must lie in [0, 1]")
        if self.rate <= 0:
            raise SimError("rate must be positive")


@dataclass(frozen=True)
class CrossTraffic:
    """FIFO constant-rate link shared with generated cross traffic."""

    rate: float
    model: object
    envelope: Optional[Curve] = None


def _fifo_split(flow: Trace, agg: Trace, dep: Trace) -> Trace:
    levels = np.unique(agg.values)
    levels = levels[levels <= dep.total]
    cross_t = dep.first_at_level(levels)
    cross_t = cross_t[np.isfinite(cross_t)]
    tc = np.unique(np.concatenate([dep.times, cross_t]))
    x = agg.first_at_level(dep.eval(tc))
    lo = flow.eval(x)
    hi = flow.eval_right(x)
    ts, vs = [0.0], [0.0]
    for t, a, b in zip(tc, lo, hi):
        _emit(ts, vs, float(t), float(a))
        if b > a:
            _emit(ts, vs, float(t), float(b))
    return Trace(np.array(ts), np.array(vs), horizon=flow.horizon)


def serve(node, arrivals: Trace, rng=None, horizon: Optional[float] = None) -> Trace:
    """Departures of one node model for the given arrivals."""
    hz = arrivals.horizon if horizon is None else horizon
    if isinstance(node, ExactService):
        return serve_exact(arrivals, node.curve, hz)
    if isinstance(node, ExactAdaptive):
        return min_window_server(arrivals, node.curve, node.window, node.step)
    if isinstance(node, ViolatingLatencyRate):
        shifted = delay_shift(arrivals, node.latency)
        return rate_queue(shifted, node.rate, p_violate=node.p_violate,
                          extra=node.extra, rng=rng)
    if isinstance(node, CrossTraffic):
        if rng is None:
            raise SimError("cross-traffic node needs a generator")
        if node.envelope is not None:
            cross = gen_regulated(node.envelope, node.model, rng, hz)
        else:
            cross = node.model.generate(rng, hz)
        agg = trace_add(arrivals, cross)
        dep = rate_queue(agg, node.rate)
        return _fifo_split(arrivals, agg, dep)
    raise SimError(f"unknown node model: {node!r}")


# --- adaptive service: construction and checking ----------------------------


def _service_grid(arrivals: Trace, step: float, horizon: float,
                  extra=None) -> np.ndarray:
    pts = [np.arange(0.0, horizon + step / 2, step), arrivals.times]
    if extra is not None:
        pts.append(np.asarray(extra, dtype=float))
    g = np.unique(np.concatenate(pts))
    return g[(g >= 0.0) & (g <= horizon)]


def min_window_server(arrivals: Trace, service: Curve,
                      window: Optional[float] = None,
                      step: float = 0.25) -> Trace:
    """Least grid departures D with, for every grid pair t0 <= t inside a
    window, D(t) - D(t0) at least the interval service floor from t0.
    With window=None the guarantee spans all subintervals."""
    grid = _service_grid(arrivals, step, arrivals.horizon)
    a_vals = arrivals.eval(grid)
    d = np.zeros_like(grid)
    for k in range(1, len(grid)):
        t = grid[k]
        lo = 0.0
        j0 = 0
        if window is not None:
            j0 = int(np.searchsorted(grid, t - window))
        for j in range(j0, k):
            need = d[j] + mod_conv(arrivals, service, grid[j], t,
                                   a_vals[j] - d[j])
            if need > lo:
                lo = need
        d[k] = min(a_vals[k], lo)
    return Trace(grid.copy(), d, horizon=arrivals.horizon)


def find_adaptive_violation(arrivals: Trace, departures: Trace, service: Curve,
                            window: Optional[float], step: float,
                            tol: float = BOUND_TOL):
    """First grid interval whose service floor is missed, or None."""
    grid = _service_grid(arrivals, step, arrivals.horizon,
                         extra=departures.times)
    d_vals = departures.eval(grid)
    a_vals = arrivals.eval(grid)
    for k in range(1, len(grid)):
        t = grid[k]
        j0 = 0
        if window is not None:
            j0 = int(np.searchsorted(grid, t - window))
        for j in range(j0, k + 1):
            need = mod_conv(arrivals, service, grid[j], t, a_vals[j] - d_vals[j])
            if d_vals[k] - d_vals[j] < need - tol:
                return (float(grid[j]), float(t),
                        float(need - (d_vals[k] - d_vals[j])))
    return None


def check_adaptive(arrivals: Trace, departures: Trace, service: Curve,
                   window: Optional[float], step: float,
                   tol: float = BOUND_TOL) -> bool:
    return find_adaptive_violation(arrivals, departures, service,
                                   window, step, tol) is None


def find_window_counterexample(envelope: Curve, service: Curve, window: float,
                               horizon: float, step: float = 0.25,
                               seeds: Iterable[int] = range(50),
                               model=None, tol: float = 1e-7):
    """Search for a compliant arrival trace whose least window-adaptive
    server still under-runs the plain convolution floor somewhere.

    Returns None when every candidate satisfies the floor on the whole
    grid (the window is long enough), else a dict with the offending
    trace and point.
    """
    flows = [gen_greedy(envelope, horizon)]
    mdl = model if model is not None else OnOff(Exponential(2.0), Exponential(1.0))
    for s in seeds:
        flows.append(gen_regulated(envelope, mdl, split_rng(int(s), 0, 0), horizon))
    for a in flows:
        d = min_window_server(a, service, window, step)
        grid = d.times
        floor = conv_floor_at(a, service, grid)
        got = d.eval(grid)
        bad = got < floor - tol
        if bad.any():
            i = int(np.argmax(bad))
            return {"trace": a, "t": float(grid[i]),
                    "served": float(got[i]), "floor": float(floor[i])}
    return None


# --- Monte-Carlo harness -----------------------------------------------------


def default_checkpoints(horizon: float, n: int = 32) -> np.ndarray:
    """Log-spaced probe times in (0, horizon]: early and late behavior both
    matter because some violation bounds grow with t."""
    return np.geomspace(horizon / 256.0, horizon, n)


def hoeffding_radius(n: int, alpha: float = 0.01) -> float:
    """Two-sided (1-alpha) deviation radius for an empirical frequency."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


@dataclass(frozen=True)
class McRow:
    bound_id: str
    t: float
    trials: int
    violations: int
    empirical: float
    ci: float
    analytic: float
    passed: bool


@dataclass(frozen=True)
class McReport:
    rows: Tuple[McRow, ...]

    HEADER = "bound_id,t,trials,violations,empirical,ci,analytic,pass"

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self, fp) -> None:
        fp.write(self.HEADER + "\n")
        for r in self.rows:
            fp.write(f"{r.bound_id},{r.t!r},{r.trials},{r.violations},"
                     f"{r.empirical!r},{r.ci!r},{r.analytic!r},"
                     f"{str(r.passed).lower()}\n")


def _clamped_float(x) -> float:
    v = float(x)
    return min(max(v, 0.0), 1.0)


class _Bound:
    """One violation predicate plus its analytic ceiling per checkpoint."""

    def __init__(self, bound_id: str, cps: np.ndarray, analytic: np.ndarray,
                 fn) -> None:
        self.bound_id = bound_id
        self.cps = cps
        self.analytic = analytic
        self.fn = fn  # (arrivals, stages) -> bool array over cps
        self.counts = np.zeros(len(cps), dtype=np.int64)

    def record(self, arrivals: Trace, stages: Sequence[Trace]) -> None:
        self.counts += self.fn(arrivals, stages)


def _pair_subgrid(lo: float, hi: float, n: int = 4) -> np.ndarray:
    return np.linspace(lo, hi, n)


def build_network(curves: Sequence[Curve], epsilons: Sequence, method: str,
                  *, a, T=None, ell=None, envelope: Optional[Curve] = None):
    """Concatenated effective-service result for the chosen composition
    method; resolves T = 'auto' per node from propagated envelopes."""
    method = method.lower()
    kind = {
        "plain": ServiceKind.PLAIN,
        "tbound": ServiceKind.T_BOUNDED,
        "window": ServiceKind.WINDOW_ADAPTIVE,
        "strong": ServiceKind.STRONG_ADAPTIVE,
    }.get(method)
    if kind is None:
        raise SimError(f"unknown composition method: {method}")
    horizon = None
    if kind is ServiceKind.T_BOUNDED:
        if T == "auto" or T is None:
            if envelope is None:
                raise SimError("T='auto' needs the flow envelope")
            envs = propagate_envelopes(envelope, list(curves))
            horizon = max(choose_time_scale(envs[h], curves[h])
                          for h in range(len(curves)))
        else:
            horizon = T
    elif kind is ServiceKind.WINDOW_ADAPTIVE:
        if ell is None:
            raise SimError("window composition needs ell")
        horizon = ell
    nodes = [EffectiveServiceCurve(c, e, kind=kind, horizon=horizon)
             for c, e in zip(curves, epsilons)]
    if kind is ServiceKind.PLAIN:
        return concat_plain(nodes, a)
    if kind is ServiceKind.T_BOUNDED:
        return concat_t_bounded(nodes, a)
    if kind is ServiceKind.WINDOW_ADAPTIVE:
        return concat_window(nodes, a)
    return concat_strong(nodes)


def _run_once(scenario, seed: int, run: int, stream_base: int,
              horizon: float) -> Tuple[Trace, List[Trace]]:
    arrival = getattr(scenario, "arrival", "greedy")
    if isinstance(arrival, str) and arrival == "greedy":
        a = gen_greedy(scenario.flow, horizon)
    else:
        a = gen_regulated(scenario.flow, arrival,
                          split_rng(seed, run, stream_base), horizon)
    stages: List[Trace] = []
    cur = a
    for h, node in enumerate(scenario.nodes):
        cur = serve(node.model, cur, split_rng(seed, run, stream_base + 1 + h),
                    horizon)
        stages.append(cur)
    return a, stages


def _det_bound_specs(scenario, cps: np.ndarray) -> List[_Bound]:
    env = scenario.flow.envelope
    net = concat_min([n.curve for n in scenario.nodes])
    det = det_bounds(env, net)
    b_max = math.inf if det.b_max == INF else float(det.b_max)
    d_max = math.inf if det.d_max == INF else float(det.d_max)
    dstar = det.output_envelope
    zeros = np.zeros(len(cps))

    def backlog_fn(a: Trace, stages: Sequence[Trace]) -> np.ndarray:
        return (a.eval(cps) - stages[-1].eval(cps)) > b_max + BOUND_TOL

    def delay_fn(a: Trace, stages: Sequence[Trace]) -> np.ndarray:
        return delay_of(a, stages[-1], cps) > d_max + BOUND_TOL

    def output_fn(a: Trace, stages: Sequence[Trace]) -> np.ndarray:
        d = stages[-1]
        starts = np.unique(np.concatenate([d.times, cps]))
        dv = d.eval(starts)
        out = np.zeros(len(cps), dtype=bool)
        for i, t in enumerate(cps):
            mask = starts <= t
            win = d.eval(t) - dv[mask]
            cap = curve_values(dstar, t - starts[mask])
            out[i] = bool((win > cap + BOUND_TOL).any())
        return out

    return [_Bound("det_backlog", cps, zeros, backlog_fn),
            _Bound("det_delay", cps, zeros, delay_fn),
            _Bound("det_output", cps, zeros.copy(), output_fn)]


def _net_bound_spec(scenario, cps: np.ndarray, epsilons: Sequence) -> _Bound:
    method = _method_key(scenario.method)
    curves = [n.curve for n in scenario.nodes]
    res = build_network(curves, epsilons, method, a=scenario.a,
                        T=scenario.T, ell=scenario.ell,
                        envelope=scenario.flow.envelope)
    sub = cps
    if res.convolution_range is not None:
        sub = cps[cps <= float(res.convolution_range) + 1e-12]
    analytic = np.array([_clamped_float(res.violation_at(t)) for t in sub])
    curve = res.curve
    bid = f"net_{method}"

    if method in ("plain", "tbound"):
        def fn(a: Trace, stages: Sequence[Trace]) -> np.ndarray:
            floor = conv_floor_at(a, curve, sub)
            return stages[-1].eval(sub) < floor - BOUND_TOL
    else:
        win = float(res.horizon) if res.horizon is not None else None

        def fn(a: Trace, stages: Sequence[Trace]) -> np.ndarray:
            d = stages[-1]
            out = np.zeros(len(sub), dtype=bool)
            for i, t in enumerate(sub):
                lo = max(0.0, t - win) if win is not None else 0.0
                t0s = _pair_subgrid(lo, t)
                if method == "window":
                    pairs = [(t0, t) for t0 in t0s]
                else:
                    pairs = [(x, y) for x in t0s for y in t0s if x <= y]
                for t0, t1 in pairs:
                    b0 = a.eval(t0) - d.eval(t0)
                    need = mod_conv(a, curve, t0, t1, b0)
                    if d.eval(t1) - d.eval(t0) < need - BOUND_TOL:
                        out[i] = True
                        break
            return out

    return _Bound(bid, sub, analytic, fn)


def _node_bound_specs(scenario, cps: np.ndarray, epsilons: Sequence) -> List[_Bound]:
    specs = []
    for h, node in enumerate(scenario.nodes):
        eps = np.full(len(cps), _clamped_float(epsilons[h]))
        curve = node.curve

        def fn(a: Trace, stages: Sequence[Trace], h=h, curve=curve) -> np.ndarray:
            feed = a if h == 0 else stages[h - 1]
            floor = conv_floor_at(feed, curve, cps)
            return stages[h].eval(cps) < floor - BOUND_TOL

        specs.append(_Bound(f"node{h + 1}_service", cps, eps, fn))
    return specs


def _method_key(method: str) -> str:
    alias = {"thm4": "plain", "thm5": "tbound", "thm6": "window",
             "thm7": "strong", "theorem4": "plain", "theorem5": "tbound",
             "theorem6": "window", "theorem7": "strong"}
    m = (method or "").lower()
    return alias.get(m, m)


def resolve_epsilons(scenario, runs: int = 2000,
                     seed: Optional[int] = None) -> List[float]:
    """Per-node violation levels: declared values pass through, 'auto'
    entries are measured in a calibration pre-run on a separate stream."""
    declared = [getattr(n, "epsilon", 0.0) for n in scenario.nodes]
    if not any(isinstance(e, str) for e in declared):
        return [float(e) for e in declared]
    measured = calibrate_epsilon(scenario, runs=runs, seed=seed)
    return [measured[h] if isinstance(e, str) else float(e)
            for h, e in enumerate(declared)]


def calibrate_epsilon(scenario, runs: int = 2000,
                      seed: Optional[int] = None) -> List[float]:
    """Measured per-node violation level: worst checkpoint frequency plus
    the calibration run's own confidence radius."""
    seed = scenario.seed if seed is None else seed
    horizon = float(scenario.horizon)
    cps = default_checkpoints(horizon, scenario.checkpoints or 32)
    bounds = _node_bound_specs(scenario, cps, [0.0] * len(scenario.nodes))
    for r in range(runs):
        a, stages = _run_once(scenario, seed, r, _CAL_STREAM, horizon)
        for b in bounds:
            b.record(a, stages)
    rad = hoeffding_radius(runs)
    return [min(1.0, float(b.counts.max()) / runs + rad) for b in bounds]


def mc_estimate(scenario, bound_ids: Optional[Sequence[str]] = None,
                runs: Optional[int] = None, seed: Optional[int] = None,
                checkpoints: Optional[np.ndarray] = None) -> McReport:
    """Push seeded runs through the node chain and compare empirical
    violation frequencies with the analytic ceilings.

    A row passes when empirical - ci <= analytic (the bounds are
    one-sided); identical inputs give identical reports byte for byte.
    """
    runs = int(scenario.runs if runs is None else runs)
    seed = int(scenario.seed if seed is None else seed)
    if runs < 1:
        raise SimError("need at least one run")
    horizon = float(scenario.horizon)
    cps = (default_checkpoints(horizon, scenario.checkpoints or 32)
           if checkpoints is None else np.asarray(checkpoints, dtype=float))
    if (cps <= 0).any() or (cps > horizon + 1e-12).any():
        raise SimError("checkpoints must lie in (0, horizon]")

    wanted = list(bound_ids) if bound_ids is not None else None
    method = _method_key(getattr(scenario, "method", "") or "")
    bounds: List[_Bound] = []
    det = _det_bound_specs(scenario, cps)
    node_ids = [f"node{h + 1}_service" for h in range(len(scenario.nodes))]
    eps = None
    if wanted is None:
        bounds.extend(det)
        if method:
            eps = resolve_epsilons(scenario, seed=seed)
            bounds.append(_net_bound_spec(scenario, cps, eps))
    else:
        for b in det:
            if b.bound_id in wanted:
                bounds.append(b)
        if any(w.startswith("net_") for w in wanted):
            m = next(w[4:] for w in wanted if w.startswith("net_"))
            eps = resolve_epsilons(scenario, seed=seed)
            spec = _net_bound_spec(scenario, cps, eps)
            if spec.bound_id != f"net_{m}":
                raise SimError(f"scenario method is {method!r}; "
                               f"cannot report net_{m}")
            bounds.append(spec)
        if any(w in node_ids for w in wanted):
            if eps is None:
                eps = resolve_epsilons(scenario, seed=seed)
            for b in _node_bound_specs(scenario, cps, eps):
                if b.bound_id in wanted:
                    bounds.append(b)
        missing = [w for w in wanted
                   if w not in [b.bound_id for b in bounds]]
        if missing:
            raise SimError(f"unknown bound ids: {missing}")

    for r in range(runs):
        a, stages = _run_once(scenario, seed, r, 0, horizon)
        for b in bounds:
            b.record(a, stages)

    rows = []
    for b in bounds:
        for i, t in enumerate(b.cps):
            v = int(b.counts[i])
            emp = v / runs
            ci = hoeffding_radius(runs)
            ana = float(b.analytic[i])
            rows.append(McRow(b.bound_id, float(t), runs, v, emp, ci, ana,
                              emp - ci <= ana + 1e-12))
    return McReport(tuple(rows))
