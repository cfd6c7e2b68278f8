"""Service guarantees that may fail with a small probability, and how
they survive crossing several servers in series.

A node with an effective service curve promises, for each time t, that
the delivered output is at least the arrival conv the curve except on an
event of probability at most epsilon.  Four flavours differ in *which*
intervals the promise covers:

    plain            each output time t separately
    t-bounded        like plain, but the optimizing interval is known to
                     start at most `horizon` before t
    window-adaptive  every backlog-clearing window of length `horizon`
    strong-adaptive  every interval, uniformly

Composing H such nodes costs accuracy.  The four concatenation rules
trade the quality of the per-node promise against the growth of the
combined violation probability; all four produce the conv of the node
curves, the non-adaptive ones delayed by (H-1)*a for a free spacing
parameter a > 0 which the violation inflation depends on.  Helpers
convert between flavours and recover plain guarantees usable for output,
backlog and delay bounds; with epsilon = 0 every statistical result
degenerates to the deterministic one exactly.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .curves import INF, Curve, Quantity, as_quantity, conv
from .deterministic import DetBounds, backlog_bound, delay_bound, output_envelope

__all__ = [
    "StatError",
    "NoTimeScaleError",
    "ServiceKind",
    "EffectiveServiceCurve",
    "StatBounds",
    "ConcatResult",
    "stat_bounds",
    "concat_plain",
    "concat_t_bounded",
    "concat_window",
    "concat_strong",
    "choose_time_scale",
    "strengthen_to_strong",
    "EmptyBacklog",
    "BoundedBacklog",
    "window_to_plain",
    "strong_to_plain",
    "MinViolationAt",
    "MinDelayWithin",
    "optimize_shift",
]

_ZERO = Fraction(0)
_ONE = Fraction(1)


class StatError(ValueError):
    """Arguments violate a composition rule's contract."""


class NoTimeScaleError(StatError):
    """No finite time scale exists for the requested envelope/curve pair."""


def _clamp01(x: Quantity) -> Quantity:
    if x == INF or x > 1:
        return _ONE
    if x < 0:
        return _ZERO
    return x


def _probability(x) -> Quantity:
    q = as_quantity(x, what="probability")
    if q == INF or q < 0 or q > 1:
        raise StatError("probabilities live in [0, 1]")
    return q


class ServiceKind(enum.Enum):
    PLAIN = "plain"
    T_BOUNDED = "t-bounded"
    WINDOW_ADAPTIVE = "window-adaptive"
    STRONG_ADAPTIVE = "strong-adaptive"


@dataclass(frozen=True)
class EffectiveServiceCurve:
    """One node's probabilistic service promise.

    ``horizon`` is the promise's interval parameter: the maximum lookback
    T for t-bounded curves, the window length for the adaptive kinds
    (optional for strong-adaptive), and absent for plain ones.
    ``assumptions`` records free-text conditions attached along the way,
    e.g. by a recovery step.
    """

    curve: Curve
    epsilon: Quantity
    kind: ServiceKind = ServiceKind.PLAIN
    horizon: Optional[Quantity] = None
    assumptions: tuple = ()

    def __post_init__(self):
        if not isinstance(self.curve, Curve):
            raise StatError("curve must be a Curve")
        if not isinstance(self.kind, ServiceKind):
            raise StatError("kind must be a ServiceKind")
        eps = as_quantity(self.epsilon, what="epsilon")
        if eps == INF or eps < 0 or eps > 1:
            raise StatError("epsilon must be a probability in [0, 1]")
        object.__setattr__(self, "epsilon", eps)
        hz = self.horizon
        if hz is not None:
            hz = as_quantity(hz, what="horizon")
            object.__setattr__(self, "horizon", hz)
        if self.kind is ServiceKind.PLAIN:
            if hz is not None:
                raise StatError("plain curves carry no horizon")
        elif self.kind is ServiceKind.T_BOUNDED:
            if hz is None or hz == INF or hz < 0:
                raise StatError("a t-bounded curve needs a finite lookback horizon T >= 0")
        elif self.kind is ServiceKind.WINDOW_ADAPTIVE:
            if hz is None or hz == INF or hz <= 0:
                raise StatError("a window-adaptive curve needs a finite window length > 0")
        else:  # strong-adaptive: window length optional
            if hz is not None and (hz == INF or hz <= 0):
                raise StatError("a strong-adaptive window length must be positive and finite")
        if not isinstance(self.assumptions, tuple):
            object.__setattr__(self, "assumptions", tuple(self.assumptions))


@dataclass(frozen=True)
class StatBounds:
    """Output/backlog/delay figures that each hold except with probability epsilon."""

    output_envelope: Curve
    b_max: Quantity
    d_max: Quantity
    epsilon: Quantity

    def deterministic(self) -> DetBounds:
        return DetBounds(self.output_envelope, self.b_max, self.d_max)


def stat_bounds(envelope: Curve, service: EffectiveServiceCurve) -> StatBounds:
    """Bounds against an effective service curve; with epsilon = 0 these
    coincide, value for value, with the deterministic ones."""
    return StatBounds(
        output_envelope=output_envelope(envelope, service.curve),
        b_max=backlog_bound(envelope, service.curve),
        d_max=delay_bound(envelope, service.curve),
        epsilon=service.epsilon,
    )


@dataclass(frozen=True)
class ConcatResult:
    """Network-level effective service curve for a tandem.

    ``epsilon`` is the combined violation probability, clamped to
    [0, 1]; ``raw_epsilon`` keeps the unclamped value.  When the rule
    yields a time-dependent probability instead, both are None and
    ``violation_at`` must be asked at a concrete time.
    ``convolution_range`` bounds how far back the optimizing interval of
    the combined promise can reach, when the rule bounds it at all.
    """

    curve: Curve
    kind: ServiceKind
    hops: int
    shift: Quantity
    epsilon: Optional[Quantity] = None
    raw_epsilon: Optional[Quantity] = None
    horizon: Optional[Quantity] = None
    convolution_range: Optional[Quantity] = None
    eps_fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    def raw_violation_at(self, t) -> Quantity:
        """Unclamped violation probability for the promise at output time t."""
        if self.eps_fn is not None:
            return self.eps_fn(as_quantity(t, what="time"))
        return self.raw_epsilon

    def violation_at(self, t) -> Quantity:
        return _clamp01(self.raw_violation_at(t))

    def as_effective(self, t=None) -> EffectiveServiceCurve:
        """Pin down a single EffectiveServiceCurve, at time t if time-dependent."""
        if self.eps_fn is not None:
            if t is None:
                raise StatError(
                    "this composition's violation probability depends on t; pass one")
            eps = self.violation_at(t)
            note = (f"violation probability pinned at t = {t}",)
        else:
            eps = _clamp01(self.epsilon)
            note = ()
        return EffectiveServiceCurve(self.curve, eps, self.kind, self.horizon, note)


def _check_nodes(nodes: Sequence[EffectiveServiceCurve], kind: ServiceKind, op: str):
    if not nodes:
        raise StatError(f"{op}: need at least one node")
    for n in nodes:
        if not isinstance(n, EffectiveServiceCurve):
            raise StatError(f"{op}: nodes must be EffectiveServiceCurve instances")
        if n.kind is not kind:
            raise StatError(f"{op}: every node must be {kind.value}, got {n.kind.value}")


def _common_epsilon(nodes, op: str) -> Quantity:
    eps = {n.epsilon for n in nodes}
    if len(eps) != 1:
        raise StatError(f"{op}: nodes carry different violation probabilities; "
                        "this composition needs a common one")
    return next(iter(eps))


def _common_horizon(nodes, op: str):
    hz = {n.horizon for n in nodes}
    if len(hz) != 1:
        raise StatError(f"{op}: nodes carry different horizons; "
                        "this composition needs a common one")
    return next(iter(hz))


def _spacing(a) -> Quantity:
    a = as_quantity(a, what="spacing a")
    if a == INF or a <= 0:
        raise StatError("the spacing parameter a must be positive and finite")
    return a


def _conv_all(nodes) -> Curve:
    acc = nodes[0].curve
    for n in nodes[1:]:
        acc = conv(acc, n.curve)
    return acc


def concat_plain(nodes: Sequence[EffectiveServiceCurve], a) -> ConcatResult:
    """Series composition of plain promises.

    Curve: conv of the node curves, delayed by (H-1)*a.  The violation
    probability grows with the output time: eps * (1 + (H-1)*t/a).
    """
    _check_nodes(nodes, ServiceKind.PLAIN, "concat_plain")
    a = _spacing(a)
    eps = _common_epsilon(nodes, "concat_plain")
    h = len(nodes)
    curve = _conv_all(nodes).shift((h - 1) * a)

    def eps_at(t, _e=eps, _h=h, _a=a):
        return _e * (1 + (_h - 1) * t / _a)

    return ConcatResult(curve=curve, kind=ServiceKind.PLAIN, hops=h,
                        shift=(h - 1) * a, eps_fn=eps_at)


def concat_t_bounded(nodes: Sequence[EffectiveServiceCurve], a) -> ConcatResult:
    """Series composition of t-bounded promises (common lookback T).

    Curve as for plain; the violation probability is a constant
    H * eps * (1 + (H-1)(T+a)/(2a)), and the combined promise's
    optimizing interval reaches back at most H*(T+a).
    """
    _check_nodes(nodes, ServiceKind.T_BOUNDED, "concat_t_bounded")
    a = _spacing(a)
    eps = _common_epsilon(nodes, "concat_t_bounded")
    tee = _common_horizon(nodes, "concat_t_bounded")
    h = len(nodes)
    curve = _conv_all(nodes).shift((h - 1) * a)
    raw = h * eps * (1 + (h - 1) * (tee + a) / (2 * a))
    crange = h * (tee + a)
    return ConcatResult(curve=curve, kind=ServiceKind.T_BOUNDED, hops=h,
                        shift=(h - 1) * a, epsilon=_clamp01(raw), raw_epsilon=raw,
                        horizon=crange, convolution_range=crange)


def concat_window(nodes: Sequence[EffectiveServiceCurve], a) -> ConcatResult:
    """Series composition of window-adaptive promises (common window).

    Curve as for plain; violation eps * (1 + (H-1) * ceil(ell/a)); the
    result is window-adaptive for the same window length.
    """
    _check_nodes(nodes, ServiceKind.WINDOW_ADAPTIVE, "concat_window")
    a = _spacing(a)
    eps = _common_epsilon(nodes, "concat_window")
    ell = _common_horizon(nodes, "concat_window")
    h = len(nodes)
    curve = _conv_all(nodes).shift((h - 1) * a)
    raw = eps * (1 + (h - 1) * math.ceil(ell / a))
    return ConcatResult(curve=curve, kind=ServiceKind.WINDOW_ADAPTIVE, hops=h,
                        shift=(h - 1) * a, epsilon=_clamp01(raw), raw_epsilon=raw,
                        horizon=ell)


def concat_strong(nodes: Sequence[EffectiveServiceCurve]) -> ConcatResult:
    """Series composition of strong-adaptive promises.

    Uniformity over intervals makes this the cheapest rule: the plain
    conv of the node curves with no added delay, and the violation
    probabilities simply add (they may differ per node).
    """
    _check_nodes(nodes, ServiceKind.STRONG_ADAPTIVE, "concat_strong")
    hzs = {n.horizon for n in nodes if n.horizon is not None}
    if len(hzs) > 1:
        raise StatError("concat_strong: nodes carry different window lengths")
    raw = sum(n.epsilon for n in nodes)
    return ConcatResult(curve=_conv_all(nodes), kind=ServiceKind.STRONG_ADAPTIVE,
                        hops=len(nodes), shift=_ZERO, epsilon=_clamp01(raw),
                        raw_epsilon=raw, horizon=next(iter(hzs)) if hzs else None)


def choose_time_scale(envelope: Curve, service) -> Quantity:
    """Smallest T >= 0 with ``envelope <= curve`` just after T.

    Past such a T the optimizing interval of a service promise never
    needs to reach further back, which is what makes a plain promise
    t-bounded.  Right limits decide: the inequality must hold on times
    arbitrarily close past T, not merely at left values (where both
    sides vanish trivially at 0).  Raises NoTimeScaleError when the
    curve never catches the envelope, i.e. unless its tail is strictly
    steeper or it crosses at some finite breakpoint structure.
    """
    curve = service.curve if isinstance(service, EffectiveServiceCurve) else service
    if not isinstance(curve, Curve):
        raise StatError("service must be a Curve or an EffectiveServiceCurve")
    pts = sorted(set(envelope.knots) | set(curve.knots))
    for i, k in enumerate(pts):
        ar, sr = envelope.eval_right(k), curve.eval_right(k)
        if ar <= sr:
            return k
        if ar == INF or sr == INF:
            continue  # envelope infinite and curve not: no luck at this breakpoint
        # inside the gap both sides are affine; look for the crossing
        sa = envelope.bps[_row_at(envelope, k)][2]
        ss = curve.bps[_row_at(curve, k)][2]
        if ss > sa and sa != INF and ss != INF:
            x = k + (ar - sr) / (ss - sa)
            nxt = pts[i + 1] if i + 1 < len(pts) else None
            if nxt is None or x < nxt:
                return x
    raise NoTimeScaleError(
        "no finite time scale: the curve never catches the envelope "
        "(its tail must be strictly steeper, or cross before diverging)")


def _row_at(curve: Curve, t):
    """Index of the breakpoint row in force just after t (t >= 0)."""
    return bisect_right(curve._times, t) - 1


def strengthen_to_strong(esc: EffectiveServiceCurve, a) -> EffectiveServiceCurve:
    """Window-adaptive -> strong-adaptive, at a delay and accuracy price.

    Delaying the curve by a and charging ceil(2*ell/a)^2 / 2 times the
    violation probability covers every interval, not just whole windows:
    each interval is sandwiched between grid points of pitch a/2 (hence
    the squared count of grid pairs inside the doubled window).
    """
    if esc.kind is not ServiceKind.WINDOW_ADAPTIVE:
        raise StatError("strengthen_to_strong starts from a window-adaptive curve")
    a = _spacing(a)
    ell = esc.horizon
    raw = Fraction(math.ceil(2 * ell / a) ** 2, 2) * esc.epsilon
    return EffectiveServiceCurve(
        curve=esc.curve.shift(a),
        epsilon=_clamp01(raw),
        kind=ServiceKind.STRONG_ADAPTIVE,
        horizon=ell,
        assumptions=esc.assumptions,
    )


@dataclass(frozen=True)
class EmptyBacklog:
    """Recovery lever: with probability >= 1 - eps1 the backlog empties
    somewhere inside each window; ``a`` coarsens where that instant may sit."""

    eps1: Quantity
    a: Quantity

    def __post_init__(self):
        object.__setattr__(self, "eps1", _probability(self.eps1))
        object.__setattr__(self, "a", _spacing(self.a))


@dataclass(frozen=True)
class BoundedBacklog:
    """Recovery lever: arrivals obey this envelope, so at the window end the
    promised service exceeds everything that can have arrived (slack check)."""

    eps1: Quantity
    envelope: Curve

    def __post_init__(self):
        object.__setattr__(self, "eps1", _probability(self.eps1))
        if not isinstance(self.envelope, Curve):
            raise StatError("BoundedBacklog needs the arrival envelope")


def _slack_check(esc: EffectiveServiceCurve, mode: BoundedBacklog, op: str):
    ell = esc.horizon
    if ell is None:
        raise StatError(f"{op}: the bounded-backlog route needs a window length "
                        "on the curve for its slack check")
    slack = esc.curve.eval(ell) - mode.envelope.eval(ell)
    if slack < 0:
        raise StatError(
            f"{op}: service falls short of the envelope at the window end "
            f"(slack {slack} at t = {ell}); the bounded-backlog route does not apply")


def window_to_plain(esc: EffectiveServiceCurve, mode) -> EffectiveServiceCurve:
    """Recover a plain promise from a window-adaptive one.

    EmptyBacklog: delay the curve by mode.a and pay eps * ell/a + eps1.
    BoundedBacklog: curve unchanged, pay eps + eps1; requires the slack
    check at the window end.
    """
    if esc.kind is not ServiceKind.WINDOW_ADAPTIVE:
        raise StatError("window_to_plain starts from a window-adaptive curve")
    ell = esc.horizon
    if isinstance(mode, EmptyBacklog):
        raw = esc.epsilon * ell / mode.a + mode.eps1
        return EffectiveServiceCurve(esc.curve.shift(mode.a), _clamp01(raw),
                                     ServiceKind.PLAIN, None,
                                     esc.assumptions + ("a backlog-free instant exists in each window",))
    if isinstance(mode, BoundedBacklog):
        _slack_check(esc, mode, "window_to_plain")
        raw = esc.epsilon + mode.eps1
        return EffectiveServiceCurve(esc.curve, _clamp01(raw),
                                     ServiceKind.PLAIN, None,
                                     esc.assumptions + ("arrivals bounded by the checked envelope",))
    raise StatError("mode must be EmptyBacklog or BoundedBacklog")


def strong_to_plain(esc: EffectiveServiceCurve, mode) -> EffectiveServiceCurve:
    """Recover a plain promise from a strong-adaptive one.

    Uniformity over intervals means no extra delay either way; both
    routes pay eps + eps1, the bounded-backlog one after its slack check.
    """
    if esc.kind is not ServiceKind.STRONG_ADAPTIVE:
        raise StatError("strong_to_plain starts from a strong-adaptive curve")
    if isinstance(mode, EmptyBacklog):
        note = ("a backlog-free instant exists in each window",)
    elif isinstance(mode, BoundedBacklog):
        _slack_check(esc, mode, "strong_to_plain")
        note = ("arrivals bounded by the checked envelope",)
    else:
        raise StatError("mode must be EmptyBacklog or BoundedBacklog")
    raw = esc.epsilon + mode.eps1
    return EffectiveServiceCurve(esc.curve, _clamp01(raw), ServiceKind.PLAIN,
                                 None, esc.assumptions + note)


# --- picking the spacing parameter --------------------------------------


@dataclass(frozen=True)
class MinViolationAt:
    """Prefer the spacing with the smallest violation probability at time t."""

    t: Quantity

    def feasible(self, result: ConcatResult) -> bool:
        return True

    def score(self, result: ConcatResult):
        return result.violation_at(self.t)


@dataclass(frozen=True)
class MinDelayWithin:
    """Prefer the smallest delay bound among spacings whose violation
    probability at ``at_t`` stays within ``budget``."""

    budget: Quantity
    envelope: Curve
    at_t: Quantity

    def feasible(self, result: ConcatResult) -> bool:
        return result.violation_at(self.at_t) <= as_quantity(self.budget, what="budget")

    def score(self, result: ConcatResult):
        return delay_bound(self.envelope, result.curve)


def optimize_shift(concat, nodes, objective, a_grid) -> tuple:
    """Evaluate an a-parameterized composition over a grid of spacings.

    Returns (best_a, best_result), scoring with the objective and
    breaking ties toward the larger spacing.  Raises StatError when no
    grid entry is feasible.
    """
    best = None
    for a in a_grid:
        a = _spacing(a)
        result = concat(nodes, a)
        if not objective.feasible(result):
            continue
        s = objective.score(result)
        if best is None or s < best[0] or (s == best[0] and a > best[1]):
            best = (s, a, result)
    if best is None:
        raise StatError("no spacing in the grid satisfies the objective")
    return best[1], best[2]
