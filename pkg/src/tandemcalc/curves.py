"""Exact algebra for left-continuous piecewise-linear cumulative curves.

A curve maps time to a cumulative amount: it is nondecreasing, equals 0
for ``t <= 0``, may jump upward, and may become ``+inf`` past a finite
time.  Between breakpoints it is affine.  All coordinates are stored as
``fractions.Fraction``, so construction, evaluation, operator algebra
and round-trips are exact; float inputs are converted to their exact
binary value on the way in.

The two workhorse operations::

    conv(f, g)(t)   = inf over 0 <= u <= t  of  f(t - u) + g(u)
    deconv(f, g)(t) = sup over u >= 0       of  f(t + u) - g(u)

are computed exactly.  For each breakpoint of one operand we build a
shifted (conv) or advanced/reflected (deconv) copy of the other operand,
a "member" curve; the result is the pointwise lower or upper envelope of
that finite family.  Crossings between members become breakpoints of the
result, so the envelope stays exact even where the optimizing ``u``
moves from one segment to another (which is exactly where naive
breakpoint bookkeeping goes wrong).
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Union

INF = math.inf
_NEG_INF = -math.inf

#: Exact quantity: a Fraction, or +inf for quantities that may diverge.
Quantity = Union[Fraction, float]

#: Refuse exact results needing more breakpoint rows than this.
DEFAULT_BREAKPOINT_CAP = 100_000

_ZERO = Fraction(0)


class CurveError(ValueError):
    """Malformed curve data, or an argument outside an operation's domain."""


class CurveComplexityError(RuntimeError):
    """The exact result needs more breakpoints than the caller allowed."""


def as_quantity(x, *, what: str = "value") -> Quantity:
    """Normalize a number-like value to an exact Fraction, or ``+inf``.

    Accepts Fraction, int, float (converted to its exact binary value,
    so ``0.1`` becomes the dyadic it actually is), and strings such as
    ``"7/3"``, ``"2.5"`` or ``"inf"``.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise CurveError(f"{what}: booleans are not numbers")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if math.isnan(x):
            raise CurveError(f"{what}: NaN is not a quantity")
        if x == INF:
            return INF
        if x == _NEG_INF:
            raise CurveError(f"{what}: -inf is not a quantity")
        return Fraction(x)
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "+inf", "infinity"):
            return INF
        try:
            return Fraction(x)
        except (ValueError, ZeroDivisionError) as exc:
            raise CurveError(f"{what}: cannot parse {x!r} as a number") from exc
    raise CurveError(f"{what}: unsupported type {type(x).__name__}")


def _num_out(q: Quantity):
    """JSON-friendly exact encoding: int, "p/q" string, or "inf"."""
    if q == INF:
        return "inf"
    return int(q) if q.denominator == 1 else str(q)


@dataclass(frozen=True)
class Curve:
    """Breakpoint rows ``(t, v, s)`` describing one cumulative curve.

    Row ``i`` says: on the interval ``(t_i, t_{i+1}]`` the curve equals
    ``v_i + s_i * (x - t_i)``.  ``v_i`` is therefore the right-limit at
    ``t_i``; the value *at* ``t_i`` is the left limit, reached from the
    previous row (curves are left-continuous, and 0 for ``t <= 0``).
    Upward jumps are encoded by ``v_i`` exceeding that left limit.  A
    final row with slope ``inf`` marks the curve as ``+inf`` strictly
    after its time; its ``v`` stores the finite left limit there.

    The constructor normalizes: coordinates become Fractions, rows that
    merely continue the previous segment are merged, and the stored
    value of an ``inf``-slope row is recomputed.  Equality is structural
    on the normal form, hence semantic.
    """

    bps: tuple

    def __post_init__(self):
        raw = self.bps
        if isinstance(raw, (str, bytes)) or not isinstance(raw, Iterable):
            raise CurveError("breakpoints must be an iterable of (t, v, s) rows")
        rows = []
        for k, row in enumerate(raw):
            try:
                t, v, s = row
            except (TypeError, ValueError) as exc:
                raise CurveError(f"breakpoint row {k}: expected (t, v, s)") from exc
            rows.append((
                as_quantity(t, what=f"breakpoint row {k} time"),
                as_quantity(v, what=f"breakpoint row {k} value"),
                as_quantity(s, what=f"breakpoint row {k} slope"),
            ))
        if not rows:
            raise CurveError("a curve needs at least one breakpoint row")
        if rows[0][0] != 0:
            raise CurveError("the first breakpoint must be at t = 0")
        last = len(rows) - 1
        for k, (t, v, s) in enumerate(rows):
            if t == INF:
                raise CurveError(f"breakpoint row {k}: time must be finite")
            if k and t <= rows[k - 1][0]:
                raise CurveError(f"breakpoint row {k}: times must strictly increase")
            if s == INF:
                if k != last:
                    raise CurveError(
                        f"breakpoint row {k}: an infinite slope is only allowed on the final row")
            elif s < 0:
                raise CurveError(f"breakpoint row {k}: slopes must be nonnegative")
            if v == INF and s != INF:
                raise CurveError(
                    f"breakpoint row {k}: infinite values are expressed by a final infinite-slope row")
        out = []
        for t, v, s in rows:
            if out:
                tp, vp, sp = out[-1]
                left = vp + sp * (t - tp)
            else:
                left = _ZERO
            if s == INF:
                out.append((t, left, s))
                break
            if v < left:
                raise CurveError(
                    f"breakpoint at t = {t}: value {v} drops below the left limit {left}")
            if v < 0:
                raise CurveError(f"breakpoint at t = {t}: values must be nonnegative")
            if out and v == left and s == out[-1][2]:
                continue  # plain continuation of the previous segment
            out.append((t, v, s))
        object.__setattr__(self, "bps", tuple(out))

    @cached_property
    def _times(self) -> tuple:
        return tuple(r[0] for r in self.bps)

    @property
    def knots(self) -> tuple:
        """Breakpoint times, ascending, starting at 0."""
        return self._times

    @property
    def tail_slope(self) -> Quantity:
        """Slope past the last breakpoint; ``inf`` for curves that diverge."""
        return self.bps[-1][2]

    @property
    def inf_start(self):
        """Time after which the curve is ``+inf``, or None if finite everywhere."""
        t, _, s = self.bps[-1]
        return t if s == INF else None

    def eval(self, t) -> Quantity:
        """Value at ``t`` (the left limit at jumps); 0 for ``t <= 0``."""
        t = as_quantity(t, what="time")
        if t == INF:
            raise CurveError("evaluate at a finite time")
        if t <= 0:
            return _ZERO
        i = bisect_left(self._times, t) - 1  # last breakpoint strictly before t
        ti, v, s = self.bps[i]
        if s == INF:
            return INF
        return v + s * (t - ti)

    def eval_right(self, t) -> Quantity:
        """Right-limit at ``t``: the value just after ``t``; 0 for ``t < 0``."""
        t = as_quantity(t, what="time")
        if t == INF:
            raise CurveError("evaluate at a finite time")
        if t < 0:
            return _ZERO
        i = bisect_right(self._times, t) - 1  # last breakpoint at or before t
        ti, v, s = self.bps[i]
        if s == INF:
            return INF
        return v + s * (t - ti)

    def shift(self, tau) -> "Curve":
        """Right-shift: the curve ``t -> self(t - tau)``, for ``tau >= 0``."""
        tau = as_quantity(tau, what="shift")
        if tau == INF or tau < 0:
            raise CurveError("shift must be finite and nonnegative")
        if tau == 0:
            return self
        rows = [(_ZERO, _ZERO, _ZERO)]
        rows.extend((t + tau, v, s) for t, v, s in self.bps)
        return Curve(tuple(rows))

    def to_dict(self) -> dict:
        """Lossless mapping form; numbers become ints, "p/q" strings, or "inf"."""
        return {
            "breakpoints": [[_num_out(t), _num_out(v), _num_out(s)] for t, v, s in self.bps],
            "tail_slope": _num_out(self.tail_slope),
        }

    @classmethod
    def from_dict(cls, data) -> "Curve":
        if not isinstance(data, dict) or "breakpoints" not in data:
            raise CurveError("curve data must be a mapping with a 'breakpoints' list")
        pts = data["breakpoints"]
        if not isinstance(pts, (list, tuple)):
            raise CurveError("'breakpoints' must be a list of [t, v, slope] rows")
        curve = cls(tuple(tuple(row) if isinstance(row, (list, tuple)) else row for row in pts))
        if "tail_slope" in data:
            ts = as_quantity(data["tail_slope"], what="tail_slope")
            if ts != curve.tail_slope:
                raise CurveError("tail_slope disagrees with the final breakpoint slope")
        return curve

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Curve":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CurveError(f"invalid curve JSON: {exc}") from exc
        return cls.from_dict(data)

    def __repr__(self):
        rows = ", ".join(
            f"({_num_out(t)}, {_num_out(v)}, {_num_out(s)})" for t, v, s in self.bps)
        return f"Curve([{rows}])"


#: The curve that is identically zero.
ZERO = Curve(((0, 0, 0),))


def impulse(tau) -> Curve:
    """0 up to and including ``tau``, ``+inf`` strictly after.

    ``conv(f, impulse(tau))`` right-shifts ``f`` by ``tau``;
    ``deconv(f, impulse(tau))`` advances it, ``t -> f(t + tau)``.
    ``impulse(0)`` is the all-infinite curve and the conv identity.
    """
    tau = as_quantity(tau, what="impulse offset")
    if tau == INF or tau < 0:
        raise CurveError("impulse offset must be finite and nonnegative")
    if tau == 0:
        return Curve(((0, 0, INF),))
    return Curve(((0, 0, 0), (tau, 0, INF)))


# --- envelope engine ---------------------------------------------------
#
# Members are lists of engine rows (t, v, s): value v + s*(x - t) on
# (t, next_t].  Unlike Curve rows, v may be +-inf (slope 0 then), values
# may be negative, and an inf region may sit at the front (reflected
# members).  Times strictly increase from 0.


def _engine_rows(curve: Curve) -> list:
    return [(t, INF, _ZERO) if s == INF else (t, v, s) for t, v, s in curve.bps]


def _rows_shift(curve: Curve, delta, offset) -> list:
    """Member ``t -> curve(t - delta) + offset``."""
    out = [(_ZERO, offset, _ZERO)] if delta > 0 else []
    for t, v, s in curve.bps:
        if s == INF:
            out.append((t + delta, INF, _ZERO))
        else:
            out.append((t + delta, v + offset, s))
    return out


def _rows_advance(curve: Curve, delta, offset) -> list:
    """Member ``t -> curve(t + delta) + offset`` (left values of curve)."""
    i = bisect_right(curve._times, delta) - 1
    ti, v, s = curve.bps[i]
    if s == INF:
        return [(_ZERO, INF, _ZERO)]
    out = [(_ZERO, v + s * (delta - ti) + offset, s)]
    for t, v, s in curve.bps[i + 1:]:
        if s == INF:
            out.append((t - delta, INF, _ZERO))
        else:
            out.append((t - delta, v + offset, s))
    return out


def _rows_reverse(g: Curve, b, top) -> list:
    """Member ``t -> top - (right-limit of g at b - t)``, constant top past b.

    Right limits make the member left-continuous in t, and they are what
    a supremum approached from inside a segment actually attains.
    """
    if top == INF:
        tg = g.inf_start
        if tg is None or tg >= b:
            return [(_ZERO, INF, _ZERO)]
        return [(_ZERO, _NEG_INF, _ZERO), (b - tg, INF, _ZERO)]
    out = []
    rows = g.bps
    n = len(rows)
    for j in range(n - 1, -1, -1):
        tj, vj, sj = rows[j]
        t_end = b - tj
        if t_end <= 0:
            continue
        t_next = rows[j + 1][0] if j + 1 < n else None
        t_start = _ZERO if t_next is None or t_next > b else b - t_next
        if sj == INF:
            out.append((t_start, _NEG_INF, _ZERO))
            continue
        x_end = b if t_next is None else min(b, t_next)
        out.append((t_start, top - (vj + sj * (x_end - tj)), sj))
    out.append((b, top, _ZERO) if b > 0 else (_ZERO, top, _ZERO))
    return out


def _piece_at(rows, times, p):
    """(right-limit value, slope) of a member at p; affine until its next row."""
    t, v, s = rows[bisect_right(times, p) - 1]
    if v == INF or v == _NEG_INF:
        return v, _ZERO
    return v + s * (p - t), s


def _combine(members: list, mode: str, cap: int) -> Curve:
    """Exact pointwise min/max/sum envelope of member-row families."""
    tables = [(rows, [r[0] for r in rows]) for rows in members]
    cuts = sorted({t for rows in members for t, _, _ in rows})
    out = []
    for gi, p in enumerate(cuts):
        q = cuts[gi + 1] if gi + 1 < len(cuts) else None
        pieces = [_piece_at(rows, times, p) for rows, times in tables]
        if mode == "sum":
            if any(v == INF for v, _ in pieces):
                out.append((p, INF, _ZERO))
            else:
                out.append((p, sum(v for v, _ in pieces), sum(s for _, s in pieces)))
            continue
        # where two finite members cross inside this gap, the winner can
        # change; every such point is a breakpoint candidate
        xs = set()
        for i in range(len(pieces)):
            vi, si = pieces[i]
            if vi == INF or vi == _NEG_INF:
                continue
            for j in range(i + 1, len(pieces)):
                vj, sj = pieces[j]
                if vj == INF or vj == _NEG_INF or si == sj:
                    continue
                x = p + (vj - vi) / (si - sj)
                if x > p and (q is None or x < q):
                    xs.add(x)
        subs = [p] + sorted(xs)
        for k, sp in enumerate(subs):
            if k + 1 < len(subs):
                mid = (sp + subs[k + 1]) / 2
            elif q is not None:
                mid = (sp + q) / 2
            else:
                mid = sp + 1  # past every crossing: the asymptotic winner
            best = None
            for v, s in pieces:
                val = v if (v == INF or v == _NEG_INF) else v + s * (mid - p)
                if best is None or (val < best[0] if mode == "min" else val > best[0]):
                    best = (val, v, s)
            _, v, s = best
            if v == INF or v == _NEG_INF:
                out.append((sp, v, _ZERO))
            else:
                out.append((sp, v + s * (sp - p), s))
    return _finish(out, cap)


def _finish(rows: list, cap: int) -> Curve:
    merged = []
    for t, v, s in rows:
        if merged:
            tp, vp, sp = merged[-1]
            if vp == INF and v == INF:
                continue
            if vp == _NEG_INF and v == _NEG_INF:
                continue
            if vp not in (INF, _NEG_INF) and v not in (INF, _NEG_INF) \
                    and s == sp and v == vp + sp * (t - tp):
                continue
        merged.append((t, v, s))
    if len(merged) > cap:
        raise CurveComplexityError(
            f"exact result needs {len(merged)} breakpoint rows; cap is {cap}")
    curve_rows = []
    for k, (t, v, s) in enumerate(merged):
        if v == _NEG_INF:
            raise CurveError("internal: envelope fell to -inf")
        if v == INF:
            if k != len(merged) - 1:
                raise CurveError("internal: infinite region is not terminal")
            curve_rows.append((t, 0, INF))  # constructor recomputes the left limit
        else:
            curve_rows.append((t, v, s))
    return Curve(tuple(curve_rows))


# --- operators ---------------------------------------------------------


def conv(f: Curve, g: Curve, cap: int = DEFAULT_BREAKPOINT_CAP) -> Curve:
    """Exact ``inf over 0 <= u <= t of f(t - u) + g(u)``.

    Lower envelope of the members ``f(. - c) + g(c)`` over breakpoints c
    of g and ``g(. - b) + f(b)`` over breakpoints b of f; for
    left-continuous nondecreasing operands the infimum is attained at
    one of these, so the envelope is the convolution itself.
    """
    members = [_rows_shift(f, c, g.eval(c)) for c in g.knots]
    members += [_rows_shift(g, b, f.eval(b)) for b in f.knots]
    return _combine(members, "min", cap)


def deconv(f: Curve, g: Curve, cap: int = DEFAULT_BREAKPOINT_CAP) -> Curve:
    """Exact ``sup over u >= 0 of f(t + u) - g(u)``.

    If f outgrows g (strictly larger tail slope, or f alone diverges)
    the supremum is infinite everywhere and the all-infinite curve comes
    back.  Otherwise: upper envelope of ``f(. + c) - g(c)`` over
    breakpoints c of g, plus reflected members built from right limits
    at breakpoints b of f, which cover suprema that are approached but
    only attained in the limit.
    """
    if f.tail_slope > g.tail_slope:
        return impulse(0)
    members = [_rows_advance(f, c, -g.eval(c)) for c in g.knots]
    members += [_rows_reverse(g, b, f.eval_right(b)) for b in f.knots]
    return _combine(members, "max", cap)


def min_pointwise(f: Curve, g: Curve, cap: int = DEFAULT_BREAKPOINT_CAP) -> Curve:
    """Pointwise minimum, with exact crossing breakpoints."""
    return _combine([_engine_rows(f), _engine_rows(g)], "min", cap)


def max_pointwise(f: Curve, g: Curve, cap: int = DEFAULT_BREAKPOINT_CAP) -> Curve:
    """Pointwise maximum, with exact crossing breakpoints."""
    return _combine([_engine_rows(f), _engine_rows(g)], "max", cap)


def add_pointwise(f: Curve, g: Curve, cap: int = DEFAULT_BREAKPOINT_CAP) -> Curve:
    """Pointwise sum."""
    return _combine([_engine_rows(f), _engine_rows(g)], "sum", cap)


# --- comparisons -------------------------------------------------------


def le_on(f: Curve, g: Curve, upto=None) -> bool:
    """True iff ``f(t) <= g(t)`` for all t in (0, upto]; everywhere if upto is None."""
    pts = sorted(set(f.knots) | set(g.knots))
    if upto is not None:
        upto = as_quantity(upto, what="upto")
        if upto <= 0:
            return True
        pts = [k for k in pts if k < upto] + [upto]
    for p, q in zip(pts, pts[1:]):
        # both curves are affine (or inf) on (p, q]: endpoints decide
        if not (f.eval_right(p) <= g.eval_right(p) and f.eval(q) <= g.eval(q)):
            return False
    if upto is None:
        m = pts[-1]
        fr, gr = f.eval_right(m), g.eval_right(m)
        if not fr <= gr:
            return False
        if fr == INF or gr == INF:
            return True  # fr <= gr already forces g infinite wherever f is
        return f.tail_slope <= g.tail_slope
    return True


def eq_on(f: Curve, g: Curve, upto=None) -> bool:
    """True iff f and g agree on (0, upto]; everywhere if upto is None."""
    pts = sorted(set(f.knots) | set(g.knots))
    if upto is not None:
        upto = as_quantity(upto, what="upto")
        if upto <= 0:
            return True
        pts = [k for k in pts if k < upto] + [upto]
    for p, q in zip(pts, pts[1:]):
        if f.eval_right(p) != g.eval_right(p) or f.eval(q) != g.eval(q):
            return False
    if upto is None:
        m = pts[-1]
        fr, gr = f.eval_right(m), g.eval_right(m)
        if fr != gr:
            return False
        if fr == INF:
            return True
        return f.tail_slope == g.tail_slope
    return True


def is_subadditive(f: Curve, upto=None) -> bool:
    """Whether ``f(s + t) <= f(s) + f(t)`` holds, i.e. f is its own conv square.

    ``conv(f, f) <= f`` always (take u = 0), so only the reverse
    inequality is checked, on (0, upto] or everywhere.
    """
    return le_on(f, conv(f, f), upto)
