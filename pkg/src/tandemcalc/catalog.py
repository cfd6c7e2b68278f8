"""Standard curve shapes, flow/node descriptions, and curve expressions.

The text expression forms accepted by scenario files and the CLI:

    tb(sigma, rho)        token bucket: sigma + rho*t for t > 0
    rl(R, T)              rate-latency: R * max(0, t - T)
    cr(C)                 constant rate C*t
    delta(tau)            0 up to tau, +inf after
    pl([[t, v, s], ...])  explicit breakpoint rows

Numbers may be integers, decimals, fractions like 7/3, or inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .curves import (
    INF,
    Curve,
    CurveError,
    as_quantity,
    impulse,
    is_subadditive,
    le_on,
)

__all__ = [
    "token_bucket",
    "rate_latency",
    "constant_rate",
    "from_breakpoints",
    "impulse",
    "FlowSpec",
    "NodeSpec",
    "parse_curve_expr",
    "curve_expr",
]


def _finite(x, what):
    q = as_quantity(x, what=what)
    if q == INF:
        raise CurveError(f"{what} must be finite")
    return q


def token_bucket(sigma, rho) -> Curve:
    """Burst ``sigma`` plus sustained rate ``rho``: ``sigma + rho*t`` for t > 0."""
    sigma = _finite(sigma, "burst")
    rho = _finite(rho, "rate")
    if sigma < 0 or rho < 0:
        raise CurveError("burst and rate must be nonnegative")
    return Curve(((0, sigma, rho),))


def rate_latency(rate, latency) -> Curve:
    """Nothing for ``latency`` time units, then slope ``rate``."""
    rate = _finite(rate, "rate")
    latency = _finite(latency, "latency")
    if rate < 0 or latency < 0:
        raise CurveError("rate and latency must be nonnegative")
    if latency == 0:
        return Curve(((0, 0, rate),))
    return Curve(((0, 0, 0), (latency, 0, rate)))


def constant_rate(rate) -> Curve:
    """Pure rate: ``rate * t``."""
    rate = _finite(rate, "rate")
    if rate < 0:
        raise CurveError("rate must be nonnegative")
    return Curve(((0, 0, rate),))


def from_breakpoints(points, tail_slope=None) -> Curve:
    """Build a curve from ``[t, v, slope]`` rows, validating as it goes.

    ``tail_slope``, when given, must agree with the final row's slope;
    it exists so serialized forms can carry the tail explicitly.
    """
    if isinstance(points, (str, bytes)):
        raise CurveError("breakpoints must be a sequence of [t, v, slope] rows")
    curve = Curve(tuple(tuple(p) if isinstance(p, (list, tuple)) else p for p in points))
    if tail_slope is not None:
        ts = as_quantity(tail_slope, what="tail_slope")
        if ts != curve.tail_slope:
            raise CurveError(
                f"tail_slope {tail_slope} disagrees with the final row slope {curve.tail_slope}")
    return curve


@dataclass(frozen=True)
class FlowSpec:
    """A flow: its arrival envelope, i.e. an upper bound on the traffic any
    window of length t may carry.

    Envelopes are required subadditive (an envelope that is not can
    always be tightened, and several bound arguments lean on it); pass
    ``enforce_subadditive=False`` to skip the check.
    """

    envelope: Curve
    enforce_subadditive: bool = True

    def __post_init__(self):
        if not isinstance(self.envelope, Curve):
            raise CurveError("envelope must be a Curve")
        if self.enforce_subadditive and not is_subadditive(self.envelope):
            raise CurveError("envelope is not subadditive; tighten it first")


@dataclass(frozen=True)
class NodeSpec:
    """One server: a minimum service curve and, optionally, a maximum.

    ``link_rate`` is shorthand for a constant-rate maximum; an explicit
    ``max_service`` wins over it.  No maximum means the node may serve
    arbitrarily fast.
    """

    min_service: Curve
    max_service: Optional[Curve] = None
    link_rate: object = field(default=None)

    def __post_init__(self):
        if not isinstance(self.min_service, Curve):
            raise CurveError("min_service must be a Curve")
        if self.max_service is None and self.link_rate is not None:
            object.__setattr__(self, "max_service", constant_rate(self.link_rate))
        if self.max_service is not None:
            if not isinstance(self.max_service, Curve):
                raise CurveError("max_service must be a Curve")
            if not le_on(self.min_service, self.max_service):
                raise CurveError("min_service exceeds max_service somewhere")


# --- expression parsing --------------------------------------------------


def _split_top(text: str) -> list:
    """Split on commas not nested inside brackets."""
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
            if depth < 0:
                raise CurveError(f"unbalanced brackets in {text!r}")
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    if depth:
        raise CurveError(f"unbalanced brackets in {text!r}")
    parts.append(text[start:])
    return [p.strip() for p in parts]


def _parse_rows(text: str) -> list:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise CurveError(f"expected a bracketed list, got {text!r}")
    inner = text[1:-1].strip()
    if not inner:
        raise CurveError("breakpoint list is empty")
    rows = []
    for part in _split_top(inner):
        if not (part.startswith("[") and part.endswith("]")):
            raise CurveError(f"expected a [t, v, slope] row, got {part!r}")
        nums = _split_top(part[1:-1])
        if len(nums) != 3:
            raise CurveError(f"breakpoint row needs exactly t, v, slope: {part!r}")
        rows.append([as_quantity(n, what="breakpoint entry") for n in nums])
    return rows


def parse_curve_expr(text: str) -> Curve:
    """Parse the ``tb/rl/cr/delta/pl`` expression forms into a Curve."""
    s = text.strip()
    open_at = s.find("(")
    if open_at < 0 or not s.endswith(")"):
        raise CurveError(f"curve expression must look like name(...): {text!r}")
    name, body = s[:open_at].strip(), s[open_at + 1:-1].strip()
    if name == "pl":
        return from_breakpoints(_parse_rows(body))
    args = _split_top(body) if body else []
    if name == "tb":
        if len(args) != 2:
            raise CurveError("tb takes (sigma, rho)")
        return token_bucket(args[0], args[1])
    if name == "rl":
        if len(args) != 2:
            raise CurveError("rl takes (R, T)")
        return rate_latency(args[0], args[1])
    if name == "cr":
        if len(args) != 1:
            raise CurveError("cr takes (C)")
        return constant_rate(args[0])
    if name == "delta":
        if len(args) != 1:
            raise CurveError("delta takes (tau)")
        return impulse(args[0])
    raise CurveError(f"unknown curve form {name!r} (expected tb, rl, cr, delta or pl)")


def _num_text(q) -> str:
    return "inf" if q == INF else str(q)


def curve_expr(curve: Curve) -> str:
    """Render a curve back to expression text, preferring the named forms."""
    bps = curve.bps
    if len(bps) == 1:
        t, v, s = bps[0]
        if s == INF:
            return "delta(0)"
        if v == 0:
            return f"cr({_num_text(s)})"
        return f"tb({_num_text(v)}, {_num_text(s)})"
    if len(bps) == 2 and bps[0][1] == 0 and bps[0][2] == 0 and bps[1][1] == 0:
        t, _, s = bps[1]
        if s == INF:
            return f"delta({_num_text(t)})"
        return f"rl({_num_text(s)}, {_num_text(t)})"
    rows = ", ".join(f"[{_num_text(t)}, {_num_text(v)}, {_num_text(s)}]" for t, v, s in bps)
    return f"pl([{rows}])"
