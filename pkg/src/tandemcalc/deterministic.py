"""Worst-case bounds for a flow crossing servers with known service curves.

Given an arrival envelope A (no window of length t ever carries more
than A(t)) and a service curve S (every busy stretch delivers at least
S), three quantities are exact and tight over all behaviours consistent
with the pair:

    output envelope   deconv(A, S)
    backlog bound     sup over u of  A(u) - S(u)
    delay bound       smallest d with  A(t - d) <= S(t) for all t

The backlog bound is computed by direct supremum rather than through
deconv so the two routes stay independently checkable; they must agree
via ``deconv(A, S).eval_right(0)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from .curves import (
    INF,
    Curve,
    CurveError,
    Quantity,
    as_quantity,
    conv,
    deconv,
    le_on,
)

__all__ = [
    "DetBounds",
    "output_envelope",
    "backlog_bound",
    "delay_bound",
    "det_bounds",
    "concat_min",
    "concat_max",
    "propagate_envelopes",
    "window_sufficient",
]

_ZERO = Fraction(0)


@dataclass(frozen=True)
class DetBounds:
    """Worst-case output envelope, backlog and delay for one hop or a tandem."""

    output_envelope: Curve
    b_max: Quantity
    d_max: Quantity


def output_envelope(envelope: Curve, service: Curve) -> Curve:
    """Envelope of the departing flow: ``deconv(envelope, service)``."""
    return deconv(envelope, service)


def backlog_bound(envelope: Curve, service: Curve) -> Quantity:
    """``sup over u >= 0`` of ``envelope(u) - service(u)``; may be +inf.

    The supremum of a piecewise-linear difference sits at a breakpoint
    of either side (value or right-limit) or comes from the tails, so
    scanning those finitely many candidates is exact.
    """
    if envelope.tail_slope > service.tail_slope:
        return INF
    best: Quantity = _ZERO
    for k in sorted(set(envelope.knots) | set(service.knots)):
        for a, s in ((envelope.eval(k), service.eval(k)),
                     (envelope.eval_right(k), service.eval_right(k))):
            if a == INF:
                if s != INF:
                    return INF
                continue  # both infinite: no backlog claim from this point
            if s == INF:
                continue
            if a - s > best:
                best = a - s
    return best


def _segment_solutions(curve: Curve, level) -> list:
    """All t > 0 with curve(t) == level, one representative per segment."""
    out = []
    bps = curve.bps
    for i, (t, v, s) in enumerate(bps):
        if s == INF:
            break
        nxt = bps[i + 1][0] if i + 1 < len(bps) else None
        if s == 0:
            if v == level:
                out.append(nxt if nxt is not None else t + 1)  # anywhere on the flat
            continue
        x = t + (level - v) / s
        if x > t and (nxt is None or x <= nxt):
            out.append(x)
    return out


def delay_bound(envelope: Curve, service: Curve) -> Quantity:
    """Smallest horizontal shift d with ``envelope(t - d) <= service(t)``; +inf if none.

    Feasibility is monotone in d, and at the optimum the shifted
    envelope touches the service curve either breakpoint-to-breakpoint,
    corner-to-segment, or tail-to-tail.  All such contact shifts are
    enumerated and the smallest feasible one returned.
    """
    cands = {_ZERO}
    e_knots, s_knots = envelope.knots, service.knots
    for sk in s_knots:
        for ek in e_knots:
            if sk - ek >= 0:
                cands.add(sk - ek)
    # an envelope corner dragged onto a service segment
    for ek in e_knots:
        for level in (envelope.eval(ek), envelope.eval_right(ek)):
            if level == INF:
                continue
            for x in _segment_solutions(service, level):
                if x - ek >= 0:
                    cands.add(x - ek)
    # a service corner met by an envelope segment
    for sk in s_knots:
        for level in (service.eval(sk), service.eval_right(sk)):
            if level == INF:
                continue
            for x in _segment_solutions(envelope, level):
                if sk - x >= 0:
                    cands.add(sk - x)
    # parallel tails touching at infinity
    rho_e, rho_s = envelope.tail_slope, service.tail_slope
    if rho_e == rho_s and rho_e != INF and rho_e > 0:
        me, ms = e_knots[-1], s_knots[-1]
        a0 = envelope.eval_right(me) - rho_e * me
        s0 = service.eval_right(ms) - rho_s * ms
        if a0 != INF and s0 != INF:
            d = (a0 - s0) / rho_e
            if d >= 0:
                cands.add(d)
    for d in sorted(cands):
        if le_on(envelope.shift(d), service):
            return d
    return INF


def det_bounds(envelope: Curve, service: Curve) -> DetBounds:
    """All three worst-case figures for one envelope/service pair."""
    return DetBounds(
        output_envelope=output_envelope(envelope, service),
        b_max=backlog_bound(envelope, service),
        d_max=delay_bound(envelope, service),
    )


def concat_min(services: Iterable[Curve]) -> Curve:
    """Service curve of servers in series: the conv of the per-node curves."""
    services = list(services)
    if not services:
        raise CurveError("need at least one service curve")
    acc = services[0]
    for s in services[1:]:
        acc = conv(acc, s)
    return acc


def concat_max(max_services: Iterable[Optional[Curve]]) -> Optional[Curve]:
    """Maximum-service curve of servers in series.

    Unconstrained nodes (None) drop out; all-unconstrained gives None.
    """
    present = [s for s in max_services if s is not None]
    if not present:
        return None
    acc = present[0]
    for s in present[1:]:
        acc = conv(acc, s)
    return acc


def propagate_envelopes(envelope: Curve, services: Iterable[Curve]) -> list:
    """Arrival envelope seen at each node of a tandem, first node included.

    Element h is the envelope entering node h; one extra trailing
    element is the envelope of the final output.
    """
    out = [envelope]
    for s in services:
        out.append(deconv(out[-1], s))
    return out


def window_sufficient(envelope: Curve, service: Curve, ell) -> bool:
    """Whether some t in (0, ell] has ``envelope(t) <= service(t)``.

    When true, a backlog clears within any window of length ell, so
    windowed service guarantees chain across such instants.  The check
    walks the merged breakpoints: on each affine piece (p, q] the gap
    ``service - envelope`` reaches its maximum at q, or just after p
    (where a strict right-limit surplus is attained arbitrarily close
    to p, while a zero limit approached from above is not).
    """
    ell = as_quantity(ell, what="window length")
    if ell <= 0 or ell == INF:
        raise CurveError("window length must be positive and finite")
    pts = sorted(set(envelope.knots) | set(service.knots))
    pts = [k for k in pts if k < ell] + [ell]
    for p, q in zip(pts, pts[1:]):
        ar, sr = envelope.eval_right(p), service.eval_right(p)
        # attained just after p on a strict right-limit surplus (a zero
        # surplus approached from above need not be attained, but that
        # case is always caught at some q instead); an infinite service
        # right-limit dominates anything
        if sr == INF or (ar != INF and sr > ar):
            return True
        if envelope.eval(q) <= service.eval(q):
            return True
    return False
