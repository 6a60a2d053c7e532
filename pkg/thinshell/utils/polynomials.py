"""
Real-root solvers for polynomials up to degree four.

The quartic path follows Ferrari: the cubic term is removed by a shift, the depressed quartic `u^4 + w u^2 + m u + n`
is completed into a difference of squares with the root `y` of the resolvent cubic
`y^3 - (w/2) y^2 - n y + (w n / 2 - m^2 / 8)`, and the two resulting quadratics give approximate roots.

Closed forms lose small roots to cancellation when the roots are widely spread, so every returned root is confirmed on
the original polynomial: consecutive critical points (the roots of the derivative, found the same way one degree
lower) split the real line into monotone pieces, each sign change brackets exactly one root, and a bisection-safeguarded
Newton iteration started from the closed-form estimate pins it down. Critical points where the polynomial vanishes are
the multiple roots.
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

DEGREE_TOLERANCE = 1e-12
RESOLVENT_MAX_ITERATIONS = 64
ISOLATION_MAX_ITERATIONS = 200
DISCRIMINANT_TOLERANCE = 1e-10
TOUCH_TOLERANCE = 1e-12
MERGE_TOLERANCE = 1e-9


def horner(coefficients: Sequence[float], x: float) -> float:
    """Evaluates a polynomial given with the leading coefficient first."""
    value = 0.0
    for c in coefficients:
        value = value * x + c
    return value


def derivative(coefficients: Sequence[float]) -> List[float]:
    degree = len(coefficients) - 1
    return [c * (degree - i) for i, c in enumerate(coefficients[:-1])]


def magnitude(coefficients: Sequence[float], x: float) -> float:
    """Sum of the absolute terms of the polynomial at `x`, the scale its rounding error is measured against."""
    degree = len(coefficients) - 1
    return sum(abs(c) * abs(x) ** (degree - i) for i, c in enumerate(coefficients))


def _merge(roots: List[float]) -> List[float]:
    merged: List[float] = []
    for r in sorted(roots):
        if merged and abs(r - merged[-1]) <= MERGE_TOLERANCE * max(1.0, abs(r)):
            continue
        merged.append(r)
    return merged


def _normalize(coefficients: Sequence[float]) -> List[float]:
    scale = max(abs(c) for c in coefficients)
    if scale == 0.0 or not math.isfinite(scale):
        return [0.0 for _ in coefficients]
    return [c / scale for c in coefficients]


def solve_linear(a: float, b: float) -> List[float]:
    """Roots of `a x + b`."""
    if a == 0.0:
        return []
    return [-b / a]


def solve_quadratic(a: float, b: float, c: float) -> List[float]:
    """Real roots of `a x^2 + b x + c`, demoting to the linear case when `a` vanishes relative to the others."""
    a, b, c = _normalize((a, b, c))
    if abs(a) < DEGREE_TOLERANCE:
        return solve_linear(b, c)
    discriminant = b * b - 4.0 * a * c
    if discriminant < 0.0:
        if discriminant < -DISCRIMINANT_TOLERANCE * (b * b + abs(4.0 * a * c)):
            return []
        discriminant = 0.0
    q = -0.5 * (b + math.copysign(math.sqrt(discriminant), b))
    if q == 0.0:
        return [0.0]
    return _merge([q / a, c / q])


def _safeguarded_newton(
    coefficients: Sequence[float],
    lo: float,
    hi: float,
    max_iterations: int = RESOLVENT_MAX_ITERATIONS,
    start: Optional[float] = None,
) -> Tuple[float, bool]:
    """
    Root of a polynomial inside a bracket `[lo, hi]` with `p(lo) <= 0 <= p(hi)`. Newton steps that leave the bracket
    are replaced by bisection. Returns the root and whether the iteration converged.
    """
    slope_coefficients = derivative(coefficients)
    f_lo = horner(coefficients, lo)
    if f_lo == 0.0:
        return lo, True
    f_hi = horner(coefficients, hi)
    if f_hi == 0.0:
        return hi, True
    x = start if start is not None and lo < start < hi else hi
    for _ in range(max_iterations):
        value = horner(coefficients, x)
        if value == 0.0:
            return x, True
        if value < 0.0:
            lo = x
        else:
            hi = x
        slope = horner(slope_coefficients, x)
        step_ok = slope != 0.0
        candidate = x - value / slope if step_ok else 0.5 * (lo + hi)
        if not step_ok or not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        if abs(candidate - x) <= 4e-16 * max(1.0, abs(x)) or hi - lo <= 4e-16 * max(1.0, abs(x)):
            return candidate, True
        x = candidate
    return x, False


def bracketed_roots(coefficients: Sequence[float], hints: Sequence[float] = ()) -> List[float]:
    """
    Real roots of a polynomial with a nonzero leading coefficient, each isolated between consecutive critical points.

    :param coefficients: leading coefficient first.
    :param hints: approximate roots used as Newton starting points inside their bracket.
    """
    degree = len(coefficients) - 1
    if degree == 1:
        return solve_linear(*coefficients)
    if degree == 2:
        return solve_quadratic(*coefficients)
    monic = [c / coefficients[0] for c in coefficients]
    # every root lies strictly inside the Cauchy bound
    bound = 1.0 + max(abs(c) for c in monic[1:])
    critical = [x for x in bracketed_roots(derivative(monic)) if -bound < x < bound]
    edges = [-bound] + critical + [bound]
    values = [horner(monic, x) for x in edges]
    # a critical point where the polynomial vanishes is a multiple root and ends the pieces on both sides
    touching = [abs(v) <= TOUCH_TOLERANCE * magnitude(monic, x) for x, v in zip(edges, values)]
    roots = [x for x, touch in zip(edges, touching) if touch]
    values = [0.0 if touch else v for v, touch in zip(values, touching)]
    for lo, hi, f_lo, f_hi in zip(edges[:-1], edges[1:], values[:-1], values[1:]):
        if f_lo == 0.0 or f_hi == 0.0 or (f_lo < 0.0) == (f_hi < 0.0):
            continue
        oriented = monic if f_lo < 0.0 else [-c for c in monic]
        start = next((h for h in hints if lo < h < hi), None)
        root, _ = _safeguarded_newton(oriented, lo, hi, ISOLATION_MAX_ITERATIONS, start)
        roots.append(root)
    return _merge(roots)


def solve_cubic(a: float, b: float, c: float, d: float) -> List[float]:
    """Real roots of `a x^3 + b x^2 + c x + d`, bracketed between the roots of the derivative."""
    a, b, c, d = _normalize((a, b, c, d))
    if abs(a) < DEGREE_TOLERANCE:
        return solve_quadratic(b, c, d)
    return bracketed_roots([a, b, c, d])


def ferrari_roots(g1: float, g2: float, g3: float, g4: float, g5: float) -> Tuple[List[float], bool]:
    """
    Real roots of `g1 x^4 + g2 x^3 + g3 x^2 + g4 x + g5` together with a flag telling whether the resolvent iteration
    converged. Near-zero leading coefficients demote the degree. The closed-form roots only seed the bracketed search,
    so a root the closed form misses is still found and a value that is not a root is never returned.
    """
    g1, g2, g3, g4, g5 = _normalize((g1, g2, g3, g4, g5))
    if abs(g1) < DEGREE_TOLERANCE:
        return solve_cubic(g2, g3, g4, g5), True
    b, c, d, e = g2 / g1, g3 / g1, g4 / g1, g5 / g1
    shift = b / 4.0
    omega = c - 6.0 * shift * shift
    mu = d - 2.0 * c * shift + 8.0 * shift**3
    nu = e - d * shift + c * shift * shift - 3.0 * shift**4

    resolvent = [1.0, -omega / 2.0, -nu, omega * nu / 2.0 - mu * mu / 8.0]
    lo = omega / 2.0
    hi = max(lo, 1.0 + max(abs(x) for x in resolvent[1:]))
    while horner(resolvent, hi) < 0.0:
        hi = 2.0 * hi + 1.0
    y, converged = _safeguarded_newton(resolvent, lo, hi)

    s_squared = max(2.0 * y - omega, 0.0)
    s = math.sqrt(s_squared)
    if s_squared > 1e-12 * max(1.0, abs(y)):
        t = mu / (2.0 * s)
    else:
        t = math.copysign(math.sqrt(max(y * y - nu, 0.0)), mu)
    depressed = solve_quadratic(1.0, -s, y + t) + solve_quadratic(1.0, s, y - t)
    hints = [u - shift for u in depressed if math.isfinite(u)]
    return bracketed_roots([g1, g2, g3, g4, g5], hints), converged


def solve_quartic(g1: float, g2: float, g3: float, g4: float, g5: float) -> List[float]:
    """
    Real roots of `g1 x^4 + g2 x^3 + g3 x^2 + g4 x + g5`, sorted and with repeated roots collapsed.

    >>> solve_quartic(1, -10, 35, -50, 24)
    [1.0, 2.0, 3.0, 4.0]
    """
    roots, _ = ferrari_roots(g1, g2, g3, g4, g5)
    return roots
