"""Uniformly parabolic surrogates sigma_tilde for a given profile.

The surrogate agrees with sigma below the modification window, replaces
the non-monotone middle by a slowly increasing C^1 piece, and (in the
rise-fall-rise case) rejoins sigma above the window with matching value
and slope.  Its derivative is pinched between positive constants
theta <= sigma_tilde' <= Theta, which is what the parabolic solver needs.

The construction works on the derivative: a linear taper from sigma'
down to a small ramp slope, the constant ramp, and (case II) a linear
taper back up to sigma' at the rejoin point.  sigma_tilde is then the
exact piecewise-quadratic integral, so it is C^1 by construction and
every clause is verified afterwards by dense sampling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConstructionFailedError, WindowInvalidError
from .profiles import CASE_H, CASE_PLH, CASE_PM, MINUS, PLUS, Profile, branch_inverse

CASE_I = "I"
CASE_II = "II"

CLAUSE_TOL = 1e-9


@dataclass(frozen=True)
class ModifiedProfile:
    """A parabolic surrogate together with its window and derivative bounds."""

    base: Profile
    case: str
    r1: float
    r2: float
    sigma_tilde: Callable
    sigma_tilde_prime: Callable
    theta: float
    Theta: float
    radii: dict  # s_-(r1), s_-(r2), s_+(r1), s_+(r2)

    def f_tilde(self, x):
        """f_tilde(x) = sigma_tilde(sqrt(x))/sqrt(x), extended at x = 0."""
        x = np.asarray(x, dtype=float)
        s = np.sqrt(x)
        out = np.where(s > 1e-150, np.divide(self.sigma_tilde(s), s, where=s > 1e-150), self.f0())
        return out if out.ndim else float(out)

    def f0(self) -> float:
        return self.base.f0()

    def flux(self, p) -> np.ndarray:
        """A_tilde(p) = f_tilde(|p|^2) p for a single vector p."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        mag = float(np.linalg.norm(p))
        if mag == 0.0:
            return np.zeros_like(p)
        return float(self.sigma_tilde(mag)) / mag * p

    def matched_below(self) -> float:
        """Largest slope below which the surrogate flux equals the true flux."""
        return self.radii["s_minus_r1"]


class _PiecewiseQuadratic:
    """sigma_tilde assembled from breakpoints and linear derivative pieces."""

    def __init__(self, base_sigma, base_prime, a, knots_s, knots_d, tail_slope, rejoin=None):
        # knots_s / knots_d: derivative breakpoints starting at (a, sigma'(a))
        self.base_sigma = base_sigma
        self.base_prime = base_prime
        self.a = a
        self.s = np.asarray(knots_s, dtype=float)
        self.d = np.asarray(knots_d, dtype=float)
        self.tail_slope = float(tail_slope)
        self.rejoin = rejoin  # None (case I) or s_+(r2) (case II)
        # integrate the piecewise-linear derivative exactly
        vals = [float(base_sigma(a))]
        for i in range(len(self.s) - 1):
            h = self.s[i + 1] - self.s[i]
            vals.append(vals[-1] + 0.5 * (self.d[i] + self.d[i + 1]) * h)
        self.v = np.asarray(vals)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.array(self.base_sigma(s), dtype=float, copy=True)
        inside = s > self.a
        if self.rejoin is not None:
            inside &= s < self.rejoin
        if np.any(inside):
            si = s[inside] if out.ndim else np.array([float(s)])
            idx = np.clip(np.searchsorted(self.s, si, side="right") - 1, 0, len(self.s) - 2)
            s0 = self.s[idx]
            d0 = self.d[idx]
            slope = (self.d[idx + 1] - d0) / (self.s[idx + 1] - s0)
            dx = si - s0
            vals = self.v[idx] + d0 * dx + 0.5 * slope * dx**2
            tail = si > self.s[-1]
            vals[tail] = self.v[-1] + self.tail_slope * (si[tail] - self.s[-1])
            if out.ndim:
                out[inside] = vals
            else:
                out = vals[0]
        return out if out.ndim else float(out)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        out = np.array(self.base_prime(s), dtype=float, copy=True)
        inside = s > self.a
        if self.rejoin is not None:
            inside &= s < self.rejoin
        if np.any(inside):
            si = s[inside] if out.ndim else np.array([float(s)])
            vals = np.interp(si, self.s, self.d, right=self.tail_slope)
            if out.ndim:
                out[inside] = vals
            else:
                out = vals[0]
        return out if out.ndim else float(out)


def _window_radii(base: Profile, r1: float, r2: float) -> dict:
    return {
        "s_minus_r1": branch_inverse(base, r1, MINUS),
        "s_minus_r2": branch_inverse(base, r2, MINUS),
        "s_plus_r1": branch_inverse(base, r1, PLUS),
        "s_plus_r2": branch_inverse(base, r2, PLUS),
    }


def modify_profile(base: Profile, r1: float, r2: float, theta_factor: float = 0.25) -> ModifiedProfile:
    """Construct the parabolic surrogate for the window (r1, r2).

    Single-hump base: requires 0 < r1 < r2 < sigma(s0); the surrogate
    drops below sigma on (s_-(r1), s_+(r2)) and continues as a slow ramp
    whose slope is ``theta_factor`` times the secant bound (values close
    to 1 spread the surrogate flux across the whole window, which the
    oscillation pipeline prefers; the conservative default keeps slack).
    Rise-fall-rise base: requires sigma(s2) < r1 < r2 < sigma(s1); the
    surrogate rejoins sigma at s_+(r2) with matching value and slope.
    """
    if base.case == CASE_PM:
        case = CASE_I
        peak = base.peak_value
        if not (0.0 < r1 < r2 < peak):
            raise WindowInvalidError(f"need 0 < r1 < r2 < {peak}, got ({r1}, {r2})")
    elif base.case in (CASE_H, CASE_PLH):
        case = CASE_II
        lo, hi = float(base.sigma(base.params["s2"])), float(base.sigma(base.params["s1"]))
        if not (lo < r1 < r2 < hi):
            raise WindowInvalidError(f"need {lo} < r1 < r2 < {hi}, got ({r1}, {r2})")
    else:
        raise WindowInvalidError(f"cannot modify a profile of case {base.case!r}")

    radii = _window_radii(base, r1, r2)
    a = radii["s_minus_r1"]
    d_a = float(base.sigma_prime(a))
    if d_a <= 0:
        raise ConstructionFailedError(f"sigma'({a}) <= 0 at the matching point", a)

    if case == CASE_I:
        builder = _build_case_i
    else:
        builder = _build_case_ii

    last_violation = None
    for _ in range(40):
        curve, ramp_slope = builder(base, r1, r2, radii, d_a)
        violation = _first_clause_violation(base, curve, case, radii)
        if violation is None:
            return _finish(base, case, r1, r2, curve, ramp_slope, radii)
        last_violation = violation
        d_a *= 0.7  # soften the taper and retry with a gentler transition
    raise ConstructionFailedError(
        f"could not keep the surrogate on the right side of sigma: {last_violation}",
        last_violation,
    )


def _build_case_i(base, r1, r2, radii, d_a):
    a = radii["s_minus_r1"]
    b = radii["s_plus_r2"]
    secant = (r2 - r1) / (b - a)
    theta_ramp = 0.25 * min(float(base.sigma_prime(0.0)), secant)
    theta_ramp = min(theta_ramp, 0.5 * d_a)
    # keep the transition's extra area under a quarter of the height budget
    w = min(0.25 * (b - a), 0.5 * (r2 - r1) / max(d_a - theta_ramp, 1e-12))
    knots_s = [a, a + w]
    knots_d = [d_a, theta_ramp]
    curve = _PiecewiseQuadratic(base.sigma, base.sigma_prime, a, knots_s, knots_d, theta_ramp)
    return curve, theta_ramp


def _build_case_ii(base, r1, r2, radii, d_a):
    a = radii["s_minus_r1"]
    b = radii["s_plus_r2"]
    d_b = float(base.sigma_prime(b))
    w = 0.05 * (b - a)
    for _ in range(60):
        ramp = (r2 - r1 - 0.5 * w * (d_a + d_b)) / (b - a - w)
        if ramp > 0:
            break
        w *= 0.5
    else:
        raise ConstructionFailedError("no positive ramp slope fits the window", (r1, r2))
    knots_s = [a, a + w, b - w, b]
    knots_d = [d_a, ramp, ramp, d_b]
    curve = _PiecewiseQuadratic(
        base.sigma, base.sigma_prime, a, knots_s, knots_d, d_b, rejoin=b
    )
    return curve, ramp


def _sample_open(lo, hi, n):
    return np.linspace(lo, hi, n + 2)[1:-1]


def _first_clause_violation(base, curve, case, radii, n=4000):
    a = radii["s_minus_r1"]
    if case == CASE_I:
        s = _sample_open(a, radii["s_plus_r2"], n)
        diff = np.asarray(curve(s)) - np.asarray(base.sigma(s))
        if np.any(diff >= 0):
            return float(s[np.argmax(diff)])
        return None
    s_lo = _sample_open(a, radii["s_minus_r2"], n // 2)
    diff_lo = np.asarray(curve(s_lo)) - np.asarray(base.sigma(s_lo))
    if np.any(diff_lo >= 0):
        return float(s_lo[np.argmax(diff_lo)])
    s_hi = _sample_open(radii["s_plus_r1"], radii["s_plus_r2"], n // 2)
    diff_hi = np.asarray(curve(s_hi)) - np.asarray(base.sigma(s_hi))
    if np.any(diff_hi <= 0):
        return float(s_hi[np.argmin(diff_hi)])
    # rejoin mismatch would silently break C^1; guard it here
    b = radii["s_plus_r2"]
    if abs(float(curve(b - 1e-12)) - float(base.sigma(b))) > 1e-8:
        return float(b)
    return None


def _finish(base, case, r1, r2, curve, ramp_slope, radii):
    smax = max(base.s_max(), 2.0 * radii["s_plus_r2"])
    s = np.linspace(1e-9, smax, 20_000)
    d = np.asarray(curve.derivative(s))
    theta = min(ramp_slope, 0.999 * float(d.min()))
    Theta = 4.0 * float(d.max())
    if theta <= 0:
        raise ConstructionFailedError("surrogate derivative not positive", float(s[np.argmin(d)]))
    return ModifiedProfile(
        base=base,
        case=case,
        r1=float(r1),
        r2=float(r2),
        sigma_tilde=curve,
        sigma_tilde_prime=curve.derivative,
        theta=float(theta),
        Theta=float(Theta),
        radii=radii,
    )


def identity_surrogate() -> ModifiedProfile:
    """sigma_tilde(s) = s, i.e. plain heat flux; used for benchmarks."""
    from .profiles import custom_profile

    base = custom_profile(lambda s: np.asarray(s, dtype=float), lambda s: np.ones_like(np.asarray(s, dtype=float)))
    ident = lambda s: np.asarray(s, dtype=float)  # noqa: E731
    one = lambda s: np.ones_like(np.asarray(s, dtype=float))  # noqa: E731
    return ModifiedProfile(
        base=base,
        case=CASE_I,
        r1=0.0,
        r2=0.0,
        sigma_tilde=ident,
        sigma_tilde_prime=one,
        theta=1.0,
        Theta=1.0,
        radii={"s_minus_r1": np.inf, "s_minus_r2": np.inf, "s_plus_r1": np.inf, "s_plus_r2": np.inf},
    )


# ---------------------------------------------------------------------------
# verification


@dataclass
class ClauseReport:
    name: str
    max_violation: float
    passed: bool


@dataclass
class ModificationReport:
    clauses: list
    passed: bool

    def __str__(self):
        lines = [f"modification check: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.clauses:
            lines.append(f"  {'ok  ' if c.passed else 'FAIL'} {c.name}: max violation {c.max_violation:.3e}")
        return "\n".join(lines)


def verify_modification(mp: ModifiedProfile, n_samples: int = 4000) -> ModificationReport:
    """Sample every clause of the surrogate's defining system.

    Equality and derivative-bound clauses pass when the violation is at
    most 1e-9; the strict separation clauses must hold at every sampled
    interior point (an identically-equal surrogate fails them).
    """
    base = mp.base
    radii = mp.radii
    a = radii["s_minus_r1"]
    clauses = []

    s_match = np.linspace(0.0, a, n_samples)
    v = float(np.max(np.abs(np.asarray(mp.sigma_tilde(s_match)) - np.asarray(base.sigma(s_match)))))
    clauses.append(ClauseReport("match on [0, s_-(r1)]", v, v <= CLAUSE_TOL))

    if mp.case == CASE_I:
        s_mid = _sample_open(a, radii["s_plus_r2"], n_samples)
        diff = np.asarray(mp.sigma_tilde(s_mid)) - np.asarray(base.sigma(s_mid))
        clauses.append(
            ClauseReport("below sigma on (s_-(r1), s_+(r2))", max(float(diff.max()), 0.0), bool(np.all(diff < 0)))
        )
    else:
        s_lo = _sample_open(a, radii["s_minus_r2"], n_samples // 2)
        diff = np.asarray(mp.sigma_tilde(s_lo)) - np.asarray(base.sigma(s_lo))
        clauses.append(
            ClauseReport("below sigma on (s_-(r1), s_-(r2)]", max(float(diff.max()), 0.0), bool(np.all(diff < 0)))
        )
        s_hi = _sample_open(radii["s_plus_r1"], radii["s_plus_r2"], n_samples // 2)
        diff = np.asarray(mp.sigma_tilde(s_hi)) - np.asarray(base.sigma(s_hi))
        clauses.append(
            ClauseReport("above sigma on [s_+(r1), s_+(r2))", max(float(-diff.min()), 0.0), bool(np.all(diff > 0)))
        )
        b = radii["s_plus_r2"]
        s_tail = np.linspace(b, max(base.s_max(), 2.0 * b), n_samples // 2)
        v = float(np.max(np.abs(np.asarray(mp.sigma_tilde(s_tail)) - np.asarray(base.sigma(s_tail)))))
        clauses.append(ClauseReport("match on [s_+(r2), inf)", v, v <= CLAUSE_TOL))

    smax = max(base.s_max(), 2.0 * radii["s_plus_r2"])
    s_all = np.linspace(1e-9, smax, n_samples)
    d = np.asarray(mp.sigma_tilde_prime(s_all))
    v_lo = max(float(np.max(mp.theta - d)), 0.0)
    clauses.append(ClauseReport("theta <= sigma_tilde'", v_lo, v_lo <= CLAUSE_TOL))
    v_hi = max(float(np.max(d - mp.Theta)), 0.0)
    clauses.append(ClauseReport("sigma_tilde' <= Theta", v_hi, v_hi <= CLAUSE_TOL))

    return ModificationReport(clauses=clauses, passed=all(c.passed for c in clauses))


def dump_curve(mp: ModifiedProfile, path: str, n: int = 1000) -> None:
    """Write (s, sigma_tilde(s)) rows for plotting."""
    smax = max(mp.base.s_max(), 2.0 * mp.radii["s_plus_r2"])
    s = np.linspace(0.0, smax, n)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "sigma_tilde"])
        for si, vi in zip(s, np.asarray(mp.sigma_tilde(s))):
            writer.writerow([f"{si:.17g}", f"{vi:.17g}"])
