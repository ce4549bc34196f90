"""Rank-one connection geometry for the gradient differential inclusion.

The state of the space-time Jacobian is a (1+n) x (n+1) block matrix
xi = (p, c; B, beta).  The constraint sets pin |p| to two disjoint slope
annuli with beta = A(p) and tr B = 0; a point (p, beta) admits a rank-one
connection when the nonlinear system

    sigma(|p + s'q'|) unit(p + s'q') = beta + s'gamma'
    sigma(|p +   q'|) unit(p +   q') = beta +   gamma'
    gamma' . q' = 0

has a solution with s' < 0 and the two radii inside their annuli.  This
module solves that system by Newton iteration with the analytic Jacobian
and exposes the closed-form determinant criterion that controls its
invertibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DivisionDegenerateError,
    NoConvergenceError,
    OutOfRangeError,
    ParameterDomainError,
    PreconditionFailedError,
    SingularJacobianError,
    WindowInvalidError,
)
from .profiles import CASE_PM, MINUS, PLUS, Profile, branch_inverse, eval_flux

F_MINUS = "F-"
F_PLUS = "F+"
NEITHER = "neither"

MEMBER_TOL = 1e-10
NEWTON_TOL = 1e-10
DET_FLOOR = 1e-8
MAX_NEWTON = 50


# ---------------------------------------------------------------------------
# block matrices and witnesses


@dataclass(frozen=True)
class SpaceTimeMatrix:
    """xi = (p, c; B, beta) as separate blocks (p, beta in R^n, B n x n)."""

    p: np.ndarray
    c: float
    B: np.ndarray
    beta: np.ndarray

    @staticmethod
    def diagonal(p, beta) -> "SpaceTimeMatrix":
        p = np.atleast_1d(np.asarray(p, dtype=float))
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        n = p.size
        return SpaceTimeMatrix(p=p, c=0.0, B=np.zeros((n, n)), beta=beta)

    @property
    def n(self) -> int:
        return self.p.size

    def as_matrix(self) -> np.ndarray:
        n = self.n
        out = np.zeros((1 + n, n + 1))
        out[0, :n] = self.p
        out[0, n] = self.c
        out[1:, :n] = self.B
        out[1:, n] = self.beta
        return out

    def shifted(self, t: float, eta: np.ndarray) -> "SpaceTimeMatrix":
        m = self.as_matrix() + t * eta
        n = self.n
        return SpaceTimeMatrix(p=m[0, :n].copy(), c=float(m[0, n]), B=m[1:, :n].copy(), beta=m[1:, n].copy())


@dataclass(frozen=True)
class RankOneWitness:
    """(q, gamma, t-, t+, b) with xi + t+- eta in the two constraint sets."""

    q: np.ndarray
    gamma: np.ndarray
    t_minus: float
    t_plus: float
    b: float = 1.0

    def __post_init__(self):
        if not (self.t_minus < 0.0 < self.t_plus):
            raise ParameterDomainError(f"need t- < 0 < t+, got ({self.t_minus}, {self.t_plus})")
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-12:
            raise ParameterDomainError("q must be a unit vector")
        if abs(float(self.gamma @ self.q)) > 1e-12:
            raise ParameterDomainError("gamma must be orthogonal to q")
        if self.b == 0.0:
            raise ParameterDomainError("b must be nonzero")

    @property
    def n(self) -> int:
        return self.q.size

    def eta(self, b: Optional[float] = None) -> np.ndarray:
        """The rank-one direction (q, b; gamma x q / b, gamma)."""
        b = self.b if b is None else float(b)
        if b == 0.0:
            raise ParameterDomainError("b must be nonzero")
        n = self.n
        out = np.zeros((1 + n, n + 1))
        out[0, :n] = self.q
        out[0, n] = b
        out[1:, :n] = np.outer(self.gamma, self.q) / b
        out[1:, n] = self.gamma
        return out

    @property
    def mixing(self) -> float:
        """Convexity weight: xi = mixing*xi_plus + (1-mixing)*xi_minus."""
        return -self.t_minus / (self.t_plus - self.t_minus)


# ---------------------------------------------------------------------------
# windows and set membership


@dataclass
class WindowParams:
    """An (r1, r2) window of the profile with its four branch radii."""

    profile: Profile
    r1: float
    r2: float
    radii: dict = field(init=False)
    case: str = field(init=False)

    def __post_init__(self):
        prof = self.profile
        if prof.case == CASE_PM:
            self.case = "I"
            peak = prof.peak_value
            if not (0.0 < self.r1 < self.r2 < peak):
                raise WindowInvalidError(f"need 0 < r1 < r2 < {peak}")
        else:
            self.case = "II"
            lo = float(prof.sigma(prof.params["s2"]))
            hi = float(prof.sigma(prof.params["s1"]))
            if not (lo < self.r1 < self.r2 < hi):
                raise WindowInvalidError(f"need {lo} < r1 < r2 < {hi}")
        self.radii = {
            "s_minus_r1": branch_inverse(prof, self.r1, MINUS),
            "s_minus_r2": branch_inverse(prof, self.r2, MINUS),
            "s_plus_r1": branch_inverse(prof, self.r1, PLUS),
            "s_plus_r2": branch_inverse(prof, self.r2, PLUS),
        }

    def minus_interval(self) -> tuple:
        return (self.radii["s_minus_r1"], self.radii["s_minus_r2"])

    def plus_interval(self) -> tuple:
        if self.case == "I":
            return (self.radii["s_plus_r2"], self.radii["s_plus_r1"])
        return (self.radii["s_plus_r1"], self.radii["s_plus_r2"])

    def p_sup(self) -> float:
        """sup |p| over the connected set (outer annulus edge)."""
        return self.plus_interval()[1]

    def validate_det_floor(self, n_samples: int = 32, floor: float = 1e-6) -> float:
        """Reject windows whose collinear determinant gets too close to zero.

        The implicit-function construction needs DET bounded away from 0
        around collinear points; this is the empirical stand-in for the
        window lower bound whose exact value the analysis does not give.
        """
        worst = np.inf
        e1 = np.zeros(1)
        e1[0] = 1.0
        for r in np.linspace(self.r1 + 1e-9, self.r2 - 1e-9, n_samples):
            u = branch_inverse(self.profile, r, PLUS) * e1
            v = branch_inverse(self.profile, r, MINUS) * e1
            worst = min(worst, abs(det_B(u, v, e1, np.zeros(1), self.profile)))
        if worst < floor:
            raise WindowInvalidError(f"collinear DET floor {worst:.3e} < {floor}")
        return float(worst)


def in_K(xi: SpaceTimeMatrix, level: float, profile: Profile) -> bool:
    """Membership in the level-l constraint set: tr B = l and beta = A(p)."""
    if abs(float(np.trace(xi.B)) - level) > MEMBER_TOL:
        return False
    return bool(np.max(np.abs(xi.beta - eval_flux(profile, xi.p))) <= MEMBER_TOL)


def classify_F(xi: SpaceTimeMatrix, w: WindowParams) -> str:
    """Which of the two constraint components xi belongs to, if any."""
    if abs(float(np.trace(xi.B))) > MEMBER_TOL:
        return NEITHER
    if np.max(np.abs(xi.beta - eval_flux(w.profile, xi.p))) > MEMBER_TOL:
        return NEITHER
    mag = float(np.linalg.norm(xi.p))
    lo, hi = w.minus_interval()
    if lo < mag < hi:
        return F_MINUS
    lo, hi = w.plus_interval()
    if lo < mag < hi:
        return F_PLUS
    return NEITHER


# ---------------------------------------------------------------------------
# two-dimensional angle and distance bound


def twod_angle(R1: float, R2: float, Rt1: float, Rt2: float) -> float:
    """Half-angle theta solving the planar orthogonality relation.

    (R2-R1)(Rt1-Rt2)cos^2 = (R1+R2)(Rt1+Rt2)sin^2, requiring
    R2 > R1 > 0 and Rt1 >= Rt2 > 0.
    """
    if not (R2 > R1 > 0.0):
        raise ParameterDomainError(f"need R2 > R1 > 0, got ({R1}, {R2})")
    if not (Rt2 > 0.0) or Rt1 < Rt2:
        raise ParameterDomainError(f"need Rt1 >= Rt2 > 0, got ({Rt1}, {Rt2})")
    return math.atan(math.sqrt((R2 - R1) * (Rt1 - Rt2) / ((R1 + R2) * (Rt1 + Rt2))))


def angle_endpoints(R1, R2, Rt1, Rt2, theta):
    """The four planar vectors built from theta (minus pair, plus pair)."""
    em = np.array([math.cos(math.pi / 2 + theta), math.sin(math.pi / 2 + theta)])
    ep = np.array([math.cos(math.pi / 2 - theta), math.sin(math.pi / 2 - theta)])
    return R1 * em, R2 * ep, Rt1 * em, Rt2 * ep


def h_bound(case: str, a: float, b: float, c: float, d1: float, d2: float, eta: float) -> float:
    """Distance bound for nearly-collinear rank-one endpoint data.

    Exact max-of-square-roots evaluation; domain [0,a) x [0,inf) x [0,c)
    in case I and [0,a) x [0,b-a) x [0,c) in case II.
    """
    if not (0.0 < a < b and c > 0.0):
        raise ParameterDomainError("need 0 < a < b and c > 0")
    if not (0.0 <= d1 < a and 0.0 <= eta < c and d2 >= 0.0):
        raise ParameterDomainError("(d1, d2, eta) outside the admissible domain")
    if case == "II" and d2 >= b - a:
        raise ParameterDomainError("case II needs d2 < b - a")
    if case == "I":
        g = math.atan(math.sqrt((b - a + d1 + d2) * eta / (2.0 * (a + b - d1) * (c - eta))))
        b_out = b + d2
    else:
        g = math.atan(math.sqrt((b - a + d1) * eta / (2.0 * (a + b - d1 - d2) * (c - eta))))
        b_out = b - d2
    cg = math.cos(g)

    def pair(base, other):
        return max(
            math.sqrt(2.0) * base * math.sqrt(max(1.0 - cg, 0.0)),
            math.sqrt(max(other**2 + base**2 - 2.0 * base * other * cg, 0.0)),
        )

    h1 = pair(a, a - d1)
    h2 = pair(b, b_out)
    h3 = pair(c, c - eta)
    return max(h1, h2, h3)


def collinear_projection(p_minus, p_plus, w: WindowParams):
    """Common direction and distance bound for an orthogonal endpoint pair.

    Returns (zeta0, max_distance) where zeta0 is the normalized sum of the
    endpoint directions and max_distance the largest deviation of the pair
    (and its fluxes) from the collinear reference points at radius r2.
    """
    p_minus = np.atleast_1d(np.asarray(p_minus, dtype=float))
    p_plus = np.atleast_1d(np.asarray(p_plus, dtype=float))
    rm, rp = float(np.linalg.norm(p_minus)), float(np.linalg.norm(p_plus))
    lo_m, hi_m = w.minus_interval()
    lo_p, hi_p = w.plus_interval()
    if not (lo_m < rm < hi_m and lo_p < rp < hi_p):
        raise PreconditionFailedError(
            f"radii ({rm:.6g}, {rp:.6g}) violate the window ordering"
        )
    a_m = eval_flux(w.profile, p_minus)
    a_p = eval_flux(w.profile, p_plus)
    ortho = float((a_p - a_m) @ (p_plus - p_minus))
    scale = max(1.0, rp * w.r2)
    if abs(ortho) > 1e-10 * scale:
        raise PreconditionFailedError(f"orthogonality defect {ortho:.3e}")

    direction = p_plus / rp + p_minus / rm
    zeta0 = direction / np.linalg.norm(direction)
    ref_minus = w.radii["s_minus_r2"] * zeta0
    ref_plus = w.radii["s_plus_r2"] * zeta0
    ref_flux = w.r2 * zeta0
    dist = max(
        float(np.linalg.norm(ref_minus - p_minus)),
        float(np.linalg.norm(ref_plus - p_plus)),
        float(np.linalg.norm(ref_flux - a_m)),
        float(np.linalg.norm(ref_flux - a_p)),
    )
    bound = h_bound(
        w.case,
        w.radii["s_minus_r2"],
        w.radii["s_plus_r2"],
        w.r2,
        w.radii["s_minus_r2"] - w.radii["s_minus_r1"],
        abs(w.radii["s_plus_r1"] - w.radii["s_plus_r2"]),
        w.r2 - w.r1,
    )
    if dist > bound + 1e-12:
        raise PreconditionFailedError(f"distance {dist:.6g} exceeds its bound {bound:.6g}")
    return zeta0, dist


# ---------------------------------------------------------------------------
# DET criterion


def det_B(p_plus, p_minus, q, gamma, profile: Profile) -> float:
    """Closed-form determinant controlling the Newton Jacobian.

    Arguments are the outer endpoint u = p_plus, the inner endpoint
    v = p_minus, the unit connection direction q and the flux slope gamma.
    """
    u = np.atleast_1d(np.asarray(p_plus, dtype=float))
    v = np.atleast_1d(np.asarray(p_minus, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ParameterDomainError("endpoints must be nonzero")
    au = float(profile.sigma(nu)) / nu
    av = float(profile.sigma(nv)) / nv
    bu = float(profile.sigma_prime(nu))
    bv = float(profile.sigma_prime(nv))
    d0 = au - av
    if abs(d0) < 1e-14:
        raise DivisionDegenerateError("sigma(|u|)/|u| = sigma(|v|)/|v| within 1e-14")
    uh, vh = u / nu, v / nv
    vq = float(vh @ q)
    denom2 = (bv - av) * vq**2 + av
    if abs(denom2) < 1e-14:
        raise DivisionDegenerateError("degenerate second denominator")
    omega_minus = (bv - av) * vq * vh + av * q - gamma
    omega_plus = (bv - av) * vq * vh + av * q + gamma
    n = u.size
    M = (
        np.eye(n)
        + (bu - au) / d0 * np.outer(uh, uh)
        - (bv - av) / d0 * np.outer(vh, vh)
        + np.outer(omega_minus, omega_plus) / (d0 * denom2)
    )
    return float(np.linalg.det(M))


# ---------------------------------------------------------------------------
# the implicit system and its Newton solver


def _flux_jacobian(profile: Profile, vec: np.ndarray) -> np.ndarray:
    """d/dp of A(p) = sigma(|p|) p/|p| at p = vec (nonzero)."""
    mag = float(np.linalg.norm(vec))
    unit = vec / mag
    a = float(profile.sigma(mag)) / mag
    b = float(profile.sigma_prime(mag))
    n = vec.size
    return b * np.outer(unit, unit) + a * (np.eye(n) - np.outer(unit, unit))


def _system(profile, p, beta, gamma_p, q_p, s_p):
    y = p + s_p * q_p
    z = p + q_p
    ny, nz = float(np.linalg.norm(y)), float(np.linalg.norm(z))
    f1 = float(profile.sigma(ny)) * y / ny - beta - s_p * gamma_p
    f2 = float(profile.sigma(nz)) * z / nz - beta - gamma_p
    f3 = float(gamma_p @ q_p)
    return np.concatenate([f1, f2, [f3]]), y, z


def _jacobian(profile, gamma_p, q_p, s_p, y, z):
    n = q_p.size
    J = np.zeros((2 * n + 1, 2 * n + 1))
    DAy = _flux_jacobian(profile, y)
    DAz = _flux_jacobian(profile, z)
    J[:n, :n] = -s_p * np.eye(n)
    J[:n, n : 2 * n] = s_p * DAy
    J[:n, 2 * n] = DAy @ q_p - gamma_p
    J[n : 2 * n, :n] = -np.eye(n)
    J[n : 2 * n, n : 2 * n] = DAz
    J[2 * n, :n] = q_p
    J[2 * n, n : 2 * n] = gamma_p
    return J


def _in_annuli(w: WindowParams, y, z, margin=0.0) -> bool:
    lo_m, hi_m = w.minus_interval()
    lo_p, hi_p = w.plus_interval()
    ny, nz = float(np.linalg.norm(y)), float(np.linalg.norm(z))
    return (lo_m + margin < ny < hi_m - margin) and (lo_p + margin < nz < hi_p - margin)


@dataclass
class MembershipResult:
    ok: bool
    witness: Optional[RankOneWitness]
    diagnostics: list

    def __bool__(self):
        return self.ok


def collinear_witness(w: WindowParams, p, r: Optional[float] = None) -> RankOneWitness:
    """Exact witness for a collinear state (p, r * p/|p|) with r in (r1, r2)."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    mag = float(np.linalg.norm(p))
    if mag == 0.0:
        raise ParameterDomainError("collinear witness needs p != 0")
    if r is None:
        r = 0.5 * (w.r1 + w.r2)
    if not (w.r1 < r < w.r2):
        raise OutOfRangeError(f"r={r} outside ({w.r1}, {w.r2})")
    s_lo = branch_inverse(w.profile, r, MINUS)
    s_hi = branch_inverse(w.profile, r, PLUS)
    if not (s_lo < mag < s_hi):
        raise OutOfRangeError(f"|p|={mag} outside ({s_lo}, {s_hi})")
    zeta = p / mag
    return RankOneWitness(q=zeta, gamma=np.zeros_like(p), t_minus=s_lo - mag, t_plus=s_hi - mag)


def _witness_to_primed(wit: RankOneWitness):
    q_p = wit.t_plus * wit.q
    gamma_p = wit.t_plus * wit.gamma
    s_p = wit.t_minus / wit.t_plus
    return gamma_p, q_p, s_p


def _primed_to_witness(gamma_p, q_p, s_p) -> RankOneWitness:
    t_plus = float(np.linalg.norm(q_p))
    q = q_p / t_plus
    gamma = gamma_p / t_plus
    gamma = gamma - (gamma @ q) * q  # strip round-off along q
    return RankOneWitness(q=q, gamma=gamma, t_minus=s_p * t_plus, t_plus=t_plus)


def _newton(profile, w, p, beta, gamma_p, q_p, s_p, max_iter=MAX_NEWTON):
    f, y, z = _system(profile, p, beta, gamma_p, q_p, s_p)
    res = float(np.max(np.abs(f)))
    for _ in range(max_iter):
        if res <= NEWTON_TOL:
            return gamma_p, q_p, s_p, res
        q_unit = q_p / np.linalg.norm(q_p)
        det_val = det_B(z, y, q_unit, gamma_p / np.linalg.norm(q_p), profile)
        if abs(det_val) < DET_FLOOR:
            raise SingularJacobianError(f"DET = {det_val:.3e} below floor", det_val)
        J = _jacobian(profile, gamma_p, q_p, s_p, y, z)
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"Jacobian solve failed: {exc}", det_val) from exc
        n = q_p.size
        scale = 1.0
        for _ in range(30):
            g_new = gamma_p + scale * step[:n]
            q_new = q_p + scale * step[n : 2 * n]
            s_new = s_p + scale * float(step[2 * n])
            if s_new < 0.0:
                f_new, y_new, z_new = _system(profile, p, beta, g_new, q_new, s_new)
                res_new = float(np.max(np.abs(f_new)))
                if res_new < res and _in_annuli(w, y_new, z_new, margin=-1e-12):
                    gamma_p, q_p, s_p = g_new, q_new, s_new
                    f, y, z, res = f_new, y_new, z_new, res_new
                    break
            scale *= 0.5
        else:
            raise NoConvergenceError(f"line search stalled at residual {res:.3e}")
    if res <= NEWTON_TOL:
        return gamma_p, q_p, s_p, res
    raise NoConvergenceError(f"residual {res:.3e} after {max_iter} iterations")


def solve_rank_one(
    p,
    beta,
    w: WindowParams,
    seed: Optional[RankOneWitness] = None,
    continuation_steps: int = 8,
) -> RankOneWitness:
    """Newton solve of the connection system at (p, beta).

    Without a seed, starts from the exact collinear witness at the radial
    projection of the state and walks the straight segment to the target
    in ``continuation_steps`` Newton solves.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    prof = w.profile

    if seed is not None:
        gamma_p, q_p, s_p = _witness_to_primed(seed)
        gamma_p, q_p, s_p, _ = _newton(prof, w, p, beta, gamma_p, q_p, s_p)
        return _finalize(prof, w, p, beta, gamma_p, q_p, s_p)

    mag = float(np.linalg.norm(p))
    if mag == 0.0:
        raise NoConvergenceError("no radial direction at p = 0; supply a seed")
    r_mid = 0.5 * (w.r1 + w.r2)
    lo = branch_inverse(prof, r_mid, MINUS)
    hi = branch_inverse(prof, r_mid, PLUS)
    s_bar = min(max(mag, lo * 1.05), hi * 0.95)
    zeta = p / mag
    p0 = s_bar * zeta
    beta0 = r_mid * zeta
    wit = collinear_witness(w, p0, r_mid)
    gamma_p, q_p, s_p = _witness_to_primed(wit)
    for k in range(1, continuation_steps + 1):
        lam = k / continuation_steps
        pk = (1 - lam) * p0 + lam * p
        bk = (1 - lam) * beta0 + lam * beta
        gamma_p, q_p, s_p, _ = _newton(prof, w, pk, bk, gamma_p, q_p, s_p)
    return _finalize(prof, w, p, beta, gamma_p, q_p, s_p)


def _finalize(prof, w, p, beta, gamma_p, q_p, s_p) -> RankOneWitness:
    wit = _primed_to_witness(gamma_p, q_p, s_p)
    xi = SpaceTimeMatrix.diagonal(p, beta)
    eta = wit.eta(1.0)
    if classify_F(xi.shifted(wit.t_minus, eta), w) != F_MINUS:
        raise NoConvergenceError("converged point fails the minus-endpoint check")
    if classify_F(xi.shifted(wit.t_plus, eta), w) != F_PLUS:
        raise NoConvergenceError("converged point fails the plus-endpoint check")
    return wit


def _seed_directions(n: int, p: np.ndarray, beta: np.ndarray):
    if n == 1:
        return [np.array([1.0]), np.array([-1.0])]
    dirs = []
    for vec in (p, beta):
        mag = float(np.linalg.norm(vec))
        if mag > 1e-12:
            dirs.append(vec / mag)
    for k in range(8):
        ang = 2 * math.pi * k / 8
        d = np.zeros(n)
        d[0], d[1] = math.cos(ang), math.sin(ang)
        dirs.append(d)
    return dirs


def membership_S(p, beta, w: WindowParams) -> MembershipResult:
    """Decide whether (p, beta) carries a rank-one connection witness.

    Tries the radial collinear seed first, then a small sweep of seed
    directions; collects a diagnostic line per failed attempt.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    notes = []
    if float(np.linalg.norm(p)) > w.p_sup() + MEMBER_TOL:
        notes.append(f"|p| = {np.linalg.norm(p):.6g} exceeds sup bound {w.p_sup():.6g}")
        return MembershipResult(False, None, notes)
    if float(np.linalg.norm(beta)) > w.r2 + MEMBER_TOL:
        notes.append(f"|beta| = {np.linalg.norm(beta):.6g} exceeds r2 = {w.r2}")
        return MembershipResult(False, None, notes)

    try:
        wit = solve_rank_one(p, beta, w)
        return MembershipResult(True, wit, notes)
    except (NoConvergenceError, SingularJacobianError, OutOfRangeError) as exc:
        notes.append(f"radial seed: {exc}")

    r_mid = 0.5 * (w.r1 + w.r2)
    lo = branch_inverse(w.profile, r_mid, MINUS)
    hi = branch_inverse(w.profile, r_mid, PLUS)
    s_bar = 0.5 * (lo + hi)
    for k, zeta in enumerate(_seed_directions(p.size, p, beta)):
        try:
            seed = collinear_witness(w, s_bar * zeta, r_mid)
        except (OutOfRangeError, ParameterDomainError) as exc:
            notes.append(f"sweep {k}: seed invalid ({exc})")
            continue
        try:
            wit = _continuation_from(w, s_bar * zeta, r_mid * zeta, p, beta, seed)
            return MembershipResult(True, wit, notes)
        except (NoConvergenceError, SingularJacobianError) as exc:
            notes.append(f"sweep {k}: {exc}")
    return MembershipResult(False, None, notes)


def _continuation_from(w, p0, beta0, p, beta, seed, steps=8):
    gamma_p, q_p, s_p = _witness_to_primed(seed)
    for k in range(1, steps + 1):
        lam = k / steps
        pk = (1 - lam) * p0 + lam * p
        bk = (1 - lam) * beta0 + lam * beta
        gamma_p, q_p, s_p, _ = _newton(w.profile, w, pk, bk, gamma_p, q_p, s_p)
    return _finalize(w.profile, w, p, beta, gamma_p, q_p, s_p)
