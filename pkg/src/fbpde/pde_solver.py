"""Semi-implicit finite-volume solver for the surrogate Neumann problem.

Conservative cell-centered scheme: fluxes f_tilde(|Du|^2) Du are evaluated
at faces with the diffusion coefficient lagged one Picard iterate, giving
an SPD linear system per step (tridiagonal in 1D, five-point in 2D).
Zero-flux faces make the plain cell-sum mass exactly conserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import cg, splu

from .errors import SingularSystemError, StabilityFailureError, SubcriticalityViolatedError
from .grids import (
    FaceField,
    Grid,
    SpaceTimeField,
    div_faces,
    face_gradient,
    gradient_magnitude_centers,
    gradient_magnitude_faces_1d,
    mass,
    reconstructed_gradient_at_faces,
)
from .profile_mod import ModifiedProfile, modify_profile
from .profiles import CASE_PM, MINUS, Profile, branch_inverse


def check_neumann_datum(u0: np.ndarray, grid: Grid) -> None:
    """Reject data whose one-sided boundary gradient is not O(h)-small.

    Cell centers sit h/2 from the wall, so a compatible smooth datum has
    a first one-sided difference of size ~ h * |u0''|; the tolerance is
    scaled accordingly.
    """
    for k in range(grid.dim):
        h = grid.h[k]
        second = np.abs(np.diff(u0, n=2, axis=k)) / h**2
        curv = float(second.max()) if second.size else 0.0
        tol = max(1e-8, 1.5 * h * curv)
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[k] = slice(0, 2)
        hi[k] = slice(-2, None)
        g_lo = np.abs(np.diff(u0[tuple(lo)], axis=k)) / h
        g_hi = np.abs(np.diff(u0[tuple(hi)], axis=k)) / h
        worst = max(float(g_lo.max()), float(g_hi.max()))
        if worst > tol:
            raise ValueError(
                f"datum violates discrete Du0.n=0 on axis {k}: {worst:.3e} > tol {tol:.3e}"
            )


def _face_diffusion(mp: ModifiedProfile, u: np.ndarray, grid: Grid):
    """Lagged diffusion coefficient f_tilde(|Du|^2) on each face family.

    Wall faces get coefficient 0: that is the discrete zero-flux wall.
    """
    coeffs = []
    for k in range(grid.dim):
        comps = reconstructed_gradient_at_faces(u, grid, k)
        sq = sum(c**2 for c in comps)
        D = np.asarray(mp.f_tilde(sq), dtype=float)
        first = [slice(None)] * grid.dim
        last = [slice(None)] * grid.dim
        first[k] = 0
        last[k] = -1
        D[tuple(first)] = 0.0
        D[tuple(last)] = 0.0
        coeffs.append(D)
    return coeffs


def _picard_iterate(solve_one, iterate, picard_tol, max_picard):
    """Lagged-coefficient fixed point with Aitken tail acceleration."""
    prev_diff = None
    cooldown = 0
    for _ in range(max_picard):
        new = solve_one(iterate)
        diff = float(np.max(np.abs(new - iterate)))
        if diff <= picard_tol * max(1.0, float(np.max(np.abs(new)))):
            return new
        if prev_diff is not None and 0.0 < diff < prev_diff:
            rate = diff / prev_diff
            if 0.3 < rate < 0.995 and cooldown >= 2:
                new = new + (new - iterate) * (rate / (1.0 - rate))
                prev_diff = None
                cooldown = 0
            else:
                prev_diff = diff
                cooldown += 1
        else:
            prev_diff = diff
            cooldown += 1
        iterate = new
    raise StabilityFailureError(f"Picard iteration did not converge in {max_picard} sweeps")


def _step_1d(mp, u, grid, dt, picard_tol, max_picard, picard_start, rng):
    """Damped Newton on the implicit step; the monotone surrogate flux makes
    the tridiagonal Jacobian an M-matrix, so plain banded solves suffice."""
    n = grid.shape[0]
    h = grid.h[0]
    w = dt / h**2

    def odd_flux(g):
        return np.sign(g) * np.asarray(mp.sigma_tilde(np.abs(g)))

    def residual(cand):
        g = np.zeros(n + 1)
        g[1:-1] = np.diff(cand) / h
        flux = odd_flux(g)
        flux[0] = flux[-1] = 0.0
        return cand - u - (dt / h) * np.diff(flux), g

    iterate = u.copy()
    if picard_start == "perturbed":
        iterate = iterate + 1e-3 * rng.standard_normal(n)
    f, g = residual(iterate)
    res = float(np.max(np.abs(f)))
    scale_u = max(1.0, float(np.max(np.abs(u))))
    # mass conservation rides on the step residual: n*tol*steps must stay
    # under the 1e-10 budget, so the 1D stop is pinned near machine precision
    tol = min(picard_tol, 1e-13) * scale_u
    for _ in range(max_picard):
        if res <= tol:
            return iterate
        dphi = np.asarray(mp.sigma_tilde_prime(np.abs(g)))
        dphi[0] = dphi[-1] = 0.0
        ab = np.zeros((3, n))
        ab[0, 1:] = -w * dphi[1:-1]
        ab[1, :] = 1.0 + w * (dphi[:-1] + dphi[1:])
        ab[2, :-1] = -w * dphi[1:-1]
        step = solve_banded((1, 1), ab, -f)
        damping = 1.0
        for _ in range(40):
            cand = iterate + damping * step
            f_new, g_new = residual(cand)
            res_new = float(np.max(np.abs(f_new)))
            if res_new < res:
                iterate, f, g, res = cand, f_new, g_new, res_new
                break
            damping *= 0.5
        else:
            if res <= 1e-12 * scale_u:  # stalled at the round-off floor
                return iterate
            raise StabilityFailureError(f"Newton line search stalled at residual {res:.3e}")
    if res <= tol:
        return iterate
    raise StabilityFailureError(f"Newton did not converge in {max_picard} iterations")


def _assemble_2d(Dx, Dy, grid, dt):
    nx, ny = grid.shape
    hx, hy = grid.h
    wx, wy = dt / hx**2, dt / hy**2
    N = nx * ny

    def idx(i, j):
        return i * ny + j

    east = wx * Dx[1:, :]  # coupling to (i+1, j); zero on the last row of cells
    west = wx * Dx[:-1, :]
    north = wy * Dy[:, 1:]
    south = wy * Dy[:, :-1]
    diag = 1.0 + east + west + north + south

    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    base = idx(ii, jj).ravel()
    rows.append(base)
    cols.append(base)
    vals.append(diag.ravel())

    m = ii < nx - 1
    rows.append(idx(ii[m], jj[m]))
    cols.append(idx(ii[m] + 1, jj[m]))
    vals.append(-east[m])
    rows.append(idx(ii[m] + 1, jj[m]))
    cols.append(idx(ii[m], jj[m]))
    vals.append(-east[m])

    m = jj < ny - 1
    rows.append(idx(ii[m], jj[m]))
    cols.append(idx(ii[m], jj[m] + 1))
    vals.append(-north[m])
    rows.append(idx(ii[m], jj[m] + 1))
    cols.append(idx(ii[m], jj[m]))
    vals.append(-north[m])

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return csr_matrix((vals, (rows, cols)), shape=(N, N))


def _step_2d(mp, u, grid, dt, picard_tol, max_picard, picard_start, rng, linear_solver):
    b = u.ravel()

    def solve_one(iterate):
        Dx, Dy = _face_diffusion(mp, iterate, grid)
        A = _assemble_2d(Dx, Dy, grid, dt)
        if linear_solver == "direct":
            return splu(A.tocsc()).solve(b).reshape(u.shape)
        sol, info = cg(A, b, x0=iterate.ravel(), rtol=1e-13, atol=0.0, maxiter=20_000)
        if info != 0:
            raise StabilityFailureError(f"CG did not converge (info={info})")
        return sol.reshape(u.shape)

    start = u.copy()
    if picard_start == "perturbed":
        start = start + 1e-3 * rng.standard_normal(u.shape)
    return _picard_iterate(solve_one, start, picard_tol, max_picard)


def solve_neumann_ibvp(
    mp: ModifiedProfile,
    u0: np.ndarray,
    grid: Grid,
    *,
    picard_tol: float = 1e-10,
    max_picard: int = 50,
    picard_start: str = "previous",
    seed: int = 0,
    linear_solver: str = "cg",
    check_datum: bool = True,
) -> SpaceTimeField:
    """March the surrogate problem over the full grid.

    Returns the scalar space-time field u with u[..., 0] = u0.  The
    scheme conserves the cell-sum mass to round-off per step.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != grid.shape:
        raise ValueError(f"datum shape {u0.shape} != grid shape {grid.shape}")
    if check_datum:
        check_neumann_datum(u0, grid)
    rng = np.random.default_rng(seed)
    values = np.empty((*grid.shape, grid.nt + 1))
    values[..., 0] = u0
    u = u0.copy()
    for m in range(grid.nt):
        start = picard_start if m == 0 else "previous"  # perturbation tests seed step one
        if grid.dim == 1:
            u = _step_1d(mp, u, grid, grid.dt, picard_tol, max_picard, start, rng)
        else:
            u = _step_2d(
                mp, u, grid, grid.dt, picard_tol, max_picard, start, rng, linear_solver
            )
        values[..., m + 1] = u
    return SpaceTimeField(grid=grid, values=values)


def gradient_max_profile(u: SpaceTimeField) -> np.ndarray:
    """Max-over-space of the discrete gradient magnitude per time slice."""
    grid = u.grid
    out = np.empty(u.n_times)
    for m in range(u.n_times):
        sl = u.slice_at(m)
        if grid.dim == 1:
            g = gradient_magnitude_faces_1d(sl, grid)
        else:
            g = gradient_magnitude_centers(sl, grid)
        out[m] = float(g.max()) if g.size else 0.0
    return out


def mass_series(u: SpaceTimeField) -> np.ndarray:
    return np.array([mass(u.slice_at(m), u.grid) for m in range(u.n_times)])


# ---------------------------------------------------------------------------
# boundary function


@dataclass
class BoundaryFunction:
    """(u*, v*) with div v* = u*, v*.n = 0 on the wall, u*(.,0) = u0.

    ``v_star`` is staggered (faces, trailing time axis); ``h_field`` is
    the Neumann potential with discrete Laplacian u0.
    """

    u_star: SpaceTimeField
    v_star: FaceField
    h_field: np.ndarray
    v0: list
    diagnostics: dict

    def div_defect(self) -> float:
        """sup_m |div v*(., t_m) - u*(., t_m)| over the grid."""
        worst = 0.0
        for m in range(self.u_star.n_times):
            d = div_faces(self.v_star.slice_at(m), self.u_star.grid) - self.u_star.slice_at(m)
            worst = max(worst, float(np.max(np.abs(d))))
        return worst

    def boundary_normal_max(self) -> float:
        worst = 0.0
        for k, comp in enumerate(self.v_star.components):
            first = [slice(None)] * (comp.ndim)
            last = [slice(None)] * (comp.ndim)
            first[k] = 0
            last[k] = -1
            worst = max(worst, float(np.max(np.abs(comp[tuple(first)]))))
            worst = max(worst, float(np.max(np.abs(comp[tuple(last)]))))
        return worst


def solve_neumann_poisson(u0: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero-mean h with FV-Laplacian h = u0 and zero-flux walls."""
    if grid.dim == 1:
        h = grid.h[0]
        # v0 on faces by cumulative sums; then h by cumulative sums of v0
        v0 = np.concatenate([[0.0], np.cumsum(u0) * h])
        pot = np.concatenate([[0.0], np.cumsum(v0[1:-1]) * h])
        pot -= pot.mean()
        return pot
    # 2D: CG on the singular SPD system; the zero-mean datum keeps the
    # Krylov space orthogonal to the nullspace of constants
    nx, ny = grid.shape
    ones_x = np.ones((nx + 1, ny))
    ones_y = np.ones((nx, ny + 1))
    ones_x[0, :] = ones_x[-1, :] = 0.0
    ones_y[:, 0] = ones_y[:, -1] = 0.0
    A = _assemble_2d(ones_x, ones_y, grid, 1.0)
    from scipy.sparse import identity

    P = A - identity(nx * ny, format="csr")  # positive semidefinite -div(grad)
    b = u0.ravel() - u0.mean()
    sol, info = cg(P, -b, rtol=1e-13, atol=1e-14, maxiter=50_000)
    if info != 0:
        raise SingularSystemError(f"Neumann-Poisson CG failed (info={info})")
    pot = sol.reshape(grid.shape)
    pot -= pot.mean()
    defect = float(np.max(np.abs(div_faces(face_gradient(pot, grid), grid) - b.reshape(grid.shape))))
    if defect > 1e-8:
        raise SingularSystemError(f"Poisson compatibility defect {defect:.3e} > 1e-8")
    return pot


def build_boundary_function(mp: ModifiedProfile, u0: np.ndarray, grid: Grid, **solve_kw) -> BoundaryFunction:
    """Solve the surrogate problem and accumulate v* from the face fluxes.

    The datum is mean-subtracted first (the potential h only exists for
    zero-mean data).  v*(., t) = Dh + cumulative trapezoid of the face
    fluxes of the surrogate solution.
    """
    u0 = np.asarray(u0, dtype=float)
    u0 = u0 - u0.mean()
    u_star = solve_neumann_ibvp(mp, u0, grid, **solve_kw)

    h_field = solve_neumann_poisson(u0, grid)
    v0 = face_gradient(h_field, grid)

    nt = grid.nt
    comps = []
    for k in range(grid.dim):
        shape = list(grid.shape)
        shape[k] += 1
        comps.append(np.zeros((*shape, nt + 1)))

    flux_prev = _face_fluxes(mp, u_star.slice_at(0), grid)
    for k in range(grid.dim):
        comps[k][..., 0] = v0[k]
    for m in range(1, nt + 1):
        flux_now = _face_fluxes(mp, u_star.slice_at(m), grid)
        for k in range(grid.dim):
            comps[k][..., m] = comps[k][..., m - 1] + 0.5 * grid.dt * (flux_prev[k] + flux_now[k])
        flux_prev = flux_now

    poisson_defect = float(
        np.max(np.abs(div_faces(v0, grid) - u0))
    )
    bf = BoundaryFunction(
        u_star=u_star,
        v_star=FaceField(grid=grid, components=comps),
        h_field=h_field,
        v0=v0,
        diagnostics={"poisson_defect": poisson_defect},
    )
    bf.diagnostics["div_defect"] = bf.div_defect()
    bf.diagnostics["boundary_normal_max"] = bf.boundary_normal_max()
    return bf


def _face_fluxes(mp: ModifiedProfile, u: np.ndarray, grid: Grid):
    """Surrogate flux A_tilde(Du) on each face family (zero at the walls)."""
    out = []
    for k in range(grid.dim):
        comps = reconstructed_gradient_at_faces(u, grid, k)
        sq = sum(c**2 for c in comps)
        out.append(mp.f_tilde(sq) * comps[0])
    return out


# ---------------------------------------------------------------------------
# classical special solutions


@dataclass
class ClassicalRun:
    u: SpaceTimeField
    mp: ModifiedProfile
    max_gradient: float
    matched_bound: float
    matched: bool


def classical_special_solution(profile: Profile, u0: np.ndarray, grid: Grid, **solve_kw) -> ClassicalRun:
    """Sub-threshold run whose surrogate flux agrees with the true flux.

    Picks the window so the matched region covers the datum's gradient
    range, solves, and confirms the discrete gradient never leaves the
    matched region by more than 2%.
    """
    u0 = np.asarray(u0, dtype=float)
    if grid.dim == 1:
        m0 = float(np.max(gradient_magnitude_faces_1d(u0, grid))) if u0.size else 0.0
    else:
        m0 = float(np.max(gradient_magnitude_centers(u0, grid)))

    if profile.case == CASE_PM:
        peak_s = profile.params["s0"]
        peak_r = profile.peak_value
        if m0 >= peak_s:
            raise SubcriticalityViolatedError(f"|Du0| = {m0} >= s0 = {peak_s}")
        r1 = float(profile.sigma(m0)) if m0 > 0 else 0.5 * peak_r
        r1 = min(max(r1, 1e-6 * peak_r), peak_r * (1 - 1e-9))
        r2 = r1 + 0.5 * (peak_r - r1)
    else:
        s1 = profile.params["s1"]
        lo = float(profile.sigma(profile.params["s2"]))
        hi = float(profile.sigma(s1))
        if m0 >= s1:
            raise SubcriticalityViolatedError(f"|Du0| = {m0} >= s1 = {s1}")
        base = max(float(profile.sigma(m0)), lo)
        r1 = base + 0.25 * (hi - base)
        r2 = base + 0.5 * (hi - base)

    mp = modify_profile(profile, r1, r2)
    u = solve_neumann_ibvp(mp, u0 - u0.mean(), grid, **solve_kw)
    gmax = float(np.max(gradient_max_profile(u)))
    bound = branch_inverse(profile, r1, MINUS)
    if gmax > bound * 1.02:
        raise SubcriticalityViolatedError(
            f"gradient {gmax:.6g} left the matched region [0, {bound:.6g}] by more than 2%"
        )
    return ClassicalRun(u=u, mp=mp, max_gradient=gmax, matched_bound=bound, matched=True)
