"""Recursive right inverse of the divergence on boxes.

Dimension one is the running antiderivative; dimension n integrates out
the last axis, applies the (n-1)-dimensional operator to the slice
integrals, and corrects with a smooth unit-mass bump so the last
component carries exactly the leftover divergence.  Everything acts
slice-wise in time.

All quadratures are the grid trapezoid rule, applied consistently, so
that for compactly supported zero-mean data the output vanishes on the
box boundary to round-off rather than just to discretization order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import MeanNotZeroError

# Normalization constant of the standard mollifier exp(-1/(1-xi^2)) on (-1,1);
# any pointwise bound sup rho <= C0/|J| quoted in reports uses this value.
_BUMP_MASS = quad(lambda t: np.exp(-1.0 / (1.0 - t * t)), -1.0, 1.0, limit=200)[0]
C0 = 1.0 / _BUMP_MASS


def bump(xi):
    """exp(-1/(1-xi^2)) extended by zero outside (-1, 1)."""
    xi = np.asarray(xi, dtype=float)
    inside = np.abs(xi) < 1.0
    out = np.zeros_like(xi)
    with np.errstate(divide="ignore", over="ignore"):
        vals = np.exp(-1.0 / (1.0 - xi[inside] ** 2))
    out[inside] = vals
    return out


@dataclass
class BoxSpec:
    """A box J_1 x ... x J_n with node grids and per-axis unit-mass bumps."""

    intervals: tuple
    n_nodes: tuple
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.intervals) != len(self.n_nodes):
            raise ValueError("one node count per interval")
        if any(b <= a for a, b in self.intervals):
            raise ValueError("intervals must have positive length")
        if any(n < 5 for n in self.n_nodes):
            raise ValueError("need at least 5 nodes per axis")

    @property
    def dim(self) -> int:
        return len(self.intervals)

    def nodes(self, axis: int) -> np.ndarray:
        a, b = self.intervals[axis]
        return np.linspace(a, b, self.n_nodes[axis])

    def spacing(self, axis: int) -> float:
        a, b = self.intervals[axis]
        return (b - a) / (self.n_nodes[axis] - 1)

    def side_lengths(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    def bump_on_axis(self, axis: int) -> np.ndarray:
        """Bump sampled on the axis nodes, normalized to unit grid-trapezoid mass."""
        key = ("bump", axis)
        if key not in self._cache:
            a, b = self.intervals[axis]
            x = self.nodes(axis)
            raw = bump(2.0 * (x - a) / (b - a) - 1.0)
            massq = np.trapezoid(raw, dx=self.spacing(axis))
            rho = raw / massq
            if rho.max() > C0 / (b - a) * (1.0 + 1e-9):
                raise ValueError("bump exceeds its C0/|J| bound; grid too coarse")
            self._cache[key] = rho
        return self._cache[key]

    def bump_cumulative(self, axis: int) -> np.ndarray:
        key = ("cum", axis)
        if key not in self._cache:
            rho = self.bump_on_axis(axis)
            self._cache[key] = _cumtrapz(rho, self.spacing(axis), axis=0)
        return self._cache[key]


def _cumtrapz(u: np.ndarray, dx: float, axis: int) -> np.ndarray:
    pads = [(0, 0)] * u.ndim
    pads[axis] = (1, 0)
    sl_lo = [slice(None)] * u.ndim
    sl_hi = [slice(None)] * u.ndim
    sl_lo[axis] = slice(None, -1)
    sl_hi[axis] = slice(1, None)
    avg = 0.5 * (u[tuple(sl_lo)] + u[tuple(sl_hi)]) * dx
    return np.pad(np.cumsum(avg, axis=axis), pads)


def _trapz(u: np.ndarray, dx: float, axis: int) -> np.ndarray:
    return np.trapezoid(u, dx=dx, axis=axis)


def rinv_spatial(u: np.ndarray, spec: BoxSpec):
    """v with div v = u on the box (one array per component).

    Recursive construction: antiderivative in 1D; otherwise slice
    integrals along the last axis, a recursive call, and the bump
    correction.  Input and output live on the node grid of the spec.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != tuple(spec.n_nodes):
        raise ValueError(f"field shape {u.shape} != node grid {spec.n_nodes}")
    return _rinv_rec(u, spec, spec.dim)


def _rinv_rec(u: np.ndarray, spec: BoxSpec, n: int):
    dx_n = spec.spacing(n - 1)
    if n == 1:
        return [_cumtrapz(u, dx_n, axis=0)]
    u_tilde = _trapz(u, dx_n, axis=n - 1)
    z = _rinv_rec(u_tilde, spec, n - 1)
    rho = spec.bump_on_axis(n - 1)
    cum_rho = spec.bump_cumulative(n - 1)
    shape_ones = [1] * n
    shape_ones[n - 1] = -1
    rho_b = rho.reshape(shape_ones)
    cum_b = cum_rho.reshape(shape_ones)
    comps = [zk[..., None] * rho_b for zk in z]
    v_n = _cumtrapz(u, dx_n, axis=n - 1) - u_tilde[..., None] * cum_b
    comps.append(v_n)
    return comps


def divergence_nodes(components, spec: BoxSpec) -> np.ndarray:
    """Central-difference divergence on the node grid (one-sided at walls)."""
    total = None
    for k, v in enumerate(components):
        d = np.gradient(v, spec.spacing(k), axis=k, edge_order=2)
        total = d if total is None else total + d
    return total


def boundary_max(components) -> float:
    """Largest |v| over all faces of the box (all components)."""
    worst = 0.0
    for v in components:
        for axis in range(v.ndim):
            first = [slice(None)] * v.ndim
            last = [slice(None)] * v.ndim
            first[axis] = 0
            last[axis] = -1
            worst = max(worst, float(np.max(np.abs(v[tuple(first)]))))
            worst = max(worst, float(np.max(np.abs(v[tuple(last)]))))
    return worst


def box_mean_integral(u: np.ndarray, spec: BoxSpec) -> float:
    """Grid-trapezoid integral of u over the box."""
    out = np.asarray(u, dtype=float)
    for axis in reversed(range(spec.dim)):
        out = _trapz(out, spec.spacing(axis), axis=axis)
    return float(out)


@dataclass
class SpaceTimeInverse:
    components: list  # per-axis arrays with trailing time axis
    time_bound_constant: float  # measured C_n in the |v_t| <= C_n sum|J| |u_t| bound
    report: dict


def rinv_spacetime(u: np.ndarray, spec: BoxSpec, dt: float) -> SpaceTimeInverse:
    """Slice-wise right inverse for u(x..., t) with the measured time bound.

    Every time slice must have zero box integral (checked to 1e-10,
    scaled); the returned constant is ||v_t|| / (sum|J_k| ||u_t||) with
    both time derivatives taken by central differences.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[:-1] != tuple(spec.n_nodes):
        raise ValueError(f"field shape {u.shape[:-1]} != node grid {spec.n_nodes}")
    nt = u.shape[-1]
    scale = max(1.0, float(np.max(np.abs(u)))) * np.prod([b - a for a, b in spec.intervals])
    for m in range(nt):
        integral = box_mean_integral(u[..., m], spec)
        if abs(integral) > 1e-10 * scale:
            raise MeanNotZeroError(f"slice {m} integral {integral:.3e} violates zero mean")

    comps = None
    for m in range(nt):
        vm = _rinv_rec(u[..., m], spec, spec.dim)
        if comps is None:
            comps = [np.empty((*c.shape, nt)) for c in vm]
        for k, c in enumerate(vm):
            comps[k][..., m] = c

    report = {"slices": nt, "sum_sides": spec.side_lengths()}
    if nt >= 3:
        u_t = np.gradient(u, dt, axis=-1, edge_order=2)
        vt_max = max(float(np.max(np.abs(np.gradient(c, dt, axis=-1, edge_order=2)))) for c in comps)
        ut_max = float(np.max(np.abs(u_t)))
        report["vt_max"] = vt_max
        report["ut_max"] = ut_max
        constant = vt_max / (spec.side_lengths() * ut_max) if ut_max > 0 else 0.0
    else:
        constant = 0.0
    return SpaceTimeInverse(components=comps, time_bound_constant=constant, report=report)
