"""Cell-centered space-time grids and the fields living on them.

Scalar fields live at cell centers with time as the trailing axis.
Vector fields that must satisfy discrete divergence identities exactly
are stored on cell *faces* (staggered), one array per axis; the discrete
divergence of a face field then telescopes, and the normal component on
the domain boundary is a literal array entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid over a box times [0, T].

    ``bounds`` is one (a, b) pair per space axis, ``shape`` the cell
    count per axis, ``nt`` the number of time steps (nt+1 snapshots).
    """

    bounds: tuple
    shape: tuple
    t_final: float
    nt: int

    def __post_init__(self):
        if any(n < 3 for n in self.shape) or self.nt < 1:
            raise ValueError("need at least 3 cells per axis and 1 time step")
        if any(b <= a for a, b in self.bounds) or self.t_final <= 0:
            raise ValueError("degenerate domain")

    @staticmethod
    def interval(a: float, b: float, n: int, t_final: float, nt: int) -> "Grid":
        return Grid(bounds=((float(a), float(b)),), shape=(int(n),), t_final=float(t_final), nt=int(nt))

    @staticmethod
    def rectangle(bounds_x, bounds_y, nx: int, ny: int, t_final: float, nt: int) -> "Grid":
        return Grid(
            bounds=(tuple(map(float, bounds_x)), tuple(map(float, bounds_y))),
            shape=(int(nx), int(ny)),
            t_final=float(t_final),
            nt=int(nt),
        )

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> tuple:
        return tuple((b - a) / n for (a, b), n in zip(self.bounds, self.shape))

    @property
    def dt(self) -> float:
        return self.t_final / self.nt

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def domain_volume(self) -> float:
        return float(np.prod([b - a for a, b in self.bounds]))

    def centers(self, axis: int = 0) -> np.ndarray:
        a, b = self.bounds[axis]
        n = self.shape[axis]
        h = (b - a) / n
        return a + (np.arange(n) + 0.5) * h

    def meshgrid(self):
        return np.meshgrid(*(self.centers(k) for k in range(self.dim)), indexing="ij")

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.nt + 1)

    def faces(self, axis: int = 0) -> np.ndarray:
        a, b = self.bounds[axis]
        return np.linspace(a, b, self.shape[axis] + 1)


@dataclass
class SpaceTimeField:
    """Scalar (or center-vector) values indexed (space..., time)."""

    grid: Grid
    values: np.ndarray
    kind: str = "scalar"

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")

    def slice_at(self, m: int) -> np.ndarray:
        return self.values[..., m]

    @property
    def n_times(self) -> int:
        return self.values.shape[-1]


@dataclass
class FaceField:
    """Per-axis staggered arrays, each shaped like the cells but +1 along its axis.

    With a trailing time axis when time-dependent.
    """

    grid: Grid
    components: list = field(default_factory=list)

    def slice_at(self, m: int):
        return [c[..., m] for c in self.components]


# ---------------------------------------------------------------------------
# discrete operators


def face_gradient(u: np.ndarray, grid: Grid):
    """Per-axis face-normal differences; boundary faces carry gradient 0.

    Returns one array per axis, shaped like ``u`` but +1 along that axis.
    """
    out = []
    for k in range(grid.dim):
        h = grid.h[k]
        shape = list(u.shape)
        shape[k] += 1
        g = np.zeros(shape)
        interior = [slice(None)] * grid.dim
        interior[k] = slice(1, -1)
        g[tuple(interior)] = np.diff(u, axis=k) / h
        out.append(g)
    return out


def div_faces(components, grid: Grid) -> np.ndarray:
    """Exact cell divergence of a face field: sum of face differences."""
    total = None
    for k, F in enumerate(components):
        d = np.diff(F, axis=k) / grid.h[k]
        total = d if total is None else total + d
    return total


def face_to_center(F: np.ndarray, axis: int) -> np.ndarray:
    """Average the two faces of each cell along ``axis``."""
    lo = [slice(None)] * F.ndim
    hi = [slice(None)] * F.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (F[tuple(lo)] + F[tuple(hi)])


def gradient_magnitude_centers(u: np.ndarray, grid: Grid) -> np.ndarray:
    """|Du| at cell centers from face-averaged components."""
    comps = face_gradient(u, grid)
    sq = None
    for k, g in enumerate(comps):
        c = face_to_center(g, k)
        sq = c**2 if sq is None else sq + c**2
    return np.sqrt(sq)


def gradient_magnitude_faces_1d(u: np.ndarray, grid: Grid) -> np.ndarray:
    """|u_x| on interior faces (the natural gradient carrier in 1D)."""
    return np.abs(np.diff(u, axis=0) / grid.h[0])


def reconstructed_gradient_at_faces(u: np.ndarray, grid: Grid, axis: int):
    """(normal, tangential...) gradient components at the faces of ``axis``.

    The normal part is the plain face difference; tangential parts come
    from reflect-padded central differences averaged onto the face.
    Boundary faces get normal component 0 (Neumann reflection).
    """
    h = grid.h
    shape = list(u.shape)
    shape[axis] += 1
    normal = np.zeros(shape)
    interior = [slice(None)] * grid.dim
    interior[axis] = slice(1, -1)
    normal[tuple(interior)] = np.diff(u, axis=axis) / h[axis]
    comps = [normal]
    for k in range(grid.dim):
        if k == axis:
            continue
        padded = np.pad(u, [(1, 1) if j == k else (0, 0) for j in range(grid.dim)], mode="edge")
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[k] = slice(None, -2)
        hi[k] = slice(2, None)
        central = (padded[tuple(hi)] - padded[tuple(lo)]) / (2.0 * h[k])
        # average the two cells sharing each interior face; copy at boundary faces
        first = [slice(None)] * grid.dim
        last = [slice(None)] * grid.dim
        first[axis] = slice(0, 1)
        last[axis] = slice(-1, None)
        face_avg = np.concatenate(
            [central[tuple(first)], face_to_center_pair(central, axis), central[tuple(last)]],
            axis=axis,
        )
        comps.append(face_avg)
    return comps


def face_to_center_pair(c: np.ndarray, axis: int) -> np.ndarray:
    lo = [slice(None)] * c.ndim
    hi = [slice(None)] * c.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (c[tuple(lo)] + c[tuple(hi)])


def mass(u: np.ndarray, grid: Grid) -> float:
    """Plain cell-sum mass (the conserved discrete quantity)."""
    return float(np.sum(u) * grid.cell_volume)
