"""Space-time lattice around ``(t0, x0)`` and the computational cylinder.

Spatial nodes are ``x0 + h * i`` with ``i`` an integer multi-index in the
axis basis; time levels are ``min(t0 + j * tau, T)``.  Every node with
``|x| < R + h * max_k |l_k|`` is enumerated so that interior nodes
(``|x| < R`` and ``t < T``) have all their stencil neighbours available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import GridTooLarge, NeighborOutsideEnumeration

__all__ = [
    "LatticeSpec",
    "NodeIndex",
    "DomainQ",
    "Lattice",
    "GridFunction",
    "build_lattice",
    "time_levels",
    "neighbor",
    "DEFAULT_MAX_NODES",
]

DEFAULT_MAX_NODES = 50_000_000

# Relative slack used for ball membership so that nodes sitting exactly on a
# sphere are classified the same way regardless of round-off in x0 + h*i.
_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class LatticeSpec:
    t0: float
    x0: tuple
    tau: float
    h: float
    T: float
    directions: np.ndarray

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.tau > self.T:
            raise ValueError("tau must not exceed T")
        if not 0 <= self.t0 <= self.T:
            raise ValueError("t0 must lie in [0, T]")
        dirs = np.asarray(self.directions)
        if not np.issubdtype(dirs.dtype, np.integer):
            if not np.allclose(dirs, np.round(dirs)):
                raise ValueError("stencil directions must have integer components")
        if dirs.ndim != 2 or dirs.shape[1] != len(self.x0):
            raise ValueError("directions and x0 disagree on the dimension")

    @property
    def d(self):
        return len(self.x0)


class NodeIndex(NamedTuple):
    j: int
    i: tuple


def time_levels(t0, tau, T):
    """Time levels ``min(t0 + j tau, T)``; the last one is exactly ``T``."""
    span = T - t0
    if span <= 0:
        return np.array([float(T)])
    q = span / tau
    n = round(q)
    if abs(q - n) > 1e-9 * max(1.0, q):
        n = math.ceil(q)
    n = max(int(n), 1)
    t = np.minimum(t0 + tau * np.arange(n + 1), T)
    t[-1] = T
    return t


@dataclass(frozen=True)
class DomainQ:
    """Interior/boundary split of the enumerated nodes.

    A node is interior when ``|x| < R`` and ``t < T``; every other node is
    boundary.  ``spatial_interior`` is the spatial part of the mask.
    """

    R: float
    spatial_interior: np.ndarray
    n_levels: int

    def is_interior(self, j, n):
        return j < self.n_levels - 1 and bool(self.spatial_interior[n])

    def interior_mask(self, j):
        if j >= self.n_levels - 1:
            return np.zeros_like(self.spatial_interior)
        return self.spatial_interior


class Lattice:
    """Enumerated node set with O(1) index lookup.

    Attributes
    ----------
    times : ndarray, shape (J+1,)
    multi_index : ndarray, shape (n, d)
        Integer offsets ``i`` of the enumerated spatial nodes, in
        lexicographic order.
    coords : ndarray, shape (n, d)
    interior : ndarray of int
        Positions (into the enumerated arrays) of spatial interior nodes.
    neighbors : ndarray, shape (n_interior, 2*d1)
        Enumerated position of ``x + h l_k`` for each interior node,
        columns ordered like the stencil directions.
    """

    def __init__(self, spec: LatticeSpec, R, max_nodes=DEFAULT_MAX_NODES):
        if not R > 0:
            raise ValueError("R must be positive")
        self.spec = spec
        self.R = float(R)
        self.d = spec.d
        self.h = float(spec.h)
        self.x0 = np.asarray(spec.x0, dtype=float)
        self.directions = np.rint(np.asarray(spec.directions)).astype(np.int64)
        self.times = time_levels(spec.t0, spec.tau, spec.T)
        self.tau = float(spec.tau)
        self.T = float(spec.T)

        step = float(np.max(np.linalg.norm(self.directions, axis=1)))
        self.enum_radius = self.R + self.h * step
        eps = _EDGE_EPS * max(self.h, 1.0)
        lo = np.floor((-self.enum_radius - self.x0) / self.h).astype(np.int64)
        hi = np.ceil((self.enum_radius - self.x0) / self.h).astype(np.int64)
        shape = tuple(int(v) for v in hi - lo + 1)
        box_size = int(np.prod(shape, dtype=np.float64))
        # The ball holds at most the box; refuse early on absurd boxes.
        if box_size * len(self.times) > 4 * max_nodes:
            raise GridTooLarge(box_size * len(self.times), max_nodes)

        grids = np.meshgrid(*[np.arange(lo[m], hi[m] + 1) for m in range(self.d)], indexing="ij")
        box_idx = np.stack([g.ravel() for g in grids], axis=1)
        box_x = self.x0 + self.h * box_idx
        radius = np.linalg.norm(box_x, axis=1)
        enum_mask = radius < self.enum_radius - eps

        self.box_lo = lo
        self.box_shape = shape
        self.index_map = np.full(box_size, -1, dtype=np.int64)
        enumerated = np.flatnonzero(enum_mask)
        self.index_map[enumerated] = np.arange(len(enumerated))
        self.index_map = self.index_map.reshape(shape)
        self.multi_index = box_idx[enumerated]
        self.coords = box_x[enumerated]
        self.n_spatial = len(enumerated)
        self.n_nodes = self.n_spatial * len(self.times)
        if self.n_nodes > max_nodes:
            raise GridTooLarge(self.n_nodes, max_nodes)

        spatial_interior = radius[enumerated] < self.R - eps
        self.domain = DomainQ(self.R, spatial_interior, len(self.times))
        self.interior = np.flatnonzero(spatial_interior)
        self.boundary = np.flatnonzero(~spatial_interior)
        self.interior_position = np.full(self.n_spatial, -1, dtype=np.int64)
        self.interior_position[self.interior] = np.arange(len(self.interior))
        self.neighbors = self._neighbor_table()

    @property
    def n_levels(self):
        return len(self.times)

    @property
    def n_interior(self):
        return len(self.interior)

    def lookup(self, i):
        """Enumerated position of the integer offset ``i`` (or -1)."""
        i = np.asarray(i, dtype=np.int64)
        rel = i - self.box_lo
        if rel.ndim == 1:
            if np.any(rel < 0) or np.any(rel >= self.box_shape):
                return -1
            return int(self.index_map[tuple(rel)])
        out = np.full(rel.shape[0], -1, dtype=np.int64)
        ok = np.all((rel >= 0) & (rel < np.array(self.box_shape)), axis=1)
        out[ok] = self.index_map[tuple(rel[ok].T)]
        return out

    def _neighbor_table(self):
        base = self.multi_index[self.interior]
        table = np.empty((len(base), len(self.directions)), dtype=np.int64)
        for c, ell in enumerate(self.directions):
            pos = self.lookup(base + ell)
            if np.any(pos < 0):
                bad = base[int(np.argmax(pos < 0))]
                raise NeighborOutsideEnumeration(
                    f"neighbour of {tuple(bad)} along {tuple(ell)} is not enumerated"
                )
            table[:, c] = pos
        return table

    def time(self, j):
        return float(self.times[j])

    def position(self, node: NodeIndex):
        i = np.asarray(node.i, dtype=float)
        return self.time(node.j), self.x0 + self.h * i

    def node_at(self, t, x):
        """Node whose position is ``(t, x)``, or raise if it is not enumerated."""
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise NeighborOutsideEnumeration(f"t={t} is not a time level")
        rel = (np.asarray(x, dtype=float) - self.x0) / self.h
        i = np.rint(rel).astype(np.int64)
        if np.max(np.abs(rel - i), initial=0.0) > 1e-7:
            raise NeighborOutsideEnumeration(f"x={tuple(np.ravel(x))} is not a lattice point")
        if self.lookup(i) < 0:
            raise NeighborOutsideEnumeration(f"x={tuple(np.ravel(x))} lies outside the enumeration")
        return NodeIndex(j, tuple(int(v) for v in i))

    def stats(self):
        return {
            "d": self.d,
            "h": self.h,
            "tau": self.tau,
            "T": self.T,
            "R": self.R,
            "n_levels": self.n_levels,
            "n_spatial": self.n_spatial,
            "n_interior_spatial": self.n_interior,
            "n_nodes": self.n_nodes,
            "box_shape": list(self.box_shape),
        }


def build_lattice(spec: LatticeSpec, R, max_nodes=DEFAULT_MAX_NODES) -> Lattice:
    return Lattice(spec, R, max_nodes=max_nodes)


def neighbor(lattice: Lattice, node: NodeIndex, k, sign=1) -> NodeIndex:
    """Node at ``x + sign * h * l_k`` on the same time level.

    ``k`` is a direction label in ``1..d1``; the stored direction list holds
    ``l_1..l_d1`` followed by their negatives.
    """
    d1 = len(lattice.directions) // 2
    if not 1 <= k <= d1:
        raise ValueError(f"direction label must be in 1..{d1}")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    ell = sign * lattice.directions[k - 1]
    target = np.asarray(node.i, dtype=np.int64) + ell
    if lattice.lookup(node.i) < 0:
        raise NeighborOutsideEnumeration(f"node {tuple(node.i)} is not enumerated")
    if lattice.lookup(target) < 0:
        raise NeighborOutsideEnumeration(
            f"step from {tuple(node.i)} along {tuple(ell)} leaves the enumerated set"
        )
    return NodeIndex(node.j, tuple(int(v) for v in target))


class GridFunction:
    """Values on all lattice nodes, callable at lattice points ``(t, x)``."""

    def __init__(self, lattice: Lattice, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (lattice.n_levels, lattice.n_spatial):
            raise ValueError(
                f"grid values must have shape {(lattice.n_levels, lattice.n_spatial)}"
            )
        self.lattice = lattice
        self.values = values

    @classmethod
    def sample(cls, lattice: Lattice, f):
        """Evaluate ``f(t, X)`` (vectorised over ``X``) on every node."""
        vals = np.empty((lattice.n_levels, lattice.n_spatial))
        for j, t in enumerate(lattice.times):
            vals[j] = f(float(t), lattice.coords)
        return cls(lattice, vals)

    def __call__(self, t, x):
        node = self.lattice.node_at(t, x)
        return float(self.values[node.j, self.lattice.lookup(node.i)])
