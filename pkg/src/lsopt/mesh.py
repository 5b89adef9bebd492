"""Uniform Cartesian meshes with lexicographic numbering and boundary tags.

Node and element ids increase fastest along the first axis.  Periodic axes
drop the duplicate layer of end nodes, so neighbour arithmetic wraps around.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


def coords_equal(a, b, scale):
    """Approximate coordinate equality at 1e-9 of the domain scale."""
    return np.abs(a - b) <= 1e-9 * scale


@dataclass
class BoundaryTag:
    """Nodes (and facets, for surface integrals) selected by an indicator."""

    name: str
    nodes: np.ndarray          # sorted, duplicate-free node ids
    facets: np.ndarray         # (n_facets, nodes_per_facet) node ids
    facet_axis: np.ndarray     # axis normal to each facet
    facet_measure: np.ndarray  # edge length (2D) / face area (3D) per facet

    def __len__(self):
        return len(self.nodes)


@dataclass
class CartesianMesh:
    """Axis-aligned box D split into congruent rectangular elements."""

    dim: int
    el_size: tuple
    origin: tuple
    lengths: tuple
    periodic: tuple
    delta: tuple = field(init=False)
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.delta = tuple(
            length / n for length, n in zip(self.lengths, self.el_size)
        )
        self._conn = None
        self._coords = None
        self._cache = {}

    # -- counting -----------------------------------------------------------

    @property
    def node_counts(self):
        return tuple(
            n if p else n + 1 for n, p in zip(self.el_size, self.periodic)
        )

    @property
    def n_nodes(self):
        return int(np.prod(self.node_counts))

    @property
    def n_elements(self):
        return int(np.prod(self.el_size))

    @property
    def grid_shape(self):
        """Node grid shape, slowest axis first (for reshaping flat fields)."""
        return tuple(reversed(self.node_counts))

    # -- indexing -----------------------------------------------------------

    def node_id(self, idx):
        counts = self.node_counts
        nid = 0
        for ax in reversed(range(self.dim)):
            nid = nid * counts[ax] + idx[ax]
        return nid

    def node_index(self, nid):
        counts = self.node_counts
        idx = []
        for ax in range(self.dim):
            idx.append(nid % counts[ax])
            nid //= counts[ax]
        return tuple(idx)

    def node_coordinates(self):
        """(n_nodes, dim) coordinates in lexicographic node order."""
        if self._coords is None:
            axes = [
                self.origin[ax] + self.delta[ax] * np.arange(self.node_counts[ax])
                for ax in range(self.dim)
            ]
            grids = np.meshgrid(*axes, indexing="ij")
            # meshgrid 'ij' ordering varies the first axis slowest; transpose so
            # the flattened order is x-fastest.
            coords = np.stack([g.T.ravel() for g in grids], axis=1)
            self._coords = coords
        return self._coords

    def nearest_node(self, x):
        idx = []
        for ax in range(self.dim):
            i = int(round((x[ax] - self.origin[ax]) / self.delta[ax]))
            n = self.node_counts[ax]
            i = i % n if self.periodic[ax] else min(max(i, 0), n - 1)
            idx.append(i)
        return self.node_id(idx)

    def element_connectivity(self):
        """(n_elements, 2**dim) node ids, local corner l = sum_i bit_i(l)<<i."""
        if self._conn is None:
            counts = self.node_counts
            el_axes = [np.arange(n) for n in self.el_size]
            grids = np.meshgrid(*el_axes, indexing="ij")
            base = [g.T.ravel() for g in grids]  # x-fastest element order
            n_el = self.n_elements
            nloc = 2**self.dim
            conn = np.empty((n_el, nloc), dtype=np.int64)
            for l in range(nloc):
                nid = np.zeros(n_el, dtype=np.int64)
                for ax in reversed(range(self.dim)):
                    i = base[ax] + ((l >> ax) & 1)
                    if self.periodic[ax]:
                        i = i % counts[ax]
                    nid = nid * counts[ax] + i
                conn[:, l] = nid
            self._conn = conn
        return self._conn

    def element_origins(self):
        """(n_elements, dim) coordinates of each element's lower corner."""
        el_axes = [
            self.origin[ax] + self.delta[ax] * np.arange(self.el_size[ax])
            for ax in range(self.dim)
        ]
        grids = np.meshgrid(*el_axes, indexing="ij")
        return np.stack([g.T.ravel() for g in grids], axis=1)

    def element_neighbour(self, el_index, axis, step=1):
        """Index vector of the neighbouring element; wraps on periodic axes."""
        idx = list(el_index)
        i = idx[axis] + step
        if self.periodic[axis]:
            i %= self.el_size[axis]
        elif not 0 <= i < self.el_size[axis]:
            return None
        idx[axis] = i
        return tuple(idx)

    # -- boundary -----------------------------------------------------------

    def boundary_node_mask(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        counts = self.node_counts
        grid = mask.reshape(self.grid_shape)
        for ax in range(self.dim):
            if self.periodic[ax]:
                continue
            # grid axes run slowest-first; mesh axis ax maps to grid axis dim-1-ax
            gax = self.dim - 1 - ax
            sl_lo = [slice(None)] * self.dim
            sl_hi = [slice(None)] * self.dim
            sl_lo[gax] = 0
            sl_hi[gax] = counts[ax] - 1
            grid[tuple(sl_lo)] = True
            grid[tuple(sl_hi)] = True
        return mask

    def to_grid(self, flat):
        return np.asarray(flat).reshape(self.grid_shape)

    def to_flat(self, grid):
        return np.asarray(grid).reshape(-1)


def build_mesh(dim, el_size, origin=None, lengths=None, periodic=None):
    """Create a uniform Cartesian mesh over the bounding box."""
    el_size = tuple(int(n) for n in np.atleast_1d(el_size))
    if len(el_size) == 1:
        el_size = el_size * dim
    if dim not in (2, 3) or len(el_size) != dim:
        raise MeshError(f"dim must be 2 or 3 with matching el_size, got {dim}, {el_size}")
    origin = tuple(float(x) for x in (origin if origin is not None else (0.0,) * dim))
    lengths = tuple(float(x) for x in (lengths if lengths is not None else (1.0,) * dim))
    periodic = tuple(bool(p) for p in (periodic if periodic is not None else (False,) * dim))
    if any(n < 1 for n in el_size):
        raise MeshError(f"el_size entries must be >= 1, got {el_size}")
    if any(L <= 0 for L in lengths):
        raise MeshError(f"lengths must be positive, got {lengths}")
    return CartesianMesh(dim, el_size, origin, lengths, periodic)


def _boundary_facets(mesh):
    """All boundary facets as (nodes tuple, axis, measure) triples."""
    facets = []
    counts = mesh.node_counts
    dim = mesh.dim
    for ax in range(dim):
        if mesh.periodic[ax]:
            continue
        tang = [a for a in range(dim) if a != ax]
        measure = float(np.prod([mesh.delta[a] for a in tang]))
        for side in (0, counts[ax] - 1):
            for combo in np.ndindex(*[mesh.el_size[a] for a in tang]):
                corners = []
                for bits in np.ndindex(*(2,) * (dim - 1)):
                    idx = [0] * dim
                    idx[ax] = side
                    for k, a in enumerate(tang):
                        i = combo[k] + bits[k]
                        if mesh.periodic[a]:
                            i %= counts[a]
                        idx[a] = i
                    corners.append(mesh.node_id(idx))
                facets.append((tuple(corners), ax, measure))
    return facets


def tag_boundary(mesh, name, indicator, interior_allowed=False):
    """Tag the boundary nodes where the indicator holds.

    The indicator is a pure predicate on node coordinates.  Facets whose
    nodes are all tagged are collected for surface integration.  An empty
    result is legal but warned about.
    """
    coords = mesh.node_coordinates()
    if interior_allowed:
        candidates = np.arange(mesh.n_nodes)
    else:
        candidates = np.flatnonzero(mesh.boundary_node_mask())
    tagged = np.array(
        [nid for nid in candidates if bool(indicator(coords[nid]))], dtype=np.int64
    )
    tagged.sort()
    tag_set = set(tagged.tolist())
    facets = []
    axes = []
    measures = []
    for nodes, ax, m in _boundary_facets(mesh):
        if all(n in tag_set for n in nodes):
            facets.append(nodes)
            axes.append(ax)
            measures.append(m)
    tag = BoundaryTag(
        name=name,
        nodes=tagged,
        facets=np.array(facets, dtype=np.int64) if facets else np.empty((0, 2 ** (mesh.dim - 1)), dtype=np.int64),
        facet_axis=np.array(axes, dtype=np.int64),
        facet_measure=np.array(measures, dtype=float),
    )
    if len(tagged) == 0:
        warnings.warn(f"boundary tag {name!r} selected no nodes", stacklevel=2)
    mesh.tags[name] = tag
    return tag
