"""Q1 finite elements on uniform Cartesian meshes.

Assembly takes integrand callbacks written against quadrature-point fields.
A field at a quadrature point is a ``QuadField(val, grad)`` pair; integrands
combine them with the tensor helpers below, which also accept seeded dual
numbers so the same integrand code serves value and derivative passes.

Vector-valued spaces interleave components per node: dof = node*ncomp + c.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import dual
from .dual import Dual

QuadField = namedtuple("QuadField", ["val", "grad"])


class FemError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


# -- tensor helpers (dual-aware) ---------------------------------------------


def dot(a, b):
    """Contraction over the trailing axis."""
    return (a * b).sum(axis=-1)


def inner(a, b):
    """Double contraction over the trailing two axes."""
    return (a * b).sum(axis=(-2, -1))


def transpose(g):
    if isinstance(g, Dual):
        return Dual(np.swapaxes(g.val, -1, -2), np.swapaxes(g.dot, -1, -2))
    return np.swapaxes(g, -1, -2)


def sym(g):
    """Symmetric part of a gradient: the small-strain operator."""
    return (g + transpose(g)) * 0.5


def trace(g):
    d = np.shape(g.val if isinstance(g, Dual) else g)[-1]
    out = g[..., 0, 0]
    for i in range(1, d):
        out = out + g[..., i, i]
    return out


def norm(a):
    return dual.sqrt(dot(a, a) + 0.0)


# -- quadrature and shape functions ------------------------------------------


@dataclass
class QuadratureRule:
    """Tensor-product Gauss points on the [0,1]^dim reference element."""

    points: np.ndarray
    weights: np.ndarray


def gauss_rule(dim, points_per_axis=2):
    x, w = np.polynomial.legendre.leggauss(points_per_axis)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    pts_1d = [x] * dim
    wts_1d = [w] * dim
    grids = np.meshgrid(*pts_1d, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*wts_1d, indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return QuadratureRule(points, weights)


def q1_shape(ref_point):
    """Multilinear basis values and reference gradients at a point.

    Local node l has corner bits (l >> axis) & 1, first axis fastest.
    """
    ref_point = np.asarray(ref_point, dtype=float)
    dim = ref_point.shape[-1]
    nloc = 2**dim
    values = np.ones(ref_point.shape[:-1] + (nloc,))
    grads = np.ones(ref_point.shape[:-1] + (nloc, dim))
    for l in range(nloc):
        for ax in range(dim):
            s = ref_point[..., ax] if (l >> ax) & 1 else 1.0 - ref_point[..., ax]
            ds = 1.0 if (l >> ax) & 1 else -1.0
            values[..., l] *= s
            for gax in range(dim):
                grads[..., l, gax] *= ds if gax == ax else s
    return values, grads


# -- spaces and boundary conditions ------------------------------------------


@dataclass
class NodalField:
    """Flat coefficient vector; components interleave per node."""

    values: np.ndarray
    n_components: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size % self.n_components:
            raise FemError("field length not divisible by n_components")


@dataclass
class DirichletBC:
    """Constant prescribed value per component on a tagged node set.

    ``value`` is a float for scalar spaces, or a per-component sequence for
    vector spaces where ``None`` leaves that component unconstrained.
    """

    tag: str
    value: object = 0.0


@dataclass
class FunctionSpace:
    mesh: object
    n_components: int = 1
    dirichlet: list = field(default_factory=list)

    @property
    def n_dofs(self):
        return self.mesh.n_nodes * self.n_components

    def dirichlet_dofs(self):
        dofs = []
        values = []
        for bc in self.dirichlet:
            if bc.tag not in self.mesh.tags:
                raise FemError(f"unknown boundary tag {bc.tag!r}")
            nodes = self.mesh.tags[bc.tag].nodes
            comps = bc.value if isinstance(bc.value, (tuple, list)) else (bc.value,) * self.n_components
            if len(comps) != self.n_components:
                raise FemError("Dirichlet value length must match n_components")
            for c, v in enumerate(comps):
                if v is None:
                    continue
                dofs.append(nodes * self.n_components + c)
                values.append(np.full(len(nodes), float(v)))
        if not dofs:
            return np.empty(0, dtype=np.int64), np.empty(0)
        dofs = np.concatenate(dofs)
        values = np.concatenate(values)
        order = np.argsort(dofs, kind="stable")
        dofs, values = dofs[order], values[order]
        dofs, first = np.unique(dofs, return_index=True)
        return dofs, values[first]


# -- per-mesh quadrature cache -----------------------------------------------

ElementData = namedtuple("ElementData", ["rule", "N", "dNdx", "wJ", "xq", "conn"])


def element_data(mesh):
    """Shared basis/quadrature tables for the congruent elements of a mesh."""
    cache = mesh._cache
    if "element_data" not in cache:
        rule = gauss_rule(mesh.dim)
        N, dN = q1_shape(rule.points)
        dNdx = dN / np.asarray(mesh.delta)
        wJ = rule.weights * float(np.prod(mesh.delta))
        xq = mesh.element_origins()[:, None, :] + rule.points[None, :, :] * np.asarray(mesh.delta)
        cache["element_data"] = ElementData(rule, N, dNdx, wJ, xq, mesh.element_connectivity())
    return cache["element_data"]


def _as_field(mesh, obj):
    if isinstance(obj, NodalField):
        return obj.values, obj.n_components
    values = np.asarray(obj, dtype=float).ravel()
    if values.size % mesh.n_nodes:
        raise FemError("field size does not match the mesh")
    return values, values.size // mesh.n_nodes


def field_at_quadrature(mesh, obj):
    """Interpolate a nodal field to element quadrature points."""
    ed = element_data(mesh)
    values, ncomp = _as_field(mesh, obj)
    nodal = values.reshape(-1, ncomp)[ed.conn]  # (n_el, nloc, ncomp)
    val = np.einsum("elc,ql->eqc", nodal, ed.N)
    grad = np.einsum("elc,qld->eqcd", nodal, ed.dNdx)
    if ncomp == 1:
        return QuadField(val[..., 0], grad[:, :, 0, :])
    return QuadField(val, grad)


def _quad_fields(mesh, fields):
    out = {}
    for name, obj in fields.items():
        if obj is None:
            out[name] = None
        elif isinstance(obj, (list, tuple)):
            out[name] = [field_at_quadrature(mesh, o) for o in obj]
        else:
            out[name] = field_at_quadrature(mesh, obj)
    return out


def _slice_q(qf, q):
    if qf is None:
        return None
    if isinstance(qf, list):
        return [_slice_q(f, q) for f in qf]
    return QuadField(qf.val[:, q], qf.grad[:, q])


# -- assembly ------------------------------------------------------------------


def _basis_fields(space, ed):
    """Per (q, local dof): QuadField of the basis function, constants."""
    dim = space.mesh.dim
    nloc = ed.N.shape[1]
    out = []
    for q in range(ed.N.shape[0]):
        row = []
        for l in range(nloc):
            if space.n_components == 1:
                row.append(QuadField(ed.N[q, l], ed.dNdx[q, l]))
            else:
                for c in range(space.n_components):
                    val = np.zeros(space.n_components)
                    val[c] = ed.N[q, l]
                    grad = np.zeros((space.n_components, dim))
                    grad[c] = ed.dNdx[q, l]
                    row.append(QuadField(val, grad))
        out.append(row)
    return out


def _element_dofs(space):
    conn = space.mesh.element_connectivity()
    if space.n_components == 1:
        return conn
    ncomp = space.n_components
    return (conn[:, :, None] * ncomp + np.arange(ncomp)).reshape(conn.shape[0], -1)


@dataclass
class AssembledSystem:
    """Stiffness with Dirichlet rows/columns eliminated symmetrically."""

    matrix: sp.csr_matrix
    bc_dofs: np.ndarray
    bc_values: np.ndarray
    rhs_shift: np.ndarray

    def apply_rhs(self, b):
        out = np.asarray(b, dtype=float).copy() + self.rhs_shift
        out[self.bc_dofs] = self.bc_values
        return out


def assemble_bilinear(space, integrand, **fields):
    """Assemble the matrix of a bilinear integrand ``a(u, v, x, **fields)``.

    Returns an :class:`AssembledSystem`; with no Dirichlet data the matrix is
    the raw Galerkin operator.
    """
    mesh = space.mesh
    ed = element_data(mesh)
    qf = _quad_fields(mesh, fields)
    basis = _basis_fields(space, ed)
    edofs = _element_dofs(space)
    n_el, nloc_dof = edofs.shape
    Ae = np.zeros((n_el, nloc_dof, nloc_dof))
    for q in range(len(ed.wJ)):
        data_q = {k: _slice_q(v, q) for k, v in qf.items()}
        xq = ed.xq[:, q, :]
        for i in range(nloc_dof):
            for j in range(nloc_dof):
                val = integrand(u=basis[q][j], v=basis[q][i], x=xq, **data_q)
                Ae[:, i, j] += ed.wJ[q] * np.asarray(val)
    rows = np.repeat(edofs, nloc_dof, axis=1).ravel()
    cols = np.tile(edofs, (1, nloc_dof)).ravel()
    data = Ae.ravel()

    n = space.n_dofs
    bc_dofs, bc_values = space.dirichlet_dofs()
    rhs_shift = np.zeros(n)
    if len(bc_dofs):
        xd = np.zeros(n)
        xd[bc_dofs] = bc_values
        # RHS correction -A[:, dirichlet] @ values, from the unconstrained matrix
        np.add.at(rhs_shift, rows, -data * xd[cols])
        rhs_shift[bc_dofs] = 0.0
        is_dir = np.zeros(n, dtype=bool)
        is_dir[bc_dofs] = True
        keep = ~(is_dir[rows] | is_dir[cols])
        rows = np.concatenate([rows[keep], bc_dofs])
        cols = np.concatenate([cols[keep], bc_dofs])
        data = np.concatenate([data[keep], np.ones(len(bc_dofs))])
    A = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return AssembledSystem(A, bc_dofs, bc_values, rhs_shift)


def _facet_quadrature(mesh, tag):
    """Quadrature table for the facets of a boundary tag."""
    t = mesh.tags[tag]
    dfac = mesh.dim - 1
    rule = gauss_rule(dfac) if dfac else QuadratureRule(np.zeros((1, 0)), np.ones(1))
    nq, nloc = rule.points.shape[0], 2**dfac
    N = np.ones((nq, nloc))
    for l in range(nloc):
        for k in range(dfac):
            s = rule.points[:, k] if (l >> (dfac - 1 - k)) & 1 else 1.0 - rule.points[:, k]
            N[:, l] *= s
    # facet corners were generated with np.ndindex (last tangent axis fastest)
    coords = mesh.node_coordinates()[t.facets]  # (n_f, nloc, dim)
    if len(t.facets):
        # unwrap periodic tangent axes so corner interpolation stays local
        for ax in range(mesh.dim):
            if mesh.periodic[ax]:
                ref = coords[:, :1, ax]
                wrap = coords[:, :, ax] < ref - 0.5 * mesh.lengths[ax]
                coords[:, :, ax] += wrap * mesh.lengths[ax]
    xq = np.einsum("flk,ql->fqk", coords, N)
    return t, rule, N, xq


def assemble_linear(space, integrand, tag=None, **fields):
    """Assemble the vector of a linear integrand ``l(v, x, **fields)``.

    A volume integral by default; with ``tag`` the integrand is evaluated on
    that tag's boundary facets instead.
    """
    mesh = space.mesh
    out = np.zeros(space.n_dofs)
    if tag is None:
        ed = element_data(mesh)
        qf = _quad_fields(mesh, fields)
        basis = _basis_fields(space, ed)
        edofs = _element_dofs(space)
        be = np.zeros(edofs.shape)
        for q in range(len(ed.wJ)):
            data_q = {k: _slice_q(v, q) for k, v in qf.items()}
            xq = ed.xq[:, q, :]
            for i in range(edofs.shape[1]):
                val = integrand(v=basis[q][i], x=xq, **data_q)
                be[:, i] += ed.wJ[q] * np.asarray(val)
        np.add.at(out, edofs.ravel(), be.ravel())
        return out
    if tag not in mesh.tags:
        raise FemError(f"unknown boundary tag {tag!r}")
    t, rule, N, xq = _facet_quadrature(mesh, tag)
    if not len(t.facets):
        return out
    raw = {k: _as_field(mesh, v)[0].reshape(mesh.n_nodes, -1) for k, v in fields.items() if v is not None}
    nq, nloc = N.shape
    for q in range(nq):
        x = xq[:, q, :]
        data_q = {}
        for k, vals in raw.items():
            fv = np.einsum("flc,l->fc", vals[t.facets], N[q])
            data_q[k] = QuadField(fv[:, 0] if fv.shape[1] == 1 else fv, None)
        for l in range(nloc):
            for c in range(space.n_components):
                if space.n_components == 1:
                    vq = QuadField(N[q, l], None)
                else:
                    val = np.zeros(space.n_components)
                    val[c] = N[q, l]
                    vq = QuadField(val, None)
                contrib = rule.weights[q] * t.facet_measure * np.asarray(
                    integrand(v=vq, x=x, **data_q)
                )
                np.add.at(out, t.facets[:, l] * space.n_components + c, contrib)
    return out


def integrate(mesh, integrand, **fields):
    """Gauss-quadrature integral of ``integrand(x, **fields)`` over D."""
    ed = element_data(mesh)
    qf = _quad_fields(mesh, fields)
    vals = integrand(x=ed.xq, **qf)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), ed.xq.shape[:2])
    return float(np.einsum("eq,q->", vals, ed.wJ))


# -- linear solver -------------------------------------------------------------

SolveResult = namedtuple("SolveResult", ["x", "iterations", "residuals", "converged"])


def solve_spd(A, b, rel_tol=1e-10, max_iter=None, x0=None, callback=None):
    """Jacobi-preconditioned conjugate gradients for SPD systems.

    Raises :class:`SolverError` if the relative residual has not reached
    ``rel_tol`` within ``max_iter`` iterations.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveResult(np.zeros(n), 0, np.zeros(1), True)
    diag = A.diagonal().copy()
    diag[diag == 0.0] = 1.0
    inv_diag = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    residuals = [np.linalg.norm(r)]
    if residuals[-1] / bnorm <= rel_tol:
        return SolveResult(x, 0, np.asarray(residuals), True)
    for k in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        residuals.append(np.linalg.norm(r))
        if callback is not None:
            callback(k, x, residuals[-1])
        if residuals[-1] / bnorm <= rel_tol:
            return SolveResult(x, k, np.asarray(residuals), True)
        z = inv_diag * r
        rz_new = r @ z
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    raise SolverError(
        f"CG did not reach rel_tol={rel_tol:g} in {max_iter} iterations "
        f"(relative residual {residuals[-1] / bnorm:.3e})",
        residual=residuals[-1] / bnorm,
        iterations=max_iter,
    )
