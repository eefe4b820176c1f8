"""P1 finite elements for the mean-zero Neumann, Robin and Dirichlet torsion problems."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .closed_form import RadialProfile
from .errors import DomainError, PreconditionError, SolverError, ValidationError
from .geometry import Straight, TriMesh

log = logging.getLogger(__name__)

KRYLOV_TOL = 1e-12
RESIDUAL_TOL = 1e-11
DIRECT_LIMIT = 100_000

Source = Union[RadialProfile, float, int, None]


def _profile(f: Source) -> RadialProfile:
    if f is None:
        return RadialProfile.constant()
    if isinstance(f, RadialProfile):
        return f
    return RadialProfile.constant(float(f))


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True, eq=False)
class P1Data:
    """Element geometry shared by all assemblies on a mesh."""

    area: np.ndarray  # (nt,)
    grads: np.ndarray  # (nt, 3, 2) barycentric gradients


def p1_data(mesh: TriMesh) -> P1Data:
    x = mesh.vertices[mesh.triangles]
    d1 = x[:, 1] - x[:, 0]
    d2 = x[:, 2] - x[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0):
        raise ValidationError("degenerate or inverted triangle in mesh")
    opp = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([-opp[..., 1], opp[..., 0]], axis=-1) / det[:, None, None]
    return P1Data(0.5 * det, grads)


def stiffness(mesh: TriMesh, data: Optional[P1Data] = None) -> sp.csr_matrix:
    data = data or p1_data(mesh)
    local = data.area[:, None, None] * np.einsum("tik,tjk->tij", data.grads, data.grads)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.nv, mesh.nv)).tocsr()
    # exact symmetry regardless of summation order
    return ((K + K.T) * 0.5).tocsr()


def boundary_mass(mesh: TriMesh) -> sp.csr_matrix:
    e = mesh.boundary_edges
    L = mesh.boundary_lengths()
    rows = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
    vals = np.concatenate([L / 3, L / 3, L / 6, L / 6])
    return sp.coo_matrix((vals, (rows, cols)), shape=(mesh.nv, mesh.nv)).tocsr()


def boundary_functional(mesh: TriMesh) -> np.ndarray:
    """``b_i = int_{boundary} phi_i``; supported on boundary nodes only."""
    e = mesh.boundary_edges
    L = mesh.boundary_lengths()
    b = np.zeros(mesh.nv)
    np.add.at(b, e[:, 0], L / 2)
    np.add.at(b, e[:, 1], L / 2)
    return b


def load_vector(mesh: TriMesh, f: Source = None, data: Optional[P1Data] = None) -> np.ndarray:
    """``int f phi_i`` by the edge-midpoint rule (exact for quadratic integrands)."""
    f = _profile(f)
    data = data or p1_data(mesh)
    t = mesh.triangles
    v = mesh.vertices
    if f.is_constant:
        fm = np.full((len(t), 3), f.scale)
    else:
        mids = 0.5 * (v[t] + v[np.roll(t, -1, axis=1)])  # midpoints of edges (0,1), (1,2), (2,0)
        fm = f.at_points(mids)
    # node i touches midpoints of edges (i, i+1) and (i-1, i)
    contrib = data.area[:, None] / 6.0 * (fm + np.roll(fm, 1, axis=1))
    F = np.zeros(mesh.nv)
    np.add.at(F, t.ravel(), contrib.ravel())
    return F


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Symmetric sparse matrix with an optional constraint border."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    border: Optional[np.ndarray] = None

    def bordered(self) -> sp.csr_matrix:
        if self.border is None:
            return self.matrix
        b = sp.csr_matrix(self.border[None, :])
        return sp.bmat([[self.matrix, b.T], [b, None]], format="csr")

    def full_rhs(self) -> np.ndarray:
        if self.border is None:
            return self.rhs
        return np.concatenate([self.rhs, [0.0]])


def _diag_preconditioner(sys: LinearSystem) -> spla.LinearOperator:
    d = np.abs(sys.matrix.diagonal()).astype(float)
    d[d == 0] = 1.0
    inv = 1.0 / d
    if sys.border is not None:
        schur = float(sys.border**2 @ inv)
        inv = np.concatenate([inv, [1.0 / schur]])
    return spla.LinearOperator((len(inv), len(inv)), matvec=lambda x: inv * x, dtype=float)


def _backward_error(A, x, rhs) -> float:
    """Normwise backward error ``|Ax - b| / (|A| |x| + |b|)``.

    Measured this way because the load vector shrinks like ``h**2`` while
    the stiffness entries stay of order one.
    """
    r = np.linalg.norm(A @ x - rhs)
    scale = spla.norm(A, np.inf) * np.linalg.norm(x) + np.linalg.norm(rhs)
    return float(r / scale) if scale else float(r)


def solve_system(sys: LinearSystem, solver: str = "direct", tol: float = KRYLOV_TOL):
    """Solve, returning ``(x, backward_error, iterations, solver_used)``."""
    A = sys.bordered()
    rhs = sys.full_rhs()
    if solver == "krylov":
        its = [0]

        def count(_):
            its[0] += 1

        # minres tests its own recurrence residual; tighten it so the true one meets tol
        x, info = spla.minres(A, rhs, rtol=0.1 * tol, M=_diag_preconditioner(sys), maxiter=20 * A.shape[0],
                              callback=count)
        res = _backward_error(A, x, rhs)
        if info == 0 and res <= tol:
            return x, res, its[0], "krylov"
        if A.shape[0] >= DIRECT_LIMIT:
            raise SolverError(f"MINRES stopped after {its[0]} iterations with backward error {res:.3e}",
                              its[0], res)
        log.warning("MINRES backward error %.3e after %d iterations; falling back to sparse direct", res, its[0])
    elif solver != "direct":
        raise ValidationError(f"unknown solver {solver!r}")
    x = spla.spsolve(A.tocsc(), rhs)
    res = _backward_error(A, x, rhs) if np.all(np.isfinite(x)) else float("inf")
    if res > RESIDUAL_TOL:
        raise SolverError(f"sparse direct solve left backward error {res:.3e}", 0, res)
    return x, res, 0, "direct"


# ---------------------------------------------------------------------------
# solutions


@dataclass(frozen=True, eq=False)
class Solution:
    """Nodal P1 solution plus energies.

    ``T`` is the quadratic functional at ``u``; ``T_dual = -(1/2) int f u``
    is the same number at an exact discrete minimiser.  For Robin solves
    ``T`` is ``J_beta``; ``lam`` and ``c`` are only set for the constrained
    problem.
    """

    kind: str
    mesh: TriMesh = field(repr=False)
    u: np.ndarray = field(repr=False)
    beta: float
    source: RadialProfile
    T: float
    T_dual: float
    E: float
    dirichlet_energy: float
    lam: Optional[float] = None
    c: Optional[float] = None
    residual: float = 0.0
    iterations: int = 0
    solver: str = "direct"

    @property
    def boundary_integral(self) -> float:
        return float(boundary_functional(self.mesh) @ self.u)

    @property
    def boundary_mean(self) -> float:
        return self.boundary_integral / float(self.mesh.boundary_lengths().sum())


ConstrainedSolution = Solution


def _integral(mesh: TriMesh, u: np.ndarray, data: P1Data) -> float:
    return float((data.area * u[mesh.triangles].mean(axis=1)).sum())


def _finish(kind, mesh, u, beta, f, A, K, F, data, **extra) -> Solution:
    Au = A @ u
    T = 0.5 * float(u @ Au) - float(F @ u)
    return Solution(kind, mesh, u, beta, f, T, -0.5 * float(F @ u), _integral(mesh, u, data),
                    float(u @ (K @ u)), **extra)


def solve_neumann_mean_zero(mesh: TriMesh, f: Source = None, beta: float = 0.0,
                            solver: str = "direct", tol: float = KRYLOV_TOL) -> Solution:
    """Minimise ``1/2 |grad u|^2 + beta/2 int_bdy u^2 - int f u`` over ``int_bdy u = 0``.

    The constraint enters through a border row; its multiplier ``lam`` equals
    ``(int f)/P`` (test with ``v = 1``) and the Neumann datum is ``c = -lam``.
    """
    if beta < 0:
        raise DomainError("beta must be non-negative")
    f = _profile(f)
    data = p1_data(mesh)
    K = stiffness(mesh, data)
    A = K + beta * boundary_mass(mesh) if beta else K
    F = load_vector(mesh, f, data)
    sys = LinearSystem(A.tocsr(), F, boundary_functional(mesh))
    x, res, its, used = solve_system(sys, solver, tol)
    u = x[:-1]
    # Summing the first block row (K annihilates constants) pins lam exactly;
    # recovering it this way keeps the identity independent of solver accuracy.
    border = sys.border
    lam = float((F.sum() - (A @ u).sum()) / border.sum())
    return _finish("mean_zero", mesh, u, beta, f, A, K, F, data, lam=lam, c=-lam,
                   residual=res, iterations=its, solver=used)


def solve_robin(mesh: TriMesh, f: Source = None, beta: float = 1.0,
                solver: str = "direct", tol: float = KRYLOV_TOL) -> Solution:
    """Unconstrained Robin problem; ``T`` of the result is ``J_beta``."""
    if not beta > 0:
        raise DomainError(f"Robin problem needs beta > 0, got {beta}")
    f = _profile(f)
    data = p1_data(mesh)
    K = stiffness(mesh, data)
    A = (K + beta * boundary_mass(mesh)).tocsr()
    F = load_vector(mesh, f, data)
    u, res, its, used = solve_system(LinearSystem(A, F), solver, tol)
    return _finish("robin", mesh, u, beta, f, A, K, F, data, residual=res, iterations=its, solver=used)


def solve_dirichlet(mesh: TriMesh, f: Source = None, solver: str = "direct",
                    tol: float = KRYLOV_TOL) -> Solution:
    """Homogeneous Dirichlet problem by elimination of boundary nodes."""
    f = _profile(f)
    data = p1_data(mesh)
    K = stiffness(mesh, data)
    F = load_vector(mesh, f, data)
    free = np.setdiff1d(np.arange(mesh.nv), mesh.boundary_nodes())
    Kff = K[free][:, free].tocsr()
    uf, res, its, used = solve_system(LinearSystem(Kff, F[free]), solver, tol)
    u = np.zeros(mesh.nv)
    u[free] = uf
    return _finish("dirichlet", mesh, u, np.inf, f, K, K, F, data, residual=res, iterations=its, solver=used)


# ---------------------------------------------------------------------------
# postprocessing


def energies(sol: Solution) -> dict:
    out = {"T": sol.T, "T_dual": sol.T_dual, "E": sol.E, "dirichlet_energy": sol.dirichlet_energy}
    out["kappa1_rayleigh"] = sol.dirichlet_energy / sol.E**2 if sol.E else float("nan")
    return out


def boundary_oscillation(sol: Solution) -> float:
    ub = sol.u[sol.mesh.boundary_nodes()]
    return float(ub.max() - ub.min())


@dataclass(frozen=True)
class StationarityResidual:
    osc_S: float
    mean_S: float
    values: np.ndarray = field(repr=False)


def stationarity_residual(sol: Solution, beta: Optional[float] = None,
                          f: Source = None) -> StationarityResidual:
    """Oscillation and mean of the boundary stationarity density ``S``.

    ``S = 1/2 |grad u|^2 + 2 c beta u - c H u + beta/2 H u^2 - beta^2 u^2 - f u``
    evaluated at boundary edge midpoints with the owning triangle's gradient.
    Edges touching a polygon corner are skipped.
    """
    if sol.c is None:
        raise PreconditionError("stationarity residual needs a constrained (mean-zero) solution")
    mesh = sol.mesh
    beta = sol.beta if beta is None else beta
    f = sol.source if f is None else _profile(f)
    e = mesh.boundary_edges
    mids = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    H = np.zeros(len(e))
    for lid in np.unique(mesh.boundary_loops):
        curve = mesh.curves.get(int(lid))
        if curve is None:
            raise PreconditionError(f"boundary loop {lid} has no curvature data")
        sel = mesh.boundary_loops == lid
        if isinstance(curve, Straight):
            continue
        # curvature at the projected midpoint of the exact curve
        H[sel] = curve.curvature(curve.project(mids[sel]))
    data = p1_data(mesh)
    owner = mesh.boundary_triangles()
    g = np.einsum("tik,ti->tk", data.grads[owner], sol.u[mesh.triangles[owner]])
    u = 0.5 * (sol.u[e[:, 0]] + sol.u[e[:, 1]])
    c = sol.c
    S = (0.5 * (g * g).sum(1) + 2 * c * beta * u - c * H * u + 0.5 * beta * H * u * u
         - beta**2 * u * u - f.at_points(mids) * u)
    keep = ~(np.isin(e[:, 0], mesh.corners) | np.isin(e[:, 1], mesh.corners))
    S = S[keep]
    return StationarityResidual(float(S.max() - S.min()), float(S.mean()), S)


# ---------------------------------------------------------------------------
# solution dump


def write_solution(sol: Solution, path, mesh_ref: str) -> None:
    lam = sol.lam if sol.lam is not None else float("nan")
    c = sol.c if sol.c is not None else float("nan")
    lines = [str(mesh_ref)] + [f"{x:.17g}" for x in sol.u]
    lines.append(f"{lam:.17g} {c:.17g} {sol.T:.17g} {sol.E:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_solution(path) -> dict:
    with open(path) as fh:
        rows = [ln.rstrip("\n") for ln in fh if ln.strip()]
    lam, c, T, E = (float(x) for x in rows[-1].split())
    return {"mesh": rows[0], "u": np.array([float(x) for x in rows[1:-1]]),
            "lambda": lam, "c": c, "T": T, "E": E}
