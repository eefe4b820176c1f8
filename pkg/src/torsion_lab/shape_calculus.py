"""Finite-difference shape calculus and parameter sweeps.

Second variations are taken of the dilation-invariant energy
``g = T * (pi/|Omega|)**(2 + s)`` for sources ``f = r**s``; at a stationary
shape its second derivative along a zero-mean normal mode equals the
volume-constrained second variation of ``T``.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import closed_form as cf
from .errors import DomainError, ValidationError
from .fem import solve_neumann_mean_zero
from .geometry import (MAX_LEVEL, Annulus, Disk, DomainSpec, PerturbedDisk, RegularPolygon, build_mesh,
                       level_for_h, mesh_measures)
from .report import SweepReport

log = logging.getLogger(__name__)

DEFAULT_LEVEL = 5
RICHARDSON_TOL = 0.2


def worker_count() -> int:
    """Thread cap from ``TORSION_LAB_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("TORSION_LAB_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"TORSION_LAB_THREADS must be an integer, got {raw!r}") from None
    return n if n > 0 else (os.cpu_count() or 1)


def parallel_map(fn: Callable, items: Iterable) -> list:
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def normalized_energy(spec: DomainSpec, s: float = 0.0, level: int = DEFAULT_LEVEL,
                      solver: str = "direct") -> float:
    """Dilation-invariant energy of ``spec`` for the source ``f = r**s``.

    The discrete area is used, which makes the invariance exact on meshes
    that are dilations of each other.
    """
    if s < 0:
        raise DomainError(f"source exponent must be >= 0, got {s}")
    mesh = build_mesh(spec, level)
    sol = solve_neumann_mean_zero(mesh, cf.RadialProfile.power(s), solver=solver)
    area = mesh_measures(mesh).area
    return sol.T * (math.pi / area) ** (2 + s)


@dataclass(frozen=True)
class PerturbationPath:
    """Family ``r = R + t cos(k theta)`` sampled on a symmetric amplitude grid."""

    R: float = 1.0
    k: int = 1
    s: float = 0.0
    amplitudes: Optional[tuple] = None

    def grid(self) -> tuple:
        if self.amplitudes is None:
            t0 = 0.02 * self.R
            return (-t0, -t0 / 2, 0.0, t0 / 2, t0)
        return tuple(sorted(float(t) for t in self.amplitudes))

    def validate(self) -> "PerturbationPath":
        g = self.grid()
        if len(g) < 5:
            raise ValidationError("amplitude grid needs at least 5 points")
        if not np.allclose(g, [-t for t in reversed(g)], rtol=0, atol=1e-15):
            raise ValidationError("amplitude grid must be symmetric about 0")
        if 0.0 not in g:
            raise ValidationError("amplitude grid must contain 0")
        if max(abs(t) for t in g) >= self.R / 2:
            raise ValidationError("amplitudes must stay below R/2")
        t0 = max(g)
        if not any(abs(t - t0 / 2) < 1e-15 for t in g):
            raise ValidationError("amplitude grid must contain t0/2 for Richardson extrapolation")
        if int(self.k) != self.k or self.k < 1:
            raise ValidationError("mode k must be an integer >= 1")
        if self.s < 0:
            raise DomainError("source exponent must be >= 0")
        return self


@dataclass(frozen=True)
class FDResult:
    estimate: float
    oracle: float
    gap: float
    rel_gap: float
    coarse: float
    fine: float
    converged: bool
    diagnostic: str = ""
    g: dict = field(default_factory=dict, repr=False)


def fd_second_variation(path: PerturbationPath, level: int = DEFAULT_LEVEL, beta: float = 0.0,
                        solver: str = "direct") -> FDResult:
    """Central-difference ``g''(0)`` along ``path`` with one Richardson step.

    One disk mesh is deformed by radial blending for every amplitude, so the
    discretisation error is nearly common to all samples and cancels in the
    differences.  The result is compared with the closed-form mode value,
    rescaled to ``g`` (the two agree at ``R = 1``).
    """
    if beta != 0:
        raise DomainError("finite-difference second variations are only available for beta = 0")
    path.validate()
    grid = path.grid()

    def sample(t):
        spec = Disk(path.R) if t == 0 else PerturbedDisk(path.R, path.k, t)
        return normalized_energy(spec, path.s, level, solver)

    values = dict(zip(grid, parallel_map(sample, grid)))
    t0 = max(grid)
    th = min(t for t in grid if abs(t - t0 / 2) < 1e-15)

    def second_diff(t):
        return (values[t] - 2 * values[0.0] + values[-t]) / t**2

    coarse, fine = second_diff(t0), second_diff(th)
    est = (4 * fine - coarse) / 3
    # the mode formula differentiates T itself; g carries the factor (pi/|B_R|)**(2+s)
    oracle = (cf.mode_second_variation(2, path.R, 0.0, cf.RadialProfile.power(path.s), path.k)
              * path.R ** (-(4 + 2 * path.s)))
    gap = est - oracle
    rel = abs(gap) / abs(oracle) if oracle else abs(gap)
    spread = abs(est - fine)
    ok = spread <= RICHARDSON_TOL * max(abs(est), 1e-2)
    diag = ""
    if not ok:
        diag = (f"Richardson disagreement {spread:.3e} exceeds {RICHARDSON_TOL:.0%} of |g''| "
                f"(coarse {coarse:.6g}, fine {fine:.6g})")
        log.warning("k=%s s=%s: %s", path.k, path.s, diag)
    return FDResult(est, oracle, gap, rel, coarse, fine, ok, diag, values)


# ---------------------------------------------------------------------------
# sweeps


def _order(errs, hs):
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(hs[i] / hs[i + 1])
              for i in range(len(errs) - 1) if errs[i] > 0 and errs[i + 1] > 0]
    return min(orders) if orders else float("nan")


def polygon_sweep(N_range: Sequence[int], levels: Optional[Sequence[int]] = None, h_target: float = 0.03,
                  n_levels: int = 3, solver: str = "direct", max_level: int = MAX_LEVEL) -> SweepReport:
    """Closed-form and FEM energies of area-pi regular polygons.

    Without explicit ``levels`` each polygon is solved on the ``n_levels``
    nested meshes ending at the first one with ``h_max <= h_target``.
    ``order`` is the smallest pairwise convergence order of ``|T_fem - T|``.
    """
    Ns = [int(N) for N in N_range]
    if not Ns or min(Ns) < 3 or max(Ns) > 64:
        raise DomainError("polygon sweep needs 3 <= N <= 64")
    if levels is not None and len(levels) < 2:
        raise ValidationError("polygon sweep needs at least two refinement levels")
    rep = SweepReport("polygon-sweep", ["N", "E_closed", "T_closed", "T_fem", "rel_err", "h_max", "order", "level"],
                      key="N", provenance={"h_target": h_target, "solver": solver})

    def run(N):
        spec = RegularPolygon(N, math.pi)
        if levels is None:
            top = level_for_h(spec, h_target, max_level)
            lv = list(range(max(0, top - n_levels + 1), top + 1))
        else:
            lv = sorted(int(x) for x in levels)
        exact = cf.regular_polygon_energy(N, math.pi)
        Ts, hs = [], []
        for L in lv:
            mesh = build_mesh(spec, L, max_level)
            Ts.append(solve_neumann_mean_zero(mesh, solver=solver).T)
            hs.append(mesh_measures(mesh).h_max)
        errs = [abs(T - exact.T) for T in Ts]
        return dict(N=N, E_closed=exact.E, T_closed=exact.T, T_fem=Ts[-1], rel_err=errs[-1] / abs(exact.T),
                    h_max=hs[-1], order=_order(errs, hs), level=lv[-1])

    for row in parallel_map(run, Ns):
        rep.add(**row)
    T_closed = rep.column("T_closed")
    T_fem = rep.column("T_fem")
    rep.provenance["closed_form_strictly_increasing"] = all(a < b for a, b in zip(T_closed, T_closed[1:]))
    rep.provenance["fem_strictly_increasing"] = all(a < b for a, b in zip(T_fem, T_fem[1:]))
    rep.provenance["all_below_disk"] = all(T < -math.pi / 16 for T in T_closed)
    return rep


def annulus_compare(b_list: Sequence[float], h_target: float = 0.05, solver: str = "direct",
                    max_level: int = MAX_LEVEL) -> SweepReport:
    """FEM versus closed-form ``int u`` gap between a disk and an equal-area annulus."""
    bs = [float(b) for b in b_list]
    if any(not b > 1 for b in bs):
        raise DomainError("annulus comparison needs every b > 1")
    rep = SweepReport("annulus-compare", ["b", "gap_closed", "gap_fem", "rel_err", "level_annulus", "level_disk"],
                      key="b", provenance={"h_target": h_target, "solver": solver})

    def run(b):
        ann, disk = Annulus(1.0, b), Disk(math.sqrt(b * b - 1))
        la, ld = level_for_h(ann, h_target, max_level), level_for_h(disk, h_target, max_level)
        Ea = solve_neumann_mean_zero(build_mesh(ann, la), solver=solver).E
        Ed = solve_neumann_mean_zero(build_mesh(disk, ld), solver=solver).E
        closed = cf.annulus_disk_gap(b).gap
        fem = Ed - Ea
        return dict(b=b, gap_closed=closed, gap_fem=fem, rel_err=abs(fem - closed) / abs(closed),
                    level_annulus=la, level_disk=ld)

    for row in parallel_map(run, bs):
        rep.add(**row)
    return rep


def _fit_exponent(eps, vals) -> float:
    x, y = np.log(eps), np.log(vals)
    return float(np.polyfit(x, y, 1)[0])


def box_family(n: int, eps: float) -> list:
    return [eps ** (n - 1)] + [1.0 / eps] * (n - 1)


def box_osc_sweep(n: int, eps_list: Sequence[float]) -> SweepReport:
    """Box oscillations along ``a_1 = eps**(n-1)``, ``a_i = 1/eps``.

    ``exponent_closure``/``exponent_boundary`` are least-squares slopes of
    ``log osc`` against ``log eps`` over the whole list.
    """
    if n < 2:
        raise DomainError("box sweep needs n >= 2")
    eps = [float(e) for e in eps_list]
    if any(not 0 < e < 1 for e in eps):
        raise DomainError("eps must lie in (0, 1)")
    rep = SweepReport("box-osc", ["eps", "osc_closure", "osc_boundary", "osc_boundary_over_volume",
                                  "exponent_closure", "exponent_boundary", "bound_holds"],
                      key="eps", provenance={"n": n})
    oscs = [cf.box_oscillations(box_family(n, e)) for e in eps]
    if len(eps) >= 2:
        ec = _fit_exponent(eps, [o.osc_closure for o in oscs])
        eb = _fit_exponent(eps, [o.osc_boundary for o in oscs])
    else:
        ec = eb = float("nan")
    for e, o in zip(eps, oscs):
        rep.add(eps=e, osc_closure=o.osc_closure, osc_boundary=o.osc_boundary,
                osc_boundary_over_volume=o.osc_boundary / o.volume, exponent_closure=ec,
                exponent_boundary=eb, bound_holds=o.bound_holds)
    return rep


def rectangle_osc_sweep(aspects: Sequence[float], area: float = math.pi) -> SweepReport:
    """Planar boxes of fixed area and aspect ratio ``a2/a1``: checks ``osc >= |Omega|/16``."""
    rep = SweepReport("rectangle-osc", ["aspect", "a1", "a2", "osc_boundary", "osc_boundary_over_volume",
                                        "bound_holds"], key="aspect", provenance={"area": area})
    for q in aspects:
        q = float(q)
        if not q >= 1:
            raise DomainError("aspect ratio must be >= 1")
        a1 = math.sqrt(area / (4 * q))
        o = cf.box_oscillations([a1, q * a1])
        rep.add(aspect=q, a1=a1, a2=q * a1, osc_boundary=o.osc_boundary,
                osc_boundary_over_volume=o.osc_boundary / o.volume, bound_holds=o.bound_holds)
    return rep


def serrin_gap_report(n: int, eps_list: Sequence[float]) -> SweepReport:
    """Boundary oscillation against box distortion (circumradius/inradius).

    The oscillation vanishes while the distortion blows up, so near-constant
    boundary values do not force a near-ball shape.
    """
    if n == 2:
        raise DomainError("n = 2 is the open case: no box family with vanishing oscillation is known in the plane")
    if n < 3:
        raise DomainError("serrin gap report needs n >= 3")
    rep = SweepReport("serrin-gap", ["eps", "osc_boundary", "distortion"], key="eps", provenance={"n": n})
    for e in eps_list:
        e = float(e)
        if not 0 < e < 1:
            raise DomainError("eps must lie in (0, 1)")
        a = box_family(n, e)
        o = cf.box_oscillations(a)
        rep.add(eps=e, osc_boundary=o.osc_boundary, distortion=math.sqrt(sum(x * x for x in a)) / a[0])
    return rep
