"""Exact evaluators for the boundary-mean-zero torsion problem.

Everything here is double-precision closed form except the ball average of a
generic radial source, which falls back to adaptive quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, PreconditionError, ValidationError
from .geometry import tangential_center

QUAD_RTOL = 1e-12
TANGENTIAL_TOL = 1e-12


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


# ---------------------------------------------------------------------------
# radial sources


@dataclass(frozen=True)
class RadialProfile:
    """Radial source ``f(r)``.

    ``kind`` is ``"constant"`` (``f = scale``), ``"power"``
    (``f = scale * r**s``) or ``"generic"`` (``func`` evaluated directly).
    """

    kind: str = "constant"
    scale: float = 1.0
    s: float = 0.0
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in ("constant", "power", "generic"):
            raise ValidationError(f"unknown profile kind {self.kind!r}")
        if self.kind == "generic" and self.func is None:
            raise ValidationError("generic profile needs an evaluator")
        if self.kind == "power" and self.s < 0:
            raise DomainError("power profile exponent must be >= 0")
        if self.kind != "generic" and not self.scale > 0:
            raise DomainError("profile scale must be positive")

    @classmethod
    def constant(cls, value: float = 1.0) -> "RadialProfile":
        return cls("constant", scale=float(value))

    @classmethod
    def power(cls, s: float, scale: float = 1.0) -> "RadialProfile":
        if s == 0:
            return cls.constant(scale)
        return cls("power", scale=float(scale), s=float(s))

    @classmethod
    def generic(cls, func) -> "RadialProfile":
        return cls("generic", func=func)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.full(r.shape, self.scale)
        if self.kind == "power":
            return self.scale * r**self.s
        return np.asarray(self.func(r), dtype=float) * np.ones(r.shape)

    def at_points(self, pts: np.ndarray) -> np.ndarray:
        return self(np.hypot(pts[..., 0], pts[..., 1]))

    def boundary_value(self, R: float) -> float:
        return float(self(R))

    def ball_average(self, n: int, R: float) -> float:
        """Mean of ``f`` over the ball of radius ``R`` in dimension ``n``."""
        if self.kind == "constant":
            return self.scale
        if self.kind == "power":
            return self.scale * n / (n + self.s) * R**self.s
        val, _ = integrate.quad(lambda r: r ** (n - 1) * float(self(r)), 0.0, R,
                                epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
        return n * val / R**n

    def check_positive(self, R: float, samples: int = 257) -> None:
        # the centre is skipped: r**s vanishes there and only there
        r = np.linspace(0.0, R, samples)[1:]
        if np.any(self(r) <= 0):
            raise DomainError("source profile must be positive on (0, R]")


# ---------------------------------------------------------------------------
# polygons


@dataclass(frozen=True)
class PolygonEnergy:
    E: float
    T: float


def regular_polygon_energy(N: int, area: float = math.pi) -> PolygonEnergy:
    """Energy ``E = int u`` of the regular ``N``-gon of given area.

    Uses ``E = area**2 (3 + tan^2(pi/N)) / (24 N tan(pi/N))``, which reduces
    to the unit-area-pi formula and carries the 2D ``lambda**4`` scaling.
    """
    if int(N) != N or N < 3:
        raise DomainError(f"regular polygon needs N >= 3, got {N}")
    if not area > 0:
        raise DomainError("area must be positive")
    tn = math.tan(math.pi / N)
    E = area**2 * (3.0 + tn * tn) / (24.0 * N * tn)
    return PolygonEnergy(E, -0.5 * E)


def _tangential_frame(vertices):
    pts = np.asarray(vertices, dtype=float)
    center, rho, resid = tangential_center(pts)
    scale = max(1.0, float(np.abs(pts).max()))
    bad = np.flatnonzero(resid > TANGENTIAL_TOL * scale)
    if len(bad):
        e = int(bad[0])
        raise PreconditionError(
            f"polygon is not tangential: edge {e} ({pts[e].tolist()} -> "
            f"{pts[(e + 1) % len(pts)].tolist()}) misses the incircle by {resid[e]:.3e}")
    return pts - center, center, rho


def _boundary_moment(pts: np.ndarray) -> tuple:
    """Exact perimeter and ``int |x|^2 ds`` of a closed polygon."""
    q = np.roll(pts, -1, axis=0)
    L = np.linalg.norm(q - pts, axis=1)
    quad = (pts * pts).sum(1) + (pts * q).sum(1) + (q * q).sum(1)
    return float(L.sum()), float((L * quad).sum() / 3.0)


def tangential_polygon_energy(vertices) -> PolygonEnergy:
    """``E = (rho/16) int_{boundary} |x|^2 ds`` about the incircle centre."""
    pts, _, rho = _tangential_frame(vertices)
    _, moment = _boundary_moment(pts)
    E = rho * moment / 16.0
    return PolygonEnergy(E, -0.5 * E)


def tangential_torsion_eval(x, vertices) -> float:
    """Value of the mean-zero torsion function of a tangential polygon at ``x``."""
    pts, center, rho = _tangential_frame(vertices)
    y = np.asarray(x, dtype=float) - center
    q = np.roll(pts, -1, axis=0)
    d = q - pts
    nu = np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
    scale = max(1.0, rho)
    if np.any(nu @ y > rho + 1e-12 * scale):
        raise DomainError(f"point {list(np.asarray(x))} lies outside the polygon")
    per, moment = _boundary_moment(pts)
    return moment / (4.0 * per) - 0.25 * float(y @ y)


# ---------------------------------------------------------------------------
# balls


@dataclass(frozen=True)
class BallTorsion:
    n: int
    R: float
    f: RadialProfile
    T: float
    E: float
    c: float

    def u(self, r):
        """Radial solution, zero on the sphere."""
        r = np.asarray(r, dtype=float)
        f, n, R = self.f, self.n, self.R
        if f.kind in ("constant", "power"):
            s = f.s if f.kind == "power" else 0.0
            return f.scale * (R ** (s + 2) - r ** (s + 2)) / ((s + n) * (s + 2))
        return np.vectorize(lambda rr: _generic_u(f, n, R, rr))(r)

    def u_r(self, r):
        r = np.asarray(r, dtype=float)
        f, n = self.f, self.n
        if f.kind in ("constant", "power"):
            s = f.s if f.kind == "power" else 0.0
            return -f.scale * r ** (s + 1) / (s + n)
        return np.vectorize(lambda rr: -_inner(f, n, rr) / rr ** (n - 1) if rr > 0 else 0.0)(r)


def _inner(f, n, t):
    val, _ = integrate.quad(lambda s: float(f(s)) * s ** (n - 1), 0.0, t, epsabs=0.0, epsrel=QUAD_RTOL)
    return val


def _generic_u(f, n, R, r):
    val, _ = integrate.quad(lambda t: _inner(f, n, t) / t ** (n - 1) if t > 0 else 0.0, r, R,
                            epsabs=1e-15, epsrel=1e-11)
    return val


def ball_torsion(n: int, R: float, f: Optional[RadialProfile] = None) -> BallTorsion:
    """Mean-zero torsion solution of the ball ``B_R`` in dimension ``n``.

    ``T = -(1/2) int f u`` and ``E = int u``; they coincide up to the factor
    ``-2`` only for constant sources.
    """
    if n < 2 or int(n) != n:
        raise DomainError("dimension must be an integer >= 2")
    if not R > 0:
        raise DomainError("radius must be positive")
    f = f or RadialProfile.constant()
    f.check_positive(R)
    w = unit_ball_volume(n)
    sphere = n * w
    c = -R / n * f.ball_average(n, R)
    if f.kind in ("constant", "power"):
        s = f.s if f.kind == "power" else 0.0
        a = f.scale
        fu = a * a * R ** (2 * s + n + 2) / ((s + n) ** 2 * (2 * s + n + 2))
        E = a * w * R ** (s + n + 2) / ((s + n) * (s + n + 2))
        return BallTorsion(n, R, f, -0.5 * sphere * fu, E, c)
    tmp = BallTorsion(n, R, f, 0.0, 0.0, c)
    fu, _ = integrate.quad(lambda r: float(f(r)) * float(tmp.u(r)) * r ** (n - 1), 0.0, R, epsrel=1e-10)
    E, _ = integrate.quad(lambda r: float(tmp.u(r)) * r ** (n - 1), 0.0, R, epsrel=1e-10)
    return BallTorsion(n, R, f, -0.5 * sphere * fu, sphere * E, c)


# ---------------------------------------------------------------------------
# annuli


@dataclass(frozen=True)
class AnnulusSolution:
    """Coefficients of ``u = a1 r^2 + a2 phi(r) + a3`` on ``1 < |x| < b``.

    ``phi`` is ``log r`` in the plane and ``r**(2-n)`` otherwise.
    """

    n: int
    b: float
    a1: float
    a2: float
    a3: float

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        return np.log(r) if self.n == 2 else r ** (2 - self.n)

    def dphi(self, r):
        r = np.asarray(r, dtype=float)
        return 1.0 / r if self.n == 2 else (2 - self.n) * r ** (1 - self.n)

    def u(self, r):
        r = np.asarray(r, dtype=float)
        return self.a1 * r**2 + self.a2 * self.phi(r) + self.a3

    def u_r(self, r):
        r = np.asarray(r, dtype=float)
        return 2 * self.a1 * r + self.a2 * self.dphi(r)

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.n) * (self.b**self.n - 1)

    @property
    def perimeter(self) -> float:
        return self.n * unit_ball_volume(self.n) * (self.b ** (self.n - 1) + 1)

    @property
    def energy(self) -> float:
        """``int u dx`` over the annulus."""
        n, b = self.n, self.b
        sphere = n * unit_ball_volume(n)
        quad_part = self.a1 * (b ** (n + 2) - 1) / (n + 2)
        if n == 2:
            phi_part = self.a2 * (b * b / 2 * math.log(b) - (b * b - 1) / 4)
        else:
            phi_part = self.a2 * (b * b - 1) / 2
        const_part = self.a3 * (b**n - 1) / n
        return sphere * (quad_part + phi_part + const_part)

    @property
    def T(self) -> float:
        return -0.5 * self.energy


def annulus_solution(n: int, b: float) -> AnnulusSolution:
    """Mean-zero Neumann torsion function of ``{1 < |x| < b}`` with ``f = 1``."""
    if n < 2 or int(n) != n:
        raise DomainError("dimension must be an integer >= 2")
    if not b > 1:
        raise DomainError(f"annulus needs b > 1, got {b}")
    a1 = -1.0 / (2 * n)
    w = unit_ball_volume(n)
    ratio = w * (b**n - 1) / (n * w * (b ** (n - 1) + 1))
    # inner-circle flux condition -u_r(1) = c = -|Omega|/P
    dphi1 = 1.0 if n == 2 else float(2 - n)
    a2 = (ratio + 1.0 / n) / dphi1
    phi1 = 0.0 if n == 2 else 1.0
    phib = math.log(b) if n == 2 else b ** (2 - n)
    bn1 = b ** (n - 1)
    a3 = -(a1 + a2 * phi1 + bn1 * (a1 * b * b + a2 * phib)) / (1.0 + bn1)
    return AnnulusSolution(n, b, a1, a2, a3)


def h_annulus(b: float) -> float:
    return 2 * b**3 - b**2 - 2 * b**2 * math.log(b) - 2 * b + 1


@dataclass(frozen=True)
class AnnulusDiskGap:
    b: float
    integral_disk: float
    integral_annulus: float
    gap: float
    annulus_above_disk: bool


def annulus_disk_gap(b: float) -> AnnulusDiskGap:
    """Compare ``int u`` on the planar annulus and on the disk of equal area."""
    if not b >= 1:
        raise DomainError(f"annulus needs b >= 1, got {b}")
    disk = math.pi / 8 * (b * b - 1) ** 2
    gap = math.pi / 4 * h_annulus(b)
    return AnnulusDiskGap(b, disk, disk - gap, gap, gap > 0)


def annulus_stationarity_gap(n: int, b: float) -> float:
    """Difference between the two values of ``u(b)/u(1)`` forced on an annulus.

    Stationarity forces one ratio, the boundary-mean constraint the other;
    a positive difference certifies that the annulus is not stationary.
    """
    if not b > 1:
        raise DomainError(f"annulus needs b > 1, got {b}")
    station = b * ((n - 1) * b**n + n * b ** (n - 1) + 1) / (b**n + n * b + n - 1)
    mean_zero = -1.0 / b ** (n - 1)
    return station - mean_zero


# ---------------------------------------------------------------------------
# boxes


def elementary_symmetric(a: Sequence[float]) -> list:
    """``[sigma_0, ..., sigma_n]`` of the entries of ``a``."""
    coeffs = [1.0]
    for x in a:
        coeffs = [1.0] + [coeffs[k] + x * coeffs[k - 1] for k in range(1, len(coeffs))] + [x * coeffs[-1]]
    return coeffs


@dataclass(frozen=True)
class BoxSolution:
    n: int
    half_widths: tuple
    kappa: float
    mean_zero_offset: float
    sigma1: float
    sigma_nm1: float
    sigma_n: float
    E: float

    @property
    def c(self) -> float:
        return -self.sigma_n / self.sigma_nm1

    @property
    def volume(self) -> float:
        return 2.0**self.n * self.sigma_n

    @property
    def perimeter(self) -> float:
        return 2.0**self.n * self.sigma_nm1

    @property
    def T(self) -> float:
        return -0.5 * self.E

    def u(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.asarray(self.half_widths)
        return -self.kappa * (x * x / a).sum(axis=1) + self.mean_zero_offset

    def grad(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return -2.0 * self.kappa * x / np.asarray(self.half_widths)


def _check_box(a):
    a = [float(x) for x in a]
    if len(a) < 2:
        raise DomainError("box needs n >= 2")
    if any(not x > 0 for x in a):
        raise DomainError("box half widths must be positive")
    if a != sorted(a):
        raise DomainError("box half widths must be sorted ascending")
    return a


def box_solution(half_widths: Sequence[float]) -> BoxSolution:
    """Mean-zero Neumann torsion function of ``prod(-a_i, a_i)``.

    The boundary mean of the quadratic part is integrated face by face: on the
    face ``x_i = +-a_i`` the mean of ``x_j^2`` is ``a_j^2/3``.
    """
    a = _check_box(half_widths)
    n = len(a)
    sig = elementary_symmetric(a)
    s1, snm1, sn = sig[1], sig[n - 1], sig[n]
    kappa = sn / (2.0 * snm1)
    total = sum(a) / 3.0
    bnd_int = 0.0
    for i in range(n):
        face = 2.0 ** (n - 1) * math.prod(a[:i] + a[i + 1:])
        face_mean = -kappa * (a[i] + (total - a[i] / 3.0))
        bnd_int += 2.0 * face * face_mean
    per = 2.0**n * snm1
    d = -bnd_int / per
    vol = 2.0**n * sn
    E = vol * (d - kappa * s1 / 3.0)
    return BoxSolution(n, tuple(a), kappa, d, s1, snm1, sn, E)


@dataclass(frozen=True)
class BoxOscillation:
    osc_closure: float
    osc_boundary: float
    volume: float
    bound_holds: Optional[bool]


def box_oscillations(half_widths: Sequence[float]) -> BoxOscillation:
    """Oscillation of the box solution over the closure and over the boundary.

    The maximum on the boundary sits at the centre of the face ``x_1 = a_1``,
    the minimum at a corner; ``bound_holds`` checks ``osc >= |Omega|/16`` in
    the plane and is ``None`` otherwise.
    """
    a = _check_box(half_widths)
    n = len(a)
    sig = elementary_symmetric(a)
    kappa = sig[n] / (2.0 * sig[n - 1])
    closure = sig[1] * sig[n] / (2.0 * sig[n - 1])
    bnd = kappa * (sig[1] - a[0])
    vol = 2.0**n * sig[n]
    bound = bnd >= vol / 16.0 * (1 - 1e-14) if n == 2 else None
    return BoxOscillation(closure, bnd, vol, bound)


# ---------------------------------------------------------------------------
# stability of balls


def boundary_factor(n: int, R: float, beta: float, f: RadialProfile) -> float:
    """``F(R) = f(R) - ((n - 1 - beta R)/n) * mean_{B_R} f``."""
    return f.boundary_value(R) - (n - 1 - beta * R) / n * f.ball_average(n, R)


def mode_norm_sq(n: int, R: float) -> float:
    """``int zeta^2`` over the sphere for a mode with mean square 1/2.

    In the plane this is ``zeta = cos(l theta)``, giving ``pi R``.
    """
    return 0.5 * n * unit_ball_volume(n) * R ** (n - 1)


def mode_second_variation(n: int, R: float, beta: float, f: RadialProfile, l: int) -> float:
    """Second shape derivative of the ball along a degree-``l`` normal mode.

    The first-order state correction is the harmonic ``v = A (r/R)^l zeta``
    with ``A = F R / (l + beta R)``; substituting it into the boundary
    integral ``int (v zeta + u_r zeta^2)(u_rr + c beta)`` gives
    ``|zeta|^2 F R (fbar/n - F/(l + beta R))``.
    """
    if int(l) != l or l < 1:
        raise DomainError(f"mode degree must be an integer >= 1, got {l}")
    if beta < 0:
        raise DomainError("beta must be non-negative")
    fbar = f.ball_average(n, R)
    F = boundary_factor(n, R, beta, f)
    return mode_norm_sq(n, R) * F * R * (fbar / n - F / (l + beta * R))


def stability_condition(n: int, R: float, beta: float, f: RadialProfile, tol: float = 1e-12) -> bool:
    """Whether ``(n-1-beta R)/n * fbar <= f(R) <= fbar`` (with slack ``tol``)."""
    fbar = f.ball_average(n, R)
    fR = f.boundary_value(R)
    slack = tol * max(1.0, abs(fbar))
    return (n - 1 - beta * R) / n * fbar <= fR + slack and fR <= fbar + slack


def kappa1_from_T(T: float) -> float:
    if not T < 0:
        raise DomainError(f"kappa_1 needs T < 0, got {T}")
    return -1.0 / (2.0 * T)
