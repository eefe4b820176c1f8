import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from torsion_lab import closed_form as cf
from torsion_lab.errors import DomainError, PreconditionError
from torsion_lab.geometry import Polygon, build_mesh, RegularPolygon
from torsion_lab.fem import solve_neumann_mean_zero

PI = math.pi
ONE = cf.RadialProfile.constant()
R2 = cf.RadialProfile.power(2.0)


# --- polygons -------------------------------------------------------------

def test_triangle_and_square_energy():
    assert cf.regular_polygon_energy(3).E == pytest.approx(PI**2 / (12 * math.sqrt(3)), rel=1e-12)
    assert cf.regular_polygon_energy(4).E == pytest.approx(PI**2 / 24, rel=1e-12)
    assert cf.regular_polygon_energy(3).E == pytest.approx(0.474851563147, rel=1e-11)
    assert cf.regular_polygon_energy(4).E == pytest.approx(0.411233516712, rel=1e-11)


def test_hexagon_energy():
    assert cf.regular_polygon_energy(6).E == pytest.approx(0.395709636, rel=1e-8)


def test_energy_monotone_to_disk_limit():
    E = [cf.regular_polygon_energy(N).E for N in range(3, 201)]
    assert all(a > b for a, b in zip(E, E[1:]))
    assert all(e > PI / 8 for e in E)
    assert abs(E[-1] - PI / 8) < 1e-8


def test_energy_quartic_decay():
    # Taylor expansion of the closed form: bracket 3 + (4/15)(pi/N)^4
    N = 100
    coeff = (cf.regular_polygon_energy(N).E - PI / 8) * N**4
    assert coeff == pytest.approx(PI / 24 * 4 / 15 * PI**4, rel=1e-2)


@given(N=st.integers(3, 50), lam=st.floats(0.2, 5.0))
def test_energy_scales_with_fourth_power(N, lam):
    E1 = cf.regular_polygon_energy(N, PI).E
    El = cf.regular_polygon_energy(N, lam**2 * PI).E
    assert El == pytest.approx(lam**4 * E1, rel=1e-12)


def test_polygon_needs_three_sides():
    with pytest.raises(DomainError):
        cf.regular_polygon_energy(2)


@pytest.mark.parametrize("N", range(3, 31))
def test_tangential_matches_regular(N):
    v = RegularPolygon(N).vertices()
    assert cf.tangential_polygon_energy(v).E == pytest.approx(cf.regular_polygon_energy(N).E, rel=1e-12)


def test_square_tangential_cross_check():
    v = RegularPolygon(4).vertices()
    assert cf.tangential_polygon_energy(v).E == pytest.approx(PI**2 / 24, rel=1e-13)


def _tangential_vertices(normal_angles):
    phi = np.asarray(normal_angles, dtype=float)
    nxt = np.roll(phi, -1)
    pts = np.column_stack([np.cos(phi) + np.cos(nxt), np.sin(phi) + np.sin(nxt)])
    return pts / (1.0 + np.cos(nxt - phi))[:, None]


def test_right_kite_against_fem():
    deg = np.deg2rad([330.0, 60.0, 120.0, 210.0])
    v = _tangential_vertices(deg)
    E = cf.tangential_polygon_energy(v).E
    # edgewise (1/16) int |x|^2 ds with unit inradius
    q = np.roll(v, -1, axis=0)
    L = np.linalg.norm(q - v, axis=1)
    moment = (L * ((v * v).sum(1) + (v * q).sum(1) + (q * q).sum(1)) / 3).sum()
    assert E == pytest.approx(moment / 16, rel=1e-14)
    sol = solve_neumann_mean_zero(build_mesh(Polygon(tuple(map(tuple, v))), 6))
    assert sol.E == pytest.approx(E, rel=1e-3)


def test_non_tangential_names_edge():
    rect = [(-1, -2), (1, -2), (1, 2), (-1, 2)]
    with pytest.raises(PreconditionError, match="edge"):
        cf.tangential_polygon_energy(rect)


def test_square_torsion_values():
    v = RegularPolygon(4).vertices()
    s = math.sqrt(PI)
    rho = s / 2
    P = 4 * s
    moment = 4 * (rho**2 * s + s**3 / 12)
    center = cf.tangential_torsion_eval([0.0, 0.0], v)
    assert center == pytest.approx(moment / (4 * P), rel=1e-13)
    assert center > 0
    corner = cf.tangential_torsion_eval(v[1], v)
    # |corner|^2 = s^2/2 for the square of side s
    assert corner == pytest.approx(moment / (4 * P) - s * s / 8, rel=1e-12)
    assert corner == pytest.approx(-PI / 24, rel=1e-12)


def test_tangential_boundary_mean_zero():
    v = _tangential_vertices(np.deg2rad([330.0, 60.0, 120.0, 210.0]))
    x, w = np.polynomial.legendre.leggauss(3)
    total = 0.0
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        L = np.linalg.norm(b - a)
        for xi, wi in zip(x, w):
            total += 0.5 * L * wi * cf.tangential_torsion_eval(a + 0.5 * (xi + 1) * (b - a), v)
    assert abs(total) < 1e-13


def test_tangential_eval_outside():
    with pytest.raises(DomainError):
        cf.tangential_torsion_eval([5.0, 0.0], RegularPolygon(4).vertices())


# --- balls ----------------------------------------------------------------

def test_ball_values():
    assert cf.ball_torsion(2, 1.0).T == pytest.approx(-PI / 16, rel=1e-14)
    assert cf.ball_torsion(3, 1.0).T == pytest.approx(-2 * PI / 45, rel=1e-14)
    assert cf.ball_torsion(2, 1.0).T == pytest.approx(-0.196349540849, rel=1e-11)


def test_ball_power_source_flux():
    b = cf.ball_torsion(2, 1.0, R2)
    assert b.c == pytest.approx(-0.25, rel=1e-14)
    assert float(b.u_r(1.0)) == pytest.approx(b.c, rel=1e-14)
    assert float(b.u(1.0)) == 0.0


def test_generic_profile_matches_power():
    g = cf.RadialProfile.generic(lambda r: r**2)
    bg, bp = cf.ball_torsion(2, 1.3, g), cf.ball_torsion(2, 1.3, R2)
    assert bg.c == pytest.approx(bp.c, rel=1e-11)
    assert bg.T == pytest.approx(bp.T, rel=1e-8)
    assert float(bg.u(0.4)) == pytest.approx(float(bp.u(0.4)), rel=1e-8)


@given(n=st.integers(2, 5), R=st.floats(0.3, 3.0), s=st.floats(0.0, 3.0))
def test_ball_solution_is_consistent(n, R, s):
    f = cf.RadialProfile.power(s)
    b = cf.ball_torsion(n, R, f)
    sphere = n * cf.unit_ball_volume(n)
    fu, _ = integrate.quad(lambda r: float(f(r)) * float(b.u(r)) * r ** (n - 1), 0, R, epsrel=1e-12)
    # r**s with fractional s is not smooth at 0, which limits quad's accuracy
    assert b.T == pytest.approx(-0.5 * sphere * fu, rel=1e-7)
    assert float(b.u_r(R)) == pytest.approx(b.c, rel=1e-12)


def test_ball_rejects_nonpositive_source():
    with pytest.raises(DomainError):
        cf.ball_torsion(2, 1.0, cf.RadialProfile.generic(lambda r: r - 0.5))


# --- annuli ---------------------------------------------------------------

def test_annulus_coefficients_b2():
    a = cf.annulus_solution(2, 2.0)
    assert a.a1 == -0.25
    assert a.a2 == pytest.approx(1.0, rel=1e-14)
    assert a.a3 == pytest.approx((9 / 4 - 2 * math.log(2)) / 3, rel=1e-14)
    assert a.a3 == pytest.approx(0.287902, abs=1e-6)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("b", [1.1, 2.0, 4.0])
def test_annulus_conditions(n, b):
    a = cf.annulus_solution(n, b)
    assert a.a1 == -1 / (2 * n)
    c = -a.volume / a.perimeter
    assert float(a.u_r(b)) == pytest.approx(c, rel=1e-12)
    assert -float(a.u_r(1.0)) == pytest.approx(c, rel=1e-12)
    assert float(a.u(b)) / float(a.u(1.0)) == pytest.approx(-1 / b ** (n - 1), rel=1e-10)
    sphere = n * cf.unit_ball_volume(n)
    E, _ = integrate.quad(lambda r: float(a.u(r)) * r ** (n - 1), 1.0, b, epsrel=1e-13)
    assert a.energy == pytest.approx(sphere * E, rel=1e-10, abs=1e-14)


def test_thin_annulus_energy_vanishes():
    assert abs(cf.annulus_solution(2, 1.0 + 1e-4).energy) < 1e-10


def test_annulus_gap_values():
    g = cf.annulus_disk_gap(2.0)
    assert g.integral_disk == pytest.approx(9 * PI / 8, rel=1e-14)
    assert cf.h_annulus(2.0) == pytest.approx(9 - 8 * math.log(2), rel=1e-14)
    assert g.gap == pytest.approx(PI / 4 * (9 - 8 * math.log(2)), rel=1e-14)
    assert g.gap == pytest.approx(2.713407, abs=1e-5)
    assert g.integral_annulus == pytest.approx(cf.annulus_solution(2, 2.0).energy, rel=1e-12)
    assert cf.h_annulus(1.0) == 0.0 and cf.annulus_disk_gap(1.0).gap == 0.0
    h15 = 6.75 - 2.25 - 4.5 * math.log(1.5) - 3 + 1
    assert cf.h_annulus(1.5) == pytest.approx(h15, rel=1e-14)
    assert cf.h_annulus(1.5) == pytest.approx(0.675407, abs=1e-6)
    assert cf.annulus_disk_gap(1.5).gap == pytest.approx(PI / 4 * h15, rel=1e-14)


def test_annulus_rejects_b():
    with pytest.raises(DomainError):
        cf.annulus_solution(2, 1.0)
    with pytest.raises(DomainError):
        cf.annulus_stationarity_gap(2, 0.9)


def test_stationarity_gap_values():
    assert cf.annulus_stationarity_gap(2, 2.0) == pytest.approx(2.5, rel=1e-14)
    assert cf.annulus_stationarity_gap(3, 2.0) == pytest.approx(3.875, rel=1e-14)


@given(n=st.integers(2, 6), b=st.floats(1.001, 50.0))
def test_stationarity_gap_positive(n, b):
    assert cf.annulus_stationarity_gap(n, b) > 0


# --- boxes ----------------------------------------------------------------

@given(a=st.lists(st.floats(0.1, 5.0), min_size=1, max_size=6))
def test_elementary_symmetric(a):
    sig = cf.elementary_symmetric(a)
    for k in range(len(a) + 1):
        brute = sum(math.prod(c) for c in itertools.combinations(a, k))
        assert sig[k] == pytest.approx(brute, rel=1e-12)


def test_square_box_equals_p4():
    h = math.sqrt(PI) / 2
    assert cf.box_solution((h, h)).E == pytest.approx(PI**2 / 24, rel=1e-12)


def test_box_1_2():
    b = cf.box_solution((1.0, 2.0))
    assert b.kappa == pytest.approx(1 / 3, rel=1e-15)
    assert b.c == pytest.approx(-2 / 3, rel=1e-15)


def _face_points(a, i, sign, t):
    # points on the face x_i = sign * a_i parameterised by t in [-1, 1]^(n-1)
    x = np.empty(len(a))
    others = [j for j in range(len(a)) if j != i]
    for j, tj in zip(others, t):
        x[j] = tj * a[j]
    x[i] = sign * a[i]
    return x


widths = st.lists(st.floats(0.2, 4.0), min_size=2, max_size=4).map(sorted)


@given(a=widths)
def test_box_face_flux_constant(a):
    b = cf.box_solution(a)
    n = len(a)
    assert b.kappa * sum(2.0 / x for x in a) == pytest.approx(1.0, rel=1e-13)  # -Laplace u = 1
    for i in range(n):
        for sign in (-1, 1):
            for t in itertools.product((-1.0, 0.0, 1.0), repeat=n - 1):
                x = _face_points(a, i, sign, t)
                normal_derivative = sign * b.grad(x)[0, i]
                assert normal_derivative == pytest.approx(b.c, rel=1e-13)


@given(a=st.lists(st.floats(0.2, 4.0), min_size=2, max_size=3).map(sorted))
def test_box_boundary_mean_and_energy(a):
    b = cf.box_solution(a)
    n = len(a)
    xg, wg = np.polynomial.legendre.leggauss(3)
    total = 0.0
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for sign in (-1, 1):
            for idx in itertools.product(range(3), repeat=n - 1):
                x = _face_points(a, i, sign, [xg[k] for k in idx])
                w = math.prod(wg[k] * a[j] for k, j in zip(idx, others))
                total += w * float(b.u(x)[0])
    assert abs(total) <= 1e-12 * b.perimeter * abs(b.mean_zero_offset)
    E = 0.0
    for idx in itertools.product(range(3), repeat=n):
        x = np.array([xg[k] * a[j] for j, k in enumerate(idx)])
        E += math.prod(wg[k] * a[j] for j, k in enumerate(idx)) * float(b.u(x)[0])
    assert b.E == pytest.approx(E, rel=1e-12)


def test_thin_rectangle_energy_vanishes():
    Es = []
    for aspect in (1, 10, 100, 10000):
        a1 = math.sqrt(PI / 4 / aspect)
        Es.append(cf.box_solution((a1, aspect * a1)).E)
    assert all(x > y for x, y in zip(Es, Es[1:]))
    assert Es[-1] < 1e-3


def test_box_oscillation_examples():
    o = cf.box_oscillations((1.0, 2.0))
    assert o.osc_boundary == pytest.approx(2 / 3, rel=1e-15)
    assert o.volume / 16 == 0.5
    assert o.bound_holds is True
    eps = 0.1
    o3 = cf.box_oscillations((eps**2, 1 / eps, 1 / eps))
    assert o3.osc_closure == pytest.approx(20.01 / 200.4, rel=1e-12)
    assert o3.bound_holds is None
    assert cf.box_oscillations((0.7, 0.7)).osc_boundary == pytest.approx(0.7**2 / 4, rel=1e-14)


@given(a=widths)
def test_box_oscillation_by_sampling(a):
    b = cf.box_solution(a)
    n = len(a)
    vals = []
    for i in range(n):
        for t in itertools.product(np.linspace(-1, 1, 5), repeat=n - 1):
            vals.append(float(b.u(_face_points(a, i, 1, t))[0]))
    o = cf.box_oscillations(a)
    assert max(vals) - min(vals) == pytest.approx(o.osc_boundary, rel=1e-12)
    grid = np.array(list(itertools.product(*[np.linspace(-x, x, 5) for x in a])))
    u = b.u(grid)
    assert u.max() - u.min() == pytest.approx(o.osc_closure, rel=1e-12)


# --- ball stability -------------------------------------------------------

def test_mode_values():
    assert cf.mode_second_variation(2, 1.0, 0.0, ONE, 1) == pytest.approx(0.0, abs=1e-15)
    assert cf.mode_second_variation(2, 1.0, 0.0, ONE, 2) == pytest.approx(PI / 8, rel=1e-14)
    assert cf.mode_second_variation(2, 1.0, 0.0, R2, 1) == pytest.approx(-3 * PI / 8, rel=1e-14)


def test_mode_rejects_degree():
    with pytest.raises(DomainError):
        cf.mode_second_variation(2, 1.0, 0.0, ONE, 0)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("s", [0.0, 1.0, 2.0])
@pytest.mark.parametrize("beta", [0.0, 0.5, 2.0])
def test_mode_sign_matches_condition(n, s, beta):
    f = cf.RadialProfile.power(s)
    d2 = [cf.mode_second_variation(n, 1.0, beta, f, l) for l in range(1, 9)]
    scale = max(abs(x) for x in d2)
    assert (min(d2) >= -1e-12 * scale) == cf.stability_condition(n, 1.0, beta, f)
    assert min(d2) == d2[0]


def test_stability_condition_examples():
    for n in (2, 3, 4):
        for beta in (0.0, 0.5, 2.0, 10.0):
            assert cf.stability_condition(n, 1.0, beta, ONE)
    assert not cf.stability_condition(2, 1.0, 0.0, R2)
    assert not cf.stability_condition(2, 1.0, 3.0, R2)


def test_kappa1():
    assert cf.kappa1_from_T(-PI / 16) == pytest.approx(8 / PI, rel=1e-15)
    assert cf.kappa1_from_T(-PI**2 / 48) == pytest.approx(24 / PI**2, rel=1e-15)
    assert cf.kappa1_from_T(-1e-9) > 1e8
    with pytest.raises(DomainError):
        cf.kappa1_from_T(0.0)
