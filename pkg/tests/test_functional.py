import numpy as np
import pytest
from numpy.testing import assert_allclose

from conelab import (ConeSpec, GraphDegenerateError, NormalField, RadialField,
                     UnresolvedTailError, area_cone, area_gradient, area_sigma,
                     build_cross_section,
                     first_variation, quadratic_form, second_variation_assemble,
                     second_variation_at, slicing_check)

from conftest import smooth_field


def test_zero_field_has_zero_area(sections):
    for cs in sections.values():
        assert abs(area_sigma(cs, NormalField.zero(cs))) < 1e-12


def test_area_quadratic_expansion_matches_operator(sections):
    """A(t z)/t^2 -> Q(z)/2 under Richardson in t, both routes independent.

    The cubic area term makes the raw error O(t); two Richardson levels on
    the three prescribed step sizes remove the t and t^2 contributions.
    """
    cs = sections["clifford"]
    L = second_variation_assemble(cs)
    z = smooth_field(cs, seed=3)
    q = quadratic_form(cs, L, z)
    ts = (1e-2, 5e-3, 2.5e-3)
    vals = [2.0 * area_sigma(cs, t * z) / t**2 for t in ts]
    lvl1 = [2.0 * vals[i + 1] - vals[i] for i in range(2)]
    lvl2 = (4.0 * lvl1[1] - lvl1[0]) / 3.0
    assert abs(vals[-1] - q) < 1e-3 * abs(q)
    assert abs(lvl1[-1] - q) < abs(vals[-1] - q)
    assert abs(lvl2 - q) < 1e-6 * abs(q)


def test_circle_tilt_area_is_higher_order(sections):
    """Kernel tilts of the great circle change length only to cubic order."""
    cs = sections["plane21"]
    coef = np.zeros((cs.n_scalar_modes, cs.codim))
    coef[1, 0] = 1.0  # cos mode, the tilt direction
    tilt = NormalField(cs, coef)
    for t in (0.05, 0.025, 0.0125):
        a = area_sigma(cs, t * tilt)
        assert abs(a) <= 1.0 * t**3


def test_graph_degenerate_rejected(sections):
    cs = sections["plane21"]
    coef = np.zeros((cs.n_scalar_modes, cs.codim))
    coef[0, 0] = 10.0
    with pytest.raises(GraphDegenerateError):
        area_sigma(cs, NormalField(cs, coef))


def test_area_gradient_matches_first_variation(sections):
    cs = sections["plane31"]
    u = smooth_field(cs, seed=1, scale=0.03)
    z = smooth_field(cs, seed=2)
    fv, err = first_variation(cs, u, z)
    analytic = float(np.sum(area_gradient(cs, u) * z.coef))
    assert abs(fv - analytic) < 1e-8 + 10 * err


def test_first_variation_at_zero(sections):
    for name, cs in sections.items():
        z = smooth_field(cs, seed=4)
        fv, _ = first_variation(cs, NormalField.zero(cs), z)
        assert abs(fv) <= 1e-6 * z.h1_norm(), name
    cs = sections["clifford"]
    fv, _ = first_variation(cs, NormalField.zero(cs), NormalField.zero(cs))
    assert fv == 0.0


def test_first_variation_at_reduced_point(bases, reduced):
    basis = bases["clifford"]
    rf = reduced["clifford"]
    mu = np.array([0.02, -0.01, 0.005, 0.0])
    ups, info = rf.rmap.solve_upsilon(mu)
    point = basis.kernel_field(mu) + ups
    zeta = basis.eigenfield(basis.n_modes - 3)  # high positive mode
    fv, err = first_variation(basis.cs, point, zeta)
    assert info["residual"] <= 1e-9
    assert abs(fv) <= 1e-8


def test_operator_is_symmetric_and_diagonal(sections):
    for cs in sections.values():
        L = second_variation_assemble(cs)
        assert np.max(np.abs(L - L.T)) <= 1e-10


def test_fd_hessian_agreement(sections):
    cs = sections["clifford"]
    L = second_variation_assemble(cs)
    rng = np.random.default_rng(7)
    for trial in range(20):
        coef = rng.standard_normal((cs.n_scalar_modes, cs.codim))
        coef /= (1.0 + cs.laplace_eigs[:, None]) ** 1.5
        z = NormalField(cs, coef)
        q = quadratic_form(cs, L, z)
        fd, _ = second_variation_at(cs, NormalField.zero(cs), z)
        assert abs(fd - q) / max(1e-12, abs(q)) <= 1e-4


def test_second_variation_continuity(sections):
    """Deviation from the flat-operator form grows at most linearly in |g|."""
    cs = sections["clifford"]
    L = second_variation_assemble(cs)
    g_dir = smooth_field(cs, seed=11)
    g_dir = (1.0 / g_dir.c1alpha_proxy()) * g_dir
    z = smooth_field(cs, seed=12)
    q0 = quadratic_form(cs, L, z)
    sizes = np.array([0.02, 0.04, 0.08])
    devs = []
    for s in sizes:
        val, _ = second_variation_at(cs, s * g_dir, z)
        devs.append(abs(val - q0))
    slope, intercept = np.polyfit(sizes, devs, 1)
    assert slope < 50.0 * z.h1_norm() ** 2
    assert abs(intercept) <= 0.2 * slope * sizes[-1] + 1e-10
    val0, _ = second_variation_at(cs, 0.0 * g_dir, z)
    assert abs(val0 - q0) / abs(q0) < 1e-6
    valz, _ = second_variation_at(cs, 0.02 * g_dir, NormalField.zero(cs))
    assert valz == 0.0


def test_area_sigma_convergence_under_refinement():
    """Graph-area quadrature error drops at least 4x per grid doubling."""
    def tilt_area(res):
        cs = build_cross_section(ConeSpec(family="clifford",
                                          resolution=(res, res)))
        coef = np.zeros((cs.n_scalar_modes, cs.codim))
        # fixed low-frequency field present at every resolution
        labels = cs.mode_labels
        coef[labels.index("f1c|f1s"), 0] = 0.2
        coef[labels.index("f2c|f0"), 0] = 0.1
        return area_sigma(cs, NormalField(cs, coef))

    ref = tilt_area(64)
    errs = [abs(tilt_area(res) - ref) for res in (8, 16)]
    assert errs[1] <= max(errs[0] / 4.0, 1e-13)


def test_cone_identity_radially_constant(sections):
    for name, cs in sections.items():
        c = smooth_field(cs, seed=21, scale=0.08)
        c = (0.1 / max(c.c1_norm(), c.c0_norm())) * c
        g = RadialField.constant(cs, c)
        lhs = area_cone(cs, g)
        rhs = area_sigma(cs, c) / cs.cone_dim
        assert abs(lhs - rhs) <= 1e-6, name


def test_zero_radial_field(sections):
    cs = sections["plane21"]
    g = RadialField.constant(cs, NormalField.zero(cs))
    assert abs(area_cone(cs, g)) < 1e-12
    rep = slicing_check(cs, g)
    assert abs(rep["lhs"]) < 1e-12 and abs(rep["rhs"]) < 1e-12


def test_slicing_constant_trace_needs_no_margin(sections):
    cs = sections["clifford"]
    c = smooth_field(cs, seed=22, scale=0.02)
    rep = slicing_check(cs, RadialField.constant(cs, c), c_sl=0.0)
    assert abs(rep["margin"]) <= 1e-10
    assert rep["min_c_sl"] == 0.0


@pytest.mark.parametrize("name", ["clifford", "plane21", "plane31", "plane22",
                                  "product12"])
def test_slicing_margin_nonnegative_ensemble(sections, name):
    """C_sl = 1 dominates the radial error over a seeded trace family."""
    cs = sections[name]
    rng = np.random.default_rng(31)
    count = {"plane21": 100, "plane22": 10, "product12": 5}.get(name, 25)
    for trial in range(count):
        c0 = smooth_field(cs, seed=1000 + trial, scale=1.0)
        c1 = smooth_field(cs, seed=2000 + trial, scale=1.0)
        scale = 0.05 / max(c0.c1alpha_proxy(), c1.c1alpha_proxy())
        c0, c1 = scale * c0, scale * c1
        w = float(rng.uniform(0.5, 3.0))

        def profile(r, c0=c0, c1=c1, w=w):
            return c0 + float(np.sin(w * r)) * c1

        def dprofile(r, c1=c1, w=w):
            return float(w * np.cos(w * r)) * c1

        n_radial = 16 if name in ("plane22", "product12") else 32
        g = RadialField.from_profile(cs, profile, dprofile, n_radial=n_radial)
        rep = slicing_check(cs, g, c_sl=1.0)
        assert rep["margin"] >= 0.0, (name, trial, rep)
        assert rep["min_c_sl"] <= 1.0


def test_radial_field_boundary_and_fd_derivative(sections):
    cs = sections["plane21"]
    c = smooth_field(cs, seed=41, scale=0.05)

    def profile(r):
        return float(r**2) * c

    g = RadialField.from_profile(cs, profile)  # derivative via FD fallback
    assert np.array_equal(g.coef[-1], c.coef)
    expected = 2.0 * g.radii[:, None, None] * c.coef[None]
    assert np.max(np.abs(g.dcoef - expected)) < 1e-7


def test_normal_field_norms_and_tail(sections):
    cs = sections["clifford"]
    u = smooth_field(cs, seed=51, scale=0.1)
    assert u.l2_norm() <= u.h1_norm()
    assert u.c1alpha_proxy() >= u.c1_norm()
    # values roundtrip through projection
    v = NormalField.from_values(cs, u.values)
    assert_allclose(v.coef, u.coef, atol=1e-12)
    # an aliased grid signal beyond the band is rejected
    s = np.arange(cs.factors[0].n_nodes)
    high = np.cos(np.pi * s)  # Nyquist oscillation on the first circle
    values = np.repeat(high, cs.factors[1].n_nodes)[:, None] * 0.01
    with pytest.raises(UnresolvedTailError):
        NormalField.from_values(cs, values)


def test_normal_field_immutable(sections):
    u = smooth_field(sections["plane21"], seed=61)
    with pytest.raises(AttributeError):
        u.coef = None
    with pytest.raises(ValueError):
        u.coef[0, 0] = 1.0


def test_field_snapshot_roundtrip(tmp_path, sections):
    from conelab.functional import load_field, save_field
    cs = sections["clifford"]
    u = smooth_field(cs, seed=71, scale=0.03)
    path = tmp_path / "field.npz"
    save_field(u, path)
    v = load_field(cs, path)
    assert np.array_equal(u.coef, v.coef)


def test_radial_resolution_estimate(sections):
    from conelab.errors import RadialResolutionError
    cs = sections["plane21"]
    c = smooth_field(cs, seed=81, scale=0.02)

    def wiggly(r):
        return float(0.5 + 0.5 * np.sin(37.0 * r)) * c

    g = RadialField.from_profile(cs, wiggly, n_radial=12)
    with pytest.raises(RadialResolutionError):
        area_cone(cs, g, rtol=1e-10)
    smooth = RadialField.constant(cs, c, n_radial=12)
    area_cone(cs, smooth, rtol=1e-10)  # smooth profile passes the estimate
