"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; the full run takes a few minutes, dominated by the 500-trace
ensembles of criterion 7.
"""

import numpy as np
import pytest

from conelab import (ConeSpec, EpiParams, NormalField, RadialField,
                     build_cross_section, build_competitor, area_cone,
                     area_sigma, eigendecompose, error_ledger, gradient_flow,
                     integrability_test, integrate_excess, kernel_flux_term,
                     lojasiewicz_fit, quadratic_form, quartic_fixture,
                     run_epi_ensemble, second_variation_assemble,
                     second_variation_at, verify_stationarity, DecayParams,
                     dyadic_flat_sum, fit_power_rate, ReducedFunction,
                     ReducedMap, saddle_fixture)
from conelab.cli import PRESETS, main
from conelab.traces import TraceEnsembleSpec, sample

from conftest import smooth_field

EPI_FAMILIES = ("clifford", "plane31", "product12")
PRESET_KEY = {"clifford": "clifford", "plane31": "plane:3,1",
              "plane21": "plane:2,1", "plane22": "plane:2,2",
              "product12": "product:1,2"}


def _report(num, ok, msg):
    print(f"ACCEPTANCE {num:02d} {'PASS' if ok else 'FAIL'}: {msg}")
    assert ok, msg


def test_criterion_01_spectrum_oracle(bases):
    torus = bases["clifford"]
    expected = np.sort([2.0 * (k * k + m * m) - 4.0
                        for k in range(-6, 7) for m in range(-6, 7)
                        if k * k + m * m <= 16])
    got = np.sort(torus.eigenvalues[torus.eigenvalues <= 28.0 + 1e-9])
    err = (np.max(np.abs(got - expected)) if len(got) == len(expected)
           else np.inf)
    kernel_ok = torus.ell == 4
    plane_ok = (bases["plane21"].ell == 2 and bases["plane31"].ell == 3
                and bases["plane22"].ell == 4)
    _report(1, err <= 1e-8 and kernel_ok and plane_ok,
            f"torus eigenvalue error {err:.2e}, kernel dims "
            f"(4,{bases['plane21'].ell},{bases['plane31'].ell},"
            f"{bases['plane22'].ell})")


def test_criterion_02_stationarity(sections):
    worst = {}
    for name, cs in sections.items():
        worst[name] = verify_stationarity(cs, tol=1e-6)["max_residual"]
    bound_ok = all(v <= 1e-6 for v in worst.values())
    ratios_ok = True
    details = []
    for family, pair in (("clifford", ((8, 8), (16, 16))),
                         ("plane21_family", None)):
        if family == "clifford":
            res = []
            for r in pair:
                cs = build_cross_section(ConeSpec(family="clifford",
                                                  resolution=r))
                res.append(verify_stationarity(cs, tol=1e-6)["max_residual"])
        else:
            res = []
            for r in ((24,), (48,)):
                cs = build_cross_section(ConeSpec(family="plane", n=2, k=1,
                                                  resolution=r))
                res.append(verify_stationarity(cs, tol=1e-6)["max_residual"])
        # analytically critical sections sit at roundoff; floor-aware halving
        ratios_ok &= res[1] <= max(res[0] / 2.0, 1e-12)
        details.append(f"{family}: {res[0]:.1e}->{res[1]:.1e}")
    _report(2, bound_ok and ratios_ok,
            f"max residual {max(worst.values()):.2e}; refinement "
            + "; ".join(details))


def test_criterion_03_slicing_identity(sections):
    worst = 0.0
    for name, cs in sections.items():
        for trial in range(50):
            c = smooth_field(cs, seed=300 + trial)
            c = (0.1 / c.h1_norm()) * c
            lhs = area_cone(cs, RadialField.constant(cs, c))
            rhs = area_sigma(cs, c) / cs.cone_dim
            worst = max(worst, abs(lhs - rhs))
    _report(3, worst <= 1e-6, f"worst |A_C(rc) - A_Sigma(c)/n| = {worst:.2e} "
            "over 50 traces x 5 families")


def test_criterion_04_fd_hessian(sections):
    worst = 0.0
    for name, cs in sections.items():
        L = second_variation_assemble(cs)
        for trial in range(20):
            z = smooth_field(cs, seed=400 + trial, decay=3.0)
            q = quadratic_form(cs, L, z)
            fd, _ = second_variation_at(cs, NormalField.zero(cs), z)
            worst = max(worst, abs(fd - q) / max(1e-12, abs(q)))
    _report(4, worst <= 1e-4,
            f"worst FD-Hessian relative error {worst:.2e} over 20 x 5 families")


def test_criterion_05_reduction(reduced):
    ups_at_zero = max(rf.rmap.solve_upsilon(np.zeros(rf.ell))[0].l2_norm()
                      for rf in reduced.values())
    max_residual = 0.0
    sizes = np.array([0.005, 0.01, 0.02, 0.05])

    def sweep(rf):
        nonlocal max_residual
        norms = []
        for s in sizes:
            mu = np.zeros(rf.ell)
            mu[0] = s
            ups, info = rf.rmap.solve_upsilon(mu)
            max_residual = max(max_residual, info["residual"])
            norms.append(ups.l2_norm())
        return norms

    # curved links have a genuinely quadratic correction
    slopes = {}
    for name in ("clifford", "product12"):
        norms = sweep(reduced[name])
        slopes[name] = float(np.polyfit(np.log(sizes), np.log(norms), 1)[0])
    # tilted planes are exact kernel graphs: the correction vanishes, which
    # satisfies the quadratic bound with constant 0
    plane_sup = max(max(sweep(reduced[name])) for name in
                    ("plane21", "plane31", "plane22"))
    ok = (ups_at_zero <= 1e-12 and max_residual <= 1e-9
          and all(s >= 1.9 for s in slopes.values()) and plane_sup <= 1e-12)
    _report(5, ok, f"Upsilon(0) = {ups_at_zero:.1e}, residual <= "
            f"{max_residual:.1e}, growth exponents "
            + ", ".join(f"{k}={v:.3f}" for k, v in slopes.items())
            + f", plane correction sup = {plane_sup:.1e}")


def test_criterion_06_integrability():
    results = {}
    for family, resolutions in (("clifford", ((8, 8), (16, 16))),
                                ("plane21", ((16,), (32,)))):
        vals = []
        for res in resolutions:
            kw = dict(family="clifford", resolution=res) if family == "clifford" \
                else dict(family="plane", n=2, k=1, resolution=res)
            cs = build_cross_section(ConeSpec(**kw))
            rf = ReducedFunction(ReducedMap(eigendecompose(cs)))
            out = integrability_test(rf, radius=0.03, n_samples=24, tol=1e-7,
                                     seed=6)
            assert not out["inconclusive"]
            vals.append((out["integrable"], out["max_abs_A"]))
        results[family] = vals
    builtin_ok = all(v[0][0] and v[1][0] for v in results.values())
    decrease_ok = all(v[1][1] <= max(v[0][1] / 4.0, 1e-11)
                      for v in results.values())
    qf = quartic_fixture()
    qout = integrability_test(qf, radius=0.03, n_samples=32, tol=1e-7, seed=6)
    qfit = lojasiewicz_fit(qf, radius=0.03, n_samples=128, seed=6)
    fixture_ok = (not qout["integrable"]) and qfit.gamma == 0.25
    _report(6, builtin_ok and decrease_ok and fixture_ok,
            "integrable verdicts with max|A| "
            + ", ".join(f"{k}: {v[0][1]:.1e}->{v[1][1]:.1e}"
                        for k, v in results.items())
            + f"; quartic gamma_loj = {qfit.gamma}")


def test_criterion_07_epi_inequality(bases, reduced):
    lines = []
    ok = True
    for name in EPI_FAMILIES:
        basis = bases[name]
        rf = reduced[name]
        params = EpiParams(eps_check=PRESETS[PRESET_KEY[name]]["eps_check"])
        mixed = sample(TraceEnsembleSpec(seed=700, count=500, norm_target=0.02,
                                         norm_type="c1alpha"), basis)
        _, msum = run_epi_ensemble(mixed, params, rf, basis)
        pos = sample(TraceEnsembleSpec(seed=701, count=100, norm_target=0.02,
                                       norm_type="c1alpha",
                                       class_filter="pure-positive"), basis)
        _, psum = run_epi_ensemble(pos, params, rf, basis)
        ok &= msum["pass_rate"] == 1.0 and psum["pass_rate"] == 1.0
        ok &= psum["min_eps_achieved"] is not None \
            and psum["min_eps_achieved"] > 0.0
        if msum["min_eps_achieved"] is not None:
            ok &= msum["min_eps_achieved"] > 0.0
        lines.append(
            f"{name}: mixed pass {msum['pass_rate']:.3f} "
            f"(pos subset min eps {msum['min_eps_achieved']}), "
            f"pure-positive min eps {psum['min_eps_achieved']:.4f}")
    _report(7, ok, "; ".join(lines))


def test_criterion_08_flow_properties():
    qf = quartic_fixture()
    traj = gradient_flow(qf, np.array([0.04, 0.0]), t_max=0.03, grad_tol=1e-9)
    analytic_err = max(abs(np.linalg.norm(s) - (0.04 - t))
                       for t, s in zip(traj.times, traj.states))
    ok = analytic_err <= 1e-6
    for rf, mu0 in ((qf, np.array([0.03, 0.02])),
                    (saddle_fixture(), np.array([0.02, 0.01]))):
        tr = gradient_flow(rf, mu0, t_max=0.015, grad_tol=1e-9)
        dts = np.diff(tr.times)
        steps = np.linalg.norm(np.diff(tr.states, axis=0), axis=1)
        ok &= bool(np.all(steps <= dts * (1 + 1e-8)))
        ok &= bool(np.all(np.diff(tr.values) <= 1e-9))
    _report(8, ok, f"quartic flow matches the radial solution to "
            f"{analytic_err:.1e}; monotone + unit speed on all trajectories")


def test_criterion_09_decay_dichotomy():
    details = []
    ok = True
    for gamma in (0.25, 0.5):
        p = DecayParams(n=3, eps=0.3, gamma=gamma, e0=1.0, j_max=12)
        traj = integrate_excess(p)
        rel = float(np.max(np.abs(traj.etilde - traj.bound) / traj.bound))
        fit = dyadic_flat_sum(traj, 2, 12)
        expected = (gamma - 1.0) / (2.0 * gamma)
        slope_err = abs(fit["slope_fit"] - expected) / abs(expected)
        ok &= rel <= 1e-6 and slope_err <= 0.02
        details.append(f"gamma={gamma}: closed-form {rel:.1e}, "
                       f"slope err {slope_err:.1%}")
    p0 = DecayParams(n=3, eps=0.1, gamma=0.0, e0=0.5, j_max=6)
    rate = fit_power_rate(integrate_excess(p0), r_lo=1e-6)
    rate_err = abs(rate - 0.3) / 0.3
    ok &= rate_err <= 0.02
    details.append(f"gamma=0: power exponent err {rate_err:.1%}")
    _report(9, ok, "; ".join(details))


def test_criterion_10_error_ledger_signs(bases, reduced):
    ok = True
    worst_gap = np.inf
    for name in ("clifford", "plane31"):
        basis = bases[name]
        rf = reduced[name]
        params = EpiParams(eps_check=PRESETS[PRESET_KEY[name]]["eps_check"])
        traces = sample(TraceEnsembleSpec(seed=710, count=50, norm_target=0.02,
                                          norm_type="c1alpha",
                                          class_filter="pure-positive"), basis)
        for c in traces:
            comp = build_competitor(c, params, rf, basis)
            led = error_ledger(c, comp, params)
            a_z = area_sigma(basis.cs, c) / basis.cs.cone_dim
            a_h = area_cone(basis.cs, comp.field)
            ok &= led["E_perp"] < 0.0
            if a_z > 1e-10:
                ok &= a_h < a_z
                worst_gap = min(worst_gap, a_z - a_h)
    consts = []
    for mu0 in (np.array([0.04, 0.0]), np.array([0.02, 0.03])):
        out = kernel_flux_term(quartic_fixture(), mu0, EpiParams(), n_cone=3,
                               gamma=0.25)
        ok &= out["E_T"] < 0.0 and out["measured_constant"] > 0.0
        consts.append(out["measured_constant"])
    _report(10, ok, f"E_perp < 0 and A_h < A_z on 100 positive traces "
            f"(worst margin {worst_gap:.2e}); case-2 flux constants "
            + ", ".join(f"{c:.2f}" for c in consts))


def test_criterion_11_determinism(tmp_path):
    outs = []
    for jobs, sub in (("1", "a"), ("2", "b")):
        out = str(tmp_path / sub)
        rc = main(["epi-check", "--cone", "clifford", "--resolution", "16,16",
                   "--ensemble-size", "8", "--seed", "11", "--jobs", jobs,
                   "--out", out, "--no-timestamp"])
        assert rc == 0
        outs.append(out)
    identical = True
    for fname in ("epi_check.csv", "epi_summary.json"):
        a = open(f"{outs[0]}/{fname}", "rb").read()
        b = open(f"{outs[1]}/{fname}", "rb").read()
        identical &= a == b
    _report(11, identical,
            "epi-check outputs byte-identical across --jobs 1 and 2")
