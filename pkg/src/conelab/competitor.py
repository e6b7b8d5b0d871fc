"""Competitor construction and verification of the contraction inequality.

Given a boundary trace c, the competitor keeps the negative spectral part
frozen, damps the positive part linearly in radius, and transports the kernel
coordinates along the normalized gradient flow of the reduced area,
reparametrized by a linear-in-(1-r) clock.  The cone area of the competitor
is then compared against the homogeneous extension of the trace.
"""

import dataclasses

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConelabError, NewtonConvergenceError
from .functional import (NormalField, RadialField, area_cone, area_sigma,
                         radial_energy, radial_rule)


class TraceRefusedError(ConelabError):
    """Trace norm exceeds the admissible bound delta."""


class Case2RefusedError(ConelabError):
    """Kernel energy negative while the kernel-flow branch was selected."""


@dataclasses.dataclass
class EpiParams:
    """Constants of the competitor construction and verification.

    ``eps`` is the slope of the positive-part damping cutoff; ``eps_check``
    the contraction the verification asserts (calibrated per family, strictly
    below the best gain ~2 eps/(n+1) the cutoff can produce).  ``eps_A`` and
    ``C_eta`` scale the kernel flow clock, ``tau`` splits the two branches,
    ``delta`` bounds admissible traces and ``gamma_epi`` is the verification
    exponent (0 on integrable cones).
    """

    eps: float = 0.1
    eps_check: float = 0.02
    eps_A: float = 0.05
    tau: float = 0.1
    delta: float = 0.02
    C_eta: float = 1.0
    gamma_epi: float = 0.0
    n_radial: int = 32
    grad_tol: float = 1e-7
    degenerate_tol: float = 1e-10

    def __post_init__(self):
        for name in ("eps", "eps_A", "tau", "delta", "eps_check"):
            v = getattr(self, name)
            if not (0.0 < v < 0.25):
                raise ValueError(f"{name} must lie in (0, 1/4), got {v}")
        if self.C_eta <= 0:
            raise ValueError("C_eta must be positive")
        if not (0.0 <= self.gamma_epi < 1.0):
            raise ValueError("gamma_epi must lie in [0, 1)")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


class FlowTrajectory:
    """Recorded states of the normalized gradient flow of the reduced area."""

    def __init__(self, times, states, values, grads, dirs, stop_reason):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.grads = np.asarray(grads, dtype=float)
        self.dirs = np.asarray(dirs, dtype=float)
        self.stop_reason = stop_reason

    def evaluate(self, t):
        """State at flow time t (cubic Hermite inside, frozen beyond)."""
        times = self.times
        if t <= times[0]:
            return self.states[0].copy()
        if t >= times[-1]:
            return self.states[-1].copy()
        i = int(np.searchsorted(times, t) - 1)
        h = times[i + 1] - times[i]
        s = (t - times[i]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return (h00 * self.states[i] + h * h10 * self.dirs[i]
                + h01 * self.states[i + 1] + h * h11 * self.dirs[i + 1])

    def evaluate_dir(self, t):
        times = self.times
        if t <= times[0]:
            return self.dirs[0].copy()
        if t >= times[-1]:
            return self.dirs[-1].copy() if self.stop_reason == "t_max" \
                else np.zeros_like(self.dirs[-1])
        i = int(np.searchsorted(times, t) - 1)
        h = times[i + 1] - times[i]
        s = (t - times[i]) / h
        d00 = (6 * s * s - 6 * s) / h
        d10 = 3 * s * s - 4 * s + 1
        d01 = (6 * s - 6 * s * s) / h
        d11 = 3 * s * s - 2 * s
        return (d00 * self.states[i] + d10 * self.dirs[i]
                + d01 * self.states[i + 1] + d11 * self.dirs[i + 1])


def _flow_rhs(rf, mu):
    g = rf.gradient(mu)
    n = float(np.linalg.norm(g))
    if n < 1e-300:
        return np.zeros_like(g), g, 0.0
    return -g / n, g, n


def gradient_flow(rf, mu0, t_max, grad_tol=1e-7, step_tol=1e-10):
    """Integrate mu' = -grad A / |grad A| with adaptive classical RK4.

    The state freezes (stop reason ``gradient_vanished``) once |grad A| drops
    below ``grad_tol``; Newton failures abort with the partial trajectory and
    stop reason ``newton_failure``.
    """
    mu = np.asarray(mu0, dtype=float).copy()
    times, states, values, grads, dirs = [], [], [], [], []

    def record(t, mu, a, g, d):
        times.append(t)
        states.append(mu.copy())
        values.append(a)
        grads.append(g.copy())
        dirs.append(d.copy())

    def rk4(mu, h):
        k1, _, _ = _flow_rhs(rf, mu)
        k2, _, _ = _flow_rhs(rf, mu + 0.5 * h * k1)
        k3, _, _ = _flow_rhs(rf, mu + 0.5 * h * k2)
        k4, _, _ = _flow_rhs(rf, mu + h * k3)
        return mu + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    try:
        d, g, gn = _flow_rhs(rf, mu)
        a = rf.value(mu)
        record(0.0, mu, a, g, d)
        if gn < grad_tol or t_max <= 0.0:
            return FlowTrajectory(times, states, values, grads, dirs,
                                  "gradient_vanished" if gn < grad_tol else "t_max")
        t = 0.0
        h = t_max / 16.0
        while t < t_max * (1 - 1e-14):
            h = min(h, t_max - t)
            big = rk4(mu, h)
            half = rk4(rk4(mu, h / 2.0), h / 2.0)
            err = float(np.max(np.abs(big - half))) / 15.0
            tol = step_tol * (1.0 + float(np.max(np.abs(mu))))
            if err > tol and h > 1e-14 * t_max:
                h *= max(0.2, 0.9 * (tol / err) ** 0.2)
                continue
            mu = half
            t += h
            d, g, gn = _flow_rhs(rf, mu)
            a = rf.value(mu)
            if gn < grad_tol:
                record(t, mu, a, g, np.zeros_like(d))
                return FlowTrajectory(times, states, values, grads, dirs,
                                      "gradient_vanished")
            record(t, mu, a, g, d)
            if err > 0:
                h *= min(5.0, max(0.2, 0.9 * (tol / err) ** 0.2))
    except NewtonConvergenceError:
        return FlowTrajectory(times, states, values, grads, dirs,
                              "newton_failure")
    return FlowTrajectory(times, states, values, grads, dirs, "t_max")


class Competitor:
    """Radial competitor field plus the pieces it was assembled from."""

    def __init__(self, field, case, mu0, A0, eta0, flow, gamma, params,
                 parts, reduced_coords, basis):
        self.field = field
        self.case = case
        self.mu0 = mu0
        self.A0 = A0
        self.eta0 = eta0
        self.flow = flow
        self.gamma = gamma
        self.params = params
        self.parts = parts                  # dict of NormalFields
        self.reduced_coords = reduced_coords  # (R+1, n_modes) kernel+ups rows
        self.basis = basis

    @property
    def eps_eff(self):
        if self.case == 2:
            return self.params.eps_A * self.A0 ** (1.0 - self.gamma)
        return self.params.eps_check


def build_competitor(c, params, rf, basis):
    """Assemble the competitor for trace ``c``; returns a Competitor bundle.

    The boundary slice is the trace itself, exactly.  Raises
    TraceRefusedError / Case2RefusedError / NewtonConvergenceError on the
    documented precondition failures.
    """
    if c.c1alpha_proxy() > params.delta * (1 + 1e-12):
        raise TraceRefusedError(
            f"trace proxy norm {c.c1alpha_proxy():.4g} exceeds delta={params.delta}"
        )
    cs = basis.cs
    gamma = params.gamma_epi
    coords = basis.to_spectral(c)
    kernel_mask, minus_mask, plus_mask = basis.masks()
    mu0 = coords[basis.kernel_indices]

    ups0, _ = rf.rmap.solve_upsilon(mu0)
    A0 = rf.value(mu0)
    ups_coords = basis.to_spectral(ups0)
    cperp_coords = np.where(kernel_mask, 0.0, coords) - ups_coords
    c_minus = np.where(minus_mask, cperp_coords, 0.0)
    c_plus = np.where(plus_mask, cperp_coords, 0.0)
    cperp_field = basis.from_spectral(cperp_coords)
    cperp_h1 = cperp_field.h1_norm()

    case1 = (np.sqrt(max(A0, 0.0)) < params.tau * cperp_h1) or abs(A0) <= 1e-12
    if not case1 and A0 < 0:
        raise Case2RefusedError(
            f"A(mu0)={A0:.3e} < 0 while the case-1 criterion fails "
            f"(|c_perp|_H1={cperp_h1:.3e})"
        )
    case = 1 if case1 else 2

    nodes, rad_w = radial_rule(params.n_radial)
    radii = np.append(nodes, 1.0)
    R1 = len(radii)

    if case == 2:
        eta0 = params.eps_A * A0 ** (1.0 - gamma) * params.C_eta
        flow = gradient_flow(rf, mu0, eta0, params.grad_tol)
        if flow.stop_reason == "newton_failure":
            raise NewtonConvergenceError("Newton failure along the kernel flow")
    else:
        eta0 = 0.0
        flow = None

    n_modes = basis.n_modes
    reduced = np.empty((R1, n_modes))
    d_reduced = np.zeros((R1, n_modes))
    if case == 1:
        base = np.zeros(n_modes)
        base[basis.kernel_indices] = mu0
        base += ups_coords
        reduced[:] = base
    else:
        ts = eta0 * (1.0 - radii)
        mus = np.array([flow.evaluate(t) for t in ts])
        ups_rows = np.empty((R1, n_modes))
        for i, m in enumerate(mus):
            u, _ = rf.rmap.solve_upsilon(m)
            ups_rows[i] = basis.to_spectral(u)
        reduced[:, :] = ups_rows
        reduced[:, basis.kernel_indices] += mus
        # d/dr of the kernel coordinates through the clock t = eta0 (1 - r)
        for i, t in enumerate(ts):
            d_reduced[i, basis.kernel_indices] = -eta0 * flow.evaluate_dir(t)
        # d/dr of the correction via a spline of its coordinates over t
        order = np.argsort(ts)
        t_sorted = ts[order]
        if len(np.unique(t_sorted)) >= 4 and t_sorted[-1] - t_sorted[0] > 1e-300:
            spline = CubicSpline(t_sorted, ups_rows[order], axis=0)
            d_ups = spline(ts, 1) * (-eta0)
            d_reduced += d_ups

    eta_plus = 1.0 - (1.0 - radii) * params.eps
    coef_rows = reduced + c_minus[None, :] + eta_plus[:, None] * c_plus[None, :]
    dcoef_rows = d_reduced + params.eps * c_plus[None, :]

    V = basis.eigenvectors
    M, k = cs.n_scalar_modes, cs.codim
    coef = np.einsum("pm,rm->rp", V, coef_rows).reshape(R1, M, k)
    dcoef = np.einsum("pm,rm->rp", V, dcoef_rows).reshape(R1, M, k)
    coef[-1] = c.coef  # boundary slice is the trace, exactly

    field = RadialField(cs, radii, rad_w, coef, dcoef, c)
    parts = {
        "kernel": basis.kernel_field(mu0),
        "upsilon": ups0,
        "c_perp": cperp_field,
        "c_minus": basis.from_spectral(c_minus),
        "c_plus": basis.from_spectral(c_plus),
    }
    return Competitor(field, case, mu0, A0, eta0, flow, gamma, params,
                      parts, reduced, basis)


@dataclasses.dataclass
class EpiReport:
    """Per-trace verification record."""

    outcome: str
    passed: bool
    case: int
    A_z: float
    A_h: float
    eps_eff: float
    eps_achieved: float
    gamma: float
    A0: float
    cperp_h1: float
    trace_h1: float
    trace_proxy: float
    detail: str = ""

    def to_row(self):
        return {
            "outcome": self.outcome,
            "passed": int(self.passed) if self.passed is not None else "",
            "case": self.case,
            "A_z": self.A_z,
            "A_h": self.A_h,
            "eps_eff": self.eps_eff,
            "eps_achieved": "" if self.eps_achieved is None else self.eps_achieved,
            "gamma": self.gamma,
            "A0": self.A0,
            "cperp_h1": self.cperp_h1,
            "trace_h1": self.trace_h1,
            "trace_proxy": self.trace_proxy,
        }


def verify_epi(c, params, rf, basis):
    """Check the contraction inequality for one trace.

    A_z is the cone area of the homogeneous extension (computed through the
    exact cone identity), A_h the cone area of the built competitor.
    Outcomes: pass / fail / degenerate (|A_z| below tolerance) /
    nonpositive_energy / refused / case2_refused / newton_failure.
    """
    if basis.degenerate_gap:
        raise ValueError(
            "spectral gap degenerate: contraction checks refuse to run"
        )
    cs = basis.cs
    n = cs.cone_dim
    gamma = params.gamma_epi
    A_z = area_sigma(cs, c) / n
    base = dict(A_z=A_z, gamma=gamma, trace_h1=c.h1_norm(),
                trace_proxy=c.c1alpha_proxy())
    try:
        comp = build_competitor(c, params, rf, basis)
    except TraceRefusedError as exc:
        return EpiReport(outcome="refused", passed=None, case=0, A_h=np.nan,
                         eps_eff=np.nan, eps_achieved=None, A0=np.nan,
                         cperp_h1=np.nan, detail=str(exc), **base)
    except Case2RefusedError as exc:
        return EpiReport(outcome="case2_refused", passed=None, case=2,
                         A_h=np.nan, eps_eff=np.nan, eps_achieved=None,
                         A0=np.nan, cperp_h1=np.nan, detail=str(exc), **base)
    except NewtonConvergenceError as exc:
        return EpiReport(outcome="newton_failure", passed=None, case=0,
                         A_h=np.nan, eps_eff=np.nan, eps_achieved=None,
                         A0=np.nan, cperp_h1=np.nan, detail=str(exc), **base)

    A_h = area_cone(cs, comp.field)
    eps_eff = comp.eps_eff
    cperp_h1 = comp.parts["c_perp"].h1_norm()

    if abs(A_z) <= params.degenerate_tol:
        return EpiReport(outcome="degenerate", passed=bool(A_h <= A_z + 1e-12),
                         case=comp.case, A_h=A_h, eps_eff=eps_eff,
                         eps_achieved=None, A0=comp.A0, cperp_h1=cperp_h1,
                         **base)
    rhs = (1.0 - eps_eff * abs(A_z) ** gamma) * A_z
    ok = bool(A_h <= rhs)
    if A_z < 0:
        return EpiReport(outcome="nonpositive_energy", passed=ok,
                         case=comp.case, A_h=A_h, eps_eff=eps_eff,
                         eps_achieved=None, A0=comp.A0, cperp_h1=cperp_h1,
                         **base)
    eps_ach = (1.0 - A_h / A_z) / abs(A_z) ** gamma
    return EpiReport(outcome="pass" if ok else "fail", passed=ok,
                     case=comp.case, A_h=A_h, eps_eff=eps_eff,
                     eps_achieved=float(eps_ach), A0=comp.A0,
                     cperp_h1=cperp_h1, **base)


def kernel_flux_term(rf, mu0, params, n_cone, gamma=None):
    """E_T of a kernel-flow run against any reduced function (fixtures too)."""
    gamma = params.gamma_epi if gamma is None else gamma
    A0 = rf.value(np.asarray(mu0, dtype=float))
    if A0 <= 0:
        raise Case2RefusedError(f"kernel flux term needs A(mu0) > 0, got {A0:.3e}")
    eta0 = params.eps_A * A0 ** (1.0 - gamma) * params.C_eta
    eps_eff = params.eps_A * A0 ** (1.0 - gamma)
    flow = gradient_flow(rf, mu0, eta0, params.grad_tol)
    nodes, w = radial_rule(params.n_radial)
    et = 0.0
    for r, wq in zip(nodes, w):
        a = rf.value(flow.evaluate(eta0 * (1.0 - r)))
        et += wq * r ** (n_cone - 1) * (a - (1.0 - eps_eff) * A0)
    denom = params.eps_A * A0 ** (2.0 - 2.0 * gamma)
    return {
        "E_T": et,
        "A0": A0,
        "eta0": eta0,
        "eps_eff": eps_eff,
        "flow": flow,
        "measured_constant": -et / denom if denom > 0 else np.nan,
    }


def error_ledger(c, comp, params):
    """Decomposed error terms of the competitor against the homogeneous trace.

    E_r: radial derivative energy; E_perp: off-kernel quadratic-form gain;
    E_T: kernel flux term.  Signs follow the construction: E_perp < 0 is the
    spectral gain, E_T <= 0 the flow gain.
    """
    cs = comp.field.cs
    n = cs.cone_dim
    eps_eff = comp.eps_eff
    field = comp.field
    basis = comp.basis
    R = field.n_gauss()

    a_c = area_sigma(cs, c)
    a_red0 = area_sigma(cs, basis.from_spectral(comp.reduced_coords[-1]))

    e_perp = 0.0
    e_t = 0.0
    for q in range(R):
        r = field.radii[q]
        wq = field.rad_weights[q]
        full = field.slice_field(q)
        red = basis.from_spectral(comp.reduced_coords[q])
        a_full = area_sigma(cs, full)
        a_red = area_sigma(cs, red)
        e_perp += wq * r ** (n - 1) * ((a_full - a_red)
                                       - (1.0 - eps_eff) * (a_c - a_red0))
        e_t += wq * r ** (n - 1) * (a_red - (1.0 - eps_eff) * comp.A0)
    e_r = radial_energy(cs, field)
    cperp_h1 = comp.parts["c_perp"].h1_norm()
    out = {
        "E_r": e_r,
        "E_perp": e_perp,
        "E_T": e_t,
        "eps_eff": eps_eff,
        "cperp_h1": cperp_h1,
        "A0": comp.A0,
        "case": comp.case,
    }
    if cperp_h1 > 0:
        out["C_perp_measured"] = -e_perp / (eps_eff * cperp_h1**2)
    if comp.case == 2 and comp.A0 > 0:
        denom = params.eps_A * comp.A0 ** (2.0 - 2.0 * comp.gamma)
        out["C_T_measured"] = -e_t / denom
    return out


def run_epi_ensemble(traces, params, rf, basis):
    """Verify every trace; returns (reports, summary)."""
    reports = [verify_epi(c, params, rf, basis) for c in traces]
    return reports, summarize_reports(reports)


def summarize_reports(reports):
    counts = {}
    for r in reports:
        counts[r.outcome] = counts.get(r.outcome, 0) + 1
    evaluated = [r for r in reports if r.outcome in
                 ("pass", "fail", "nonpositive_energy", "degenerate")]
    checked = [r for r in evaluated if r.passed is not None]
    n_pass = sum(1 for r in checked if r.passed)
    eps_vals = [r.eps_achieved for r in reports
                if r.eps_achieved is not None and r.passed]
    return {
        "n_traces": len(reports),
        "counts": counts,
        "n_checked": len(checked),
        "pass_rate": n_pass / len(checked) if checked else float("nan"),
        "min_eps_achieved": min(eps_vals) if eps_vals else None,
        "median_eps_achieved": float(np.median(eps_vals)) if eps_vals else None,
        "n_positive_energy": len(eps_vals),
    }


def calibrate_eps_check(traces, params, rf, basis, safety=0.5):
    """Largest verification contraction passing every trace, then halved.

    Returns (suggested eps_check, diagnostics).  Positive-energy traces bound
    eps_check from above by their achieved contraction; negative-energy
    traces with A_h > A_z would bound it from below (none are expected).
    """
    upper = np.inf
    lower = 0.0
    gamma = params.gamma_epi
    for c in traces:
        rep = verify_epi(c, params, rf, basis)
        if rep.outcome == "pass" or rep.outcome == "fail":
            upper = min(upper, rep.eps_achieved)
        elif rep.outcome == "nonpositive_energy" and rep.A_h > rep.A_z:
            lower = max(lower, (rep.A_h - rep.A_z) / abs(rep.A_z) ** (1 + gamma))
    suggestion = upper * safety
    return suggestion, {"upper": upper, "lower": lower}
