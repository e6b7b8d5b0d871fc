"""Finite-dimensional reduction of the area functional near the link.

The off-kernel correction v(mu) is the zero of the off-kernel area gradient at
kernel point mu, found by Newton iteration with the (diagonal) Jacobi operator
as frozen Jacobian.  The reduced area A(mu) and its gradient then expose
integrability and the empirical Lojasiewicz data.
"""

import dataclasses

import numpy as np
from scipy.stats import qmc

from .errors import NewtonConvergenceError
from .functional import NormalField, area_gradient, area_sigma

LOJ_GRID = np.round(np.arange(1, 11) * 0.05, 2)


class ReducedMap:
    """Newton solver state for the off-kernel correction Upsilon: K -> K^perp."""

    def __init__(self, basis, newton_tol=1e-9, newton_max_iter=50,
                 domain_radius=0.05):
        self.basis = basis
        self.newton_tol = float(newton_tol)
        self.newton_max_iter = int(newton_max_iter)
        self.domain_radius = float(domain_radius)
        self.cache = {}
        kernel, _, _ = basis.masks()
        self._perp_idx = np.where(~kernel)[0]
        self._perp_eigs = basis.eigenvalues[self._perp_idx]

    @property
    def ell(self):
        return self.basis.ell

    def _field_from(self, mu, perp_coords):
        coords = np.zeros(self.basis.n_modes)
        coords[self.basis.kernel_indices] = mu
        coords[self._perp_idx] = perp_coords
        return self.basis.from_spectral(coords)

    def solve_upsilon(self, mu):
        """Off-kernel correction at kernel coordinates ``mu``.

        Returns (field in K^perp, info dict).  Cached per exact mu.
        """
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.ell,):
            raise ValueError(f"mu must have {self.ell} components")
        if np.linalg.norm(mu) > self.domain_radius * (1 + 1e-12):
            raise ValueError(
                f"|mu|={np.linalg.norm(mu):.4g} outside domain radius "
                f"{self.domain_radius}"
            )
        key = mu.tobytes()
        if key in self.cache:
            return self.cache[key]

        cs = self.basis.cs
        v = np.zeros(len(self._perp_idx))
        best = np.inf
        stall = 0
        for it in range(self.newton_max_iter + 1):
            field = self._field_from(mu, v)
            grad = self.basis.eigenvectors.T @ area_gradient(cs, field).reshape(-1)
            r_perp = grad[self._perp_idx]
            res = float(np.linalg.norm(r_perp))
            if not np.isfinite(res):
                raise NewtonConvergenceError("non-finite residual in Newton solve")
            if res <= self.newton_tol:
                ups_coords = np.zeros(self.basis.n_modes)
                ups_coords[self._perp_idx] = v
                ups = self.basis.from_spectral(ups_coords)
                info = {"iterations": it, "residual": res}
                self.cache[key] = (ups, info)
                return ups, info
            if res >= best * 0.999:
                stall += 1
                if stall >= 8:
                    raise NewtonConvergenceError(
                        f"residual stagnated at {res:.3e} after {it} iterations"
                    )
            else:
                stall = 0
            best = min(best, res)
            v = v - r_perp / self._perp_eigs
        raise NewtonConvergenceError(
            f"no convergence within {self.newton_max_iter} iterations "
            f"(residual {best:.3e})"
        )


class ReducedFunction:
    """Reduced area A(mu) over the kernel, with its two gradient routes."""

    def __init__(self, rmap):
        self.rmap = rmap
        self.basis = rmap.basis
        self.loj_fit = None

    @property
    def ell(self):
        return self.rmap.ell

    def point(self, mu):
        ups, _ = self.rmap.solve_upsilon(mu)
        return self.basis.kernel_field(np.asarray(mu, dtype=float)) + ups

    def value(self, mu):
        return area_sigma(self.basis.cs, self.point(mu))

    def gradient(self, mu):
        """Kernel components of the area gradient at the reduced point."""
        field = self.point(mu)
        grad = self.basis.eigenvectors.T @ area_gradient(self.basis.cs,
                                                         field).reshape(-1)
        return grad[self.basis.kernel_indices]

    def gradient_fd(self, mu, step=1e-4):
        mu = np.asarray(mu, dtype=float)
        out = np.empty(self.ell)
        for j in range(self.ell):
            e = np.zeros(self.ell)
            e[j] = step
            out[j] = (self.value(mu + e) - self.value(mu - e)) / (2 * step)
        return out


class SyntheticReducedFunction:
    """Closed-form reduced function for fixtures (no geometry behind it)."""

    def __init__(self, ell, value_fn, gradient_fn, name="synthetic"):
        self.ell = ell
        self._value = value_fn
        self._gradient = gradient_fn
        self.name = name
        self.loj_fit = None

    def value(self, mu):
        return float(self._value(np.asarray(mu, dtype=float)))

    def gradient(self, mu):
        return np.asarray(self._gradient(np.asarray(mu, dtype=float)), dtype=float)

    def gradient_fd(self, mu, step=1e-6):
        mu = np.asarray(mu, dtype=float)
        out = np.empty(self.ell)
        for j in range(self.ell):
            e = np.zeros(self.ell)
            e[j] = step
            out[j] = (self.value(mu + e) - self.value(mu - e)) / (2 * step)
        return out


def quartic_fixture(ell=2):
    return SyntheticReducedFunction(
        ell,
        lambda mu: np.dot(mu, mu) ** 2,
        lambda mu: 4.0 * np.dot(mu, mu) * mu,
        name="quartic",
    )


def saddle_fixture():
    return SyntheticReducedFunction(
        2,
        lambda mu: mu[0] ** 2 - mu[1] ** 2,
        lambda mu: np.array([2.0 * mu[0], -2.0 * mu[1]]),
        name="saddle",
    )


def reduced_gradient(rf, mu):
    """Both gradient routes at ``mu`` plus their discrepancy flag."""
    direct = rf.gradient(mu)
    fd = rf.gradient_fd(mu)
    disc = float(np.max(np.abs(direct - fd)))
    return {
        "gradient": direct,
        "gradient_fd": fd,
        "discrepancy": disc,
        "consistent": bool(disc <= 1e-4),
    }


def ball_samples(ell, radius, n_samples, seed=0):
    """Seeded quasi-random points in the closed ball, plus axis probes.

    The +-radius axis points make boundary suprema exact for radial fixtures.
    """
    sampler = qmc.Sobol(d=ell, scramble=True, seed=seed)
    pts = []
    while len(pts) < n_samples:
        block = 2.0 * sampler.random(64) - 1.0
        for row in block:
            if np.linalg.norm(row) <= 1.0 and len(pts) < n_samples:
                pts.append(radius * row)
    for j in range(ell):
        e = np.zeros(ell)
        e[j] = radius
        pts.extend([e, -e])
    return np.array(pts)


def integrability_test(rf, radius, n_samples, tol, seed=0):
    """Sample A over the kernel ball and classify the cone.

    integrable <=> max |A| <= tol over the sample set.  Any Newton failure
    makes the verdict inconclusive.
    """
    samples = ball_samples(rf.ell, radius, n_samples, seed)
    max_a = 0.0
    max_g = 0.0
    records = []
    for mu in samples:
        try:
            a = rf.value(mu)
            grad = np.asarray(rf.gradient(mu), dtype=float)
        except NewtonConvergenceError as exc:
            return {
                "integrable": False,
                "inconclusive": True,
                "reason": str(exc),
                "max_abs_A": max_a,
                "max_grad": max_g,
                "n_evaluated": len(records),
                "samples": records,
            }
        records.append((mu, a, grad))
        max_a = max(max_a, abs(a))
        max_g = max(max_g, float(np.linalg.norm(grad)))
    return {
        "integrable": bool(max_a <= tol),
        "inconclusive": False,
        "max_abs_A": max_a,
        "max_grad": max_g,
        "tol": tol,
        "n_evaluated": len(records),
        "samples": records,
    }


@dataclasses.dataclass
class LojFit:
    gamma: float
    constant: float
    worst_ratio: float
    vacuous: bool
    slopes: dict
    impossible: bool = False  # |A| large while every gradient vanished


def _envelope_slope(log_mu, log_ratio, n_bins=6):
    """Slope of the binned-maximum envelope of log_ratio vs log_mu.

    Near-critical samples drive individual ratios to -inf; the boundedness
    question concerns the envelope, so regress on per-bin maxima.
    """
    edges = np.linspace(log_mu.min(), log_mu.max() + 1e-12, n_bins + 1)
    xs, ys = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (log_mu >= lo) & (log_mu < hi)
        if np.any(mask):
            xs.append(0.5 * (lo + hi))
            ys.append(np.max(log_ratio[mask]))
    if len(xs) < 2:
        return 0.0
    return float(np.polyfit(xs, ys, 1)[0])


def lojasiewicz_fit(rf, radius, n_samples, seed=0, value_floor=1e-14,
                    grad_floor=1e-12, slope_tol=0.1, vacuous_tol=1e-7):
    """Largest grid exponent with a bounded |A|^(1-gamma)/|grad A| ratio.

    Boundedness is judged by the envelope slope of log(ratio) against
    log|mu|: a ratio blowing up towards the origin has a negative slope.
    When max|A| never rises above ``vacuous_tol`` the fit is degenerate and
    gamma = 1/2 is returned by convention, flagged vacuous.
    """
    samples = ball_samples(rf.ell, radius, n_samples, seed)
    mus, vals, grads = [], [], []
    max_abs_a = 0.0
    for mu in samples:
        a = rf.value(mu)
        g = float(np.linalg.norm(rf.gradient(mu)))
        max_abs_a = max(max_abs_a, abs(a))
        if abs(a) > value_floor and g > grad_floor:
            mus.append(np.linalg.norm(mu))
            vals.append(abs(a))
            grads.append(g)
    if max_abs_a <= vacuous_tol or not mus:
        if mus:
            ratio = np.array(vals) ** 0.5 / np.array(grads)
            constant = float(np.max(ratio))
        else:
            constant = 0.0
        # values above tolerance with no usable gradients: no fit can exist
        impossible = bool(max_abs_a > vacuous_tol and not mus)
        return LojFit(gamma=0.5, constant=constant, worst_ratio=constant,
                      vacuous=True, slopes={}, impossible=impossible)
    mus = np.array(mus)
    vals = np.array(vals)
    grads = np.array(grads)
    log_mu = np.log(mus)
    slopes = {}
    chosen = None
    for gamma in LOJ_GRID:
        log_ratio = (1.0 - gamma) * np.log(vals) - np.log(grads)
        slope = _envelope_slope(log_mu, log_ratio)
        slopes[float(gamma)] = slope
        if slope >= -slope_tol:
            chosen = float(gamma)
    if chosen is None:
        chosen = float(LOJ_GRID[0])
    ratio = vals ** (1.0 - chosen) / grads
    return LojFit(gamma=chosen, constant=float(np.max(ratio)),
                  worst_ratio=float(np.max(ratio)), vacuous=False,
                  slopes=slopes)
