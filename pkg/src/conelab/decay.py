"""Scalar model of the density-excess decay driven by the contraction gain.

The excess e(r) obeys (in the worst case, taken as an equality) the ODE
e'(r) = (n eps / r) e^(1+gamma) - C r^(alpha-1); the shifted variable
etilde = e + 2 C r^alpha / alpha satisfies the clean separable equation whose
closed form produces logarithmic decay for gamma > 0 and power decay for
gamma = 0.  Integration runs in x = log r over dyadically nested radii so the
flat-norm model sums are exact lookups.
"""

import dataclasses
import math

import numpy as np


@dataclasses.dataclass
class DecayParams:
    n: int = 3
    eps: float = 0.1
    gamma: float = 0.5
    alpha: float = 0.5
    C_am: float = 0.0
    r0: float = 1.0
    e0: float = 0.5
    j_max: int = 10
    n_points: int = 256

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if not (0.0 < self.r0 <= 1.0):
            raise ValueError("r0 must lie in (0, 1]")
        if self.e0 < 0:
            raise ValueError("e0 must be nonnegative")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")


class DecayTrajectory:
    """Excess curve on a log grid containing the dyadic radii 2^-2^k r0."""

    def __init__(self, params, log_r, e, etilde, monitored, bound, dyadic_index,
                 absorption_log_r):
        self.params = params
        self.log_r = log_r           # descending from log r0
        self.e = e
        self.etilde = etilde
        self.monitored = monitored
        self.bound = bound
        self.dyadic_index = dyadic_index    # k -> index into the grid
        self.absorption_log_r = absorption_log_r

    @property
    def r(self):
        return np.exp(self.log_r)

    def e_at_dyadic(self, k):
        return self.e[self.dyadic_index[k]]


def _closed_form(params, log_r):
    """Separable solution of the shifted equation, per grid point."""
    p = params
    et0 = p.e0 + 2.0 * p.C_am * p.r0**p.alpha / p.alpha
    L = np.log(p.r0) - log_r      # = log(r0 / r) >= 0
    if et0 == 0.0:
        return np.zeros_like(L)
    if p.gamma == 0.0:
        return et0 * np.exp(-p.n * p.eps * L)
    base = et0 ** (-p.gamma) + p.n * p.eps * p.gamma * L
    return base ** (-1.0 / p.gamma)


def monitored_quantity(params, etilde, log_r):
    """M(r) = -etilde^-gamma - n eps gamma log r (log form at gamma = 0).

    Constant along solutions of the equality ODE; non-decreasing in r below
    the absorption radius for sourced trajectories.
    """
    p = params
    if p.gamma == 0.0:
        # gamma -> 0 limit of the monitored quantity, up to an affine map
        return np.log(np.maximum(etilde, 1e-300)) - p.n * p.eps * log_r
    return -np.maximum(etilde, 1e-300) ** (-p.gamma) \
        - p.n * p.eps * p.gamma * log_r


def integrate_excess(params):
    """Integrate the excess system downward from r0 with classical RK4.

    Works in x = log r with per-step error control 1e-10; the grid is the
    union of n_points log-spaced radii and the dyadic radii 2^-2^k r0 for
    k = 0..j_max.
    """
    p = params
    x0 = math.log(p.r0)
    x_min = x0 - 2.0**p.j_max * math.log(2.0)
    grid = np.linspace(x0, x_min, p.n_points)
    dyadic_x = np.array([x0 - 2.0**k * math.log(2.0) for k in range(p.j_max + 1)])
    log_r = np.unique(np.concatenate([grid, dyadic_x, [x0]]))[::-1]

    ne = p.n * p.eps

    def rhs(x, y):
        e, et = y
        de = ne * math.copysign(abs(e) ** (1.0 + p.gamma), e) \
            - p.C_am * math.exp(p.alpha * x)
        det = ne * math.copysign(abs(et) ** (1.0 + p.gamma), et)
        return np.array([de, det])

    def rk4_step(x, y, h):
        k1 = rhs(x, y)
        k2 = rhs(x + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(x + h, y + h * k3)
        return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def advance(x, y, target):
        """RK4 from x to target (target < x), relative error control 1e-11."""
        h = -(x - target)
        n_sub = 1
        while True:
            hh = h / n_sub
            y_a = y.copy()
            xa = x
            for _ in range(n_sub):
                y_a = rk4_step(xa, y_a, hh)
                xa += hh
            y_b = y.copy()
            xb = x
            for _ in range(2 * n_sub):
                y_b = rk4_step(xb, y_b, hh / 2)
                xb += hh / 2
            scale = float(np.max(np.abs(y_b))) + 1e-300
            err = float(np.max(np.abs(y_a - y_b))) / scale
            if err <= 1e-11 or n_sub >= 1 << 16:
                # one Richardson level on top of the halved-step result
                return (16.0 * y_b - y_a) / 15.0
            n_sub *= 2

    et0 = p.e0 + 2.0 * p.C_am * p.r0**p.alpha / p.alpha
    y = np.array([p.e0, et0])
    e_vals = np.empty(len(log_r))
    et_vals = np.empty(len(log_r))
    e_vals[0], et_vals[0] = y
    for i in range(1, len(log_r)):
        y = advance(log_r[i - 1], y, log_r[i])
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > 1e12:
            raise OverflowError(
                "excess blew up during backward integration; parameters sit "
                "outside the small-radius regime"
            )
        e_vals[i], et_vals[i] = y

    monitored = monitored_quantity(p, et_vals, log_r)
    bound = _closed_form(p, log_r)
    dyadic_index = {}
    for k, xk in enumerate(dyadic_x):
        dyadic_index[k] = int(np.argmin(np.abs(log_r - xk)))

    absorption = None
    if p.C_am > 0:
        shift = 2.0 * p.C_am * np.exp(p.alpha * log_r) / p.alpha
        ok = shift <= et_vals / 10.0
        if np.any(ok):
            absorption = float(log_r[np.argmax(ok)])
    return DecayTrajectory(p, log_r, e_vals, et_vals, monitored, bound,
                           dyadic_index, absorption)


def dyadic_flat_sum(traj, j, i):
    """Flat-norm model sum S(j, i) = sum_k 2^(k/2) e(2^-2^k r0)^(1/2).

    The terms become geometric with ratio 2^((1-1/gamma)/2); the returned
    ``slope_fit`` is log2 of that ratio estimated from the last term pairs,
    and ``tail_closed`` adds a geometric closure so S(j, infinity) can be
    compared against C 2^((1-1/gamma) j / 2).
    """
    p = traj.params
    if i > p.j_max or j < 0 or j > i:
        raise ValueError(f"dyadic range [{j}, {i}] not covered (j_max={p.j_max})")
    ks = np.arange(j, i + 1)
    terms = np.array([2.0 ** (k / 2.0) * math.sqrt(max(traj.e_at_dyadic(k), 0.0))
                      for k in ks])
    tails = np.cumsum(terms[::-1])[::-1]   # tails[m] = sum_{k >= j+m}
    term_ratios = terms[1:] / np.maximum(terms[:-1], 1e-300)

    usable = terms > 1e-140
    slope = np.nan
    rho = 0.0
    if np.sum(usable) >= 3:
        rr = term_ratios[usable[:-1] & usable[1:]]
        last = rr[-2:] if len(rr) >= 2 else rr
        rho = float(np.mean(last))
        if 0.0 < rho < 1.0:
            slope = math.log2(rho)
    closure = terms[-1] * rho / (1.0 - rho) if 0.0 < rho < 1.0 else 0.0
    tail_closed = tails + closure
    # prefactor anchored in the asymptotic tail, where the rate is attained;
    # pre-asymptotic sums sit below the resulting envelope
    c_fit = np.nan
    if np.isfinite(slope):
        jj = ks[np.where(usable)[0][-1]]
        c_fit = float(tail_closed[np.where(usable)[0][-1]]
                      / 2.0 ** (slope * jj))
    return {
        "S": float(terms.sum()),
        "terms": terms,
        "tail_sums": tails,
        "tail_closed": tail_closed,
        "term_ratios": term_ratios,
        "slope_fit": slope,
        "rate_exponent": slope,   # compare with (gamma-1)/(2 gamma)
        "prefactor_fit": c_fit,
    }


def fit_power_rate(traj, r_hi=0.5, r_lo=1e-8):
    """Least-squares slope of log e vs log r over [r_lo, r_hi] * r0."""
    p = traj.params
    mask = (traj.log_r <= math.log(p.r0 * r_hi)) & \
           (traj.log_r >= math.log(p.r0 * r_lo)) & (traj.e > 0)
    if np.sum(mask) < 2:
        raise ValueError("trajectory too short for a power fit")
    return float(np.polyfit(traj.log_r[mask], np.log(traj.e[mask]), 1)[0])
