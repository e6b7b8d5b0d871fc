"""Renormalized graph areas over a cross-section and their variations.

The central objects are spherical graphs: a normal field u deforms the link
into {(theta + u(theta)) / sqrt(1 + |u|^2)} and ``area_sigma`` measures the
area change.  ``area_cone`` measures the corresponding change for graphs over
the cone, via the exact n-dimensional Gram determinant on a tensor
(radial Gauss) x (cross-section) grid.

Fields are stored by their coefficients in the cross-section's resolved
tensor-harmonic band, which makes tangential differentiation exact and the
Jacobi operator diagonal.
"""

import warnings

import numpy as np
from scipy.special import roots_legendre

from .errors import (GraphDegenerateError, RadialResolutionError,
                     UnresolvedTailError)

_DET_FLOOR = 1e-14


class NormalField:
    """Section of the cone's normal bundle restricted to the link.

    Canonical storage is the coefficient array (scalar modes x normal
    components); node values and tangential derivatives are derived from it,
    so the tangential part is zero by construction.  Instances are immutable;
    arithmetic returns new fields and norms are cached on first use.
    """

    __slots__ = ("cs", "coef", "_values", "_derivs", "_norms")

    def __init__(self, cs, coef):
        coef = np.asarray(coef, dtype=float)
        if coef.shape != (cs.n_scalar_modes, cs.codim):
            raise ValueError(
                f"coefficient shape {coef.shape} does not match band "
                f"({cs.n_scalar_modes}, {cs.codim})"
            )
        object.__setattr__(self, "cs", cs)
        object.__setattr__(self, "coef", coef.copy())
        self.coef.setflags(write=False)
        object.__setattr__(self, "_values", None)
        object.__setattr__(self, "_derivs", None)
        object.__setattr__(self, "_norms", {})

    def __setattr__(self, name, value):
        raise AttributeError("NormalField is immutable")

    @classmethod
    def zero(cls, cs):
        return cls(cs, np.zeros((cs.n_scalar_modes, cs.codim)))

    @classmethod
    def from_values(cls, cs, values, tail_tol=1e-8):
        """Project node values onto the resolved band.

        Raises UnresolvedTailError when the discarded tail carries more than
        ``tail_tol`` of the total energy.
        """
        values = np.asarray(values, dtype=float)
        if values.shape != (cs.n_nodes, cs.codim):
            raise ValueError("values must have shape (n_nodes, codim)")
        coef = cs.basis_values.T @ (cs.weights[:, None] * values)
        total = float(np.einsum("n,nc,nc->", cs.weights, values, values))
        resolved = float(np.sum(coef**2))
        tail = max(total - resolved, 0.0)
        if total > 0 and tail > tail_tol * total:
            raise UnresolvedTailError(
                f"tail energy fraction {tail / total:.3e} exceeds {tail_tol:.1e}; "
                "increase the resolution"
            )
        return cls(cs, coef)

    @property
    def values(self):
        if self._values is None:
            object.__setattr__(self, "_values", self.cs.basis_values @ self.coef)
        return self._values

    @property
    def deriv_values(self):
        """Unit-speed tangential derivatives of the components, (T, N, k)."""
        if self._derivs is None:
            d = np.einsum("tnm,mc->tnc", self.cs.basis_derivs, self.coef)
            object.__setattr__(self, "_derivs", d)
        return self._derivs

    def _cache(self, key, fn):
        if key not in self._norms:
            self._norms[key] = fn()
        return self._norms[key]

    def l2_norm(self):
        return self._cache("l2", lambda: float(np.sqrt(np.sum(self.coef**2))))

    def h1_norm(self):
        def compute():
            w = 1.0 + self.cs.laplace_eigs
            return float(np.sqrt(np.sum(w[:, None] * self.coef**2)))
        return self._cache("h1", compute)

    def c0_norm(self):
        def compute():
            return float(np.max(np.linalg.norm(self.values, axis=1), initial=0.0))
        return self._cache("c0", compute)

    def c1_norm(self):
        def compute():
            d = self.deriv_values
            mag = np.sqrt(np.einsum("tnc,tnc->n", d, d))
            return float(np.max(mag, initial=0.0))
        return self._cache("c1", compute)

    def holder_proxy(self, alpha=0.5):
        """Sup of alpha-quotients of first derivatives over nearby node pairs."""
        def compute():
            ii, jj, inv_dist = _neighbor_pairs(self.cs, alpha=alpha)
            d = self.deriv_values
            diff = d[:, ii, :] - d[:, jj, :]
            num2 = np.einsum("tpc,tpc->p", diff, diff)
            return float(np.sqrt(np.max(num2 * inv_dist, initial=0.0)))
        key = f"holder{alpha}"
        return self._cache(key, compute)

    def c1alpha_proxy(self, alpha=0.5):
        return max(self.c1_norm(), self.holder_proxy(alpha))

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        self._check_mate(other)
        return NormalField(self.cs, self.coef + other.coef)

    def __sub__(self, other):
        self._check_mate(other)
        return NormalField(self.cs, self.coef - other.coef)

    def __mul__(self, scalar):
        return NormalField(self.cs, self.coef * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return NormalField(self.cs, -self.coef)

    def _check_mate(self, other):
        if other.cs is not self.cs:
            raise ValueError("fields live on different cross-sections")


def _neighbor_pairs(cs, window=3, alpha=0.5):
    """Node pairs within ``window`` grid cells plus 1/dist^(2 alpha), cached."""
    cached = getattr(cs, "_neighbor_pairs", {}).get(alpha)
    if cached is not None:
        return cached
    dims = []
    for f in cs.factors:
        if f.dim == 1:
            dims.append((f.n_nodes, True))
        else:
            dims.append((f.n_polar, False))
            dims.append((f.n_azimuth, True))
    sizes = [d[0] for d in dims]
    index = np.arange(cs.n_nodes).reshape(sizes)
    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    offsets = np.stack(np.meshgrid(*([np.arange(-window, window + 1)] * len(dims)),
                                   indexing="ij"), axis=-1).reshape(-1, len(dims))
    pairs_i, pairs_j = [], []
    for off in offsets:
        nz = off[off != 0]
        if len(nz) == 0 or nz[0] < 0:
            continue  # keep one orientation per unordered pair
        mask = np.ones(sizes, dtype=bool)
        shifted = []
        for axis, (size, periodic) in enumerate(dims):
            tgt = grids[axis] + off[axis]
            if periodic:
                tgt = tgt % size
            else:
                mask &= (tgt >= 0) & (tgt < size)
                tgt = np.clip(tgt, 0, size - 1)
            shifted.append(tgt)
        jidx = index[tuple(shifted)]
        pairs_i.append(index[mask].ravel())
        pairs_j.append(jidx[mask].ravel())
    ii = np.concatenate(pairs_i)
    jj = np.concatenate(pairs_j)
    dist2 = np.sum((cs.nodes[ii] - cs.nodes[jj]) ** 2, axis=1)
    keep = dist2 > 1e-28
    ii, jj, dist2 = ii[keep], jj[keep], dist2[keep]
    pairs = (ii, jj, dist2 ** (-alpha))
    if not hasattr(cs, "_neighbor_pairs"):
        cs._neighbor_pairs = {}
    cs._neighbor_pairs[alpha] = pairs
    return pairs


# -- spherical graph geometry -----------------------------------------------

def _graph_columns(cs, values, derivs):
    """Differential columns E_t of the graph map and shared intermediates.

    values: (N, k) frame components; derivs: (T, N, k).  Returns a dict with
    ambient u, u_t, V = theta + u, W, the columns E (T, N, amb) and the
    tangential Gram matrix (N, T, T).
    """
    nu = cs.normal_frames
    u = np.einsum("nc,nca->na", values, nu)
    u_t = (np.einsum("tnc,nca->tna", derivs, nu)
           + np.einsum("nc,ntca->tna", values, cs.nu_derivs))
    V = cs.nodes + u
    w2 = 1.0 + np.einsum("na,na->n", u, u)
    W = np.sqrt(w2)
    tau = np.moveaxis(cs.tangent_frames, 1, 0)  # (T, N, amb)
    uu_t = np.einsum("na,tna->tn", u, u_t)
    E = (tau + u_t) / W[None, :, None] - V[None] * (uu_t / (W**3))[:, :, None]
    gram = np.einsum("tna,sna->nts", E, E)
    return {"u": u, "u_t": u_t, "V": V, "W": W, "tau": tau,
            "uu_t": uu_t, "E": E, "gram": gram}


def _gram_dets(gram, what):
    det = np.linalg.det(gram)
    if np.min(det) <= _DET_FLOOR:
        raise GraphDegenerateError(
            f"{what}: Gram determinant {np.min(det):.3e} at some node; "
            "the field is too large for a graph"
        )
    return det


def area_sigma(cs, u):
    """Renormalized area of the spherical graph of ``u`` over the link."""
    if u.c0_norm() >= 1.0:
        raise GraphDegenerateError("|u| must stay below 1 for a spherical graph")
    g = _graph_columns(cs, u.values, u.deriv_values)
    det = _gram_dets(g["gram"], "area_sigma")
    return float(cs.weights @ np.sqrt(det) - np.sum(cs.weights))


def area_gradient(cs, u):
    """Gradient of the discrete graph area w.r.t. the coefficients of ``u``.

    Exact adjoint of the Gram-determinant composition; shape (modes, codim).
    Used by the Newton reduction; agrees with the central-difference
    ``first_variation`` to its truncation error.
    """
    g = _graph_columns(cs, u.values, u.deriv_values)
    det = _gram_dets(g["gram"], "area_gradient")
    J = np.sqrt(det)
    ginv = np.linalg.inv(g["gram"])
    E, W, V, u_amb, u_t = g["E"], g["W"], g["V"], g["u"], g["u_t"]
    uu_t, tau = g["uu_t"], g["tau"]

    P = np.einsum("nts,sna,n->tna", ginv, E, J)
    VP = np.einsum("tna,na->tn", P, V)
    W3 = W**3
    b = P / W[None, :, None] - (VP / W3)[:, :, None] * u_amb[None]

    Ptau = np.einsum("tna,tna->tn", P, tau + u_t)
    coef_u = np.sum(-Ptau / W3 + 3.0 * VP * uu_t / W**5, axis=0)
    a = (coef_u[:, None] * u_amb
         - np.einsum("tn,tna->na", uu_t / W3, P)
         - np.einsum("tn,tna->na", VP / W3, u_t))

    dJ_df = (np.einsum("na,nca->nc", a, cs.normal_frames)
             + np.einsum("tna,ntca->nc", b, cs.nu_derivs))
    dJ_dg = np.einsum("tna,nca->tnc", b, cs.normal_frames)

    grad = cs.basis_values.T @ (cs.weights[:, None] * dJ_df)
    for t in range(cs.dim_sigma):
        grad += cs.basis_derivs[t].T @ (cs.weights[:, None] * dJ_dg[t])
    return grad


def first_variation(cs, u, zeta, step=1e-5):
    """Directional derivative of area_sigma at ``u`` along ``zeta``.

    Central differences with one Richardson level; returns (value, error
    estimate).  The estimate carries a cancellation floor: the differenced
    areas sit on top of the full link area, so steps can underflow the
    roundoff of that scale.  Underflow is reported via RuntimeWarning, never
    fatal.
    """
    def diff(h):
        return (area_sigma(cs, u + h * zeta) - area_sigma(cs, u - h * zeta)) / (2 * h)

    d1 = diff(step)
    d2 = diff(step / 2)
    value = (4.0 * d2 - d1) / 3.0
    roundoff = 4.0 * np.finfo(float).eps * float(np.sum(cs.weights)) / step
    if abs(value) < roundoff:
        warnings.warn(
            "first_variation result below the cancellation floor "
            f"({roundoff:.1e}); the step underflows the area magnitude",
            RuntimeWarning, stacklevel=2,
        )
    return value, max(abs(d2 - d1) / 3.0, roundoff)


def second_variation_assemble(cs):
    """Jacobi operator matrix on stacked band coefficients.

    Diagonal in the tensor-harmonic basis: Laplacian eigenvalue minus the
    constant curvature term |B|^2 + (n-1).
    """
    return np.diag(cs.jacobi_diagonal())


def quadratic_form(cs, L, zeta):
    flat = zeta.coef.reshape(-1)
    return float(flat @ (L @ flat))


def second_variation_at(cs, g, zeta, step=1e-3):
    """Second variation of the area at base field ``g`` along ``zeta``.

    Five-point second difference of t -> area_sigma(g + t zeta); returns
    (value, error estimate vs. the three-point stencil).
    """
    a = {t: area_sigma(cs, g + (t * step) * zeta) for t in (-2, -1, 0, 1, 2)}
    five = (-a[2] + 16 * a[1] - 30 * a[0] + 16 * a[-1] - a[-2]) / (12 * step**2)
    three = (a[1] - 2 * a[0] + a[-1]) / step**2
    return five, abs(five - three)


# -- radial fields and cone areas -------------------------------------------

def radial_rule(n_radial):
    """Gauss-Legendre nodes/weights mapped to (0, 1)."""
    x, w = roots_legendre(n_radial)
    return 0.5 * (x + 1.0), 0.5 * w


class RadialField:
    """Field g(r, theta) on the cone, sampled on a radial Gauss grid.

    Rows 0..R-1 hold the Gauss nodes used for cone quadrature; the final row
    is the boundary r = 1 and equals the designated trace exactly.
    """

    def __init__(self, cs, radii, rad_weights, coef, dcoef, trace):
        self.cs = cs
        self.radii = radii
        self.rad_weights = rad_weights
        self.coef = coef            # (R+1, M, k)
        self.dcoef = dcoef          # (R+1, M, k)
        self.trace = trace
        if not np.array_equal(coef[-1], trace.coef):
            raise ValueError("boundary row must equal the trace exactly")

    @classmethod
    def from_profile(cls, cs, profile, dprofile=None, n_radial=32):
        """Build from r -> NormalField; derivative by formula or central FD."""
        nodes, w = radial_rule(n_radial)
        radii = np.append(nodes, 1.0)
        coef = np.empty((len(radii), cs.n_scalar_modes, cs.codim))
        for i, r in enumerate(radii):
            coef[i] = profile(float(r)).coef
        dcoef = np.empty_like(coef)
        if dprofile is not None:
            for i, r in enumerate(radii):
                dcoef[i] = dprofile(float(r)).coef
        else:
            h = 1e-6
            for i, r in enumerate(radii[:-1]):
                dcoef[i] = (profile(r + h).coef - profile(r - h).coef) / (2 * h)
            c0, c1, c2 = (profile(1.0).coef, profile(1.0 - h).coef,
                          profile(1.0 - 2 * h).coef)
            dcoef[-1] = (3 * c0 - 4 * c1 + c2) / (2 * h)
        trace = NormalField(cs, coef[-1])
        return cls(cs, radii, w, coef, dcoef, trace)

    @classmethod
    def constant(cls, cs, c, n_radial=32):
        nodes, w = radial_rule(n_radial)
        radii = np.append(nodes, 1.0)
        coef = np.broadcast_to(c.coef, (len(radii),) + c.coef.shape).copy()
        dcoef = np.zeros_like(coef)
        return cls(cs, radii, w, coef, dcoef, c)

    def slice_field(self, idx):
        return NormalField(self.cs, self.coef[idx])

    def n_gauss(self):
        return len(self.rad_weights)


def _band_values(cs, coef_rows, with_derivs=True):
    """Node values and tangential derivatives for stacked coefficient rows.

    coef_rows: (R, M, k) -> values (R, N, k), derivs (T, R, N, k); three
    matmuls instead of per-radius contractions.
    """
    R, M, k = coef_rows.shape
    flat = coef_rows.transpose(1, 0, 2).reshape(M, R * k)
    vals = (cs.basis_values @ flat).reshape(cs.n_nodes, R, k).transpose(1, 0, 2)
    if not with_derivs:
        return vals, None
    T = cs.dim_sigma
    d = (cs.basis_derivs.reshape(T * cs.n_nodes, M) @ flat)
    derivs = d.reshape(T, cs.n_nodes, R, k).transpose(0, 2, 1, 3)
    return vals, derivs


def area_cone(cs, g, rtol=None):
    """Renormalized area of the cone graph of ``g`` via the full Jacobian.

    Quadrature is the tensor product of the radial Gauss rule with the
    cross-section weights; the whole radial batch is evaluated in one pass.
    With ``rtol`` set, the tail of the Legendre expansion of the radial
    integrand serves as an error estimate and a too-coarse grid raises
    RadialResolutionError.
    """
    n = cs.cone_dim
    R = g.n_gauss()
    vals, derivs = _band_values(cs, g.coef[:R])
    dvals_r, _ = _band_values(cs, g.dcoef[:R], with_derivs=False)
    if np.max(np.einsum("rnc,rnc->rn", vals, vals), initial=0.0) >= 1.0:
        raise GraphDegenerateError("sup_r |g| must stay below 1")

    nu = cs.normal_frames
    u = np.einsum("rnc,nca->rna", vals, nu)
    u_t = (np.einsum("trnc,nca->trna", derivs, nu)
           + np.einsum("rnc,ntca->trna", vals, cs.nu_derivs))
    V = cs.nodes[None] + u
    W = np.sqrt(1.0 + np.einsum("rna,rna->rn", u, u))
    tau = np.moveaxis(cs.tangent_frames, 1, 0)
    uu_t = np.einsum("rna,trna->trn", u, u_t)
    E = (tau[:, None] + u_t) / W[None, :, :, None] \
        - V[None] * (uu_t / W[None] ** 3)[..., None]
    gram = np.einsum("trna,srna->rnts", E, E)

    u_r = np.einsum("rnc,nca->rna", dvals_r, nu)
    F = V / W[..., None]
    dF_r = (u_r / W[..., None]
            - V * (np.einsum("rna,rna->rn", u, u_r) / W**3)[..., None])
    radii = g.radii[:R]
    C_r = F + radii[:, None, None] * dF_r

    M = np.empty((R, cs.n_nodes, n, n))
    M[:, :, 0, 0] = np.einsum("rna,rna->rn", C_r, C_r)
    cross = radii[:, None, None] * np.einsum("rna,trna->rnt", C_r, E)
    M[:, :, 0, 1:] = cross
    M[:, :, 1:, 0] = cross
    M[:, :, 1:, 1:] = (radii**2)[:, None, None, None] * gram
    det = np.linalg.det(M)
    if np.min(det) <= _DET_FLOOR**2:
        raise GraphDegenerateError("degenerate cone Jacobian")
    slice_sums = np.sqrt(det) @ cs.weights
    total = float(g.rad_weights @ slice_sums)
    area = total - float(np.sum(cs.weights)) / n
    if rtol is not None:
        # spectral tail of the radial integrand as a quadrature error proxy
        coeffs = np.polynomial.legendre.legfit(2.0 * radii - 1.0, slice_sums,
                                               deg=R - 1)
        estimate = float(np.sum(np.abs(coeffs[-2:])))
        if estimate > rtol * max(abs(area), 1.0):
            raise RadialResolutionError(
                f"radial quadrature error estimate {estimate:.2e} exceeds "
                f"rtol * scale; increase n_radial"
            )
    return area


def radial_energy(cs, g, power=None):
    """integral of |d_r g|^2 r^p dr over the Gauss grid (p = n+1 by default)."""
    p = cs.cone_dim + 1 if power is None else power
    R = g.n_gauss()
    norms = np.einsum("rmc,rmc->r", g.dcoef[:R], g.dcoef[:R])
    return float(np.sum(g.rad_weights * g.radii[:R]**p * norms))


FIELD_SNAPSHOT_VERSION = 1


def save_field(field, path):
    """Snapshot a normal field's band coefficients to a versioned .npz."""
    np.savez(path, snapshot_version=FIELD_SNAPSHOT_VERSION, coef=field.coef)


def load_field(cs, path):
    data = np.load(path)
    if int(data["snapshot_version"]) != FIELD_SNAPSHOT_VERSION:
        raise ValueError("unsupported field snapshot version")
    return NormalField(cs, data["coef"])


def slicing_check(cs, g, c_sl=1.0):
    """Compare the cone area with its sliced upper bound.

    lhs = area_cone(g); rhs = int A_sigma(g(r)) r^(n-1) dr
    + c_sl (1 + sup_r ||g(r)||_{C^{1,alpha} proxy}) * radial energy.
    Also reports the minimal constant making the margin nonnegative.
    """
    n = cs.cone_dim
    lhs = area_cone(cs, g)
    R = g.n_gauss()
    slice_int = 0.0
    sup_proxy = 0.0
    for idx in range(R):
        f = g.slice_field(idx)
        slice_int += g.rad_weights[idx] * g.radii[idx]**(n - 1) * area_sigma(cs, f)
        sup_proxy = max(sup_proxy, f.c1alpha_proxy())
    energy = radial_energy(cs, g)
    rhs = slice_int + c_sl * (1.0 + sup_proxy) * energy
    if energy > 1e-30:
        min_c = max(0.0, (lhs - slice_int) / ((1.0 + sup_proxy) * energy))
    else:
        min_c = 0.0
    return {
        "lhs": lhs,
        "rhs": rhs,
        "margin": rhs - lhs,
        "c_sl": c_sl,
        "min_c_sl": min_c,
        "slice_integral": slice_int,
        "radial_energy": energy,
        "sup_c1alpha": sup_proxy,
    }
