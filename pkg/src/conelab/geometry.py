"""Discrete cross-sections of the built-in stationary cone families.

A cross-section is the link of a cone in the unit sphere, discretized on a
tensor grid with analytic tangent/normal frames, quadrature weights and second
fundamental form.  Three families are built in:

* ``plane``: an n-plane through the origin in R^(n+k); the link is a great
  sphere and the second fundamental form vanishes.
* ``sphere_product``: the minimal cone over S^p(a) x S^q(b) with the critical
  radii a = sqrt(p/(p+q)), b = sqrt(q/(p+q)); codimension one.
* ``clifford``: alias for ``sphere_product`` with p = q = 1.
"""

import dataclasses
import math

import numpy as np

from .harmonics import make_factor

FORMAT_VERSION = 1

FAMILIES = ("plane", "clifford", "sphere_product")


class UnsupportedConeError(ValueError):
    """Cone family or parameter combination outside the built-in set."""


@dataclasses.dataclass(frozen=True)
class ConeSpec:
    """Parameters selecting a built-in cone and its discretization.

    ``resolution`` holds one grid size per factor (polar count for sphere
    factors).  ``quadrature_order`` is the azimuth oversampling factor of
    sphere factors.
    """

    family: str
    n: int = 0
    k: int = 0
    p: int = 0
    q: int = 0
    resolution: tuple = (24,)
    quadrature_order: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedConeError(f"unknown family {self.family!r}")
        if any(r < 8 for r in self.resolution):
            raise ValueError("resolution must be >= 8 per factor")
        if self.quadrature_order < 2:
            raise ValueError("quadrature_order must be >= 2")
        if self.family == "plane":
            if self.n < 2 or self.k < 1:
                raise UnsupportedConeError("plane requires n >= 2, k >= 1")
            if self.n - 1 not in (1, 2):
                raise UnsupportedConeError(
                    "plane cross-sections are built for n in {2, 3} only"
                )
            if len(self.resolution) != 1:
                raise ValueError("plane takes a single-factor resolution")
        else:
            p, q = self._pq()
            if p < 1 or q < 1:
                raise UnsupportedConeError("sphere product requires p, q >= 1")
            if p > 2 or q > 2:
                raise UnsupportedConeError(
                    "sphere product factors are built for dimensions 1 and 2 only"
                )
            if len(self.resolution) != 2:
                raise ValueError("sphere product takes two factor resolutions")

    def _pq(self):
        if self.family == "clifford":
            return 1, 1
        return self.p, self.q

    def cone_dimension(self):
        if self.family == "plane":
            return self.n
        p, q = self._pq()
        return p + q + 1

    def codimension(self):
        return self.k if self.family == "plane" else 1

    def label(self):
        if self.family == "plane":
            return f"plane{self.n}x{self.k}"
        if self.family == "clifford":
            return "clifford"
        return f"product{self.p}x{self.q}"

    def to_dict(self):
        return dataclasses.asdict(self)


class CrossSection:
    """Discretized link of a cone, with frames, weights, curvature and basis.

    Immutable after construction; all downstream modules only read from it.
    """

    def __init__(self, spec, factors, nodes, tangents, normals, weights, sff,
                 nu_derivs, cone_dim, analytic_area, family_tag):
        self.spec = spec
        self.factors = factors
        self.nodes = nodes                  # (N, amb)
        self.tangent_frames = tangents      # (N, T, amb)
        self.normal_frames = normals        # (N, k, amb)
        self.weights = weights              # (N,)
        self.sff = sff                      # (N, T, T, k), values B(tau_i,tau_j).nu_c
        self.nu_derivs = nu_derivs          # (N, T, k, amb), d_{tau_t} nu_c
        self.cone_dim = cone_dim            # n
        self.dim_sigma = cone_dim - 1
        self.codim = normals.shape[1]
        self.analytic_area = analytic_area
        self.family_tag = family_tag
        self.n_nodes = nodes.shape[0]
        self._assemble_basis()
        # constant curvature term |B|^2 + (n-1) entering the Jacobi operator
        b2 = np.einsum("nijc,nijc->n", sff, sff)
        self.curvature_shift = float(b2[0]) + (cone_dim - 1)
        if not np.allclose(b2, b2[0], atol=1e-12):
            raise RuntimeError("built-in families must have constant |B|^2")

    def _assemble_basis(self):
        if len(self.factors) == 1:
            f = self.factors[0]
            self.basis_values = f.mode_values.copy()
            self.basis_derivs = np.moveaxis(f.mode_derivs, 2, 0)
            self.laplace_eigs = f.laplace_eigs.copy()
            self.mode_labels = list(f.mode_labels)
        else:
            f1, f2 = self.factors
            v1, v2 = f1.mode_values, f2.mode_values
            n1, m1 = v1.shape
            n2, m2 = v2.shape
            self.basis_values = np.einsum("ia,jb->ijab", v1, v2).reshape(n1 * n2, m1 * m2)
            derivs = []
            for t in range(f1.mode_derivs.shape[2]):
                d = np.einsum("ia,jb->ijab", f1.mode_derivs[:, :, t], v2)
                derivs.append(d.reshape(n1 * n2, m1 * m2))
            for t in range(f2.mode_derivs.shape[2]):
                d = np.einsum("ia,jb->ijab", v1, f2.mode_derivs[:, :, t])
                derivs.append(d.reshape(n1 * n2, m1 * m2))
            self.basis_derivs = np.array(derivs)
            self.laplace_eigs = np.add.outer(f1.laplace_eigs, f2.laplace_eigs).ravel()
            self.mode_labels = [
                f"{a}|{b}" for a in f1.mode_labels for b in f2.mode_labels
            ]
        self.n_scalar_modes = self.basis_values.shape[1]
        self.n_modes = self.n_scalar_modes * self.codim

    def jacobi_diagonal(self):
        """Eigenvalues of the Jacobi operator per (scalar mode, normal comp)."""
        lam = self.laplace_eigs - self.curvature_shift
        return np.repeat(lam, self.codim)

    def mode_index(self, scalar_mode, comp):
        return scalar_mode * self.codim + comp

    def flat_labels(self):
        return [
            f"{lbl}|nu{c}" for lbl in self.mode_labels for c in range(self.codim)
        ]


def _embed(block, offset, ambient):
    out = np.zeros(block.shape[:-1] + (ambient,))
    out[..., offset:offset + block.shape[-1]] = block
    return out


def _plane_section(spec):
    n, k = spec.n, spec.k
    factor = make_factor(n - 1, spec.resolution[0], 1.0, spec.quadrature_order)
    amb = n + k
    nodes = _embed(factor.unit_nodes, 0, amb)
    tangents = np.moveaxis(_embed(factor.tangents, 0, amb), 0, 1)
    nn = factor.n_nodes
    normals = np.zeros((nn, k, amb))
    for c in range(k):
        normals[:, c, n + c] = 1.0
    t_count = n - 1
    sff = np.zeros((nn, t_count, t_count, k))
    nu_derivs = np.zeros((nn, t_count, k, amb))
    area = factor.surface_measure()
    return CrossSection(spec, [factor], nodes, tangents, normals,
                        factor.weights.copy(), sff, nu_derivs, n, area,
                        spec.label())


def _product_section(spec, p, q, a, b):
    f1 = make_factor(p, spec.resolution[0], a, spec.quadrature_order)
    f2 = make_factor(q, spec.resolution[1], b, spec.quadrature_order)
    amb = (p + 1) + (q + 1)
    n = p + q + 1
    n1, n2 = f1.n_nodes, f2.n_nodes
    nn = n1 * n2

    x1 = np.repeat(f1.unit_nodes, n2, axis=0)
    x2 = np.tile(f2.unit_nodes, (n1, 1))
    nodes = np.concatenate([a * x1, b * x2], axis=1)

    t_count = p + q
    tangents = np.zeros((nn, t_count, amb))
    for t in range(p):
        tangents[:, t, :p + 1] = np.repeat(f1.tangents[t], n2, axis=0)
    for t in range(q):
        tangents[:, p + t, p + 1:] = np.tile(f2.tangents[t], (n1, 1))

    normals = np.concatenate([b * x1, -a * x2], axis=1)[:, None, :]

    weights = np.repeat(f1.weights, n2) * np.tile(f2.weights, n1)

    # principal curvatures w.r.t. nu: -b/a on the first factor, +a/b on the second
    kappa = np.array([-b / a] * p + [a / b] * q)
    sff = np.zeros((nn, t_count, t_count, 1))
    for t in range(t_count):
        sff[:, t, t, 0] = kappa[t]
    nu_derivs = np.zeros((nn, t_count, 1, amb))
    for t in range(t_count):
        nu_derivs[:, t, 0, :] = -kappa[t] * tangents[:, t, :]

    area = f1.surface_measure() * f2.surface_measure()
    return CrossSection(spec, [f1, f2], nodes, tangents, normals, weights,
                        sff, nu_derivs, n, area, spec.label())


def build_cross_section(spec):
    """Build the discrete cross-section for a built-in cone family."""
    if spec.family == "plane":
        return _plane_section(spec)
    p, q = spec._pq()
    a = math.sqrt(p / (p + q))
    b = math.sqrt(q / (p + q))
    return _product_section(spec, p, q, a, b)


def build_product_section(p, q, a, b, resolution, quadrature_order=2):
    """Product-of-spheres link with explicit radii (a, b), a^2 + b^2 = 1.

    Testing hook: radii off the minimal values give a non-stationary link.
    """
    if abs(a * a + b * b - 1.0) > 1e-12:
        raise ValueError("radii must satisfy a^2 + b^2 = 1")
    spec = ConeSpec(family="sphere_product", p=p, q=q, resolution=tuple(resolution),
                    quadrature_order=quadrature_order)
    return _product_section(spec, p, q, a, b)


def quadrature(cs, f):
    """Integrate per-node samples against the cross-section weights."""
    f = np.asarray(f, dtype=float)
    if f.shape != (cs.n_nodes,):
        raise ValueError(f"expected {cs.n_nodes} node values, got shape {f.shape}")
    return float(cs.weights @ f)


def verify_stationarity(cs, tol, n_samples=8, seed=0):
    """First-variation residual of the unperturbed link over sampled fields.

    Returns a report dict with the worst ratio |dA(0)[zeta]| / ||zeta||_H1
    over a seeded ensemble of band-limited normal fields.
    """
    from .functional import NormalField, area_gradient

    rng = np.random.default_rng(seed)
    grad0 = area_gradient(cs, NormalField.zero(cs))
    ratios = []
    for _ in range(n_samples):
        coef = rng.standard_normal((cs.n_scalar_modes, cs.codim))
        zeta = NormalField(cs, coef)
        ratios.append(abs(float(np.sum(grad0 * coef))) / zeta.h1_norm())
    worst = max(ratios)
    return {
        "max_residual": worst,
        "residuals": ratios,
        "tol": tol,
        "passed": bool(worst <= tol),
        "family": cs.family_tag,
        "n_nodes": cs.n_nodes,
    }


def save_cross_section(cs, path):
    """Snapshot nodes, frames, weights and curvature to a versioned .npz."""
    spec = cs.spec
    np.savez(
        path,
        format_version=FORMAT_VERSION,
        family=spec.family,
        n=spec.n, k=spec.k, p=spec.p, q=spec.q,
        resolution=np.array(spec.resolution),
        quadrature_order=spec.quadrature_order,
        nodes=cs.nodes,
        tangent_frames=cs.tangent_frames,
        normal_frames=cs.normal_frames,
        weights=cs.weights,
        sff=cs.sff,
    )


def load_cross_section(path):
    """Rebuild a snapshotted cross-section and check it against stored arrays."""
    data = np.load(path, allow_pickle=False)
    version = int(data["format_version"])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    spec = ConeSpec(
        family=str(data["family"]),
        n=int(data["n"]), k=int(data["k"]),
        p=int(data["p"]), q=int(data["q"]),
        resolution=tuple(int(r) for r in data["resolution"]),
        quadrature_order=int(data["quadrature_order"]),
    )
    cs = build_cross_section(spec)
    for name, arr in (("nodes", cs.nodes), ("tangent_frames", cs.tangent_frames),
                      ("normal_frames", cs.normal_frames), ("weights", cs.weights),
                      ("sff", cs.sff)):
        if not np.allclose(arr, data[name], atol=1e-12):
            raise ValueError(f"snapshot field {name} inconsistent with rebuild")
    return cs
