"""Grids and Laplace-Beltrami eigenbases for round circle and 2-sphere factors.

Every built-in cross-section is an isometric product of round factors, so a
tensor basis of circle harmonics and real spherical harmonics diagonalizes the
Laplacian exactly.  Each factor exposes its nodes (on the unit factor sphere),
per-node quadrature weights for the *scaled* factor, orthonormal basis values,
unit-speed tangential derivatives of the basis, and the scaled Laplacian
eigenvalue of every mode.
"""

import math

import numpy as np
from scipy.special import roots_legendre

try:
    from scipy.special import assoc_legendre_p_all
except ImportError:  # scipy < 1.15
    assoc_legendre_p_all = None
    from scipy.special import lpmn


class CircleFactor:
    """Uniform grid and Fourier basis on a circle of radius ``radius``.

    Nodes live on the unit circle in R^2; the radius only enters weights,
    eigenvalues and derivative scaling.  Modes are kept up to ``n_nodes // 4``
    (half the grid Nyquist), so quadrature of mode products is exact.
    """

    dim = 1
    ambient_dim = 2

    def __init__(self, n_nodes, radius):
        if n_nodes < 8:
            raise ValueError("circle factor needs at least 8 nodes")
        self.n_nodes = int(n_nodes)
        self.radius = float(radius)
        self.angles = 2.0 * np.pi * np.arange(self.n_nodes) / self.n_nodes
        # unit-circle points; ambient embedding scales by radius
        self.unit_nodes = np.stack([np.cos(self.angles), np.sin(self.angles)], axis=1)
        self.weights = np.full(self.n_nodes, 2.0 * np.pi * self.radius / self.n_nodes)
        # unit tangent along the (single) coordinate direction
        self.tangents = np.stack([-np.sin(self.angles), np.cos(self.angles)], axis=1)[None, :, :]
        self.max_index = self.n_nodes // 4
        self._build_modes()

    def _build_modes(self):
        a = self.radius
        s = self.angles
        values, dvalues, lam, labels = [], [], [], []
        values.append(np.full(self.n_nodes, 1.0 / math.sqrt(2.0 * np.pi * a)))
        dvalues.append(np.zeros(self.n_nodes))
        lam.append(0.0)
        labels.append("f0")
        for l in range(1, self.max_index + 1):
            nrm = 1.0 / math.sqrt(np.pi * a)
            values.append(nrm * np.cos(l * s))
            dvalues.append(-nrm * l * np.sin(l * s) / a)
            lam.append((l / a) ** 2)
            labels.append(f"f{l}c")
            values.append(nrm * np.sin(l * s))
            dvalues.append(nrm * l * np.cos(l * s) / a)
            lam.append((l / a) ** 2)
            labels.append(f"f{l}s")
        self.mode_values = np.array(values).T          # (nodes, modes)
        # one tangential direction: unit-speed derivative d/(a ds)
        self.mode_derivs = np.array(dvalues).T[:, :, None]
        self.laplace_eigs = np.array(lam)
        self.mode_labels = labels

    def surface_measure(self):
        return 2.0 * np.pi * self.radius


class SphereFactor:
    """Gauss-Legendre x uniform grid and real spherical harmonics on S^2.

    The polar angle uses Gauss-Legendre nodes in cos(phi), which keeps every
    node away from the coordinate poles.  Harmonics are retained up to degree
    ``n_polar // 2`` and are orthonormal under the discrete weights to
    machine precision.
    """

    dim = 2
    ambient_dim = 3

    def __init__(self, n_polar, radius, azimuth_factor=2):
        if n_polar < 8:
            raise ValueError("sphere factor needs at least 8 polar nodes")
        if azimuth_factor < 2:
            raise ValueError("azimuth oversampling factor must be >= 2")
        self.n_polar = int(n_polar)
        self.n_azimuth = int(azimuth_factor * n_polar)
        self.radius = float(radius)
        x, glw = roots_legendre(self.n_polar)
        self.cos_polar = x
        self.sin_polar = np.sqrt(1.0 - x**2)
        self.azimuth = 2.0 * np.pi * np.arange(self.n_azimuth) / self.n_azimuth
        self.n_nodes = self.n_polar * self.n_azimuth

        # flattened grid, polar index major
        cp = np.repeat(self.cos_polar, self.n_azimuth)
        sp = np.repeat(self.sin_polar, self.n_azimuth)
        lam = np.tile(self.azimuth, self.n_polar)
        self.unit_nodes = np.stack([sp * np.cos(lam), sp * np.sin(lam), cp], axis=1)
        w = np.repeat(glw, self.n_azimuth) * (2.0 * np.pi / self.n_azimuth)
        self.weights = w * self.radius**2

        e_phi = np.stack([cp * np.cos(lam), cp * np.sin(lam), -sp], axis=1)
        e_az = np.stack([-np.sin(lam), np.cos(lam), np.zeros_like(lam)], axis=1)
        self.tangents = np.stack([e_phi, e_az])        # (2, nodes, 3)
        self.max_index = self.n_polar // 2
        self._build_modes()

    def _legendre_tables(self, lmax):
        """P_l^m(cos phi) and d/dx P_l^m at the polar nodes, (l, m, node)."""
        if assoc_legendre_p_all is not None:
            table = assoc_legendre_p_all(lmax, lmax, self.cos_polar, diff_n=1)
            return table[0, :, :lmax + 1], table[1, :, :lmax + 1]
        p = np.empty((lmax + 1, lmax + 1, self.n_polar))
        dp = np.empty_like(p)
        for j, x in enumerate(self.cos_polar):
            pj, dpj = lpmn(lmax, lmax, x)
            p[:, :, j] = pj.T
            dp[:, :, j] = dpj.T
        return p, dp

    def _build_modes(self):
        b = self.radius
        lmax = self.max_index
        p, dp = self._legendre_tables(lmax)
        sin_phi = self.sin_polar

        values, dphi, daz, lam, labels = [], [], [], [], []
        for l in range(lmax + 1):
            for m in range(-l, l + 1):
                am = abs(m)
                nrm = math.sqrt(
                    (2 * l + 1) / (4.0 * np.pi)
                    * math.exp(math.lgamma(l - am + 1) - math.lgamma(l + am + 1))
                )
                if m != 0:
                    nrm *= math.sqrt(2.0)
                nrm /= b
                pv = p[l, am]                      # (n_polar,)
                pdv = -sin_phi * dp[l, am]         # d/dphi of P(cos phi)
                if m >= 0:
                    azf = np.cos(m * self.azimuth)
                    dazf = -m * np.sin(m * self.azimuth)
                else:
                    azf = np.sin(am * self.azimuth)
                    dazf = am * np.cos(am * self.azimuth)
                values.append(nrm * np.outer(pv, azf).ravel())
                dphi.append(nrm * np.outer(pdv, azf).ravel() / b)
                daz.append(nrm * np.outer(pv / sin_phi, dazf).ravel() / b)
                lam.append(l * (l + 1) / b**2)
                labels.append(f"Y{l},{m}")
        self.mode_values = np.array(values).T
        self.mode_derivs = np.stack([np.array(dphi).T, np.array(daz).T], axis=2)
        self.laplace_eigs = np.array(lam)
        self.mode_labels = labels

    def surface_measure(self):
        return 4.0 * np.pi * self.radius**2


def make_factor(dim, n_nodes, radius, azimuth_factor=2):
    if dim == 1:
        return CircleFactor(n_nodes, radius)
    if dim == 2:
        return SphereFactor(n_nodes, radius, azimuth_factor)
    raise ValueError(f"unsupported factor dimension {dim} (only S^1 and S^2 factors)")
