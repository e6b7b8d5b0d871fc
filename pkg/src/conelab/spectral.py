"""Diagonalization of the Jacobi operator and spectral splitting of fields."""

import numpy as np

from .errors import UnresolvedTailError
from .functional import NormalField, second_variation_assemble

KERNEL_TOL = 1e-8

SNAPSHOT_VERSION = 1


class SpectralBasis:
    """Eigenpairs of the Jacobi operator on the resolved band.

    Eigenvalues ascend; eigenvector columns are orthonormal coefficient
    vectors in the tensor-harmonic band (itself orthonormal in the quadrature
    inner product).  ``degenerate_gap`` flags spectra whose first nonzero
    eigenvalues sit within 10x kernel_tol of zero; downstream calibration
    refuses to run on those.
    """

    def __init__(self, cs, eigenvalues, eigenvectors, kernel_tol=KERNEL_TOL):
        self.cs = cs
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors          # (n_modes, n_modes)
        self.kernel_tol = kernel_tol
        self.kernel_indices = np.where(np.abs(eigenvalues) <= kernel_tol)[0]
        self.ell = len(self.kernel_indices)
        neg = eigenvalues[eigenvalues < -kernel_tol]
        pos = eigenvalues[eigenvalues > kernel_tol]
        self.gap_minus = float(neg.max()) if len(neg) else float("nan")
        self.gap_plus = float(pos.min()) if len(pos) else float("nan")
        self.degenerate_gap = (
            not np.isfinite(self.gap_minus)
            or not np.isfinite(self.gap_plus)
            or abs(self.gap_minus) < 10 * kernel_tol
            or self.gap_plus < 10 * kernel_tol
        )
        self.n_modes = len(eigenvalues)
        # Laplacian eigenvalue of each original band mode, repeated per comp
        self._band_laplace = np.repeat(cs.laplace_eigs, cs.codim)

    # -- coordinate transforms ------------------------------------------------
    def to_spectral(self, field):
        return self.eigenvectors.T @ field.coef.reshape(-1)

    def from_spectral(self, coords):
        flat = self.eigenvectors @ coords
        return NormalField(self.cs, flat.reshape(self.cs.n_scalar_modes,
                                                 self.cs.codim))

    def eigenfield(self, j):
        coords = np.zeros(self.n_modes)
        coords[j] = 1.0
        return self.from_spectral(coords)

    def kernel_field(self, mu):
        """Linear combination of kernel eigenfields with coordinates ``mu``."""
        coords = np.zeros(self.n_modes)
        coords[self.kernel_indices] = mu
        return self.from_spectral(coords)

    def kernel_coordinates(self, field):
        return self.to_spectral(field)[self.kernel_indices]

    def masks(self):
        lam, tol = self.eigenvalues, self.kernel_tol
        kernel = np.abs(lam) <= tol
        return kernel, lam < -tol, lam > tol

    def spectrum_rows(self, round_to=1e-9):
        """(eigenvalue, multiplicity, labels) rows for the spectrum dump."""
        labels = self.mode_labels()
        rows = []
        idx = 0
        while idx < self.n_modes:
            lam = self.eigenvalues[idx]
            group = [labels[idx]]
            j = idx + 1
            while j < self.n_modes and abs(self.eigenvalues[j] - lam) <= round_to:
                group.append(labels[j])
                j += 1
            rows.append((float(lam), len(group), ";".join(group)))
            idx = j
        return rows

    def mode_labels(self):
        """Label each eigenfield by its dominant band mode."""
        band = self.cs.flat_labels()
        out = []
        for j in range(self.n_modes):
            out.append(band[int(np.argmax(np.abs(self.eigenvectors[:, j])))])
        return out


def eigendecompose(cs, L=None, kernel_tol=KERNEL_TOL):
    """Diagonalize the (assembled) Jacobi operator into a SpectralBasis."""
    if L is None:
        L = second_variation_assemble(cs)
    lam, vec = np.linalg.eigh(L)
    return SpectralBasis(cs, lam, vec, kernel_tol)


def project(basis, c, tail_tol=1e-8):
    """Split a field into kernel / negative / positive spectral parts.

    Accepts a NormalField or raw (n_nodes, codim) node values; raw values are
    projected onto the band first and rejected when the unresolved tail
    exceeds ``tail_tol`` of the total energy.
    """
    if not isinstance(c, NormalField):
        c = NormalField.from_values(basis.cs, c, tail_tol=tail_tol)
    coords = basis.to_spectral(c)
    kernel, neg, pos = basis.masks()
    parts = []
    for mask in (kernel, neg, pos):
        masked = np.where(mask, coords, 0.0)
        parts.append(basis.from_spectral(masked))
    return tuple(parts)


def save_spectrum_csv(basis, path, header_lines=()):
    rows = basis.spectrum_rows()
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("eigenvalue,multiplicity,modes\n")
        for lam, mult, labels in rows:
            fh.write(f"{lam!r},{mult},{labels}\n")


def save_basis_snapshot(basis, path):
    np.savez(
        path,
        snapshot_version=SNAPSHOT_VERSION,
        eigenvalues=basis.eigenvalues,
        eigenvectors=basis.eigenvectors,
        kernel_tol=basis.kernel_tol,
    )


def load_basis_snapshot(cs, path):
    data = np.load(path)
    if int(data["snapshot_version"]) != SNAPSHOT_VERSION:
        raise ValueError("unsupported basis snapshot version")
    return SpectralBasis(cs, data["eigenvalues"], data["eigenvectors"],
                         float(data["kernel_tol"]))
