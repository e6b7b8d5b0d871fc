"""Deterministic sampling of admissible boundary traces.

Traces are random band-limited combinations of Jacobi eigenfields with
coefficients decaying like j^-decay in ascending-eigenvalue order, optionally
restricted to one spectral class and rescaled exactly to a target norm.
Reproducibility: identical spec => bit-identical coefficients, independent of
how the work is split across workers (per-trace generators come from seed
splitting).
"""

import dataclasses
import hashlib
import json

import numpy as np

CLASS_FILTERS = ("mixed", "pure-kernel", "pure-positive", "pure-negative")
NORM_TYPES = ("h1", "c1alpha")


@dataclasses.dataclass(frozen=True)
class TraceEnsembleSpec:
    """Reproducible description of a trace ensemble."""

    seed: int = 0
    count: int = 100
    norm_target: float = 0.02
    norm_type: str = "h1"
    decay_exponent: float = 2.0
    class_filter: str = "mixed"
    band: tuple = None  # optional (lo, hi) slice of eigenvalue-ordered modes

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.norm_target <= 0:
            raise ValueError("norm target must be positive")
        if self.norm_type not in NORM_TYPES:
            raise ValueError(f"norm_type must be one of {NORM_TYPES}")
        if self.class_filter not in CLASS_FILTERS:
            raise ValueError(f"class_filter must be one of {CLASS_FILTERS}")

    def manifest(self):
        payload = dataclasses.asdict(self)
        payload["band"] = list(self.band) if self.band else None
        digest = hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode()
        ).hexdigest()[:16]
        return {"seed": self.seed, "spec_hash": digest, **payload}


def _class_mask(basis, class_filter):
    kernel, neg, pos = basis.masks()
    if class_filter == "mixed":
        return np.ones(basis.n_modes, dtype=bool)
    return {"pure-kernel": kernel, "pure-negative": neg,
            "pure-positive": pos}[class_filter]


def sample(spec, basis):
    """Draw the ensemble described by ``spec`` in the given spectral basis."""
    mask = _class_mask(basis, spec.class_filter)
    if spec.band is not None:
        lo, hi = spec.band
        band_mask = np.zeros(basis.n_modes, dtype=bool)
        band_mask[lo:hi] = True
        mask = mask & band_mask
    if not np.any(mask):
        raise ValueError(
            f"class filter {spec.class_filter!r} leaves an empty band"
        )
    # ascending-eigenvalue rank (eigh already sorts ascending)
    weights = (1.0 + np.arange(basis.n_modes)) ** (-spec.decay_exponent)
    children = np.random.SeedSequence(spec.seed).spawn(spec.count)
    out = []
    for child in children:
        rng = np.random.default_rng(child)
        coords = rng.standard_normal(basis.n_modes) * weights
        coords[~mask] = 0.0
        field = basis.from_spectral(coords)
        norm = field.h1_norm() if spec.norm_type == "h1" else field.c1alpha_proxy()
        if norm == 0.0:
            raise ValueError("sampled trace is identically zero; widen the band")
        out.append((spec.norm_target / norm) * field)
    return out
