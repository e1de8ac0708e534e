"""Rating-similarity matrices built from monotone dependency laws.

Entry ``(i, j)`` of a similarity matrix is ``1 - |f(v_i) - f(v_j)|`` where
``v_1..v_k`` are evenly spaced over the law's domain (endpoints included).
LaTTe needs the symmetric square root of that matrix and its inverse; both
come from a clipped eigendecomposition so they always exist.
"""
from dataclasses import dataclass, field
import math

import numpy as np

DEFAULT_EIGEN_FLOOR = 1e-8

_DOMAINS = {
    "identity": (0.0, 1.0),
    "linear": (0.0, 1.0),
    "sigmoid": (-6.0, 6.0),
    "arctan": (-math.pi / 2, math.pi / 2),
    "cube_root": (-1.0, 1.0),
}
LAW_NAMES = tuple(_DOMAINS)


@dataclass(frozen=True)
class DependencyLaw:
    kind: str
    domain: tuple = field(default=None)

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        if kind not in _DOMAINS:
            raise ValueError(f"unknown dependency law {self.kind!r}; choose from {', '.join(LAW_NAMES)}")
        object.__setattr__(self, "kind", kind)
        if self.domain is None:
            object.__setattr__(self, "domain", _DOMAINS[kind])
        elif tuple(self.domain) != _DOMAINS[kind]:
            raise ValueError(f"law {kind!r} has fixed domain {_DOMAINS[kind]}, got {self.domain}")

    @property
    def cli_name(self):
        return self.kind.replace("_", "-")


def law(kind):
    """Shorthand constructor accepting CLI spellings such as ``cube-root``."""
    return kind if isinstance(kind, DependencyLaw) else DependencyLaw(kind)


def law_value(dep, x):
    """Evaluate the law's transfer function at ``x`` (scalar or array)."""
    dep = law(dep)
    if dep.kind == "identity":
        raise ValueError("the identity law has no transfer function")
    lo, hi = dep.domain
    arr = np.asarray(x, dtype=float)
    # small slack so that linspace endpoints never trip the check
    slack = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(arr < lo - slack) or np.any(arr > hi + slack):
        raise ValueError(f"x={x!r} outside the {dep.kind} domain [{lo}, {hi}]")
    if dep.kind == "linear":
        out = arr
    elif dep.kind == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-arr))
    elif dep.kind == "arctan":
        out = 0.5 * np.arctan(arr) + 0.5
    else:
        out = 0.5 * np.cbrt(arr) + 0.5
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """A k x k rating-proximity matrix with its symmetric square-root factors."""

    law: DependencyLaw
    entries: np.ndarray
    sqrt: np.ndarray
    inv_sqrt: np.ndarray
    eigen_floor: float = DEFAULT_EIGEN_FLOOR

    @property
    def k(self):
        return self.entries.shape[0]

    @property
    def clipped(self):
        """The matrix actually used by the model: ``sqrt @ sqrt``."""
        return self.sqrt @ self.sqrt

    def to_csv(self):
        header = "," + ",".join(f'"{i + 1}"' for i in range(self.k))
        rows = [header]
        for i, row in enumerate(self.entries):
            rows.append(f'"{i + 1}",' + ",".join(f"{v:.6f}" for v in row))
        return "\n".join(rows) + "\n"


def sqrt_factors(m, eigen_floor=DEFAULT_EIGEN_FLOOR):
    """Return ``(m^{1/2}, m^{-1/2})`` from a clipped symmetric eigendecomposition.

    Eigenvalues below ``eigen_floor`` are raised to it before taking roots.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
        raise ValueError("matrix is not symmetric within 1e-12")
    evals, evecs = np.linalg.eigh((m + m.T) / 2)
    evals = np.maximum(evals, eigen_floor)
    root = np.sqrt(evals)
    sqrt = (evecs * root) @ evecs.T
    inv_sqrt = (evecs / root) @ evecs.T
    return (sqrt + sqrt.T) / 2, (inv_sqrt + inv_sqrt.T) / 2


def build_similarity(dep, k, eigen_floor=DEFAULT_EIGEN_FLOOR):
    dep = law(dep)
    if k < 2:
        raise ValueError(f"similarity matrix needs k >= 2 rating values, got {k}")
    if dep.kind == "identity":
        entries = np.eye(k)
    else:
        points = np.linspace(*dep.domain, k)
        f = law_value(dep, points)
        # arctan overshoots [0, 1] slightly at the domain ends
        entries = np.clip(1.0 - np.abs(f[:, None] - f[None, :]), 0.0, 1.0)
    sqrt, inv_sqrt = sqrt_factors(entries, eigen_floor)
    return SimilarityMatrix(dep, entries, sqrt, inv_sqrt, eigen_floor)
