"""Accuracy measures for estimates scored against simulated truth."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataValidityError, DimensionError

ZERO_TOL = 1e-10


def mse(truth, estimate) -> float:
    """Mean squared error per time point and per element of theta_t."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise DimensionError(f"shape mismatch: {truth.shape} vs {estimate.shape}")
    if truth.size == 0:
        raise DimensionError("empty input")
    return float(np.sum((truth - estimate) ** 2) / truth.size)


def _orth_basis(Q: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None]
    u, s, _ = np.linalg.svd(Q, full_matrices=False)
    if s.size == 0 or s[-1] <= max(Q.shape) * np.finfo(float).eps * s[0]:
        raise DataValidityError("loading matrix is not of full column rank")
    return u


def space_distance(Q: np.ndarray, Qhat: np.ndarray) -> float:
    """Spectral norm of the difference of the projectors onto span(Q) and span(Qhat)."""
    u1 = _orth_basis(Q)
    u2 = _orth_basis(Qhat)
    if u1.shape[0] != u2.shape[0]:
        raise DimensionError("loading matrices have different numbers of rows")
    diff = u1 @ u1.T - u2 @ u2.T
    return float(min(1.0, np.linalg.norm(diff, 2)))


def _sparse_mask(true_blocks, shape) -> np.ndarray:
    if isinstance(true_blocks, np.ndarray) and true_blocks.dtype == bool:
        mask = true_blocks
    else:
        mask = np.column_stack([b.sparse_mask() for b in true_blocks])
    if mask.shape != shape:
        raise DimensionError(f"blocks cover {mask.shape}, estimate has shape {shape}")
    return mask


def block_scores(true_blocks, estimate: np.ndarray) -> tuple[float | None, float | None]:
    """Sensitivity and specificity of the zero pattern of ``estimate``.

    ``true_blocks`` is a list of per-series :class:`BlockSets` or a (T, n)
    boolean mask of truly sparse entries.  A score whose denominator is
    empty is returned as ``None``.
    """
    estimate = np.asarray(estimate, dtype=float)
    sparse = _sparse_mask(true_blocks, estimate.shape)
    dense = ~sparse
    n_dense = int(dense.sum())
    n_sparse = int(sparse.sum())
    sens = float(np.count_nonzero(estimate[dense] > 0) / n_dense) if n_dense else None
    spec = float(np.count_nonzero(np.abs(estimate[sparse]) <= ZERO_TOL) / n_sparse) if n_sparse else None
    return sens, spec


@dataclass
class ReplicationReport:
    mse: dict = field(default_factory=dict)
    space_distance: dict = field(default_factory=dict)
    sensitivity: dict = field(default_factory=dict)
    specificity: dict = field(default_factory=dict)
    lambdas: dict = field(default_factory=dict)
    seconds: float = 0.0
    replication: int | None = None

    def flat(self) -> dict:
        """Metric name to value (``None`` marks an undefined score).

        Keys are sorted within each group so the order does not depend on
        how the report was built or reloaded.
        """
        out = {}
        for prefix, group in (("mse", self.mse), ("dist", self.space_distance),
                              ("sensitivity", self.sensitivity), ("specificity", self.specificity)):
            for key in sorted(group):
                out[f"{prefix}_{key}"] = group[key]
        for key in sorted(self.lambdas):
            vals = self.lambdas[key]
            out[f"lambda_{key}_median"] = float(np.median(vals)) if len(vals) else None
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicationReport":
        return cls(**d)


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    sd: float
    median: float
    n: int
    n_undefined: int


def aggregate(reports: list[ReplicationReport]) -> dict[str, MetricSummary]:
    """Mean, sd (n - 1 denominator), median and count of every metric.

    Undefined entries are dropped metric by metric and counted.  With a
    single defined value the sd is NaN.
    """
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    flats = [r.flat() for r in reports]
    names = []
    for f in flats:
        for k in f:
            if k not in names:
                names.append(k)
    summary = {}
    for name in names:
        raw = [f.get(name) for f in flats]
        vals = np.array([v for v in raw if v is not None and not math.isnan(v)], dtype=float)
        n_undef = len(raw) - vals.size
        if vals.size == 0:
            summary[name] = MetricSummary(math.nan, math.nan, math.nan, 0, n_undef)
            continue
        sd = float(np.std(vals, ddof=1)) if vals.size > 1 else math.nan
        summary[name] = MetricSummary(float(np.mean(vals)), sd, float(np.median(vals)), int(vals.size), n_undef)
    return summary
