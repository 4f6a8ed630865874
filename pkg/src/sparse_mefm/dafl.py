"""Doubly adaptive fused lasso (DAFL) for sparse main effects.

For one initial-estimate series ``y`` (a column of ``alpha~`` or ``beta~``)
the estimator minimises

    1/2 ||y - theta||^2 + lam * sum_t |theta_t - theta_{t-1}| / max(y_t, y_{t-1})
                        + lam * sum_t |theta_t| / y_t,

a generalized lasso with penalty matrix ``D = [D_fused; D_lasso]``.
Weights are infinite where ``y`` vanishes; those rows become hard
constraints (coefficient pinned to zero) instead of entering the solver.
The tuning parameter is chosen per series by a realized Mallows Cp that
counts degrees of freedom as the nullity of the active rows of ``D``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._chain import certify, dp_solve
from .errors import ConvergenceError, DataValidityError, FitError

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-10
DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class PenaltyMatrix:
    """Adaptive weights of the stacked fused/lasso penalty for one series.

    Rows are ordered fused first (``T - 1`` rows, row t couples t and t+1),
    then lasso (``T`` rows).  Infinite weights are flagged in ``hard_zero``
    and ``hard_fuse``.
    """

    fused_weights: np.ndarray
    lasso_weights: np.ndarray
    hard_zero: np.ndarray
    hard_fuse: np.ndarray

    def __post_init__(self):
        # finite stand-ins (hard rows scaled to 1) reused by every solve
        object.__setattr__(self, "_fw", np.where(self.hard_fuse, 1.0, self.fused_weights))
        object.__setattr__(self, "_lw", np.where(self.hard_zero, 1.0, self.lasso_weights))
        object.__setattr__(self, "_hard", np.concatenate([self.hard_fuse, self.hard_zero]))
        object.__setattr__(self, "_g1", np.where(self.hard_zero, 0.0, self._lw))
        object.__setattr__(self, "_w1", np.where(self.hard_fuse, 0.0, self._fw))

    @property
    def T(self) -> int:
        return self.lasso_weights.shape[0]

    @property
    def n_rows(self) -> int:
        return 2 * self.T - 1

    def hard_rows(self) -> np.ndarray:
        """Boolean mask over the ``2T - 1`` rows with infinite weight."""
        return self._hard

    def dense(self, hard_scale: float = 1.0) -> np.ndarray:
        """Explicit ``(2T-1, T)`` matrix; infinite weights are replaced by ``hard_scale``."""
        T = self.T
        fw = np.where(self.hard_fuse, hard_scale, self.fused_weights)
        lw = np.where(self.hard_zero, hard_scale, self.lasso_weights)
        D = np.zeros((2 * T - 1, T))
        idx = np.arange(T - 1)
        D[idx, idx] = -fw
        D[idx, idx + 1] = fw
        D[T - 1 + np.arange(T), np.arange(T)] = lw
        return D

    def apply(self, theta: np.ndarray) -> np.ndarray:
        """``D @ theta`` over the finite rows; hard rows report 0 when satisfied."""
        theta = np.asarray(theta, dtype=float)
        return np.concatenate([self._fw * (theta[1:] - theta[:-1]), self._lw * theta])


@dataclass(frozen=True)
class GenLassoSolution:
    theta: np.ndarray
    dual: np.ndarray
    active_set: np.ndarray
    kkt_residual: float
    objective: float
    lam: float


@dataclass(frozen=True)
class BlockSets:
    """Sparse and dense time sets of one effect series (0-based indices)."""

    sparse: np.ndarray
    dense: np.ndarray

    @classmethod
    def from_mask(cls, sparse_mask: np.ndarray) -> "BlockSets":
        sparse_mask = np.asarray(sparse_mask, dtype=bool)
        return cls(sparse=np.flatnonzero(sparse_mask), dense=np.flatnonzero(~sparse_mask))

    @property
    def T(self) -> int:
        return self.sparse.size + self.dense.size

    def sparse_mask(self) -> np.ndarray:
        mask = np.zeros(self.T, dtype=bool)
        mask[self.sparse] = True
        return mask


@dataclass(frozen=True)
class TuningResult:
    lambda_grid: np.ndarray
    cp_values: np.ndarray
    chosen_lambda: float
    sigma2_hat: float


@dataclass(frozen=True)
class TuningConfig:
    """Grid and solver settings for Cp tuning.

    ``lambda_max=None`` derives the upper bound from each series.  ``mode``
    is ``"per-index"`` (one lambda per row/column series) or
    ``"aggregated"`` (one lambda per effect, minimising the summed Cp).
    """

    grid_size: int = 30
    lambda_min: float = 1e-4
    lambda_max: float | None = None
    tol: float = DEFAULT_TOL
    mode: str = "per-index"
    df_method: str = "groups"

    def __post_init__(self):
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if not self.lambda_min > 0:
            raise ValueError("lambda_min must be positive")
        if self.lambda_max is not None and not self.lambda_max > self.lambda_min:
            raise ValueError("lambda_max must exceed lambda_min")
        if self.mode not in ("per-index", "aggregated"):
            raise ValueError(f"unknown tuning mode {self.mode!r}")
        if self.df_method not in ("groups", "svd"):
            raise ValueError(f"unknown df method {self.df_method!r}")


def build_penalty(y: np.ndarray) -> PenaltyMatrix:
    """Adaptive weights ``1/y_t`` (lasso) and ``1/max(y_t, y_{t+1})`` (fused)."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise DataValidityError("expected a 1-d series of length >= 2")
    if not np.all(np.isfinite(y)):
        raise DataValidityError("series contains non-finite entries")
    if np.any(y < 0):
        raise DataValidityError("adaptive weights need a nonnegative initial series")
    pair_max = np.maximum(y[:-1], y[1:])
    hard_zero = y == 0
    hard_fuse = pair_max == 0
    with np.errstate(divide="ignore"):
        lasso = np.where(hard_zero, np.inf, 1.0 / np.where(hard_zero, 1.0, y))
        fused = np.where(hard_fuse, np.inf, 1.0 / np.where(hard_fuse, 1.0, pair_max))
    return PenaltyMatrix(fused_weights=fused, lasso_weights=lasso, hard_zero=hard_zero, hard_fuse=hard_fuse)


def active_tolerance(y: np.ndarray) -> float:
    return 1e-8 * (1.0 + float(np.max(np.abs(y))))


def objective(y: np.ndarray, theta: np.ndarray, pen: PenaltyMatrix, lam: float, d: np.ndarray | None = None) -> float:
    """DAFL objective; hard rows contribute nothing when their constraints hold."""
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if d is None:
        d = pen.apply(theta)
    return 0.5 * float(np.dot(y - theta, y - theta)) + lam * float(np.abs(d[~pen._hard]).sum())


def kkt_certificate(y, theta, pen: PenaltyMatrix, lam: float, atol: float | None = None, d: np.ndarray | None = None):
    """Return ``(residual, dual)`` for a candidate ``theta``.

    ``dual`` stacks fused then lasso multipliers, each bounded by ``lam``;
    multipliers of hard rows are reported as 0 (their limit as the weight
    grows).  ``residual`` is the largest stationarity violation the
    subgradient boxes cannot absorb.
    """
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if atol is None:
        atol = active_tolerance(y)
    if d is None:
        d = pen.apply(theta)
    T = pen.T
    pinned = pen.hard_zero
    if np.any(theta[pinned] != 0.0):
        # a violated hard constraint cannot be certified
        return float("inf"), None
    zero = np.abs(d) <= atol
    edge_zero = zero[: T - 1] | pen.hard_fuse
    node_zero = zero[T - 1 :] | pinned
    g = lam * pen._g1
    w = lam * pen._w1
    viol, z, s = certify(y, theta, g, w, pinned, ~pen.hard_fuse, node_zero, edge_zero)
    # back to the unscaled box |u| <= lam; hard rows have zero weight in g, w
    u_f = z[:-1] / np.where(w > 0, w, 1.0) * lam
    u_l = s / np.where(g > 0, g, 1.0) * lam
    u_f[pen.hard_fuse] = 0.0
    u_l[pinned] = 0.0
    dual = np.clip(np.concatenate([u_f, u_l]), -lam, lam)
    return float(viol), dual


def solve_genlasso(y: np.ndarray, pen: PenaltyMatrix, lam: float, tol: float = DEFAULT_TOL) -> GenLassoSolution:
    """Minimise the DAFL objective for one series at a fixed ``lam``.

    The chain structure is solved exactly by dynamic programming; the
    answer is then certified by constructing dual multipliers.  A
    certificate residual above ``tol`` raises :class:`ConvergenceError`
    carrying the iterate.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataValidityError("series contains non-finite entries")
    if not (np.isfinite(lam) and lam > 0):
        raise ValueError(f"lambda must be positive and finite, got {lam!r}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if y.shape != (pen.T,):
        raise DataValidityError(f"series length {y.shape} does not match penalty (T={pen.T})")
    theta = dp_solve(y, lam * pen._g1, lam * pen._w1, pen.hard_zero)
    d = pen.apply(theta)
    atol = active_tolerance(y)
    residual, dual = kkt_certificate(y, theta, pen, lam, atol, d)
    if not residual <= tol:
        raise ConvergenceError(
            f"KKT residual {residual:.3e} exceeds tol {tol:.1e} at lambda={lam!r}",
            best=theta,
            residual=residual,
            lam=lam,
        )
    active = np.flatnonzero((np.abs(d) <= atol) | pen._hard)
    obj = objective(y, theta, pen, lam, d)
    return GenLassoSolution(theta=theta, dual=dual, active_set=active, kkt_residual=residual, objective=obj, lam=lam)


def _nullity_groups(sol: GenLassoSolution, pen: PenaltyMatrix) -> int:
    T = pen.T
    in_active = np.zeros(2 * T - 1, dtype=bool)
    in_active[sol.active_set] = True
    fused_active = in_active[: T - 1]
    zeroed = in_active[T - 1 :]
    # fused groups are runs joined by active fused rows; a group is free
    # (one null-space direction) unless some member has an active lasso row
    group_id = np.zeros(T, dtype=np.int64)
    np.cumsum(~fused_active, out=group_id[1:])
    hit = np.zeros(group_id[-1] + 1, dtype=bool)
    hit[group_id[zeroed]] = True
    return int(hit.size - np.count_nonzero(hit))


def _nullity_svd(sol: GenLassoSolution, pen: PenaltyMatrix) -> int:
    T = pen.T
    if sol.active_set.size == 0:
        return T
    D_A = pen.dense()[sol.active_set]
    sv = np.linalg.svd(D_A, compute_uv=False)
    thresh = 1e-10 * sv[0]
    near = (sv > thresh / 10) & (sv < thresh * 10)
    if np.any(near):
        warnings.warn("numerical rank of the active penalty rows is ambiguous", RuntimeWarning, stacklevel=3)
    return int(T - np.count_nonzero(sv > thresh))


def degrees_of_freedom(sol: GenLassoSolution, pen: PenaltyMatrix, method: str = "svd") -> int:
    """Realized nullity of the active penalty rows.

    ``method="svd"`` thresholds singular values of the explicit active
    matrix at ``1e-10 * sigma_max``.  ``method="groups"`` counts fused
    groups that contain no zeroed coordinate, which is the same number
    computed combinatorially and is what the tuning loop uses.
    """
    if method == "svd":
        return _nullity_svd(sol, pen)
    if method == "groups":
        return _nullity_groups(sol, pen)
    raise ValueError(f"unknown method {method!r}")


def cp_statistic(y: np.ndarray, sol: GenLassoSolution, pen: PenaltyMatrix, sigma2_hat: float, df: int | None = None) -> float:
    """Realized Cp: ``||y - theta||^2 - T s2 + 2 s2 * nullity``."""
    if sigma2_hat < 0:
        raise ValueError("sigma2_hat must be nonnegative")
    y = np.asarray(y, dtype=float)
    if df is None:
        df = degrees_of_freedom(sol, pen)
    rss = float(np.sum((y - sol.theta) ** 2))
    return rss - pen.T * sigma2_hat + 2.0 * sigma2_hat * df


def default_lambda_max(y: np.ndarray, pen: PenaltyMatrix | None = None) -> float:
    """``max_k |<d_k, y>| / ||d_k||^2`` over the finite rows of D."""
    y = np.asarray(y, dtype=float)
    if pen is None:
        pen = build_penalty(y)
    D = pen.dense()
    finite = ~pen.hard_rows()
    if not np.any(finite):
        return 0.0
    D = D[finite]
    return float(np.max(np.abs(D @ y) / np.sum(D * D, axis=1)))


def sample_variance(y: np.ndarray) -> float:
    """Sample variance with denominator ``T - 1``; exactly 0 for a constant series."""
    y = np.asarray(y, dtype=float)
    return float(np.var(y - y[0], ddof=1))


def lambda_grid(lambda_min: float, lambda_max: float, size: int) -> np.ndarray:
    if not lambda_max > lambda_min:
        # degenerate series (e.g. nearly all zero): keep a valid ascending grid
        lambda_max = 10.0 * lambda_min
    return np.logspace(np.log10(lambda_min), np.log10(lambda_max), size)


def _cp_curve(y, pen, grid, sigma2, tol, df_method):
    cps = np.empty(grid.size)
    for k, lam in enumerate(grid):
        try:
            sol = solve_genlasso(y, pen, lam, tol)
        except ConvergenceError as exc:
            raise ConvergenceError(f"{exc} (grid point {k})", best=exc.best, residual=exc.residual, lam=lam) from exc
        cps[k] = cp_statistic(y, sol, pen, sigma2, degrees_of_freedom(sol, pen, df_method))
    return cps


def tune_lambda(
    y: np.ndarray,
    grid_size: int = 30,
    grid_bounds: tuple[float, float | None] = (1e-4, None),
    tol: float = DEFAULT_TOL,
    df_method: str = "groups",
    pen: PenaltyMatrix | None = None,
) -> TuningResult:
    """Pick ``lam`` on a log grid by minimising the realized Cp.

    Ties go to the smallest ``lam``.  ``grid_bounds[1] = None`` uses
    :func:`default_lambda_max`.
    """
    y = np.asarray(y, dtype=float)
    if pen is None:
        pen = build_penalty(y)
    lam_min, lam_max = grid_bounds
    if lam_max is None:
        lam_max = default_lambda_max(y, pen)
    elif not 0 < lam_min < lam_max:
        raise ValueError("need 0 < lambda_min < lambda_max")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    grid = lambda_grid(lam_min, lam_max, grid_size)
    sigma2 = sample_variance(y)
    cps = _cp_curve(y, pen, grid, sigma2, tol, df_method)
    best = int(np.argmin(cps))
    return TuningResult(lambda_grid=grid, cp_values=cps, chosen_lambda=float(grid[best]), sigma2_hat=sigma2)


def extract_blocks(theta: np.ndarray, zero_tol: float = ZERO_TOL) -> BlockSets:
    """Sparse set ``{t: theta_t <= zero_tol}``; the dense set is the complement."""
    theta = np.asarray(theta, dtype=float)
    return BlockSets.from_mask(theta <= zero_tol)


def final_effects(y: np.ndarray, blocks: BlockSets) -> np.ndarray:
    """Keep the initial estimate on the dense set and zero it elsewhere."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    out[blocks.dense] = y[blocks.dense]
    return out


@dataclass
class EffectFit:
    """DAFL output for every series of one effect (rows or columns)."""

    theta: np.ndarray
    final: np.ndarray
    blocks: list[BlockSets]
    tuning: list[TuningResult]

    @property
    def chosen_lambdas(self) -> np.ndarray:
        return np.array([tr.chosen_lambda for tr in self.tuning])


@dataclass
class SparseEffectsFit:
    alpha: EffectFit
    beta: EffectFit
    failures: dict = field(default_factory=dict)


def _fit_effect(y_all: np.ndarray, cfg: TuningConfig, kind: str, failures: dict) -> EffectFit:
    T, n = y_all.shape
    theta = np.zeros((T, n))
    final = np.zeros((T, n))
    blocks: list[BlockSets] = []
    tuning: list[TuningResult] = []
    pens = [build_penalty(y_all[:, i]) for i in range(n)]
    bounds = (cfg.lambda_min, cfg.lambda_max)

    if cfg.mode == "aggregated":
        lam_max = cfg.lambda_max
        if lam_max is None:
            lam_max = max(default_lambda_max(y_all[:, i], pens[i]) for i in range(n))
        grid = lambda_grid(cfg.lambda_min, lam_max, cfg.grid_size)
        total = np.zeros(grid.size)
        curves = []
        for i in range(n):
            s2 = sample_variance(y_all[:, i])
            try:
                cps = _cp_curve(y_all[:, i], pens[i], grid, s2, cfg.tol, cfg.df_method)
            except ConvergenceError as exc:
                failures[(kind, i)] = exc
                cps = np.full(grid.size, np.nan)
            else:
                total += cps
            curves.append((cps, s2))
        chosen = float(grid[int(np.argmin(total))])
        tuning = [TuningResult(grid, cps, chosen, s2) for cps, s2 in curves]
    else:
        for i in range(n):
            try:
                tuning.append(
                    tune_lambda(y_all[:, i], cfg.grid_size, bounds, cfg.tol, cfg.df_method, pen=pens[i])
                )
            except ConvergenceError as exc:
                failures[(kind, i)] = exc
                tuning.append(TuningResult(np.array([]), np.array([]), float("nan"), float("nan")))

    for i in range(n):
        y = y_all[:, i]
        lam = tuning[i].chosen_lambda
        if (kind, i) in failures:
            # keep the initial estimate for series whose tuning failed
            blocks.append(extract_blocks(y))
            theta[:, i] = np.nan
            final[:, i] = y
            continue
        try:
            sol = solve_genlasso(y, pens[i], lam, cfg.tol)
        except ConvergenceError as exc:
            failures[(kind, i)] = exc
            blocks.append(extract_blocks(y))
            theta[:, i] = np.nan
            final[:, i] = y
            continue
        b = extract_blocks(sol.theta)
        blocks.append(b)
        theta[:, i] = sol.theta
        final[:, i] = final_effects(y, b)
    return EffectFit(theta=theta, final=final, blocks=blocks, tuning=tuning)


def fit_sparse_effects(alpha_tilde: np.ndarray, beta_tilde: np.ndarray, cfg: TuningConfig | None = None) -> SparseEffectsFit:
    """Run penalty, tuning, solve, block extraction and thresholding on every series.

    Failures in individual series do not stop the others; if any occur a
    :class:`FitError` listing them is raised with the partial fit attached
    as ``exc.partial``.
    """
    cfg = cfg or TuningConfig()
    alpha_tilde = np.asarray(alpha_tilde, dtype=float)
    beta_tilde = np.asarray(beta_tilde, dtype=float)
    failures: dict = {}
    fa = _fit_effect(alpha_tilde, cfg, "alpha", failures)
    fb = _fit_effect(beta_tilde, cfg, "beta", failures)
    fit = SparseEffectsFit(alpha=fa, beta=fb, failures=failures)
    if failures:
        listed = ", ".join(f"{k}[{i}]" for k, i in sorted(failures))
        err = FitError(f"DAFL failed for {len(failures)} series: {listed}", failures)
        err.partial = fit
        raise err
    return fit
