"""Main effect matrix factor model: data types and closed-form estimators.

Each observation is decomposed as

    X_t = mu_t 1_p 1_q' + alpha_t 1_q' + 1_p beta_t' + C_t + E_t

with ``min(alpha_t) = min(beta_t) = 0`` and loadings of ``C_t`` orthogonal
to the ones vector.  This module holds the initial effect estimators, the
double-centred residual series and the eigen-based factor estimators.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DataValidityError, DimensionError, IdentificationError, NumericalError

ArrayLike = Union[np.ndarray, "MatrixSeries"]

# ambiguity threshold between the k-th and (k+1)-th eigenvalue
EIGEN_GAP_TOL = 1e-12


@dataclass(frozen=True)
class MatrixSeries:
    """A length-T series of p x q real matrices, stored as a (T, p, q) array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=float, copy=True)
        if arr.ndim != 3:
            raise DataValidityError(f"expected a (T, p, q) array, got shape {arr.shape}")
        T, p, q = arr.shape
        if T < 2 or p < 2 or q < 2:
            raise DataValidityError(f"need T, p, q >= 2, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataValidityError("matrix series contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def __len__(self):
        return self.data.shape[0]


def as_array(x: ArrayLike) -> np.ndarray:
    """Validate ``x`` and return the underlying (T, p, q) float array."""
    if isinstance(x, MatrixSeries):
        return x.data
    return MatrixSeries(x).data


@dataclass(frozen=True)
class MEFMComponents:
    """Per-time base effect, row/column main effects and common component."""

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    common: np.ndarray

    def check_identification(self, atol: float = 0.0) -> None:
        """Raise :class:`IdentificationError` unless every alpha_t, beta_t has minimum 0."""
        for name, eff in (("alpha", self.alpha), ("beta", self.beta)):
            mins = eff.min(axis=1)
            if np.any(np.abs(mins) > atol):
                bad = int(np.argmax(np.abs(mins)))
                raise IdentificationError(
                    f"{name}[{bad}] has minimum {mins[bad]!r}; identification needs 0"
                )


@dataclass(frozen=True)
class ModelConfig:
    """Numbers of row and column factors."""

    k_r: int
    k_c: int
    sign_convention: str = "max-abs-positive"

    def __post_init__(self):
        if self.k_r < 1 or self.k_c < 1:
            raise ValueError("k_r and k_c must be positive")
        if self.sign_convention != "max-abs-positive":
            raise ValueError(f"unknown sign convention {self.sign_convention!r}")

    def check_dims(self, p: int, q: int) -> None:
        if self.k_r >= p or self.k_c >= q:
            raise DimensionError(
                f"need k_r < p and k_c < q, got k_r={self.k_r}, p={p}, k_c={self.k_c}, q={q}"
            )


@dataclass(frozen=True)
class FactorEstimate:
    """Estimated loadings, eigenvalues and (optionally) core factors."""

    q_r: np.ndarray
    q_c: np.ndarray
    eig_r: np.ndarray
    eig_c: np.ndarray
    f_z: np.ndarray | None = None


def centering_matrix(a: int) -> np.ndarray:
    """``M_a = I_a - 1_a 1_a' / a``."""
    return np.eye(a) - np.full((a, a), 1.0 / a)


def initial_effects(x: ArrayLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form initial estimators of the base, row and column effects.

    Parameters
    ----------
    x : (T, p, q) array or MatrixSeries

    Returns
    -------
    mu : (T,) array
    alpha : (T, p) array, nonnegative with a zero in every row
    beta : (T, q) array, nonnegative with a zero in every row
    """
    x = as_array(x)
    _, p, q = x.shape
    row_sums = x.sum(axis=2)
    col_sums = x.sum(axis=1)
    # subtract the minimum before scaling so the argmin entry is exactly 0
    alpha = (row_sums - row_sums.min(axis=1, keepdims=True)) / q
    beta = (col_sums - col_sums.min(axis=1, keepdims=True)) / p
    mu = x.sum(axis=(1, 2)) / (p * q) - alpha.sum(axis=1) / p - beta.sum(axis=1) / q
    return mu, alpha, beta


def residual_series(x: ArrayLike, mu: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """``L_t = X_t - mu_t 1 1' - alpha_t 1' - 1 beta_t'`` for every t."""
    x = as_array(x)
    T, p, q = x.shape
    mu = np.asarray(mu, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if mu.shape != (T,) or alpha.shape != (T, p) or beta.shape != (T, q):
        raise DimensionError(
            f"effects of shapes {mu.shape}, {alpha.shape}, {beta.shape} do not match series {x.shape}"
        )
    return x - mu[:, None, None] - alpha[:, :, None] - beta[:, None, :]


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _top_eigen(scatter: np.ndarray, k: int, side: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        vals, vecs = np.linalg.eigh(scatter)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"symmetric eigensolver failed on the {side} scatter matrix") from exc
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    if vals[k - 1] - vals[k] <= EIGEN_GAP_TOL * max(1.0, abs(vals[0])):
        warnings.warn(
            f"{side} eigenvalues {k} and {k + 1} coincide; the loading space is not unique",
            RuntimeWarning,
            stacklevel=3,
        )
    return np.clip(vals[:k], 0.0, None), _fix_signs(vecs[:, :k])


def scatter_matrices(l_tilde: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row and column scatter matrices ``T^-1 sum L L'`` and ``T^-1 sum L'L``.

    Summation runs in ascending t so the result does not depend on any
    parallel schedule.
    """
    T, p, q = l_tilde.shape
    s_r = np.zeros((p, p))
    s_c = np.zeros((q, q))
    for lt in l_tilde:
        s_r += lt @ lt.T
        s_c += lt.T @ lt
    s_r /= T
    s_c /= T
    # exact symmetry for eigh
    return 0.5 * (s_r + s_r.T), 0.5 * (s_c + s_c.T)


def estimate_loadings(l_tilde: np.ndarray, cfg: ModelConfig) -> FactorEstimate:
    """Top eigenvectors of the row and column scatter matrices of ``l_tilde``."""
    l_tilde = np.asarray(l_tilde, dtype=float)
    if l_tilde.ndim != 3:
        raise DimensionError(f"expected a (T, p, q) residual array, got {l_tilde.shape}")
    _, p, q = l_tilde.shape
    cfg.check_dims(p, q)
    if not np.any(l_tilde):
        raise NumericalError("residual series is identically zero; loadings are undefined")
    s_r, s_c = scatter_matrices(l_tilde)
    eig_r, q_r = _top_eigen(s_r, cfg.k_r, "row")
    eig_c, q_c = _top_eigen(s_c, cfg.k_c, "column")
    return FactorEstimate(q_r=q_r, q_c=q_c, eig_r=eig_r, eig_c=eig_c)


def estimate_factors(x: ArrayLike, l_tilde: np.ndarray, fe: FactorEstimate) -> tuple[np.ndarray, np.ndarray]:
    """Core factors ``Q_r' L_t Q_c`` and common component ``P_r X_t P_c``."""
    x = as_array(x)
    l_tilde = np.asarray(l_tilde, dtype=float)
    if l_tilde.shape != x.shape:
        raise DimensionError(f"residual shape {l_tilde.shape} != series shape {x.shape}")
    _, p, q = x.shape
    if fe.q_r.shape[0] != p or fe.q_c.shape[0] != q:
        raise DimensionError("loading matrices do not match the series dimensions")
    f_z = fe.q_r.T @ l_tilde @ fe.q_c
    common = (fe.q_r @ fe.q_r.T) @ x @ (fe.q_c @ fe.q_c.T)
    return f_z, common


def reconstruct(decomp: MEFMComponents) -> np.ndarray:
    """Noise-free series ``mu_t 1 1' + alpha_t 1' + 1 beta_t' + C_t``."""
    decomp.check_identification()
    mu = np.asarray(decomp.mu, dtype=float)
    return (
        mu[:, None, None]
        + decomp.alpha[:, :, None]
        + decomp.beta[:, None, :]
        + np.asarray(decomp.common, dtype=float)
    )


def tucker_to_mefm(c_tucker: np.ndarray, a_r: np.ndarray, f: np.ndarray, a_c: np.ndarray) -> MEFMComponents:
    """Rewrite a Tucker series ``A_r F_t A_c'`` as identified MEFM components.

    ``c_tucker`` must equal ``A_r F_t A_c'`` for each t; the returned common
    component uses the centred loadings ``M_p A_r`` and ``M_q A_c``.
    """
    c_tucker = np.asarray(c_tucker, dtype=float)
    T, p, q = c_tucker.shape
    row_part = (c_tucker.sum(axis=2) - c_tucker.sum(axis=(1, 2))[:, None] / p) / q
    col_part = (c_tucker.sum(axis=1) - c_tucker.sum(axis=(1, 2))[:, None] / q) / p
    row_min = row_part.min(axis=1)
    col_min = col_part.min(axis=1)
    alpha = row_part - row_min[:, None]
    beta = col_part - col_min[:, None]
    mu = c_tucker.sum(axis=(1, 2)) / (p * q) + row_min + col_min
    ar_c = centering_matrix(p) @ a_r
    ac_c = centering_matrix(q) @ a_c
    common = ar_c @ f @ ac_c.T
    return MEFMComponents(mu=mu, alpha=alpha, beta=beta, common=common)
