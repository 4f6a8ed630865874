"""Synthetic data for the sparse main effect matrix factor model.

Random streams
--------------
Every dataset is a pure function of its :class:`DGPConfig`.  The 64-bit
``seed`` feeds a :class:`numpy.random.SeedSequence`; each model component
draws from its own child stream ``SeedSequence(seed, spawn_key=(k,))``:

    k = 0  factor loadings A_r, A_c
    k = 1  base effect mu_t
    k = 2  row main effects (series i = 0..p-1 in one batch)
    k = 3  column main effects
    k = 4  core factors F_t
    k = 5  noise (A_er, A_ec, Sigma_eps, F_e, eps, in that order)

so switching one component off, or changing its size, leaves the others
untouched.  Replication r of an experiment with master seed s uses
:func:`replication_seed` ``(s, r)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .dafl import BlockSets
from .model import MEFMComponents

STREAMS = {"loadings": 0, "base": 1, "alpha": 2, "beta": 3, "factors": 4, "noise": 5}
BURN_IN = 100


def component_rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[component],)))


def replication_seed(master_seed: int, rep: int) -> int:
    """64-bit seed for replication ``rep`` of an experiment."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(1000, rep))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def check_ar2(coeffs) -> None:
    phi1, phi2 = coeffs
    if not (abs(phi2) < 1 and phi1 + phi2 < 1 and phi2 - phi1 < 1):
        raise ValueError(f"AR(2) coefficients {coeffs} are not stationary")


def ar2_stationary_sd(coeffs) -> float:
    """Stationary standard deviation of an AR(2) with unit innovation variance."""
    phi1, phi2 = coeffs
    var = (1 - phi2) / ((1 + phi2) * (1 - phi1 - phi2) * (1 + phi1 - phi2))
    return float(np.sqrt(var))


def gen_ar2_standardized(n: int, coeffs, rng: np.random.Generator, size=(), burn_in: int = BURN_IN) -> np.ndarray:
    """Unit-variance stationary AR(2) samples along the last axis.

    Innovations are standard normal; the recursion starts at zero and the
    first ``burn_in`` values are dropped before dividing by the stationary
    standard deviation.
    """
    check_ar2(coeffs)
    size = (int(size),) if np.isscalar(size) else tuple(size)
    e = rng.standard_normal(size + (n + burn_in,))
    phi1, phi2 = coeffs
    x = lfilter([1.0], [1.0, -phi1, -phi2], e, axis=-1)[..., burn_in:]
    return x / ar2_stationary_sd(coeffs)


def gen_loadings(dim: int, k: int, zeta, rng: np.random.Generator) -> np.ndarray:
    """Column-centred Gaussian loadings scaled by ``dim ** -zeta``."""
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (k,))
    if np.any(zeta < 0) or np.any(zeta > 0.5):
        raise ValueError("loading exponents must lie in [0, 0.5]")
    u = rng.standard_normal((dim, k))
    return (u - u.mean(axis=0)) * dim ** (-zeta)


@dataclass(frozen=True)
class DGPConfig:
    """Parameters of one simulation setting (defaults are setting Ia)."""

    T: int = 100
    p: int = 40
    q: int = 40
    k_r: int = 1
    k_c: int = 2
    zeta_r: tuple = (0.0,)
    zeta_c: tuple = (0.0, 0.0)
    m_alpha: float = 1.0
    m_beta: float = 1.0
    sigma_alpha: float = 1.0
    sigma_beta: float = 1.0
    pi_S: float = 0.4
    pi_B: float = 0.8
    ar_f: tuple = (0.5, -0.3)
    ar_e: tuple = (-0.4, 0.4)
    ar_eps: tuple = (0.6, 0.2)
    k_er: int = 2
    k_ec: int = 2
    noise_loading_sparsity: float = 0.95
    mu_mean: float = 2.0
    mu_sd: float = 1.0
    seed: int = 0
    temporal_independence: bool = False
    include_factors: bool = True
    include_noise: bool = True

    def __post_init__(self):
        for name in ("zeta_r", "zeta_c", "ar_f", "ar_e", "ar_eps"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if min(self.T, self.p, self.q) < 2:
            raise ValueError("T, p and q must be at least 2")
        if len(self.zeta_r) != self.k_r or len(self.zeta_c) != self.k_c:
            raise ValueError("need one loading exponent per factor")
        for name in ("pi_S", "pi_B", "noise_loading_sparsity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.pi_S + self.pi_B >= 2:
            raise ValueError("pi_S + pi_B must be below 2")
        for coeffs in (self.ar_f, self.ar_e, self.ar_eps):
            check_ar2(coeffs)

    def ar(self, which: str) -> tuple:
        if self.temporal_independence:
            return (0.0, 0.0)
        return getattr(self, which)

    def with_seed(self, seed: int) -> "DGPConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return asdict(self)


_IA = dict(T=100, p=40, q=40, k_r=1, k_c=2, zeta_r=(0.0,), zeta_c=(0.0, 0.0),
           m_alpha=1.0, m_beta=1.0, sigma_alpha=1.0, sigma_beta=1.0, pi_S=0.4, pi_B=0.8)
_IB = {**_IA, "zeta_r": (0.2,), "zeta_c": (0.2, 0.0)}
_IC = {**_IB, "pi_B": 0.4}
_ID = {**_IC, "T": 200}
_IE = {**_ID, "p": 80, "q": 80}
_IIIA = {**_IA, "m_alpha": 2.0, "m_beta": 2.0}
_IIIB = {**_IIIA, "pi_B": 0.4}
_IIIF = {**_IIIB, "p": 80, "q": 80}

SCENARIOS: dict[str, dict] = {
    "Ia": _IA, "Ib": _IB, "Ic": _IC, "Id": _ID, "Ie": _IE,
    **{"II" + k[1:]: {**v, "temporal_independence": True}
       for k, v in {"Ia": _IA, "Ib": _IB, "Ic": _IC, "Id": _ID, "Ie": _IE}.items()},
    "IIIa": _IIIA,
    "IIIb": _IIIB,
    "IIIc": {**_IIIA, "pi_S": 0.8, "pi_B": 0.8},
    "IIId": {**_IIIB, "sigma_alpha": 2.0, "sigma_beta": 2.0},
    "IIIe": {**_IIIB, "m_alpha": 1.0, "m_beta": 1.0},
    "IIIf": _IIIF,
    "IIIg": {**_IIIF, "T": 200},
}


def scenario(name: str, seed: int = 0, **overrides) -> DGPConfig:
    """Preset configuration by setting name (``"Ia"`` .. ``"IIIg"``)."""
    try:
        params = SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; valid names: {', '.join(SCENARIOS)}") from None
    return DGPConfig(**{**params, "seed": seed, **overrides})


def prop1_oracles(pi_S: float, pi_B: float) -> tuple[float, float]:
    """Stationary zero probability and expected zero-run length of the effect chain."""
    if not (0.0 <= pi_S < 1.0 and 0.0 <= pi_B <= 1.0) or pi_S + pi_B >= 2:
        raise ValueError(f"degenerate stay-in probabilities ({pi_S}, {pi_B})")
    return (1 - pi_B) / (2 - pi_S - pi_B), 1.0 / (1 - pi_S)


def _zero_probability(pi_S, pi_B):
    if pi_S + pi_B >= 2:
        raise ValueError("pi_S + pi_B = 2 gives an absorbing chain")
    return (1 - pi_B) / (2 - pi_S - pi_B)


def gen_sparse_effects(T: int, n: int, pi_S: float, pi_B: float, m: float, sigma: float,
                       threshold: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent sparse effect series as a (T, n) array.

    Each series is a two-state chain (zero / dense) started from its
    stationary law, with stay-in probabilities ``pi_S`` (zero) and ``pi_B``
    (dense).  Dense values are i.i.d. ``|N(m, sigma^2)|``; values below
    ``threshold`` are set to zero afterwards.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    p_zero = _zero_probability(pi_S, pi_B)
    start = rng.random(n)
    moves = rng.random((T - 1, n))
    values = np.abs(m + sigma * rng.standard_normal((T, n)))
    zero = np.empty((T, n), dtype=bool)
    zero[0] = start < p_zero
    for t in range(1, T):
        stay = np.where(zero[t - 1], pi_S, pi_B)
        same = moves[t - 1] < stay
        zero[t] = np.where(same, zero[t - 1], ~zero[t - 1])
    out = np.where(zero, 0.0, values)
    out[out < threshold] = 0.0
    return out


def gen_sparse_effect_series(T: int, pi_S: float, pi_B: float, m: float, sigma: float,
                             threshold: float, rng: np.random.Generator) -> np.ndarray:
    """Single sparse effect series of length ``T``."""
    return gen_sparse_effects(T, 1, pi_S, pi_B, m, sigma, threshold, rng)[:, 0]


def gen_noise(cfg: DGPConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Noise ``A_er F_e,t A_ec' + Sigma_eps * eps_t`` and the parts used.

    Returns ``(E, A_er, A_ec, sigma_eps)``.
    """
    T, p, q = cfg.T, cfg.p, cfg.q
    keep = 1.0 - cfg.noise_loading_sparsity
    a_er = rng.standard_normal((p, cfg.k_er)) * (rng.random((p, cfg.k_er)) < keep)
    a_ec = rng.standard_normal((q, cfg.k_ec)) * (rng.random((q, cfg.k_ec)) < keep)
    sigma_eps = np.abs(rng.standard_normal((p, q)))
    f_e = np.moveaxis(gen_ar2_standardized(T, cfg.ar("ar_e"), rng, size=(cfg.k_er, cfg.k_ec)), -1, 0)
    eps = np.moveaxis(gen_ar2_standardized(T, cfg.ar("ar_eps"), rng, size=(p, q)), -1, 0)
    e = a_er @ f_e @ a_ec.T + sigma_eps * eps
    return e, a_er, a_ec, sigma_eps


def enforce_min_zero(eff: np.ndarray) -> np.ndarray:
    """Zero the per-row minimum of ``eff`` wherever the row has no zero."""
    eff = eff.copy()
    rows = np.flatnonzero(eff.min(axis=1) > 0)
    eff[rows, np.argmin(eff[rows], axis=1)] = 0.0
    return eff


def effect_thresholds(cfg: DGPConfig) -> tuple[float, float]:
    """Row and column identifiability thresholds ``sqrt(log(pT)/q)``, ``sqrt(log(qT)/p)``."""
    return (
        np.sqrt(np.log(cfg.p * cfg.T) / cfg.q),
        np.sqrt(np.log(cfg.q * cfg.T) / cfg.p),
    )


@dataclass
class SimulatedDataset:
    x: np.ndarray
    truth: MEFMComponents
    blocks_alpha: list[BlockSets]
    blocks_beta: list[BlockSets]
    loadings: dict = field(default_factory=dict)
    sigma_eps: np.ndarray | None = None
    config: DGPConfig | None = None


def assemble_dataset(cfg: DGPConfig) -> SimulatedDataset:
    """Draw one dataset from the generative model described by ``cfg``."""
    T, p, q = cfg.T, cfg.p, cfg.q
    rng_load = component_rng(cfg.seed, "loadings")
    a_r = gen_loadings(p, cfg.k_r, cfg.zeta_r, rng_load)
    a_c = gen_loadings(q, cfg.k_c, cfg.zeta_c, rng_load)

    rng_mu = component_rng(cfg.seed, "base")
    mu = cfg.mu_mean + cfg.mu_sd * rng_mu.standard_normal(T)

    thr_a, thr_b = effect_thresholds(cfg)
    alpha = gen_sparse_effects(T, p, cfg.pi_S, cfg.pi_B, cfg.m_alpha, cfg.sigma_alpha, thr_a,
                               component_rng(cfg.seed, "alpha"))
    beta = gen_sparse_effects(T, q, cfg.pi_S, cfg.pi_B, cfg.m_beta, cfg.sigma_beta, thr_b,
                              component_rng(cfg.seed, "beta"))
    alpha = enforce_min_zero(alpha)
    beta = enforce_min_zero(beta)

    if cfg.include_factors:
        f = np.moveaxis(
            gen_ar2_standardized(T, cfg.ar("ar_f"), component_rng(cfg.seed, "factors"), size=(cfg.k_r, cfg.k_c)),
            -1, 0,
        )
        common = a_r @ f @ a_c.T
    else:
        f = np.zeros((T, cfg.k_r, cfg.k_c))
        common = np.zeros((T, p, q))

    truth = MEFMComponents(mu=mu, alpha=alpha, beta=beta, common=common)
    signal = mu[:, None, None] + alpha[:, :, None] + beta[:, None, :] + common
    loadings = {"A_r": a_r, "A_c": a_c, "F": f}
    sigma_eps = None
    if cfg.include_noise:
        e, a_er, a_ec, sigma_eps = gen_noise(cfg, component_rng(cfg.seed, "noise"))
        loadings.update(A_er=a_er, A_ec=a_ec)
        x = signal + e
    else:
        x = signal
    return SimulatedDataset(
        x=x,
        truth=truth,
        blocks_alpha=[BlockSets.from_mask(alpha[:, i] == 0) for i in range(p)],
        blocks_beta=[BlockSets.from_mask(beta[:, j] == 0) for j in range(q)],
        loadings=loadings,
        sigma_eps=sigma_eps,
        config=cfg,
    )
