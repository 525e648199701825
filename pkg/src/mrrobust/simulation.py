"""Seeded Monte Carlo engine for the two-sample summary-data experiments.

Each replicate draws two independent samples from the linear structural model

    D = Z gamma + delta,    Y = D beta + Z alpha + eps,
    eps = rho * delta + sqrt(1 - rho^2) * e,

with genotypes Z_ij in {0, 1, 2}, and reduces them to per-instrument marginal
regressions (Y on Z_j in the outcome sample, D on Z_j in the exposure sample).

Randomness: every replicate gets its own Philox stream keyed by
``(seed, stream, replicate)`` through ``numpy.random.SeedSequence``, so results
do not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Optional

import numpy as np

from .inference import detect_invalid_instruments, q_pleiotropy, region_is_unbounded
from .numerics import is_positive_definite
from .robust_tests import ALL_KINDS, TestKind, pvalue_grid, q_grid
from .summary_data import CorrelationSpec, SummaryData, adjust_for_correlation, banded_correlation

log = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("size", "power", "invalid", "correlated", "stress")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class DgpConfig:
    n_outcome: int = 20000
    n_exposure: int = 20000
    L: int = 20
    beta: float = 0.0
    rho_endogeneity: float = 0.1
    r: float = 16.0
    alpha_direct: Optional[tuple] = None
    allele_freq_range: tuple = (0.1, 0.9)
    corr_bandwidth: int = 0
    corr_rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_outcome < 3 or self.n_exposure < 3:
            raise ConfigurationError("n_outcome and n_exposure must be at least 3")
        if self.L < 1:
            raise ConfigurationError("L must be >= 1")
        if not (-1.0 < self.rho_endogeneity < 1.0):
            raise ConfigurationError("rho must lie in (-1, 1)")
        if self.r < 0.5:
            raise ConfigurationError("r must be >= 0.5")
        lo, hi = self.allele_freq_range
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigurationError("allele_freq_range must be an ordered pair inside (0, 1)")
        if self.alpha_direct is not None:
            alpha = tuple(float(a) for a in self.alpha_direct)
            if len(alpha) != self.L:
                raise ConfigurationError(f"alpha_direct has length {len(alpha)}, expected L = {self.L}")
            object.__setattr__(self, "alpha_direct", alpha)
        if self.corr_bandwidth < 0:
            raise ConfigurationError("corr_bandwidth must be >= 0")
        if self.corr_bandwidth > 0 and not is_positive_definite(self.latent_correlation()):
            raise ConfigurationError(
                f"banded correlation with rho={self.corr_rho}, bandwidth={self.corr_bandwidth} is not positive definite"
            )

    def latent_correlation(self):
        return banded_correlation(self.L, self.corr_rho, self.corr_bandwidth)

    def direct_effects(self):
        return np.zeros(self.L) if self.alpha_direct is None else np.asarray(self.alpha_direct)


def direct_effect_vector(L, magnitude, proportion):
    """alpha with ``magnitude`` on the first round(proportion * L) instruments."""
    k = int(round(proportion * L))
    out = np.zeros(L)
    out[:k] = magnitude
    return tuple(out)


def replicate_rng(seed, replicate, stream=0):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(replicate)))
    return np.random.Generator(np.random.Philox(ss))


def draw_gamma_vector(r, n, L, rng):
    """L uniform draws on [sqrt((r - 0.5)/n), sqrt((r + 0.5)/n)]."""
    if r < 0.5:
        raise ConfigurationError("r must be >= 0.5 (the lower bound would be imaginary)")
    return rng.uniform(math.sqrt((r - 0.5) / n), math.sqrt((r + 0.5) / n), size=L)


def marginal_ols(y, z, ddof=2):
    """Slope and standard error of a simple regression of y on z (with intercept).

    The residual variance uses divisor ``n - ddof``; ``ddof=0`` matches the
    RSS/n convention under which marginal-to-joint adjustment is exact.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    n = y.shape[0]
    if n < 3 or z.shape != y.shape:
        raise ValueError("marginal_ols needs two equal-length vectors with at least 3 entries")
    zc = z - z.mean()
    szz = zc @ zc
    if szz <= 0:
        raise ArithmeticError("marginal_ols: regressor is constant")
    yc = y - y.mean()
    slope = (zc @ yc) / szz
    rss = max(yc @ yc - slope * (zc @ yc), 0.0)
    return float(slope), float(math.sqrt(rss / (n - ddof) / szz))


def marginal_ols_columns(y, Z, ddof=2):
    """Column-wise ``marginal_ols`` of y on every column of Z."""
    n = y.shape[0]
    Zc = Z - Z.mean(axis=0)
    yc = y - y.mean()
    szz = np.einsum("ij,ij->j", Zc, Zc)
    if np.any(szz <= 0):
        raise ArithmeticError(f"instrument(s) {np.flatnonzero(szz <= 0).tolist()} are constant in the sample")
    szy = Zc.T @ yc
    slope = szy / szz
    rss = np.maximum(yc @ yc - slope * szy, 0.0)
    return slope, np.sqrt(rss / (n - ddof) / szz)


@dataclass(frozen=True)
class IndividualData:
    z_outcome: np.ndarray
    y_outcome: np.ndarray
    z_exposure: np.ndarray
    d_exposure: np.ndarray


def _genotypes(n, p, rng, chol=None):
    """Binomial(2, p_j) genotypes by inversion; correlated through a Gaussian copula if chol given."""
    L = p.shape[0]
    q0 = (1.0 - p) ** 2
    q1 = 1.0 - p**2
    if chol is None:
        u = rng.random((n, L))
        return (u > q0).astype(float) + (u > q1)
    nd = NormalDist()
    t0 = np.array([nd.inv_cdf(v) for v in q0])
    t1 = np.array([nd.inv_cdf(v) for v in q1])
    latent = rng.standard_normal((n, L)) @ chol.T
    return (latent > t0).astype(float) + (latent > t1)


def generate_dataset(config, rng=None, return_individual=False, ddof=2):
    """Draw one two-sample data set and reduce it to summary statistics."""
    if rng is None:
        rng = replicate_rng(config.seed, 0)
    L = config.L
    lo, hi = config.allele_freq_range
    p = rng.uniform(lo, hi, size=L)
    gamma = draw_gamma_vector(config.r, config.n_outcome, L, rng)
    alpha = config.direct_effects()
    chol = np.linalg.cholesky(config.latent_correlation()) if config.corr_bandwidth > 0 else None
    rho = config.rho_endogeneity

    samples = []
    for n in (config.n_outcome, config.n_exposure):
        z = _genotypes(n, p, rng, chol)
        delta = rng.standard_normal(n)
        e = rng.standard_normal(n)
        eps = rho * delta + math.sqrt(1.0 - rho * rho) * e
        d = z @ gamma + delta
        y = d * config.beta + z @ alpha + eps
        samples.append((z, y, d))
    (z1, y1, _), (z2, _, d2) = samples

    Gamma_hat, se_Gamma = marginal_ols_columns(y1, z1, ddof)
    gamma_hat, se_gamma = marginal_ols_columns(d2, z2, ddof)
    data = SummaryData.from_standard_errors(
        gamma_hat, se_gamma, Gamma_hat, se_Gamma,
        n_exposure=config.n_exposure, n_outcome=config.n_outcome,
    )
    if return_individual:
        return data, IndividualData(z1, y1, z2, d2)
    return data


def empirical_correlation(z):
    zc = z - z.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", zc, zc))
    m = (zc.T @ zc) / np.outer(norms, norms)
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0)
    return m


def stress_transform(data, K, beta_true, rng):
    """Redraw effects around K * gamma_hat: a weakened copy with known effect beta_true."""
    sd_g = np.sqrt(np.diag(data.sigma_gamma))
    sd_G = np.sqrt(np.diag(data.sigma_Gamma))
    g_new = rng.normal(K * data.gamma_hat, sd_g)
    G_new = rng.normal(K * data.gamma_hat * beta_true, sd_G)
    return replace(data, gamma_hat=g_new, Gamma_hat=G_new)


@dataclass(frozen=True)
class ExperimentConfig:
    """One simulation protocol.

    ``kind`` selects the design:
      size        beta = beta0 at every grid value; rejection rate per test
      power       data drawn at ``dgp.beta``; rejection rate at each beta0
      invalid     as power, plus empty-mrAR-region and Q-test rejection rates
      correlated  banded correlated instruments, adjusted before testing
      stress      weakened copies of ``base`` at each K; coverage and
                  unbounded-region frequency
    """

    kind: str
    dgp: DgpConfig = field(default_factory=DgpConfig)
    beta0_grid: tuple = (0.0,)
    K_grid: tuple = (0.0, 0.25, 0.5, 1.0)
    replicates: int = 500
    alpha_level: float = 0.05
    tests: tuple = ALL_KINDS
    # correlated kind: "empirical" uses each sample's in-sample instrument correlation,
    # "banded" the working matrix (corr_working_rho, corr_working_bandwidth)
    corr_working: str = "empirical"
    corr_working_rho: Optional[float] = None
    corr_working_bandwidth: Optional[int] = None
    correlated_mode: str = "size"
    grid_points: int = 4001

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"unknown kind {self.kind!r}; expected one of {', '.join(EXPERIMENT_KINDS)}")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be >= 1")
        if not (0.0 < self.alpha_level < 1.0):
            raise ConfigurationError("alpha_level must lie in (0, 1)")
        object.__setattr__(self, "tests", tuple(TestKind.parse(t) for t in self.tests))
        object.__setattr__(self, "beta0_grid", tuple(float(b) for b in self.beta0_grid))
        object.__setattr__(self, "K_grid", tuple(float(k) for k in self.K_grid))
        if self.kind == "stress" and any(not (0.0 <= k <= 1.0) for k in self.K_grid):
            raise ConfigurationError("K_grid values must lie in [0, 1]")
        if self.corr_working not in ("empirical", "banded"):
            raise ConfigurationError("corr_working must be 'empirical' or 'banded'")
        if self.correlated_mode not in ("size", "power"):
            raise ConfigurationError("correlated_mode must be 'size' or 'power'")
        if self.kind == "correlated" and self.dgp.corr_bandwidth < 1:
            raise ConfigurationError("correlated experiments need dgp.corr_bandwidth >= 1")

    @property
    def grid(self):
        return self.K_grid if self.kind == "stress" else self.beta0_grid


@dataclass(frozen=True)
class ExperimentResult:
    kind: str
    grid: np.ndarray
    rates: dict
    replicates: int
    seed: int

    def rows(self):
        """(grid_value, series, rate) rows in grid-major, series-insertion order."""
        for j, g in enumerate(self.grid):
            for label, values in self.rates.items():
                yield float(g), label, float(values[j])


def _rejections(data, tests, betas, alpha):
    betas = np.asarray(betas, dtype=float)
    q = q_grid(data, betas)
    out = {}
    for kind in tests:
        _, p = pvalue_grid(data, kind, betas, q=q)
        out[kind.value] = np.where(np.isfinite(p), p < alpha, True).astype(float)
    return out


def _working_correlation(cfg, individual):
    if cfg.corr_working == "empirical":
        return CorrelationSpec(
            m_outcome=empirical_correlation(individual.z_outcome),
            m_exposure=empirical_correlation(individual.z_exposure),
        )
    rho = cfg.dgp.corr_rho if cfg.corr_working_rho is None else cfg.corr_working_rho
    bw = cfg.dgp.corr_bandwidth if cfg.corr_working_bandwidth is None else cfg.corr_working_bandwidth
    m = banded_correlation(cfg.dgp.L, rho, bw)
    return CorrelationSpec(m_outcome=m, m_exposure=m)


def _replicate(cfg, rep, base=None):
    """Per-replicate 0/1 outcomes: {series label: array over the grid}."""
    grid = np.asarray(cfg.grid, dtype=float)
    alpha = cfg.alpha_level
    dgp = cfg.dgp
    seed = dgp.seed

    if cfg.kind == "size" or (cfg.kind == "correlated" and cfg.correlated_mode == "size"):
        out = {k.value: np.zeros(grid.size) for k in cfg.tests}
        for j, b0 in enumerate(grid):
            rng = replicate_rng(seed, rep, stream=j)
            data = _draw(cfg, replace(dgp, beta=b0), rng)
            for label, v in _rejections(data, cfg.tests, [b0], alpha).items():
                out[label][j] = v[0]
        return out

    if cfg.kind in ("power", "invalid", "correlated"):
        rng = replicate_rng(seed, rep)
        data = _draw(cfg, dgp, rng)
        out = _rejections(data, cfg.tests, grid, alpha)
        if cfg.kind == "invalid":
            empty, _ = detect_invalid_instruments(data, alpha, grid_points=cfg.grid_points)
            out["mrAR:empty"] = np.full(grid.size, float(empty))
            out["Q"] = np.full(grid.size, float(q_pleiotropy(data).p_value < alpha))
        return out

    # stress
    out = {}
    for kind in cfg.tests:
        out[f"{kind.value}:coverage"] = np.zeros(grid.size)
        out[f"{kind.value}:infinite"] = np.zeros(grid.size)
    for j, K in enumerate(grid):
        rng = replicate_rng(seed, rep, stream=j)
        data = stress_transform(base, K, dgp.beta, rng)
        rej = _rejections(data, cfg.tests, [dgp.beta], alpha)
        for kind in cfg.tests:
            out[f"{kind.value}:coverage"][j] = 1.0 - rej[kind.value][0]
            out[f"{kind.value}:infinite"][j] = float(region_is_unbounded(data, kind, alpha))
    return out


def _draw(cfg, dgp, rng):
    if cfg.kind != "correlated":
        return generate_dataset(dgp, rng)
    raw, individual = generate_dataset(dgp, rng, return_individual=True)
    return adjust_for_correlation(raw, _working_correlation(cfg, individual))


def _run_chunk(args):
    cfg, reps, base = args
    return [_replicate(cfg, rep, base) for rep in reps]


def default_stress_base(cfg):
    """Base summary data for stress tests when none is supplied: one DGP draw on a reserved stream."""
    return generate_dataset(cfg.dgp, replicate_rng(cfg.dgp.seed, 0, stream=2**31 - 1))


def run_experiment(cfg, base=None, workers=1):
    """Run ``cfg.replicates`` independent replicates and average their outcomes."""
    if cfg.kind == "stress" and base is None:
        base = default_stress_base(cfg)
    reps = list(range(cfg.replicates))
    if workers <= 1:
        results = [_replicate(cfg, rep, base) for rep in reps]
    else:
        chunks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [(cfg, c, base) for c in chunks]))
        by_rep = {}
        for chunk, part in zip(chunks, parts):
            by_rep.update(zip(chunk, part))
        results = [by_rep[r] for r in reps]
    labels = list(results[0].keys())
    rates = {}
    for label in labels:
        acc = np.zeros(len(cfg.grid))
        for res in results:  # fixed replicate order keeps sums bit-identical
            acc = acc + res[label]
        rates[label] = acc / cfg.replicates
    return ExperimentResult(cfg.kind, np.asarray(cfg.grid, dtype=float), rates, cfg.replicates, cfg.dgp.seed)
