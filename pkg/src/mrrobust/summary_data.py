"""Two-sample summary statistics and the marginal-to-joint correlation adjustment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numerics import SingularMatrixError, is_positive_definite, sym_inverse


class SummaryDataError(ValueError):
    """Summary statistics violate one or more invariants.

    ``problems`` holds one human-readable line per violation.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InconsistentInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SummaryData:
    """IV-exposure and IV-outcome estimates with their covariance matrices.

    ``gamma_hat``/``sigma_gamma`` come from the exposure sample (size
    ``n_exposure``), ``Gamma_hat``/``sigma_Gamma`` from the outcome sample
    (size ``n_outcome``).
    """

    gamma_hat: np.ndarray
    Gamma_hat: np.ndarray
    sigma_gamma: np.ndarray
    sigma_Gamma: np.ndarray
    n_exposure: Optional[int] = None
    n_outcome: Optional[int] = None
    ids: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("gamma_hat", "Gamma_hat", "sigma_gamma", "sigma_Gamma"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_standard_errors(cls, gamma_hat, se_gamma, Gamma_hat, se_Gamma, **kwargs):
        """Build diagonal covariances from per-instrument standard errors."""
        se_gamma = np.asarray(se_gamma, dtype=float)
        se_Gamma = np.asarray(se_Gamma, dtype=float)
        return cls(
            gamma_hat=gamma_hat,
            Gamma_hat=Gamma_hat,
            sigma_gamma=np.diag(se_gamma**2),
            sigma_Gamma=np.diag(se_Gamma**2),
            **kwargs,
        )

    @property
    def n_instruments(self):
        return int(self.gamma_hat.shape[0])

    @property
    def is_diagonal(self):
        return _is_diagonal(self.sigma_gamma) and _is_diagonal(self.sigma_Gamma)

    def __eq__(self, other):
        if not isinstance(other, SummaryData):
            return NotImplemented
        return (
            self.n_exposure == other.n_exposure
            and self.n_outcome == other.n_outcome
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("gamma_hat", "Gamma_hat", "sigma_gamma", "sigma_Gamma")
            )
        )

    __hash__ = None


def _is_diagonal(m, tol=1e-12):
    off = m - np.diag(np.diag(m))
    return bool(np.all(np.abs(off) < tol))


def _matrix_problems(name, m, dim):
    problems = []
    if m.ndim != 2 or m.shape != (dim, dim):
        return [f"{name}: expected shape ({dim}, {dim}), got {m.shape}"]
    if not np.all(np.isfinite(m)):
        bad = np.argwhere(~np.isfinite(m))
        return [f"{name}: non-finite entry at {tuple(int(i) for i in bad[0])}"]
    scale = max(np.max(np.abs(m)), 1e-300)
    if np.max(np.abs(m - m.T)) > 1e-12 * scale:
        i, j = np.unravel_index(np.argmax(np.abs(m - m.T)), m.shape)
        problems.append(f"{name}: not symmetric at ({i}, {j})")
    diag = np.diag(m)
    for i in np.flatnonzero(diag <= 0):
        problems.append(f"{name}: not positive definite, diagonal entry ({i}, {i}) = {diag[i]:g}")
    if not problems and not is_positive_definite(m):
        problems.append(f"{name}: not positive definite")
    return problems


def validate(data):
    """Return ``data`` unchanged if every invariant holds, else raise SummaryDataError."""
    problems = []
    g, G = data.gamma_hat, data.Gamma_hat
    if g.ndim != 1 or g.shape[0] < 1:
        problems.append(f"gamma_hat: expected a non-empty vector, got shape {g.shape}")
        raise SummaryDataError(problems)
    L = g.shape[0]
    if G.shape != (L,):
        problems.append(f"Gamma_hat: length {G.shape} does not match gamma_hat length {L}")
    for name, vec in (("gamma_hat", g), ("Gamma_hat", G)):
        if vec.ndim == 1:
            for i in np.flatnonzero(~np.isfinite(vec)):
                problems.append(f"{name}: non-finite entry at index {i}")
    problems += _matrix_problems("sigma_gamma", data.sigma_gamma, L)
    problems += _matrix_problems("sigma_Gamma", data.sigma_Gamma, L)
    for name in ("n_exposure", "n_outcome"):
        n = getattr(data, name)
        if n is not None and (int(n) != n or n < 1):
            problems.append(f"{name}: must be a positive integer, got {n}")
    if problems:
        raise SummaryDataError(problems)
    return data


@dataclass(frozen=True)
class CorrelationSpec:
    """Instrument correlation matrices for the outcome and exposure samples."""

    m_outcome: np.ndarray
    m_exposure: np.ndarray

    def __post_init__(self):
        for name in ("m_outcome", "m_exposure"):
            m = np.array(getattr(self, name), dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise SummaryDataError([f"{name}: expected a square matrix, got {m.shape}"])
            if np.max(np.abs(np.diag(m) - 1.0)) > 1e-12:
                raise SummaryDataError([f"{name}: diagonal must be 1"])
            if np.any(np.abs(m) > 1.0 + 1e-12):
                raise SummaryDataError([f"{name}: entries must lie in [-1, 1]"])
            if np.max(np.abs(m - m.T)) > 1e-12:
                raise SummaryDataError([f"{name}: not symmetric"])
            m.setflags(write=False)
            object.__setattr__(self, name, m)


def banded_correlation(L, rho, bandwidth=1):
    """Correlation matrix with ``rho`` on the first ``bandwidth`` off-diagonals."""
    m = np.eye(L)
    for k in range(1, bandwidth + 1):
        idx = np.arange(L - k)
        m[idx, idx + k] = rho
        m[idx + k, idx] = rho
    return m


def _adjust_one(effect, variance, n, m, label):
    L = effect.shape[0]
    v = 1.0 / (variance * n + effect**2)
    u = v * effect
    sv = np.sqrt(v)
    h = m * np.outer(sv, sv)
    try:
        h_inv = sym_inverse(h)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"{label}: correlation-weighted matrix H is singular ({exc})") from exc
    resid = 1.0 - u @ h_inv @ u
    if resid <= 0:
        raise InconsistentInputError(
            f"{label}: implied residual variance is non-positive (1 - u'H^-1 u = {resid:g})"
        )
    return h_inv @ u, resid / (n - L + 1) * h_inv


def adjust_for_correlation(raw, corr):
    """Convert marginal (one-SNP-at-a-time) estimates into joint estimates.

    ``raw`` must carry diagonal covariances from simple regressions on
    column-centred data together with both sample sizes; ``corr`` gives the
    instrument correlation matrix in each sample.
    """
    validate(raw)
    L = raw.n_instruments
    if raw.n_exposure is None or raw.n_outcome is None:
        raise SummaryDataError(["correlation adjustment requires n_exposure and n_outcome"])
    if not raw.is_diagonal:
        raise SummaryDataError(["correlation adjustment expects diagonal marginal covariances"])
    for name, m in (("m_outcome", corr.m_outcome), ("m_exposure", corr.m_exposure)):
        if m.shape != (L, L):
            raise SummaryDataError([f"{name}: expected shape ({L}, {L}), got {m.shape}"])
    for name in ("n_outcome", "n_exposure"):
        if getattr(raw, name) <= L:
            raise SummaryDataError([f"{name} must exceed the number of instruments ({L})"])
    Gamma_t, sig_Gamma_t = _adjust_one(
        raw.Gamma_hat, np.diag(raw.sigma_Gamma), raw.n_outcome, corr.m_outcome, "outcome"
    )
    gamma_t, sig_gamma_t = _adjust_one(
        raw.gamma_hat, np.diag(raw.sigma_gamma), raw.n_exposure, corr.m_exposure, "exposure"
    )
    return SummaryData(
        gamma_hat=gamma_t,
        Gamma_hat=Gamma_t,
        sigma_gamma=0.5 * (sig_gamma_t + sig_gamma_t.T),
        sigma_Gamma=0.5 * (sig_Gamma_t + sig_Gamma_t.T),
        n_exposure=raw.n_exposure,
        n_outcome=raw.n_outcome,
        ids=raw.ids,
    )
