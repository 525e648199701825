"""Instrument-strength diagnostics from summary statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .summary_data import InconsistentInputError, SummaryDataError


class DegenerateVarianceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class StrengthReport:
    per_iv_f: np.ndarray
    overall_f_exact: float
    overall_f_mean_approx: float
    n_exposure: int
    variant: str = "uniform"


def per_iv_f(data):
    """Squared t-statistics gamma_hat_i^2 / Sigma_gamma_ii."""
    var = np.diag(data.sigma_gamma)
    if np.any(var <= 0):
        raise DegenerateVarianceError("per-instrument F needs positive exposure variances")
    return data.gamma_hat**2 / var


def overall_f(data, variant="uniform"):
    """First-stage F of the joint regression rebuilt from per-instrument F values.

    With orthogonal instruments, the joint residual sum of squares decomposes
    into the per-instrument ones, so with ``d`` residual degrees of freedom

        F = (d / L) * s / (1 - s),   s = sum_i F_i / (F_i + d).

    ``variant="uniform"`` uses d = n2 - L + 1 throughout. ``variant="mixed"``
    keeps the prefactor n2 - L + 1 but uses n2 - L - 1 inside the sum.
    """
    if data.n_exposure is None:
        raise SummaryDataError(["overall F requires n_exposure"])
    n2 = int(data.n_exposure)
    f = per_iv_f(data)
    L = f.shape[0]
    if n2 <= L + 1:
        raise SummaryDataError([f"n_exposure ({n2}) must exceed L + 1 ({L + 1})"])
    if variant == "uniform":
        inner = n2 - L + 1
    elif variant == "mixed":
        inner = n2 - L - 1
    else:
        raise ValueError(f"unknown variant {variant!r}; expected 'uniform' or 'mixed'")
    s = float(np.sum(f / (f + inner)))
    if s >= 1.0:
        raise InconsistentInputError(f"sum F_i/(F_i + d) = {s:.6g} >= 1 implies a joint R^2 of at least 1")
    exact = (n2 - L + 1) / L * s / (1.0 - s)
    return StrengthReport(
        per_iv_f=f,
        overall_f_exact=exact,
        overall_f_mean_approx=float(np.mean(f)),
        n_exposure=n2,
        variant=variant,
    )
