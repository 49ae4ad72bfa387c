"""Exchangeable Gaussian prior on latent rows and hyperpriors on rho, beta and K.

The covariance ``(1 - rho) I + rho 11^T`` has a closed-form inverse and
determinant, so nothing here ever factorises a matrix.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidRho
from .poset import LatentEmbedding

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Hyperparams:
    alpha_rho: float = 1.0
    gamma_a: float = 2.0
    gamma_b: float = 1.0  # rate
    lam: float = 3.0
    rho_step: float = 0.8  # d_r: delta ~ U(d_r, 1/d_r)
    beta_step: float = 0.3  # sd of the log-beta random walk

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.rho_step < 1:
            raise ValueError("rho_step must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict | None) -> "Hyperparams":
        d = dict(d or {})
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_rho(rho: float) -> None:
    if not 0 <= rho < 1:
        raise InvalidRho(f"rho must lie in [0, 1), got {rho}")


def sigma_rho(rho: float, K: int) -> np.ndarray:
    _check_rho(rho)
    return (1.0 - rho) * np.eye(K) + rho * np.ones((K, K))


def _row_terms(rho: float, K: int) -> tuple[float, float]:
    # inverse = (I - c 11^T) / (1 - rho);  log det = (K-1) log(1-rho) + log(1+(K-1) rho)
    c = rho / (1.0 + (K - 1) * rho)
    logdet = (K - 1) * math.log1p(-rho) + math.log1p((K - 1) * rho)
    return c, logdet


def log_prior_U(U, rho: float) -> float:
    """Sum over rows of the exchangeable N(0, Sigma_rho) log-density."""
    _check_rho(rho)
    if isinstance(U, LatentEmbedding):
        U = U.U
    U = np.asarray(U, dtype=float)
    m, K = U.shape
    c, logdet = _row_terms(rho, K)
    sq = np.einsum("ij,ij->i", U, U)
    sums = U.sum(axis=1)
    quad = (sq - c * sums * sums) / (1.0 - rho)
    return float(-0.5 * (m * (K * LOG_2PI + logdet) + quad.sum()))


def conditional_column_params(row, rho: float, K: int) -> tuple[float, float]:
    """Mean and variance of a new coordinate given the K existing ones of a row."""
    row = np.asarray(row, dtype=float)
    denom = 1.0 + (K - 1) * rho
    mean = rho / denom * float(row.sum())
    var = (1.0 + (K - 1) * rho - K * rho * rho) / denom
    return mean, var


def log_prior_rho(rho: float, hp: Hyperparams = Hyperparams()) -> float:
    """Beta(1, alpha_rho) log-density."""
    if not 0 <= rho < 1:
        return float("-inf")
    return math.log(hp.alpha_rho) + (hp.alpha_rho - 1.0) * math.log1p(-rho)


def log_prior_beta(beta: float, hp: Hyperparams = Hyperparams()) -> float:
    """Gamma(shape a, rate b) log-density."""
    if not beta > 0:
        return float("-inf")
    a, b = hp.gamma_a, hp.gamma_b
    return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(beta) - b * beta


def log_prior_K(K: int, hp: Hyperparams = Hyperparams()) -> float:
    """Poisson(lam) log-mass truncated to K >= 1."""
    if K < 1:
        return float("-inf")
    lam = hp.lam
    return K * math.log(lam) - lam - math.lgamma(K + 1) - math.log(-math.expm1(-lam))


def sample_prior_U(m: int, K: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Rows ``sqrt(1-rho) z + sqrt(rho) z0`` have covariance Sigma_rho."""
    _check_rho(rho)
    z = rng.standard_normal((m, K))
    z0 = rng.standard_normal((m, 1))
    return math.sqrt(1.0 - rho) * z + math.sqrt(rho) * z0
