"""Covariance matrix adaptation evolution strategy (rank-based, derivative-free).

Standard formulation: truncation selection of the best half with log-rank
weights, cumulative step-size adaptation, and rank-one plus rank-mu
covariance updates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-12


def default_population_size(dim: int) -> int:
    return 4 + int(3 * np.log(dim))


@dataclass
class CmaesState:
    """Search distribution N(mean, sigma^2 * cov) plus adaptation state."""

    mean: np.ndarray
    sigma: float
    cov: np.ndarray = None
    path_sigma: np.ndarray = None
    path_cov: np.ndarray = None
    generation: int = 0
    population_size: int = 0

    # strategy constants, derived from dim and population size
    weights: np.ndarray = field(default=None, repr=False)
    mu_eff: float = field(default=0.0, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        n = self.mean.size
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.cov is None:
            self.cov = np.eye(n)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.path_sigma is None:
            self.path_sigma = np.zeros(n)
        if self.path_cov is None:
            self.path_cov = np.zeros(n)
        if self.population_size <= 0:
            self.population_size = default_population_size(n)
        lam = self.population_size
        mu = lam // 2
        w = np.log((lam + 1) / 2.0) - np.log(np.arange(1, mu + 1))
        self.weights = w / np.sum(w)
        self.mu_eff = 1.0 / np.sum(self.weights ** 2)

    @property
    def dim(self) -> int:
        return self.mean.size

    def _constants(self):
        n, mu_eff = self.dim, self.mu_eff
        c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
        d_sigma = 1.0 + 2.0 * max(0.0, np.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
        c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)
        c_1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
        c_mu = min(1.0 - c_1,
                   2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
        chi_n = np.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n ** 2))
        return c_sigma, d_sigma, c_c, c_1, c_mu, chi_n

    def _eigen(self):
        """Symmetric eigendecomposition of cov, flooring tiny eigenvalues."""
        c = (self.cov + self.cov.T) / 2.0
        vals, vecs = np.linalg.eigh(c)
        if np.any(vals < EIGEN_FLOOR):
            log.warning("covariance repaired: flooring %d eigenvalue(s) at %g",
                        int(np.sum(vals < EIGEN_FLOOR)), EIGEN_FLOOR)
            vals = np.maximum(vals, EIGEN_FLOOR)
            self.cov = (vecs * vals) @ vecs.T
        return vals, vecs


def cmaes_ask(state: CmaesState, rng: np.random.Generator) -> np.ndarray:
    """Sample a (population_size, dim) matrix of candidates ~ N(mean, sigma^2 C)."""
    vals, vecs = state._eigen()
    z = rng.standard_normal((state.population_size, state.dim))
    y = z * np.sqrt(vals)
    return state.mean + state.sigma * (y @ vecs.T)


def cmaes_tell(state: CmaesState, candidates: np.ndarray, costs) -> CmaesState:
    """Rank-based update of mean, step size, covariance and both paths."""
    candidates = np.asarray(candidates, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    if candidates.shape != (state.population_size, state.dim):
        raise ValueError(f"expected {(state.population_size, state.dim)} candidates, "
                         f"got {candidates.shape}")
    if costs.shape != (state.population_size,):
        raise ValueError("one cost per candidate required")
    if np.any(~np.isfinite(costs)):
        log.warning("%d non-finite cost(s); ranked worst", int(np.sum(~np.isfinite(costs))))
        costs = np.where(np.isfinite(costs), costs, np.inf)

    c_sigma, d_sigma, c_c, c_1, c_mu, chi_n = state._constants()
    n = state.dim
    mu = state.population_size // 2
    order = np.argsort(costs, kind="stable")
    elite = candidates[order[:mu]]

    old_mean = state.mean
    y_elite = (elite - old_mean) / state.sigma
    y_w = state.weights @ y_elite
    state.mean = old_mean + state.sigma * y_w

    vals, vecs = state._eigen()
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    state.path_sigma = ((1.0 - c_sigma) * state.path_sigma
                        + np.sqrt(c_sigma * (2.0 - c_sigma) * state.mu_eff) * (inv_sqrt @ y_w))

    gen = state.generation + 1
    ps_norm = np.linalg.norm(state.path_sigma)
    h_sigma = ps_norm / np.sqrt(1.0 - (1.0 - c_sigma) ** (2 * gen)) < (1.4 + 2.0 / (n + 1)) * chi_n
    state.path_cov = ((1.0 - c_c) * state.path_cov
                      + (np.sqrt(c_c * (2.0 - c_c) * state.mu_eff) * y_w if h_sigma else 0.0))

    rank_mu = (y_elite.T * state.weights) @ y_elite
    delta_h = (1.0 - float(h_sigma)) * c_c * (2.0 - c_c)
    state.cov = ((1.0 - c_1 - c_mu) * state.cov
                 + c_1 * (np.outer(state.path_cov, state.path_cov) + delta_h * state.cov)
                 + c_mu * rank_mu)

    state.sigma = state.sigma * np.exp((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0))
    state.generation = gen
    return state
