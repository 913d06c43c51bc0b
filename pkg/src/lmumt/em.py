"""Exact EM on enumerable sentence spaces.

A tabular instance fixes the two marginals ``P(x)`` and ``P(y)``; the model
is a row-stochastic table ``theta[x, y] = P(y | x)``. Each EM step uses the
exact posterior ``P(x | y; theta)`` instead of back-translated samples, so
the objective ``sum_y P(y) log sum_x theta[x, y] P(x)`` must not decrease.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_probability_vector


@dataclass
class TabularInstance:
    p_x: np.ndarray
    p_y: np.ndarray

    def __post_init__(self):
        self.p_x = check_probability_vector(self.p_x, "P(x)")
        self.p_y = check_probability_vector(self.p_y, "P(y)")

    @property
    def shape(self):
        return len(self.p_x), len(self.p_y)

    @classmethod
    def random(cls, rng: np.random.Generator, max_size: int = 8) -> "TabularInstance":
        nx, ny = rng.integers(2, max_size + 1, size=2)
        return cls(rng.dirichlet(np.ones(nx)), rng.dirichlet(np.ones(ny)))

    def random_theta(self, rng: np.random.Generator) -> np.ndarray:
        return rng.dirichlet(np.ones(len(self.p_y)), size=len(self.p_x))


def _check_theta(inst: TabularInstance, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != inst.shape:
        raise ValueError(f"theta has shape {theta.shape}, expected {inst.shape}")
    if np.any(theta < 0) or np.abs(theta.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValueError("theta rows must be probability vectors")
    return theta


def model_marginal(inst: TabularInstance, theta) -> np.ndarray:
    """P(y; theta) = sum_x theta[x, y] P(x)."""
    return inst.p_x @ theta


def posterior(inst: TabularInstance, theta) -> np.ndarray:
    """P(x | y; theta) as an |X| x |Y| matrix whose columns sum to one."""
    joint = theta * inst.p_x[:, None]
    return joint / joint.sum(axis=0, keepdims=True)


def objective(inst: TabularInstance, theta) -> float:
    """sum_y P(y) log P(y; theta); differs from -KL(P_y || P(y; theta)) by the entropy of P_y."""
    theta = _check_theta(inst, theta)
    return float(inst.p_y @ np.log(model_marginal(inst, theta)))


def elbo(inst: TabularInstance, theta, theta_prev) -> float:
    """sum_y P(y) sum_x q(x|y) log[theta[x,y] P(x) / q(x|y)] with q the posterior under ``theta_prev``."""
    theta = _check_theta(inst, theta)
    q = posterior(inst, _check_theta(inst, theta_prev))
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = np.where(q > 0, q * np.log(theta * inst.p_x[:, None] / q), 0.0)
    return float(inst.p_y @ inner.sum(axis=0))


def exact_em_step(inst: TabularInstance, theta) -> np.ndarray:
    """E-step by Bayes' rule, M-step by row-normalizing the expected counts P(y) q(x|y)."""
    q = posterior(inst, _check_theta(inst, theta))
    counts = q * inst.p_y[None, :]
    return counts / counts.sum(axis=1, keepdims=True)


def marginal_diagnostic(inst: TabularInstance, theta) -> float:
    """KL(P_y || W_theta P_x)."""
    m = model_marginal(inst, _check_theta(inst, theta))
    p = inst.p_y
    nz = p > 0
    return float(max(np.sum(p[nz] * (np.log(p[nz]) - np.log(m[nz]))), 0.0))


def run_em(inst: TabularInstance, theta0, steps: int) -> list[np.ndarray]:
    thetas = [np.asarray(theta0, dtype=float)]
    for _ in range(steps):
        thetas.append(exact_em_step(inst, thetas[-1]))
    return thetas
