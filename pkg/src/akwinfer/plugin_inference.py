"""Online plug-in covariance estimation and normal-quantile intervals.

Curvature is estimated from four-point finite differences along canonical
coordinate pairs, optionally with Bernoulli entry subsampling weighted by
1/p so the running mean stays unbiased. The gradient-noise matrix is the
running mean of the outer products of the gradients the optimizer already
used, so it costs no extra queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .numkernel import (
    LinAlgError,
    check_finite,
    sandwich,
    sym_eigen,
    symmetrize,
)

__all__ = [
    "HessianAccumulator",
    "GramAccumulator",
    "ConfidenceInterval",
    "hessian_entry_block",
    "naive_hessian_update",
    "thresholded_hessian",
    "gram_update",
    "plugin_covariance",
    "plugin_ci",
    "z_quantile",
]

_STD_NORMAL = NormalDist()


def z_quantile(level: float) -> float:
    """Two-sided standard normal critical value for a nominal level."""
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    return _STD_NORMAL.inv_cdf(0.5 + level / 2.0)


@dataclass(frozen=True)
class ConfidenceInterval:
    center: float
    half_width: float
    level: float
    method: str
    degenerate: bool = False

    def __post_init__(self):
        if self.half_width < 0.0:
            raise ValueError("half width must be nonnegative")

    @property
    def length(self) -> float:
        return 2.0 * self.half_width

    def covers(self, value: float) -> bool:
        return abs(value - self.center) <= self.half_width


def hessian_entry_block(
    oracle,
    theta: np.ndarray,
    zeta,
    h: float,
    rng: np.random.Generator | None = None,
    p: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Four-point finite-difference curvature block for one data point.

    Entry (k,l) is ``[f(θ+h e_k+h e_l) − f(θ+h e_k) − f(θ+h e_l) + f(θ)] / h²``.
    With ``p < 1`` each entry is computed independently with probability p
    (mask drawn from ``rng``). Returns the raw entry matrix (unsampled
    entries zero, no 1/p weighting applied), the boolean mask, and the
    charged query count: 1 + 2d base evaluations plus one per sampled entry.
    """
    if h <= 0.0:
        raise ValueError("spacing parameter h must be positive")
    if not 0.0 < p <= 1.0:
        raise ValueError("entry-update probability must lie in (0, 1]")
    d = theta.shape[0]
    if p < 1.0:
        if rng is None:
            raise ValueError("subsampling (p < 1) requires an rng")
        mask = rng.random((d, d)) < p
    else:
        mask = np.ones((d, d), dtype=bool)
    base = oracle.loss(theta, zeta)
    shifts = theta[None, :] + h * np.eye(d)
    singles = oracle.loss_batch(shifts, zeta)
    pair_points = theta[None, :] + h * (np.eye(d)[:, None, :] + np.eye(d)[None, :, :]).reshape(d * d, d)
    pairs = oracle.loss_batch(pair_points, zeta).reshape(d, d)
    g = (pairs - singles[:, None] - singles[None, :] + base) / (h * h)
    g = np.where(mask, g, 0.0)
    queries = 1 + 2 * d + int(mask.sum())
    return g, mask, queries


@dataclass
class HessianAccumulator:
    """Running symmetrized curvature sum with entry subsampling.

    ``mode='ipw'`` weights sampled entries by 1/p (the analyzed estimator);
    ``mode='inherit'`` carries unsampled entries over from the previous
    raw block.
    """

    dim: int
    p: float = 1.0
    kappa1: float = 1e-3
    kappa2: float | None = None
    mode: str = "ipw"
    running_sum: np.ndarray = field(default=None)  # type: ignore[assignment]
    count: int = 0

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError("entry-update probability must lie in (0, 1]")
        if self.kappa1 <= 0.0:
            raise ValueError("eigenvalue floor kappa1 must be positive")
        if self.kappa2 is not None and self.kappa2 <= self.kappa1:
            raise ValueError("eigenvalue cap kappa2 must exceed kappa1")
        if self.mode not in ("ipw", "inherit"):
            raise ValueError("mode must be 'ipw' or 'inherit'")
        if self.running_sum is None:
            self.running_sum = np.zeros((self.dim, self.dim))
        self._prev_block = np.zeros((self.dim, self.dim))

    def accumulate_block(self, g: np.ndarray, mask: np.ndarray) -> None:
        """Fold one raw entry block into the running symmetrized sum."""
        if self.mode == "ipw":
            block = g / self.p
        else:
            block = np.where(mask, g, self._prev_block)
            self._prev_block = block
        self.running_sum += 0.5 * (block + block.T)
        self.count += 1

    def update(self, oracle, theta, zeta, h, rng=None) -> int:
        g, mask, queries = hessian_entry_block(oracle, theta, zeta, h, rng, self.p)
        self.accumulate_block(g, mask)
        return queries

    def mean(self) -> np.ndarray:
        if self.count < 1:
            raise ValueError("curvature accumulator is empty")
        return self.running_sum / self.count


def naive_hessian_update(
    oracle,
    theta: np.ndarray,
    zeta,
    h: float,
    u_batch: np.ndarray,
    v_batch: np.ndarray,
) -> np.ndarray:
    """Rank-m random curvature probe along paired direction batches.

    ``(1/(m h²)) Σ_j [Δ_{h v_j} f(θ+h u_j) − Δ_{h v_j} f(θ)] u_j v_j^T``;
    symmetrization happens in the accumulator, as for the entrywise block.
    """
    u_batch = np.atleast_2d(u_batch)
    v_batch = np.atleast_2d(v_batch)
    if u_batch.shape != v_batch.shape:
        raise ValueError("direction batches must have matching shapes")
    m = u_batch.shape[0]
    if m == 0:
        raise ValueError("direction batches must not be empty")
    if h <= 0.0:
        raise ValueError("spacing parameter h must be positive")
    base = oracle.loss(theta, zeta)
    f_u = oracle.loss_batch(theta[None, :] + h * u_batch, zeta)
    f_v = oracle.loss_batch(theta[None, :] + h * v_batch, zeta)
    f_uv = oracle.loss_batch(theta[None, :] + h * (u_batch + v_batch), zeta)
    coeff = (f_uv - f_u - f_v + base) / (h * h)
    return (u_batch * coeff[:, None]).T @ v_batch / m


def thresholded_hessian(acc: HessianAccumulator) -> np.ndarray:
    """Eigenvalue-thresholded running-mean curvature: floor at kappa1,
    optional cap at kappa2 (preconditioned-update mode)."""
    eig = sym_eigen(acc.mean(), name="curvature estimate")
    lam = np.maximum(acc.kappa1, eig.values)
    if acc.kappa2 is not None:
        lam = np.minimum(acc.kappa2, lam)
    return (eig.vectors * lam) @ eig.vectors.T


@dataclass
class GramAccumulator:
    """One-pass running sum of gradient outer products."""

    dim: int
    running_sum: np.ndarray = field(default=None)  # type: ignore[assignment]
    count: int = 0

    def __post_init__(self):
        if self.running_sum is None:
            self.running_sum = np.zeros((self.dim, self.dim))

    def update(self, g_hat: np.ndarray) -> None:
        self.running_sum += np.outer(g_hat, g_hat)
        self.count += 1

    def mean(self) -> np.ndarray:
        if self.count < 1:
            raise ValueError("gradient-noise accumulator is empty")
        return self.running_sum / self.count


def gram_update(acc: GramAccumulator, g_hat: np.ndarray) -> GramAccumulator:
    acc.update(g_hat)
    return acc


def plugin_covariance(h_acc: HessianAccumulator, g_acc: GramAccumulator) -> np.ndarray:
    """Sandwich estimate: inverse thresholded curvature around the
    gradient-noise mean. The inverse is safe because eigenvalues are
    floored at kappa1."""
    h_hat = thresholded_hessian(h_acc)
    eig = sym_eigen(h_hat, name="thresholded curvature")
    h_inv = (eig.vectors / eig.values) @ eig.vectors.T
    return sandwich(0.5 * (h_inv + h_inv.T), symmetrize(g_acc.mean(), rtol=1e-8))


def plugin_ci(
    theta_bar: np.ndarray,
    cov: np.ndarray,
    w: np.ndarray,
    n: int,
    level: float = 0.95,
) -> ConfidenceInterval:
    """Normal-quantile interval for ``w^T theta`` from a covariance estimate."""
    if n < 1:
        raise ValueError("n must be at least 1")
    w = check_finite(w, "projection vector")
    var = float(w @ cov @ w)
    if var < -1e-10:
        raise LinAlgError(
            f"projected variance is negative ({var:.3e}); accumulator corrupted"
        )
    var = max(var, 0.0)
    half = z_quantile(level) * np.sqrt(var / n)
    return ConfidenceInterval(
        center=float(w @ theta_bar),
        half_width=float(half),
        level=level,
        method="plugin",
        degenerate=var == 0.0,
    )
