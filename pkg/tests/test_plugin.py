import numpy as np
import pytest

from akwinfer import models
from akwinfer.numkernel import LinAlgError
from akwinfer.plugin_inference import (
    ConfidenceInterval,
    GramAccumulator,
    HessianAccumulator,
    gram_update,
    hessian_entry_block,
    naive_hessian_update,
    plugin_ci,
    plugin_covariance,
    thresholded_hessian,
    z_quantile,
)


class QuadraticOracle:
    """f(theta) = theta^T A theta + b^T theta; exact Hessian 2A."""

    def __init__(self, a, b=None):
        self.a = np.asarray(a, float)
        self.b = np.zeros(len(self.a)) if b is None else np.asarray(b, float)

    def loss(self, theta, zeta):
        return float(theta @ self.a @ theta + self.b @ theta)

    def loss_batch(self, thetas, zeta):
        return np.einsum("bi,ij,bj->b", thetas, self.a, thetas) + thetas @ self.b


class AffineOracle:
    def __init__(self, b):
        self.b = np.asarray(b, float)

    def loss(self, theta, zeta):
        return float(self.b @ theta)

    def loss_batch(self, thetas, zeta):
        return thetas @ self.b


def test_z_quantile_values():
    assert z_quantile(0.95) == pytest.approx(1.959964, abs=1e-6)
    assert z_quantile(0.90) == pytest.approx(1.644854, abs=1e-6)
    with pytest.raises(ValueError):
        z_quantile(1.0)


def test_confidence_interval_properties():
    ci = ConfidenceInterval(center=1.0, half_width=0.5, level=0.95, method="plugin")
    assert ci.length == 1.0
    assert ci.covers(1.5) and ci.covers(0.5) and not ci.covers(1.51)
    with pytest.raises(ValueError):
        ConfidenceInterval(center=0.0, half_width=-0.1, level=0.95, method="plugin")


def test_entry_block_exact_on_quadratic():
    # second differences of a quadratic are exact for any h
    a = np.array([[2.0, 0.7, 0.1], [0.7, 1.0, -0.3], [0.1, -0.3, 3.0]])
    oracle = QuadraticOracle(a)
    theta = np.array([0.4, -1.0, 2.0])
    for h in (1.0, 0.1, 1e-3):
        g, mask, queries = hessian_entry_block(oracle, theta, None, h)
        assert np.allclose(g, 2 * a, rtol=1e-7, atol=1e-6)
        assert mask.all()
        assert queries == 1 + 2 * 3 + 9


def test_entry_block_linear_model_is_2xxt():
    spec = models.ModelSpec("linear", models.theta_on_unit_sphere(3, seed=9))
    oracle = models.make_oracle(spec)
    rng = np.random.default_rng(0)
    zeta = oracle.sample(rng)
    x = zeta[0]
    g, _, _ = hessian_entry_block(oracle, np.zeros(3), zeta, 0.05)
    assert np.allclose(g, 2 * np.outer(x, x), rtol=1e-6, atol=1e-8)


def test_entry_block_subsample_count_and_errors():
    oracle = QuadraticOracle(np.eye(4))
    rng = np.random.default_rng(33)
    counts = []
    for _ in range(400):
        g, mask, queries = hessian_entry_block(
            oracle, np.zeros(4), None, 0.1, rng, p=0.25
        )
        assert np.all(g[~mask] == 0.0)
        assert queries == 1 + 8 + mask.sum()
        counts.append(mask.sum())
    # Binomial(16, 0.25): mean 4, sd ~1.73; sample mean over 400 blocks
    assert abs(np.mean(counts) - 4.0) < 0.3
    with pytest.raises(ValueError):
        hessian_entry_block(oracle, np.zeros(4), None, 0.1, p=0.25)  # no rng
    with pytest.raises(ValueError):
        hessian_entry_block(oracle, np.zeros(4), None, -0.1)
    with pytest.raises(ValueError):
        hessian_entry_block(oracle, np.zeros(4), None, 0.1, rng, p=1.5)


def test_ipw_subsampling_unbiased():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    oracle = QuadraticOracle(a)
    rng = np.random.default_rng(8)
    acc = HessianAccumulator(dim=2, p=0.3)
    for _ in range(4000):
        acc.update(oracle, np.zeros(2), None, 0.1, rng)
    assert np.abs(acc.mean() - 2 * a).max() < 0.03 * np.abs(2 * a).max()


def test_inherit_mode_fills_from_previous_block():
    oracle = QuadraticOracle(np.diag([1.0, 2.0]))
    acc = HessianAccumulator(dim=2, p=0.5, mode="inherit")
    g1 = np.array([[3.0, 1.0], [1.0, 5.0]])
    acc.accumulate_block(g1, np.ones((2, 2), bool))
    # second block only sampled entry (0,0); the rest carries over from g1
    g2 = np.array([[7.0, 0.0], [0.0, 0.0]])
    mask2 = np.zeros((2, 2), bool)
    mask2[0, 0] = True
    acc.accumulate_block(g2, mask2)
    expect = (g1 + np.array([[7.0, 1.0], [1.0, 5.0]])) / 2
    assert np.allclose(acc.mean(), expect)


def test_accumulator_validation():
    with pytest.raises(ValueError):
        HessianAccumulator(dim=2, p=0.0)
    with pytest.raises(ValueError):
        HessianAccumulator(dim=2, kappa1=0.0)
    with pytest.raises(ValueError):
        HessianAccumulator(dim=2, kappa1=1.0, kappa2=0.5)
    with pytest.raises(ValueError):
        HessianAccumulator(dim=2, mode="drop")
    with pytest.raises(ValueError):
        HessianAccumulator(dim=2).mean()


def test_thresholding_floor_and_cap():
    acc = HessianAccumulator(dim=2, kappa1=1.0)
    acc.accumulate_block(np.diag([5.0, 0.1]), np.ones((2, 2), bool))
    assert np.allclose(thresholded_hessian(acc), np.diag([5.0, 1.0]))
    acc2 = HessianAccumulator(dim=2, kappa1=1.0, kappa2=3.0)
    acc2.accumulate_block(np.diag([5.0, 0.1]), np.ones((2, 2), bool))
    assert np.allclose(thresholded_hessian(acc2), np.diag([3.0, 1.0]))


def test_thresholding_respects_eigenbasis():
    # eigenvalues of [[2,1],[1,2]] are 3 and 1; floor at 2 keeps the top pair
    acc = HessianAccumulator(dim=2, kappa1=2.0)
    acc.accumulate_block(np.array([[2.0, 1.0], [1.0, 2.0]]), np.ones((2, 2), bool))
    got = thresholded_hessian(acc)
    assert np.allclose(np.linalg.eigvalsh(got), [2.0, 3.0])
    assert np.allclose(got, np.array([[2.5, 0.5], [0.5, 2.5]]))


def test_gram_accumulator_values():
    acc = GramAccumulator(dim=2)
    gram_update(acc, np.array([1.0, 0.0]))
    gram_update(acc, np.array([0.0, 2.0]))
    assert acc.count == 2
    assert np.allclose(acc.mean(), np.diag([0.5, 2.0]))
    with pytest.raises(ValueError):
        GramAccumulator(dim=2).mean()


def test_plugin_covariance_diagonal_case():
    h_acc = HessianAccumulator(dim=2)
    h_acc.accumulate_block(np.diag([2.0, 4.0]), np.ones((2, 2), bool))
    g_acc = GramAccumulator(dim=2)
    g_acc.update(np.array([2.0, 0.0]))
    g_acc.update(np.array([0.0, 4.0]))
    # H^-1 Q H^-1 with Q = diag(2, 8): diag(2/4, 8/16)
    assert np.allclose(plugin_covariance(h_acc, g_acc), np.diag([0.5, 0.5]))


def test_plugin_covariance_floor_keeps_inverse_bounded():
    h_acc = HessianAccumulator(dim=2, kappa1=0.5)
    h_acc.accumulate_block(np.diag([1.0, 1e-9]), np.ones((2, 2), bool))
    g_acc = GramAccumulator(dim=2)
    g_acc.update(np.array([1.0, 1.0]))
    cov = plugin_covariance(h_acc, g_acc)
    assert cov[1, 1] == pytest.approx(1.0 / 0.25)


def test_plugin_ci_values_and_edge_cases():
    cov = np.diag([4.0, 1.0])
    theta_bar = np.array([1.0, 2.0])
    ci = plugin_ci(theta_bar, cov, np.array([1.0, 0.0]), n=100)
    assert ci.center == 1.0
    assert ci.half_width == pytest.approx(z_quantile(0.95) * 0.2)
    assert ci.method == "plugin" and not ci.degenerate

    zero = plugin_ci(theta_bar, np.zeros((2, 2)), np.array([1.0, 0.0]), n=10)
    assert zero.degenerate and zero.half_width == 0.0

    with pytest.raises(ValueError):
        plugin_ci(theta_bar, cov, np.array([1.0, 0.0]), n=0)
    with pytest.raises(LinAlgError):
        plugin_ci(theta_bar, -np.eye(2), np.array([1.0, 0.0]), n=10)
    with pytest.raises(LinAlgError):
        plugin_ci(theta_bar, cov, np.array([np.nan, 0.0]), n=10)


def test_naive_update_validation_and_affine_zero():
    oracle = AffineOracle(np.array([1.0, -2.0]))
    u = np.array([[1.0, 0.0]])
    v = np.array([[0.0, 1.0]])
    with pytest.raises(ValueError):
        naive_hessian_update(oracle, np.zeros(2), None, 0.1, np.empty((0, 2)), np.empty((0, 2)))
    with pytest.raises(ValueError):
        naive_hessian_update(oracle, np.zeros(2), None, 0.1, u, np.vstack([v, v]))
    with pytest.raises(ValueError):
        naive_hessian_update(oracle, np.zeros(2), None, 0.0, u, v)
    got = naive_hessian_update(oracle, np.zeros(2), None, 0.1, u, v)
    assert np.allclose(got, 0.0, atol=1e-12)


def test_naive_update_quadratic_mean_recovers_hessian():
    a = np.array([[1.5, 0.4], [0.4, 0.8]])
    oracle = QuadraticOracle(a)
    rng = np.random.default_rng(21)
    total = np.zeros((2, 2))
    reps = 3000
    for _ in range(reps):
        u = rng.standard_normal((1, 2))
        v = rng.standard_normal((1, 2))
        b = naive_hessian_update(oracle, np.zeros(2), None, 0.05, u, v)
        total += 0.5 * (b + b.T)
    # E[u u^T H v v^T] = H for independent standard normal u, v
    assert np.abs(total / reps - 2 * a).max() < 0.12
