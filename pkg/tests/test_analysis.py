import numpy as np
import pytest
from scipy.stats import ortho_group

from snnguard import analysis as an
from snnguard.network import LayerSpec, LinearModel, SnnModel, forward, init_model, smooth_proxy
from snnguard.tensor import Tensor
from snnguard.verification import TINY_CENTER, ratio_fixture, tiny_region_model


def linear(a):
    return LinearModel(Tensor(a))


# ------------------------------------------------------------ spectral norm
def test_spectral_norm_linear_matches_svd(rng):
    for shape in ((3, 8), (8, 3), (5, 5)):
        a = rng.normal(size=shape)
        est = an.jacobian_spectral_norm(linear(a), rng.uniform(size=shape[1]))
        assert est.spectral_norm == pytest.approx(np.linalg.norm(a, 2), rel=1e-6)
        assert est.spectral_norm >= 0 and est.converged


def test_spectral_norm_constant_and_orthogonal(rng):
    const = lambda xt: Tensor(np.ones((xt.shape[0], 2)))
    assert an.jacobian_spectral_norm(const, np.zeros(4)).spectral_norm == 0.0
    q = ortho_group.rvs(6, random_state=1)
    assert an.jacobian_spectral_norm(linear(q), rng.uniform(size=6)).spectral_norm == pytest.approx(1.0, abs=1e-8)


def test_spectral_norm_matches_dense_svd_on_proxy(rng):
    proxy = smooth_proxy(init_model([10, 12, 6], 4, rng, gain=3.0), 0.5)
    x = rng.uniform(size=10)
    jac = an.dense_jacobian(an.as_map(proxy), x)
    est = an.jacobian_spectral_norm(proxy, x)
    assert est.spectral_norm == pytest.approx(np.linalg.norm(jac, 2), rel=1e-6)


def test_spectral_norm_reports_nonconvergence(rng):
    a = np.diag([1.0, 0.999999])
    with pytest.raises(an.JacobianConvergenceError) as err:
        an.jacobian_spectral_norm(linear(a), np.zeros(2), tol=1e-300, max_iters=3)
    assert err.value.estimate.iterations == 3


def test_jacobian_from_ad_matches_finite_differences(rng):
    proxy = smooth_proxy(init_model([5, 7], 3, rng, gain=3.0), 0.5)
    x = rng.uniform(size=5)
    f = an.as_map(proxy)
    jac = an.dense_jacobian(f, x)
    fd = np.stack([an.jvp_fd(f, x, e) for e in np.eye(5)], axis=1)
    assert np.max(np.abs(jac - fd)) < 1e-8 * max(1, np.abs(jac).max())


def test_stochastic_model_is_rejected(rng):
    m = init_model([4, 5], 2, rng)
    noisy = m.replace(layers=[LayerSpec(l.weight, l.neuron.__class__(0.5, 1.0, 0.0, 0.4)) for l in m.layers])
    with pytest.raises(ValueError):
        an.as_map(noisy)


# --------------------------------------------------------------- adversarial measure
def test_radv_zero_budget(rng):
    assert an.empirical_radv(linear(rng.normal(size=(2, 3))), np.zeros(3), 0.0) == 0.0


def test_radv_linear_close_to_svd_bound(rng):
    a = rng.normal(size=(3, 8))
    eps = 0.1
    est = an.empirical_radv(linear(a), rng.uniform(size=8), eps, 2, 10**5, np.random.default_rng(0))
    true = eps**2 * np.linalg.norm(a, 2) ** 2
    assert est <= true * (1 + 1e-12)
    assert est >= 0.95 * true


def test_radv_monotone_in_budget(rng):
    proxy = smooth_proxy(init_model([6, 8], 3, rng, gain=3.0), 0.5)
    x = rng.uniform(size=6)
    dirs = an.sample_directions(6, 500, np.inf, np.random.default_rng(1))
    for p_dirs in (dirs, an.sample_directions(6, 500, 2, np.random.default_rng(2))):
        small = an.empirical_radv(proxy, x, 0.01, directions=p_dirs)
        big = an.empirical_radv(proxy, x, 0.02, directions=p_dirs)
        assert big >= small


def test_direction_sampling_norms(rng):
    d2 = an.sample_directions(5, 100, 2, rng)
    assert np.allclose(np.linalg.norm(d2, axis=1), 1.0)
    dinf = an.sample_directions(5, 101, np.inf, rng)
    assert np.all(np.abs(dinf) <= 1.0)
    assert np.all(np.abs(dinf[:51]) == 1.0)
    with pytest.raises(ValueError):
        an.sample_directions(5, 0, 2, rng)
    with pytest.raises(ValueError):
        an.sample_directions(5, 3, 1, rng)


# ------------------------------------------------------------------ ratio test
EPS = [1e-2, 5e-3, 2.5e-3, 1.25e-3]


def test_ratio_linear_is_one(rng):
    rep = an.verify_first_order_bound(linear(rng.normal(size=(3, 8))), rng.uniform(size=8), EPS)
    assert rep.passed
    assert np.all((rep.ratios >= 0.95) & (rep.ratios <= 1 + 1e-9))


def test_ratio_quadratic_matches_taylor_oracle():
    # f(x) = ||x||^2 u with ||u|| = 1: ||f(x + e d) - f(x)|| = |2e x.d + e^2| (d unit), maximal at d = x/|x|,
    # so r(e) = 1 + e / (2 |x|) exactly.
    u = np.array([0.6, 0.8])

    def f(xt):
        sq = (xt * xt) @ Tensor(np.ones((xt.shape[1], 1)))
        return sq @ Tensor(u[None])

    x = np.array([0.3, -0.4, 0.5])
    rep = an.verify_first_order_bound(f, x, EPS, samples=4000)
    expected = 1 + np.array(EPS) / (2 * np.linalg.norm(x))
    assert np.allclose(rep.aligned_ratios, expected, rtol=1e-7)
    assert rep.fitted_c == pytest.approx(1 / (2 * np.linalg.norm(x)), rel=1e-5)
    assert rep.passed


def test_ratio_on_proxy_decreases_toward_one():
    proxy, x = ratio_fixture()
    rep = an.verify_first_order_bound(proxy, x, EPS)
    assert rep.passed
    assert np.all(np.diff(rep.ratios) < 0) and np.all(rep.ratios > 1)


def test_ratio_rejects_bad_sequences(rng):
    with pytest.raises(ValueError):
        an.verify_first_order_bound(linear(rng.normal(size=(2, 3))), np.zeros(3), [1e-3, 1e-2])


# ------------------------------------------------------------------- regions
def test_tiny_model_has_two_regions_and_exact_affine_maps():
    m = tiny_region_model(1)
    enum = an.enumerate_regions(m, TINY_CENTER, 0.05, 10000)
    assert enum.K == 2
    assert enum.max_residual < 1e-9
    assert sum(enum.counts) == 10001


def test_small_ball_has_one_region():
    assert an.enumerate_regions(tiny_region_model(1), TINY_CENTER, 0.005, 5000).K == 1


def test_region_count_monotone_in_radius():
    m = SnnModel([LayerSpec(Tensor(np.random.default_rng(0).normal(size=(5, 3)) * 2))],
                 Tensor(np.random.default_rng(1).normal(size=(2, 5))), t_steps=2, decoder="membrane")
    offsets = an.ball_samples(3, 3000, np.random.default_rng(2))
    x = np.full(3, 0.5)
    ks = [an.enumerate_regions(m, x, e, offsets=offsets).K for e in (0.01, 0.05, 0.2, 0.5)]
    assert all(b >= a for a, b in zip(ks, ks[1:]))


def test_region_bound_holds_on_tiny_model():
    m = tiny_region_model(1)
    enum = an.enumerate_regions(m, TINY_CENTER, 0.05, 10000)
    rep = an.verify_region_bound(enum, m, TINY_CENTER, 0.05, 10000)
    assert rep.holds and not rep.violations
    assert rep.max_change <= rep.bound
    assert rep.within_region_residual < 1e-12


def test_single_region_bound_is_tight_along_top_direction():
    m = tiny_region_model(1)
    enum = an.enumerate_regions(m, TINY_CENTER, 0.005, 2000)
    a = enum.affine_maps[0][0]
    top = np.linalg.svd(a)[2][0]
    rep = an.verify_region_bound(enum, m, TINY_CENTER, 0.005, offsets=top[None])
    assert rep.max_change == pytest.approx(rep.bound, rel=1e-10)


def test_two_step_model_reports_genuine_violation():
    # with T = 2 the reset makes the output jump across the firing boundary
    m = tiny_region_model(2)
    enum = an.enumerate_regions(m, TINY_CENTER, 0.05, 5000)
    rep = an.verify_region_bound(enum, m, TINY_CENTER, 0.05, 5000)
    assert not rep.holds
    delta, change = rep.violations[0]
    direct = an.output_changes(m, TINY_CENTER, 0.05, delta[None])[0]
    assert direct == pytest.approx(change, rel=1e-12)
    assert change > rep.bound


def test_region_cap():
    m = SnnModel([LayerSpec(Tensor(np.random.default_rng(0).normal(size=(8, 3)) * 3))],
                 Tensor(np.ones((2, 8))), t_steps=2, decoder="membrane")
    with pytest.raises(an.RegionCapError):
        an.enumerate_regions(m, np.full(3, 0.5), 1.0, 3000, cap=2)


def test_rate_decoder_regions_are_constant(rng):
    m = SnnModel([LayerSpec(Tensor(TINY_CENTER[None] * 0 + np.array([[1.01, 1.01], [0.4, 0.2]])))],
                 Tensor(np.array([[1.0, -1.0]])), t_steps=1)
    enum = an.enumerate_regions(m, TINY_CENTER, 0.05, 2000)
    assert enum.K == 2
    assert all(np.all(a == 0) for a, _ in enum.affine_maps)


def test_loglog_slope():
    e = np.array([0.1, 0.05, 0.025])
    assert an.loglog_slope(e, 3 * e**2) == pytest.approx(2.0)


# ------------------------------------------------------------------ landscape
def test_landscape_quadratic_is_exact_paraboloid():
    h = np.diag([2.0, 0.5, 1.0])
    theta = np.array([0.3, -0.2, 0.1])
    loss = lambda v: float(0.5 * v @ h @ v)
    grid = an.landscape_grid(loss, theta, h @ theta, extent=1.0, points=9)
    assert abs(grid.d1 @ grid.d2) < 1e-10
    assert np.linalg.norm(grid.d1) == pytest.approx(1, abs=1e-12)
    assert np.linalg.norm(grid.d2) == pytest.approx(1, abs=1e-12)
    a, b = np.meshgrid(grid.alphas, grid.betas, indexing="ij")
    design = np.stack([np.ones_like(a), a, b, a * a, a * b, b * b], axis=-1).reshape(-1, 6)
    coef, *_ = np.linalg.lstsq(design, grid.losses.ravel(), rcond=None)
    assert np.max(np.abs(design @ coef - grid.losses.ravel())) < 1e-10
    assert grid.losses[4, 4] == loss(theta)


def test_landscape_zero_gradient_falls_back():
    grid = an.landscape_grid(lambda v: float(v @ v), np.zeros(4), np.zeros(4), points=3)
    assert not grid.gradient_direction
    assert abs(grid.d1 @ grid.d2) < 1e-10


def test_model_landscape_center_is_unperturbed_loss(rng):
    from snnguard.network import loss
    m = init_model([6, 8], 3, rng, gain=3.0)
    x, y = rng.uniform(size=(5, 6)), np.array([0, 1, 2, 0, 1])
    grid = an.loss_landscape(m, x, y, extent=0.5, points=5)
    assert grid.losses[2, 2] == loss(m.logits(x), y).item()
    assert abs(grid.d1 @ grid.d2) < 1e-10


# ------------------------------------------------------------------- heatmaps
def test_heatmap_dead_network(rng):
    m = SnnModel([LayerSpec(Tensor(-np.ones((4, 3))))], Tensor(np.ones((2, 4))))
    h = an.gradient_heatmap(m, rng.uniform(size=3), 0)
    assert h.sparsity == 1.0 and h.all_zero


def test_heatmap_linear_model_matches_weight_inspection():
    w = np.array([[1.0, 1e-6, 0.0, -2.0], [0.5, 0.0, 0.0, 1.0]])
    h = an.gradient_heatmap(linear(w), np.full(4, 0.5), 0)
    # gradient is w^T (p - e_y): columns with zero weights are exactly zero, the tiny one falls under 1e-3 max
    assert h.sparsity == 0.5 and not h.all_zero
    assert np.all(h.grad >= 0)


def test_heatmap_sparsity_is_scale_invariant(rng):
    m = init_model([8, 10], 3, rng, gain=3.0)
    x = rng.uniform(size=8)
    assert an.gradient_heatmap(m, x, 1).sparsity == an.gradient_heatmap(m, x, 1, loss_scale=10.0).sparsity


# ----------------------------------------------------------------- histograms
def test_histogram_examples():
    h = an.membrane_histogram(np.array([0.95]), bins=2, value_range=(0.0, 2.0), v_th=1.0)
    assert h.counts.tolist() == [1, 0]
    h = an.membrane_histogram(np.array([-3.0, 0.5, 9.0, 2.0]), bins=4, value_range=(0.0, 2.0), v_th=1.0)
    assert (h.underflow, h.overflow, int(h.counts.sum())) == (1, 1, 2)
    assert h.counts[-1] == 1  # the upper edge belongs to the last bin
    with pytest.raises(ValueError):
        an.membrane_histogram(np.zeros(0))


def test_histogram_conserves_mass(rng):
    m = init_model([6, 8, 5], 3, rng, gain=3.0)
    rec = forward(m, rng.uniform(size=(7, 6)), record=True)
    h = an.membrane_histogram(rec, bins=10, value_range=(0.0, 1.5))
    assert h.total == 7 * 4 * (8 + 5)
    assert 0 <= h.neighbor_fraction <= 1


# ---------------------------------------------------------------------- flips
def test_flip_rate_basics(rng):
    m = init_model([6, 8, 5], 3, rng, gain=3.0)
    x = rng.uniform(size=(10, 6))
    same = an.flip_rate_under_attack(m, x, x.copy())
    assert same.rate == 0.0 and all(r == 0 for r in same.per_layer)
    moved = an.flip_rate_under_attack(m, x, np.clip(x + rng.uniform(-0.2, 0.2, x.shape), 0, 1))
    assert 0.0 <= moved.rate <= 1.0
    assert moved.bin_entries.sum() == 10 * 4 * 13
    assert np.all(moved.bin_flips <= moved.bin_entries)
    with pytest.raises(ValueError):
        an.flip_rate_under_attack(m, x, x[:5])


def test_jitter_study_tracks_closed_form(rng):
    m = init_model([6, 20], 3, rng, gain=3.0)
    study = an.jitter_flip_study(m, rng.uniform(size=(20, 6)), 0.05, draws=4000, min_probability=5 / 4000)
    assert study.spearman > 0.9
