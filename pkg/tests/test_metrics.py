import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from autoqd import driver, metrics
from autoqd.archive import ArchiveConfig, Occupant
from autoqd.env import PointMass2D, PointMassConfig
from autoqd.errors import ConfigurationError, DomainError
from autoqd.policy import PolicyArchitecture


def test_vendi_identities():
    for n in (2, 10, 100):
        assert metrics.vendi(np.eye(n)) == pytest.approx(n, abs=1e-9)
        assert metrics.vendi(np.ones((n, n))) == pytest.approx(1.0, abs=1e-9)


def test_vendi_two_by_two():
    # eigenvalues 1.5, 0.5 -> normalized 0.75, 0.25
    h = -(0.75 * math.log(0.75) + 0.25 * math.log(0.25))
    assert h == pytest.approx(0.5623, abs=1e-4)
    assert metrics.vendi(np.array([[1, 0.5], [0.5, 1]])) == pytest.approx(math.exp(h), abs=1e-12)
    assert metrics.vendi(np.array([[1, 0.5], [0.5, 1]])) == pytest.approx(1.7548, abs=1e-4)


@given(st.integers(0, 10_000), st.integers(2, 12))
def test_vendi_bounds_and_permutation(seed, n):
    r = np.random.default_rng(seed)
    km = metrics.build_kernel(r.standard_normal((n, 3)))
    v = metrics.vendi(km)
    assert 1 - 1e-9 <= v <= n + 1e-9
    p = r.permutation(n)
    assert metrics.vendi(km.K[np.ix_(p, p)]) == pytest.approx(v, rel=1e-9)


def test_kernel_median_pair_is_half():
    X = np.array([[0.0], [1.0], [3.0]])
    km = metrics.build_kernel(X)
    # squared distances 1, 9, 4 -> median 4 (pair 1-2)
    assert km.median_sq == 4.0
    assert km.K[1, 2] == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(km.K, km.K.T) and np.all(np.diag(km.K) == 1.0)


def test_kernel_identical_rows():
    X = np.array([[1.0, 2.0], [1.0, 2.0], [3.0, 0.0]])
    km = metrics.build_kernel(X)
    assert km.K[0, 1] == 1.0
    allsame = metrics.build_kernel(np.ones((4, 3)))
    assert allsame.gamma_k is None and np.all(allsame.K == 1.0)
    with pytest.raises(DomainError):
        metrics.build_kernel(np.ones((1, 3)))


def test_kernel_subsamples_large_inputs():
    X = np.random.default_rng(0).standard_normal((1200, 2))
    a = metrics.build_kernel(X, np.random.default_rng(1))
    b = metrics.build_kernel(X, np.random.default_rng(1))
    assert a.K.shape == (1200, 1200) and a.gamma_k == b.gamma_k


def test_qvs_examples():
    K = np.array([[1, 0.3], [0.3, 1]])
    assert metrics.qvs([5.0, 5.0], K, 0.0, 5.0) == pytest.approx(metrics.vendi(K))
    assert metrics.qvs([0.0, 0.0], K, 0.0, 5.0) == 0.0
    assert metrics.qvs([1, 3, 0, 4], np.eye(4), 0.0, 4.0) == pytest.approx(2.0)
    assert metrics.qvs([2.0, 4.0], K, 0.0, 4.0) <= metrics.vendi(K)
    with pytest.raises(DomainError):
        metrics.qvs([5.0, 9.0], K, 0.0, 5.0)
    with pytest.raises(DomainError):
        metrics.qvs([1.0, 1.0], K, 0.0, 0.0)


def _pop(items):
    return [Occupant(np.zeros(1), f, np.array(d, float), np.zeros(1)) for f, d in items]


def test_gt_qd_score_examples():
    cfg = ArchiveConfig(2, 10, -1.0, 1.0, 1.0, 0.0)
    gt = lambda o: o.descriptor
    assert metrics.gt_qd_score([], gt, cfg) == 0.0
    assert metrics.gt_qd_score(_pop([(2.0, [0.1, 0.1]), (3.0, [-0.9, 0.5])]), gt, cfg) == 5.0
    assert metrics.gt_qd_score(_pop([(2.0, [0.1, 0.1]), (3.0, [0.11, 0.12])]), gt, cfg) == 3.0
    with pytest.raises(ConfigurationError):
        metrics.gt_qd_score(_pop([(1.0, [0, 0])]), None, cfg)


@given(st.lists(st.tuples(st.floats(0.01, 5), st.floats(-1, 1), st.floats(-1, 1)),
                max_size=25), st.integers(0, 1000))
def test_gt_qd_permutation_invariant(items, seed):
    cfg = ArchiveConfig(2, 10, -1.0, 1.0, 1.0, 0.0)
    pop = _pop([(f, [x, y]) for f, x, y in items])
    perm = [pop[i] for i in np.random.default_rng(seed).permutation(len(pop))]
    gt = lambda o: o.descriptor
    assert metrics.gt_qd_score(perm, gt, cfg) == pytest.approx(metrics.gt_qd_score(pop, gt, cfg))


def test_auc_and_success_counts():
    assert metrics.auc([1.0, 3.0], [4.0, 4.0]) == 8.0
    assert metrics.auc([2.0], [7.0]) == 0.0
    assert metrics.auc([0, 1, 3], [0.0, 2.0, 2.0]) == 1.0 + 4.0
    assert metrics.success_counts([10, 5, 3], 10, 0.7).tolist() == [1]
    assert metrics.success_counts([10, 5, 3], 10, 0.0).tolist() == [3]
    r = np.array([[10, 8, 1], [9, 9, 9]])
    assert metrics.success_counts(r, 10, 0.9).tolist() == [2, 1, 1]


def test_auc_refinement_invariant():
    x, y = np.array([0.0, 1.0, 4.0]), np.array([1.0, 3.0, 0.0])
    xf = np.linspace(0, 4, 41)
    assert metrics.auc(xf, np.interp(xf, x, y)) == pytest.approx(metrics.auc(x, y), abs=1e-12)


def test_adaptation_report_on_scripted_curves(monkeypatch):
    curves = {0.5: [4.0, 10.0], 1.0: [6.0, 8.0], 2.0: [2.0, 2.0]}

    def fake(env, arch, params, episodes, seed, stream=0):
        key = env.config.friction / 0.5
        vals = curves.get(key, [10.0, 8.0])
        class R:  # noqa: E306
            fitness = np.array(vals)
        return R

    monkeypatch.setattr(metrics, "rollout_population", fake)
    arch = PolicyArchitecture((4, 2))
    rep = metrics.adaptation_sweep(np.zeros((2, arch.param_count)), PointMassConfig(), arch,
                                   "friction", [0.5, 1.0, 2.0], thresholds=(0.9, 0.5), R=10.0)
    assert rep.best.tolist() == [10.0, 8.0, 2.0]
    assert rep.auc == 0.5 * (10 + 8) / 2 + 1.0 * (8 + 2) / 2
    assert rep.success[0.9].tolist() == [1, 0, 0]
    assert rep.success[0.5].tolist() == [1, 2, 0]


def test_adaptation_errors():
    arch = PolicyArchitecture((4, 2))
    with pytest.raises(DomainError):
        metrics.adaptation_sweep(np.zeros((0, arch.param_count)), PointMassConfig(), arch,
                                 "friction", [1.0])
    with pytest.raises(ConfigurationError):
        metrics.adaptation_sweep(np.zeros((1, arch.param_count)), PointMassConfig(), arch,
                                 "gravity", [1.0])
    with pytest.raises(ConfigurationError):
        metrics.adaptation_sweep(np.zeros((1, arch.param_count)), PointMassConfig(), arch,
                                 "mass", [2.0, 1.0])


def test_identity_scale_reproduces_unaltered_returns():
    arch = PolicyArchitecture.for_env(4, 2, (6,))
    P = np.random.default_rng(0).standard_normal((3, arch.param_count))
    rep = metrics.adaptation_sweep(P, PointMassConfig(horizon=20), arch, "mass", [1.0], 2)
    base = metrics.rollout_population(PointMass2D(PointMassConfig(horizon=20)), arch, P, 2, 0)
    assert np.allclose(rep.returns[:, 0], base.fitness)
    assert rep.R == base.fitness.max()


def test_min_max_scale():
    X = np.array([[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]])
    s = metrics.min_max_scale(X)
    assert s[:, 0].tolist() == [0.0, 1.0, 0.5] and np.all(s[:, 1] == 0.0)


def _stability_setup(noise):
    env = PointMass2D(PointMassConfig(noise_std=noise, horizon=20))
    arch = PolicyArchitecture.for_env(4, 2, (6,))
    rff = metrics.make_eval_rff(1, 50, env)
    proj = np.random.default_rng(2).standard_normal((2, 50))
    return env, arch, rff, lambda z: z @ proj.T


def test_descriptor_variance_deterministic_is_zero():
    env, arch, rff, desc = _stability_setup(0.0)
    p = np.random.default_rng(0).standard_normal(arch.param_count)
    v = metrics.descriptor_variance(env, arch, p, rff, desc, 32)
    assert np.all(v == 0.0)


def test_descriptor_variance_shrinks_with_more_rollouts():
    env, arch, rff, desc = _stability_setup(0.5)
    P = np.random.default_rng(1).standard_normal((5, arch.param_count))
    v2 = [metrics.descriptor_variance(env, arch, p, rff, desc, 32, 2, seed=i).mean()
          for i, p in enumerate(P)]
    v10 = [metrics.descriptor_variance(env, arch, p, rff, desc, 32, 10, seed=i).mean()
           for i, p in enumerate(P)]
    assert np.median(v10) < np.median(v2)
    with pytest.raises(ConfigurationError):
        metrics.descriptor_variance(env, arch, P[0], rff, desc, 1)


def test_compare_populations(tiny_config):
    env = driver.make_env(tiny_config)
    arch = driver.make_arch(tiny_config, env)
    r = np.random.default_rng(0)
    pops = {"a": 0.3 * r.standard_normal((6, arch.param_count)),
            "b": 0.01 * r.standard_normal((4, arch.param_count)),
            "empty": np.zeros((0, arch.param_count))}
    reps = metrics.compare_populations(pops, env, arch, driver.gt_archive_config(tiny_config, env),
                                       eval_dim=200, episodes=2)
    assert reps["empty"].vendi is None and reps["empty"].gt_qd == 0.0
    for name in ("a", "b"):
        assert 1.0 <= reps[name].vendi <= pops[name].shape[0]
        assert reps[name].qvs <= reps[name].vendi
    again = metrics.compare_populations(pops, env, arch,
                                        driver.gt_archive_config(tiny_config, env),
                                        eval_dim=200, episodes=2)
    assert again["a"].row() == reps["a"].row()
