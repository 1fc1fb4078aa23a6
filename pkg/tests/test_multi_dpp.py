import numpy as np
import pytest

from mdpp import dpp, multi_dpp
from mdpp.dpp import DppKernel
from mdpp.errors import DataError, ValidationError
from mdpp.multi_dpp import ViewStreams


def _random_streams(rng, m, n, dprime, q_low=0.2, q_high=0.9):
    return ViewStreams(
        features=rng.normal(size=(m, n, dprime)),
        quality=rng.uniform(q_low, q_high, size=(m, n)),
    )


def test_streams_validation():
    with pytest.raises(ValidationError):
        ViewStreams(features=np.zeros((2, 3, 4)), quality=np.zeros((2, 4)))
    with pytest.raises(ValidationError):
        ViewStreams(features=np.zeros((1, 2, 2)), quality=np.full((1, 2), 1.5))
    with pytest.raises(DataError):
        ViewStreams(features=np.full((1, 2, 2), np.nan), quality=np.full((1, 2), 0.5))


def test_joint_features_max_pool_fixture():
    streams = ViewStreams(
        features=np.array([[[1.0, 0.0]], [[0.0, 1.0]]]),
        quality=np.full((2, 1), 0.5),
    )
    joint = multi_dpp.joint_features(streams)
    np.testing.assert_allclose(joint[:, 0], np.array([1.0, 1.0]) / np.sqrt(2))


def test_joint_quality_product_and_clamp():
    streams = ViewStreams(
        features=np.ones((2, 2, 3)),
        quality=np.array([[0.5, 5e-4], [0.5, 5e-4]]),
    )
    q = multi_dpp.joint_quality(streams)
    assert q[0] == 0.25
    assert q[1] == dpp.QUALITY_FLOOR  # 2.5e-7 product clamps back up


def test_single_view_reduces_exactly():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n, dprime = int(rng.integers(2, 7)), int(rng.integers(2, 6))
        feats = 2.0 * rng.normal(size=(1, n, dprime))  # norms far from 1
        quality = rng.uniform(0.2, 0.9, size=(1, n))
        streams = ViewStreams(features=feats, quality=quality)
        single = DppKernel(phi=feats[0].T, q=quality[0])
        subset = sorted(rng.choice(n, size=min(2, n), replace=False).tolist())
        assert multi_dpp.multi_dpp_log_prob(streams, subset) == dpp.log_prob(single, subset)


def test_view_permutation_invariance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        m, n, dprime = int(rng.integers(2, 5)), int(rng.integers(2, 8)), 4
        streams = _random_streams(rng, m, n, dprime)
        subset = sorted(rng.choice(n, size=min(3, n), replace=False).tolist())
        base = multi_dpp.multi_dpp_log_prob(streams, subset)
        perm = rng.permutation(m)
        shuffled = ViewStreams(
            features=streams.features[perm], quality=streams.quality[perm]
        )
        assert abs(multi_dpp.multi_dpp_log_prob(shuffled, subset) - base) < 1e-12


def test_zero_pooled_column_rejected():
    streams = ViewStreams(features=np.zeros((1, 1, 2)), quality=np.full((1, 1), 0.5))
    with pytest.raises(DataError):
        multi_dpp.build_joint_kernel(streams)


def test_backprop_streams_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    m, n, dprime = 2, 5, 3
    streams = _random_streams(rng, m, n, dprime)
    subset = [1, 3]

    bundle = multi_dpp.build_joint_kernel(streams)
    grad_l = dpp.logprob_grad_L(bundle.kernel, subset)
    gphi, gq = dpp.kernel_grads_from_L(bundle.kernel, grad_l)
    gfeat, gqual = multi_dpp.backprop_streams(bundle, streams, gphi, gq)

    def log_p(features, quality):
        return multi_dpp.multi_dpp_log_prob(
            ViewStreams(features=features, quality=quality), subset
        )

    worst = 0.0
    for idx in np.ndindex(m, n, dprime):
        plus, minus = streams.features.copy(), streams.features.copy()
        plus[idx] += h
        minus[idx] -= h
        fd = (log_p(plus, streams.quality) - log_p(minus, streams.quality)) / (2 * h)
        worst = max(worst, abs(fd - gfeat[idx]) / max(abs(fd), abs(gfeat[idx]), 1e-3))
    for idx in np.ndindex(m, n):
        plus, minus = streams.quality.copy(), streams.quality.copy()
        plus[idx] += h
        minus[idx] -= h
        fd = (log_p(streams.features, plus) - log_p(streams.features, minus)) / (2 * h)
        worst = max(worst, abs(fd - gqual[idx]) / max(abs(fd), abs(gqual[idx]), 1e-3))
    assert worst < 1e-4


def test_backprop_gates_clamped_quality_product():
    # product far below the floor: kernel quality is pinned, so no gradient
    # should flow back into the per-view qualities
    rng = np.random.default_rng(3)
    streams = ViewStreams(
        features=rng.normal(size=(2, 4, 3)),
        quality=np.full((2, 4), 5e-4),  # product 2.5e-7 < floor everywhere
    )
    bundle = multi_dpp.build_joint_kernel(streams)
    grad_l = dpp.logprob_grad_L(bundle.kernel, [0, 2])
    gphi, gq = dpp.kernel_grads_from_L(bundle.kernel, grad_l)
    _, gqual = multi_dpp.backprop_streams(bundle, streams, gphi, gq)
    assert (gqual == 0.0).all()
