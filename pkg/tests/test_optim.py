"""Adam updates and global-norm gradient clipping."""

import numpy as np
import pytest

from orglab.network import (
    ADAM_EPS,
    AdamState,
    NetDims,
    NetworkParams,
    adam_step,
    clip_gradients,
    global_norm,
    init_params,
)

DIMS = NetDims(chars=3, aux=1, noi=1, hid=2)


def unit_grads():
    g = NetworkParams.zeros(DIMS)
    for _, a in g.arrays():
        a[...] = 1.0
    return g


def test_adam_unit_gradient_closed_form():
    # with g == 1 everywhere the bias corrections cancel exactly, so every
    # step moves every parameter by -lr / (1 + eps)
    params = NetworkParams.zeros(DIMS)
    state = AdamState.zeros(DIMS)
    lr = 0.25
    for step in range(1, 4):
        adam_step(params, unit_grads(), state, lr)
        expected = -step * lr / (1.0 + ADAM_EPS)
        assert state.t == step
        for _, a in params.arrays():
            assert np.allclose(a, expected, rtol=0, atol=1e-14)


def test_adam_single_step_matches_manual_formula():
    rng = np.random.default_rng(2)
    params = init_params(DIMS, rng)
    before = params.flatten()
    grads = init_params(DIMS, rng)  # arbitrary values of the right shape
    g = grads.flatten()
    state = AdamState.zeros(DIMS)
    adam_step(params, grads, state, lr=0.01)

    m = 0.1 * g
    v = 0.001 * g * g
    mhat = m / 0.1
    vhat = v / 0.001
    expected = before - 0.01 * mhat / (np.sqrt(vhat) + ADAM_EPS)
    assert np.allclose(params.flatten(), expected, rtol=0, atol=1e-15)


def test_adam_two_steps_track_moment_recursion():
    rng = np.random.default_rng(3)
    params = NetworkParams.zeros(DIMS)
    g1 = init_params(DIMS, rng).flatten()
    g2 = init_params(DIMS, rng).flatten()

    shaped1 = NetworkParams.zeros(DIMS); shaped1.set_flat(g1)
    shaped2 = NetworkParams.zeros(DIMS); shaped2.set_flat(g2)
    state = AdamState.zeros(DIMS)
    adam_step(params, shaped1, state, lr=0.5)
    adam_step(params, shaped2, state, lr=0.5)

    theta = np.zeros_like(g1)
    m = np.zeros_like(g1)
    v = np.zeros_like(g1)
    for t, g in ((1, g1), (2, g2)):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.5 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + ADAM_EPS)
    assert np.allclose(params.flatten(), theta, rtol=0, atol=1e-14)


def test_global_norm_matches_direct_computation():
    g = init_params(DIMS, np.random.default_rng(4))
    direct = float(np.sqrt((g.flatten() ** 2).sum()))
    assert global_norm(g) == pytest.approx(direct, rel=1e-14)


def test_clip_rescales_to_exactly_max_norm():
    g = unit_grads()
    n = g.n_params()
    assert global_norm(g) == pytest.approx(np.sqrt(n))
    before = g.flatten()
    clip_gradients(g, 2.0)
    assert global_norm(g) == pytest.approx(2.0, rel=1e-12)
    # direction preserved: same unit vector
    after = g.flatten()
    assert np.allclose(after / np.linalg.norm(after),
                       before / np.linalg.norm(before), atol=1e-12)


def test_clip_leaves_small_gradients_untouched():
    g = init_params(DIMS, np.random.default_rng(5))
    scale = 0.1 / global_norm(g)
    for _, a in g.arrays():
        a *= scale
    before = g.flatten()
    clip_gradients(g, 5.0)
    assert np.array_equal(g.flatten(), before)


def test_clip_rejects_nonpositive_threshold():
    with pytest.raises(ValueError):
        clip_gradients(unit_grads(), 0.0)
    with pytest.raises(ValueError):
        clip_gradients(unit_grads(), -1.0)
