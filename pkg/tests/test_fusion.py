import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from soco.decomp import build_solo_views, spread_layout
from soco.demos import SoloPolicy
from soco.envs import SpreadEnv
from soco.fusion import (
    ActionEditor,
    FusedPolicy,
    GatingSelector,
    candidate_actions,
    edit_action,
    fuse,
    fuse_derivative,
    fused_act,
    gate_select,
    squash_residual,
)
from soco.numerics import finite_diff_grad, max_relative_error


@pytest.fixture
def solo():
    return SoloPolicy(hidden=16, rng=np.random.default_rng(0)).freeze()


def spread_obs(n=3, seed=0):
    return SpreadEnv(n).reset(seed=seed)[1]


def test_candidates(solo):
    lay1 = spread_layout(1)
    o = np.random.default_rng(1).normal(size=(4, 6))
    c = candidate_actions(solo, build_solo_views(o, lay1))
    assert c.shape == (4, 1, 2) and np.array_equal(c[:, 0], solo(o))
    same = np.tile(o[:1, None], (1, 3, 1))
    c = candidate_actions(solo, same)
    assert np.array_equal(c[0, 0], c[0, 1]) and np.array_equal(c[0, 1], c[0, 2])
    zero = SoloPolicy(hidden=4)
    assert not candidate_actions(zero, build_solo_views(spread_obs(), spread_layout(3))).any()


def gate_with_logits(logits):
    gate = GatingSelector(1, len(logits), 2)
    gate.net.biases[2][...] = logits
    return gate


def test_gate_examples():
    gate = gate_with_logits([2.0, 1.0, 0.0])
    cands = np.arange(6.0).reshape(1, 3, 2)
    res = gate_select(gate, np.zeros((1, 1)), cands, train=True, noise=np.zeros((1, 3)))
    assert res.index[0] == 0 and np.array_equal(res.action[0], cands[0, 0])
    e = np.exp([2.0, 1.0, 0.0])
    oracle = e / e.sum()
    assert np.max(np.abs(res.weights[0] - oracle)) < 1e-10
    assert np.allclose(res.weights[0], [0.66524, 0.24473, 0.09003], atol=5e-6)
    single = gate_select(gate_with_logits([0.3]), np.zeros((1, 1)), cands[:, :1], np.random.default_rng(0), True)
    assert single.weights[0, 0] == 1.0 and np.array_equal(single.action, cands[:, 0])
    with pytest.raises(ValueError):
        gate_select(gate, np.zeros((1, 1)), np.zeros((1, 0, 2)))


def test_rule_based_gating():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(50, 3, 2))
    obs = np.zeros((50, 1))
    fg = [gate_select(GatingSelector(1, 3, 2, "fg"), obs, c, agent_index=i).index for i in range(3)]
    assert all(np.all(f == i) for i, f in enumerate(fg))
    erg = gate_select(GatingSelector(1, 3, 2, "erg"), obs, c, episode_index=np.array([2]))
    assert np.all(erg.index == 2)
    rg = gate_select(GatingSelector(1, 3, 2, "rg"), obs, c, rng)
    assert len(set(rg.index.tolist())) > 1


def test_eval_gating_is_noise_free_argmax():
    gate = GatingSelector(4, 3, 8, rng=np.random.default_rng(2))
    obs = np.random.default_rng(3).normal(size=(20, 4))
    c = np.random.default_rng(4).normal(size=(20, 3, 2))
    res = gate_select(gate, obs, c, np.random.default_rng(5), train=False)
    assert np.array_equal(res.index, np.argmax(gate.net.forward(obs), axis=1))


def test_editor_examples():
    obs = np.random.default_rng(0).normal(size=(5, 14))
    ed0 = ActionEditor(14, 2, 8, 0.0, np.random.default_rng(1))
    assert np.array_equal(edit_action(ed0, obs), np.zeros((5, 2)))
    assert np.array_equal(squash_residual(np.zeros(2), 2.0), np.zeros(2))
    v = squash_residual(np.array([1.9]), 1.9)[0]
    assert abs(v - 1.9 * np.tanh(1.0)) < 1e-10 and abs(v - 1.44702889631595) < 1e-12
    lim = squash_residual(np.array([1e6, -1e6]), 0.7)
    assert np.allclose(lim, [0.7, -0.7], atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-50, 50)), st.floats(1e-3, 5.0))
def test_editor_bound(raw, strength):
    d = squash_residual(raw, strength)
    assert np.all(np.abs(d) <= strength)
    small = np.abs(raw) < 5 * strength
    assert np.all(np.abs(d[small]) < strength)


def test_fuse_examples():
    for mode in ("tanh", "norm", "hard"):
        assert np.array_equal(fuse(np.zeros(2), np.zeros(2), mode, 1.0), np.zeros(2))
    assert np.array_equal(fuse(np.array([1.0, -0.5]), np.zeros(2), "norm", 1.0), [0.5, -0.25])
    assert np.array_equal(fuse(np.array([1.7, -0.2]), np.zeros(2), "hard", 0.0), [1.0, -0.2])
    x = np.array([0.3, -0.8])
    assert np.array_equal(fuse(x, np.zeros(2), "tanh", 0.0), x)
    assert np.allclose(fuse(x, np.zeros(2), "tanh", 0.5), np.tanh(x))
    with pytest.raises(ValueError):
        fuse(x, x, "softsign", 1.0)


def test_clip_jacobians():
    x = np.linspace(-0.9, 0.9, 181)
    assert np.all(fuse_derivative(x, "tanh", 1.0) >= 0.19 - 1e-12)
    assert np.all(fuse_derivative(np.array([1.5, -2.0]), "hard", 1.0) == 0.0)
    for L in (0.0, 0.5, 3.0):
        assert np.all(fuse_derivative(x, "norm", L) == 1.0 / (L + 1.0))
    num = finite_diff_grad(lambda z: float(np.sum(fuse(z, np.zeros_like(z), "tanh", 1.0))), x[::20])
    assert max_relative_error(fuse_derivative(x[::20], "tanh", 1.0), num) < 1e-6


def test_fused_policy_composition(solo):
    lay = spread_layout(3)
    obs = spread_obs()
    fp = FusedPolicy(solo, lay, 0, 16, rng=np.random.default_rng(1))
    act, diag = fused_act(fp, obs, np.random.default_rng(2), train=True)
    cands = fp.candidates(obs)
    rows = cands[np.arange(3), diag["index"]]
    assert np.array_equal(act, rows) and not diag["edit_norm"].any()

    lay1 = spread_layout(1)
    o1 = np.random.default_rng(5).normal(size=(7, 6))
    fp1 = FusedPolicy(solo, lay1, 0, 8, rng=np.random.default_rng(0))
    assert np.array_equal(fp1.act(o1, np.random.default_rng(0), True)[0], solo(o1))

    fp_t = FusedPolicy(solo, lay, 0, 16, strength=2.0, clip="tanh", rng=np.random.default_rng(1))
    a, _ = fp_t.act(obs * 20, np.random.default_rng(0), True)
    assert np.all(np.abs(a) < 1.0)


def test_fused_backward_matches_finite_differences(solo):
    lay = spread_layout(3)
    obs = np.concatenate([spread_obs(seed=s) for s in range(2)])
    rng = np.random.default_rng(0)
    for strength, clip in ((0.0, "tanh"), (0.5, "tanh"), (0.5, "norm")):
        fp = FusedPolicy(solo, lay, 0, 8, strength=strength, clip=clip, rng=np.random.default_rng(3))
        cands = fp.candidates(obs)
        noise = rng.gumbel(size=(len(obs), 3))
        up = rng.normal(size=(len(obs), 2))
        _, cache = fp.forward_train(obs, cands, None, noise=noise)
        grads = fp.backward(cache, up)
        # straight-through: the soft-mixture surrogate carries the gate gradient
        w0 = fp.gate.net.flat.copy()

        def soft(p):
            fp.gate.net.flat[...] = p
            z = (fp.gate.net.forward(obs) + noise) / fp.gate.temperature
            w = np.exp(z - z.max(1, keepdims=True))
            w /= w.sum(1, keepdims=True)
            pre = np.einsum("bg,bga->ba", w, cands) + cache.pre_clip - cache.gate.action
            return float(np.sum(up * fuse_derivative(cache.pre_clip, clip, strength) * pre))

        num = finite_diff_grad(soft, w0)
        fp.gate.net.flat[...] = w0
        assert max_relative_error(grads["gate"], num) < 1e-4
        assert np.abs(grads["gate"]).max() > 0
        if strength == 0:
            assert not grads["editor"].any()
        else:
            e0 = fp.editor.net.flat.copy()

            def hard(p):
                fp.editor.net.flat[...] = p
                return float(np.sum(up * fp.forward_train(obs, cands, None, noise=noise)[0]))

            num = finite_diff_grad(hard, e0)
            fp.editor.net.flat[...] = e0
            assert max_relative_error(grads["editor"], num) < 1e-4


def test_solo_is_never_mutated(solo):
    h = solo.param_hash()
    fp = FusedPolicy(solo, spread_layout(3), 1, 8, strength=1.0, rng=np.random.default_rng(0))
    _, cache = fp.forward_train(spread_obs(), fp.candidates(spread_obs()), np.random.default_rng(0))
    fp.backward(cache, np.ones((3, 2)))
    assert solo.param_hash() == h and set(fp.backward(cache, np.ones((3, 2)))) == {"gate", "editor"}


def test_fg_assigns_distinct_indices(solo):
    lay = spread_layout(3)
    obs = spread_obs()
    idx = [FusedPolicy(solo, lay, i, 8, gating="fg").act(obs[i:i + 1])[1]["index"][0] for i in range(3)]
    assert sorted(idx) == [0, 1, 2]
