import numpy as np
import pytest
from hypothesis import given, strategies as st

from irsopt.neural import (
    CKPT_VERSION,
    HIDDEN,
    AdamState,
    GradientBundle,
    MLPParams,
    StaleCacheError,
    actor_widths,
    adam_step,
    backward,
    critic_widths,
    forward,
    init_mlp,
    load_checkpoint,
    perturb_params,
    polyak_update,
    policy_forward,
    save_checkpoint,
    zeros_like,
)

seeds = st.integers(0, 2**32 - 1)


def small(rng, widths=(4, 5, 3, 2), output="linear"):
    p = init_mlp(rng, widths, output, final_scale=1.0)
    for g, b in zip(p.ln_gains, p.ln_biases):
        g += rng.normal(0, 0.3, g.shape)
        b += rng.normal(0, 0.3, b.shape)
    return p


def fd_grads(params, fn, h=1e-6):
    out = []
    for a in params.arrays():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = fn()
            a[i] = old - h
            fm = fn()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / den


class TestArchitecture:
    def test_default_widths(self):
        assert HIDDEN == (300, 200)
        assert actor_widths(16) == (17, 300, 200, 16)
        assert critic_widths(16) == (33, 300, 200, 1)

    def test_init_ranges(self, rng):
        p = init_mlp(rng, actor_widths(8), "scaled-phase")
        assert np.abs(p.weights[0]).max() <= 1 / np.sqrt(9)
        assert np.abs(p.weights[1]).max() <= 1 / np.sqrt(300)
        assert np.abs(p.weights[2]).max() <= 3e-3
        assert all(np.all(g == 1) for g in p.ln_gains)

    def test_bad_tag(self, rng):
        p = init_mlp(rng, (2, 3, 1), "linear")
        with pytest.raises(ValueError):
            MLPParams(p.widths, "softmax", p.weights, p.biases, p.ln_gains, p.ln_biases)

    def test_bad_shapes(self, rng):
        p = init_mlp(rng, (2, 3, 1), "linear")
        with pytest.raises(ValueError):
            MLPParams((2, 4, 1), "linear", p.weights, p.biases, p.ln_gains, p.ln_biases)

    def test_names_match_arrays(self, rng):
        p = init_mlp(rng, (2, 3, 4, 1), "linear")
        assert p.names() == ["W0", "b0", "g0", "beta0", "W1", "b1", "g1", "beta1", "W2", "b2"]
        assert len(p.arrays()) == len(p.names())


class TestForward:
    def test_zero_params_scaled(self, rng):
        p = zeros_like(init_mlp(rng, (3, 4, 4, 2), "scaled-phase"))
        out, _ = forward(p, rng.normal(size=3))
        np.testing.assert_allclose(out, np.pi)

    def test_zero_params_linear(self, rng):
        p = zeros_like(init_mlp(rng, (3, 4, 4, 2), "linear"))
        np.testing.assert_array_equal(forward(p, rng.normal(size=3))[0], 0.0)

    @given(seeds)
    def test_scaled_range(self, seed):
        rng = np.random.default_rng(seed)
        p = small(rng, output="scaled-phase")
        out, _ = forward(p, rng.normal(size=(7, 4)) * 3)
        assert np.all(np.isfinite(out)) and np.all(out > 0) and np.all(out < 2 * np.pi)

    def test_width_mismatch(self, rng):
        with pytest.raises(ValueError):
            forward(small(rng), np.zeros(5))

    def test_layer_norm_statistics(self, rng):
        p = small(rng, widths=(4, 30, 20, 2))
        _, cache = forward(p, rng.normal(size=(6, 4)))
        for xhat in cache.xhat:
            np.testing.assert_allclose(xhat.mean(axis=1), 0, atol=1e-6)
            # eps in the denominator shows up at the 1e-5 level for tiny spreads only
            np.testing.assert_allclose(xhat.var(axis=1), 1, atol=1e-3)

    def test_deterministic(self, rng):
        p = small(rng)
        x = rng.normal(size=4)
        a, _ = forward(p, x)
        b, _ = forward(p, x)
        assert a.tobytes() == b.tobytes()

    def test_batch_matches_rows(self, rng):
        p = small(rng)
        x = rng.normal(size=(5, 4))
        batch, _ = forward(p, x)
        for i in range(5):
            np.testing.assert_allclose(batch[i], forward(p, x[i])[0], rtol=1e-13)

    def test_policy_forward_matches(self, rng):
        p = init_mlp(rng, actor_widths(6), "scaled-phase")
        x = rng.normal(size=7)
        np.testing.assert_allclose(policy_forward(p, x), forward(p, x)[0], rtol=1e-12)

    def test_policy_forward_other_depth(self, rng):
        p = small(rng, widths=(4, 3, 2), output="scaled-phase")
        x = rng.normal(size=4)
        np.testing.assert_allclose(policy_forward(p, x), forward(p, x)[0])


class TestBackward:
    @pytest.mark.parametrize("output", ["linear", "scaled-phase"])
    def test_finite_differences(self, rng, output):
        p = small(rng, (4, 5, 3, 2), output)
        x = rng.normal(size=(3, 4))
        up = rng.normal(size=(3, 2))
        out, cache = forward(p, x)
        g = backward(p, cache, up)
        fd = fd_grads(p, lambda: float(np.sum(forward(p, x)[0] * up)))
        for name, a, b in zip(p.names(), g.grads, fd):
            assert rel_err(a, b) <= 1e-5, name

    def test_input_gradient(self, rng):
        p = small(rng, (4, 5, 3, 2), "scaled-phase")
        x = rng.normal(size=4)
        up = rng.normal(size=2)
        _, cache = forward(p, x)
        d = backward(p, cache, up).d_input
        fd = np.zeros(4)
        for i in range(4):
            e = np.zeros(4)
            e[i] = 1e-6
            fd[i] = (np.sum(forward(p, x + e)[0] * up) - np.sum(forward(p, x - e)[0] * up)) / 2e-6
        assert rel_err(d, fd) <= 1e-5

    def test_zero_upstream(self, rng):
        p = small(rng)
        _, cache = forward(p, rng.normal(size=4))
        g = backward(p, cache, np.zeros(2))
        assert all(np.all(a == 0) for a in g.grads)

    def test_stale_cache(self, rng):
        p = small(rng)
        _, cache = forward(p, rng.normal(size=4))
        p.touch()
        with pytest.raises(StaleCacheError):
            backward(p, cache, np.ones(2))

    def test_shapes(self, rng):
        p = small(rng)
        _, cache = forward(p, rng.normal(size=(2, 4)))
        g = backward(p, cache, np.ones((2, 2)))
        assert [a.shape for a in g.grads] == [a.shape for a in p.arrays()]
        assert g.d_input.shape == (2, 4)


class TestAdam:
    def grads_like(self, p, value):
        return GradientBundle([np.full_like(a, value) for a in p.arrays()])

    def test_zero_grads(self, rng):
        p = small(rng)
        before = [a.copy() for a in p.arrays()]
        adam_step(p, self.grads_like(p, 0.0), AdamState.for_params(p))
        for a, b in zip(p.arrays(), before):
            np.testing.assert_array_equal(a, b)

    def test_first_step_magnitude(self, rng):
        p = small(rng)
        before = [a.copy() for a in p.arrays()]
        grads = GradientBundle([rng.normal(size=a.shape) for a in p.arrays()])
        st_ = AdamState.for_params(p, lr=1e-3)
        adam_step(p, grads, st_)
        for a, b, g in zip(p.arrays(), before, grads.grads):
            np.testing.assert_allclose(a - b, -1e-3 * np.sign(g), rtol=1e-4)
        assert st_.step == 1

    def test_ascend_mirror(self, rng):
        p = small(rng)
        q = p.copy()
        grads = GradientBundle([rng.normal(size=a.shape) for a in p.arrays()])
        neg = GradientBundle([-g for g in grads.grads])
        sp, sq = AdamState.for_params(p), AdamState.for_params(q)
        for _ in range(3):
            adam_step(p, grads, sp, ascend=True)
            adam_step(q, neg, sq)
        for a, b in zip(p.arrays(), q.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_bumps_version(self, rng):
        p = small(rng)
        v = p.version
        adam_step(p, self.grads_like(p, 1.0), AdamState.for_params(p))
        assert p.version == v + 1


class TestPolyak:
    def test_tau_one(self, rng):
        t, o = small(rng), small(rng)
        polyak_update(t, o, 1.0)
        for a, b in zip(t.arrays(), o.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_tau_zero(self, rng):
        t, o = small(rng), small(rng)
        before = [a.copy() for a in t.arrays()]
        polyak_update(t, o, 0.0)
        for a, b in zip(t.arrays(), before):
            np.testing.assert_array_equal(a, b)

    def test_midpoint(self, rng):
        t, o = small(rng), small(rng)
        mid = [(a + b) / 2 for a, b in zip(t.arrays(), o.arrays())]
        polyak_update(t, o, 0.5)
        for a, b in zip(t.arrays(), mid):
            np.testing.assert_allclose(a, b, rtol=1e-15)

    def test_range(self, rng):
        with pytest.raises(ValueError):
            polyak_update(small(rng), small(rng), 1.5)

    @given(seeds, st.floats(0.01, 0.9))
    def test_geometric_contraction(self, seed, tau):
        rng = np.random.default_rng(seed)
        t, o = small(rng), small(rng)

        def dist():
            return np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(t.arrays(), o.arrays())))

        d0 = dist()
        for k in range(1, 6):
            polyak_update(t, o, tau)
            assert dist() == pytest.approx(d0 * (1 - tau) ** k, rel=1e-9)


class TestPerturb:
    def test_sigma_zero(self, rng):
        p = small(rng)
        q = perturb_params(p, 0.0, rng)
        assert q is not p
        for a, b in zip(p.arrays(), q.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_std(self, rng):
        p = init_mlp(rng, (300, 300, 200, 3), "linear")
        q = perturb_params(p, 0.1, rng)
        assert np.std(q.weights[1] - p.weights[1]) == pytest.approx(0.1, rel=0.05)

    def test_norm_params_untouched(self, rng):
        p = small(rng)
        before = [a.copy() for a in p.arrays()]
        q = perturb_params(p, 0.5, rng)
        for a, b in zip(p.ln_gains + p.ln_biases, q.ln_gains + q.ln_biases):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(p.arrays(), before):
            np.testing.assert_array_equal(a, b)
        assert not np.array_equal(p.weights[0], q.weights[0])

    def test_negative(self, rng):
        with pytest.raises(ValueError):
            perturb_params(small(rng), -1.0, rng)


class TestCheckpoint:
    def test_round_trip(self, rng, tmp_path):
        a, c = init_mlp(rng, actor_widths(4), "scaled-phase"), init_mlp(rng, critic_widths(4), "linear")
        path = save_checkpoint(tmp_path / "x" / "ck.npz", {"actor": a, "critic": c}, step=123, meta={"m": 4})
        nets, step, meta = load_checkpoint(path)
        assert step == 123 and meta == {"m": 4}
        for name, ref in (("actor", a), ("critic", c)):
            got = nets[name]
            assert got.widths == ref.widths and got.output == ref.output
            for x, y in zip(got.arrays(), ref.arrays()):
                np.testing.assert_array_equal(x, y)

    def test_header_tag(self, rng, tmp_path):
        import json

        path = save_checkpoint(tmp_path / "ck.npz", {"actor": small(rng)})
        with np.load(path) as data:
            header = json.loads(data["__header__"].tobytes())
        assert header["format"] == CKPT_VERSION

    def test_foreign_file(self, tmp_path):
        np.savez(tmp_path / "other.npz", a=np.zeros(3))
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "other.npz")
