import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from klpi.approx import (AdamState, NetSpec, backward, forward, init_params, load_params,
                         opt_step, save_params, unpack)
from klpi.checks import central_diff, net_gradient_error, rel_error
from klpi.fitting import policy_heads, policy_spec
from klpi.gauss import kl_cov, kl_mean


def random_params(spec, rng, scale=0.3):
    return init_params(spec, rng) + scale * rng.standard_normal(spec.num_params)


class TestSpec:
    def test_param_count(self):
        assert NetSpec(3, (4, 5), 2).num_params == 4 * 4 + 5 * 5 + 6 * 2
        assert NetSpec(3, (4,), 2, "elu", True).num_params == 4 * 4 + 5 * 2 + 2 * 4

    @pytest.mark.parametrize("kw", [dict(input_dim=0, hidden=(), output_dim=1),
                                    dict(input_dim=1, hidden=(0,), output_dim=1),
                                    dict(input_dim=1, hidden=(), output_dim=1, activation="relu"),
                                    dict(input_dim=1, hidden=(), output_dim=1, layer_norm_first=True),
                                    dict(input_dim=1, hidden=(2,), output_dim=1, layer_norm_tanh=True)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NetSpec(**kw)

    def test_init_is_glorot_with_zero_bias(self, rng):
        spec = NetSpec(6, (10,), 4, "elu", True)
        layers, ln = unpack(spec, init_params(spec, rng))
        for w, b in layers:
            lim = np.sqrt(6 / sum(w.shape))
            assert np.all(np.abs(w) <= lim) and np.all(b == 0)
        np.testing.assert_array_equal(ln[0], 1.0)
        np.testing.assert_array_equal(ln[1], 0.0)


class TestForward:
    def test_zero_weights_give_bias(self):
        spec = NetSpec(3, (), 2, "identity")
        params = np.zeros(spec.num_params)
        params[-2:] = [0.5, -1.5]
        out, _ = forward(spec, params, np.ones(3))
        np.testing.assert_array_equal(out, [0.5, -1.5])

    def test_linear_layer_matches_matmul(self, rng):
        spec = NetSpec(4, (), 3, "identity")
        params = rng.standard_normal(spec.num_params)
        (w, b), = unpack(spec, params)[0]
        x = rng.standard_normal((5, 4))
        np.testing.assert_allclose(forward(spec, params, x)[0], x @ w.T + b, atol=1e-14)

    def test_elu_of_minus_one(self):
        spec = NetSpec(1, (1,), 1, "elu")
        # x=-1 through unit weight, then read the hidden unit through an identity output
        params = np.array([1.0, 0.0, 1.0, 0.0])
        out, _ = forward(spec, params, [-1.0])
        assert out[0] == pytest.approx(np.exp(-1) - 1, abs=1e-15)
        assert out[0] == pytest.approx(-0.6321, abs=1e-4)

    def test_dimension_mismatch(self, rng):
        spec = NetSpec(3, (2,), 1)
        with pytest.raises(ValueError):
            forward(spec, init_params(spec, rng), np.ones(4))

    def test_wrong_param_length(self):
        with pytest.raises(ValueError):
            forward(NetSpec(3, (2,), 1), np.zeros(5), np.ones(3))

    def test_pure(self, rng):
        spec = NetSpec(3, (8, 8), 2, "tanh", True, True)
        p, x = random_params(spec, rng), rng.standard_normal((4, 3))
        assert np.array_equal(forward(spec, p, x)[0], forward(spec, p, x)[0])


net_specs = st.builds(
    lambda i, h, o, act, ln, lnt: NetSpec(i, tuple(h), o, act, ln and bool(h), ln and lnt and bool(h)),
    st.integers(1, 4), st.lists(st.integers(1, 6), max_size=2), st.integers(1, 4),
    st.sampled_from(["elu", "tanh", "identity"]), st.booleans(), st.booleans())


class TestBackward:
    def test_linear_layer_gradient_is_outer_product(self, rng):
        spec = NetSpec(3, (), 2, "identity")
        params = rng.standard_normal(spec.num_params)
        x, g = rng.standard_normal(3), rng.standard_normal(2)
        _, cache = forward(spec, params, x)
        grad, dx = backward(spec, params, cache, g[None, :])
        (gw, gb), = unpack(spec, grad)[0]
        np.testing.assert_allclose(gw, np.outer(g, x), atol=1e-14)
        np.testing.assert_allclose(gb, g, atol=1e-14)

    def test_zero_output_grad(self, rng):
        spec = NetSpec(3, (5, 4), 2, "elu", True, True)
        params = random_params(spec, rng)
        _, cache = forward(spec, params, rng.standard_normal((3, 3)))
        grad, dx = backward(spec, params, cache, np.zeros((3, 2)))
        assert not grad.any() and not dx.any()

    @given(net_specs, st.integers(0, 2 ** 32 - 1))
    def test_matches_finite_differences(self, spec, seed):
        rng = np.random.default_rng(seed)
        params = random_params(spec, rng)
        x = rng.standard_normal((3, spec.input_dim))
        g = rng.standard_normal((3, spec.output_dim))
        _, cache = forward(spec, params, x)
        grad, dx = backward(spec, params, cache, g)
        num_p = central_diff(lambda p: float(np.sum(g * forward(spec, p, x)[0])), params)
        num_x = central_diff(lambda z: float(np.sum(g * forward(spec, params, z)[0])), x)
        assert rel_error(grad, num_p).max() < 1e-4
        assert rel_error(dx, num_x).max() < 1e-4

    def test_config_nets(self, rng):
        # the nets shipped in configs, with and without the layer-norm options
        for spec in (policy_spec(10, 10, (50, 50), "tanh"), policy_spec(2, 2, (64, 64), "elu"),
                     NetSpec(4, (64, 64), 1, "elu"), NetSpec(4, (16, 16), 1, "elu", True, True)):
            params = random_params(spec, rng, 0.05)
            x = rng.standard_normal((2, spec.input_dim))
            g = rng.standard_normal((2, spec.output_dim))
            _, cache = forward(spec, params, x)
            grad, _ = backward(spec, params, cache, g)
            idx = rng.choice(spec.num_params, size=60, replace=False)

            def f(sub):
                p = params.copy()
                p[idx] = sub
                return float(np.sum(g * forward(spec, p, x)[0]))
            assert rel_error(grad[idx], central_diff(f, params[idx])).max() < 1e-4

    def test_stale_cache_rejected(self, rng):
        spec = NetSpec(2, (3,), 1)
        p1, p2 = random_params(spec, rng), random_params(spec, rng)
        _, cache = forward(spec, p1, np.ones(2))
        with pytest.raises(ValueError):
            backward(spec, p2, cache, np.ones((1, 1)))

    def test_random_suite(self, rng):
        assert max(net_gradient_error(rng) for _ in range(20)) < 1e-4


class TestAdam:
    def test_zero_gradient(self):
        opt = AdamState.zeros(3, 0.1)
        new, p = opt_step(opt, np.ones(3), np.zeros(3))
        np.testing.assert_array_equal(p, 1.0)
        assert new.t == 1

    @pytest.mark.parametrize("g", [0.3, -5.0])
    def test_first_step_is_lr_times_sign(self, g):
        _, p = opt_step(AdamState.zeros(1, 0.01), np.zeros(1), np.array([g]))
        assert p[0] == pytest.approx(-0.01 * np.sign(g), rel=1e-6)

    def test_maximize_flips_direction(self):
        _, p = opt_step(AdamState.zeros(1, 0.01), np.zeros(1), np.array([2.0]), maximize=True)
        assert p[0] == pytest.approx(0.01, rel=1e-6)

    def test_deterministic(self, rng):
        grad = rng.standard_normal(4)
        a = opt_step(AdamState.zeros(4, 0.1), np.ones(4), grad)
        b = opt_step(AdamState.zeros(4, 0.1), np.ones(4), grad)
        assert np.array_equal(a[1], b[1]) and np.array_equal(a[0].m, b[0].m)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            opt_step(AdamState.zeros(2), np.zeros(3), np.zeros(3))


class TestPolicyWiring:
    def test_mean_and_std_outputs_are_separate(self, rng):
        spec = policy_spec(3, 2, (6,), "elu")
        params = random_params(spec, rng)
        states = rng.standard_normal((5, 3))
        base = policy_heads(spec, params, states)
        bias = slice(spec.num_params - 4, spec.num_params)
        moved_mean = params.copy()
        moved_mean[bias.start:bias.start + 2] += 0.7
        h = policy_heads(spec, moved_mean, states)
        np.testing.assert_allclose(kl_cov(base, h.std), 0.0, atol=1e-15)
        assert np.all(kl_mean(base, h.mean) > 0)
        moved_std = params.copy()
        moved_std[bias.start + 2:] += 0.7
        h = policy_heads(spec, moved_std, states)
        np.testing.assert_allclose(kl_mean(base, h.mean), 0.0, atol=1e-15)
        assert np.all(kl_cov(base, h.std) > 0)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        spec = NetSpec(3, (4, 2), 2, "tanh", True, True)
        params = random_params(spec, rng)
        save_params(tmp_path / "p.params", spec, params)
        spec2, params2 = load_params(tmp_path / "p.params")
        assert spec2 == spec and np.array_equal(params2, params)

    def test_body_is_little_endian_float64(self, tmp_path):
        spec = NetSpec(1, (), 1, "identity")
        save_params(tmp_path / "p.params", spec, np.array([1.5, -2.0]))
        raw = (tmp_path / "p.params").read_bytes()
        body = raw[raw.index(b"\n") + 1:]
        assert body == np.array([1.5, -2.0], dtype="<f8").tobytes()

    def test_rejects_other_files(self, tmp_path):
        (tmp_path / "x").write_bytes(b"hello world\n")
        with pytest.raises(ValueError):
            load_params(tmp_path / "x")

    def test_rejects_truncated(self, tmp_path, rng):
        spec = NetSpec(2, (3,), 1)
        save_params(tmp_path / "p", spec, random_params(spec, rng))
        data = (tmp_path / "p").read_bytes()
        (tmp_path / "p").write_bytes(data[:-8])
        with pytest.raises(ValueError):
            load_params(tmp_path / "p")
