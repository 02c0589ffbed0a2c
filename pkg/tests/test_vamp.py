import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcdvamp.errors import InvalidParameterError
from pcdvamp.signal_model import (ObservationModel, SceneParams, generate_scene,
                                  make_partial_fourier, measure)
from pcdvamp.vamp import (LmmseFactor, VampConfig, VampLayerParams, clamp, extrinsic_update,
                          initial_state, lmmse_denoise, run_vamp, shrink, soft_threshold,
                          write_trace_csv)


def _random_model(rng, M, N):
    A = (rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))) / np.sqrt(2 * M)
    return ObservationModel(A, kind="custom")


def _dense_lmmse(A_RI, y_RI, r, sigma_tilde, sigma_w):
    gw, g = sigma_w**-2, sigma_tilde**-2
    n = A_RI.shape[1]
    P = gw * A_RI.T @ A_RI + g * np.eye(n)
    x = np.linalg.solve(P, gw * A_RI.T @ y_RI + g * r)
    v = g * np.trace(np.linalg.inv(P)) / n
    return x, v


def _dense_vamp(y_RI, A_RI, layers, eps=1e-6):
    """Straight transcription of the iteration without any factor cache."""
    r_t = A_RI.T @ y_RI
    s2_t = max(np.var(y_RI), 1e-6)
    for p in layers:
        x_t, v_t = _dense_lmmse(A_RI, y_RI, r_t, np.sqrt(s2_t), p.sigma_w)
        v_t = min(max(v_t, eps), 1 - eps)
        r = (x_t - v_t * r_t) / (1 - v_t)
        s2 = s2_t * v_t / (1 - v_t)
        lam = p.theta * np.sqrt(s2)
        x_hat = np.sign(r) * np.maximum(np.abs(r) - lam, 0)
        v = min(max(np.mean(np.abs(r) > lam), eps), 1 - eps)
        r_t = (x_hat - v * r) / (1 - v)
        s2_t = s2 * v / (1 - v)
    return x_hat, r, s2


class TestSoftThreshold:
    def test_examples(self):
        assert soft_threshold(np.array([2.0]), 0.5)[0] == 1.5
        assert soft_threshold(np.array([-0.3]), 0.5)[0] == 0.0

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
    def test_identity_at_zero(self, values):
        np.testing.assert_array_equal(soft_threshold(np.array(values), 0.0), values)

    def test_negative_lambda(self):
        with pytest.raises(InvalidParameterError):
            soft_threshold(np.ones(3), -0.1)

    @given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=1, max_size=30),
           st.floats(0, 10))
    def test_non_expansive(self, pairs, lam):
        a = np.array([p[0] for p in pairs])
        b = np.array([p[1] for p in pairs])
        assert np.all(np.abs(soft_threshold(a, lam) - soft_threshold(b, lam)) <= np.abs(a - b) + 1e-12)


class TestShrink:
    def test_all_below(self):
        x, v = shrink(np.array([0.1, -0.2, 0.3]), 1.0, 0.5)
        assert v == 0.0 and not x.any()

    def test_all_above(self):
        _, v = shrink(np.array([1.0, -2.0, 3.0]), 1.0, 0.5)
        assert v == 1.0

    def test_half(self):
        _, v = shrink(np.array([1.0, -2.0, 0.1, -0.2]), 1.0, 0.5)
        assert v == 0.5

    @pytest.mark.parametrize("sigma,theta", [(0, 1), (1, 0), (-1, 1)])
    def test_bad_params(self, sigma, theta):
        with pytest.raises(InvalidParameterError):
            shrink(np.ones(2), sigma, theta)

    def test_divergence_matches_finite_difference(self, rng):
        r = rng.standard_normal(500)
        sigma, theta = 0.8, 1.1
        lam = sigma * theta
        r = r[np.abs(np.abs(r) - lam) > 1e-3]  # keep away from the kinks
        h = 1e-7
        fd = (soft_threshold(r + h, lam) - soft_threshold(r - h, lam)) / (2 * h)
        _, v = shrink(r, sigma, theta)
        assert abs(np.mean(fd) - v) < 1e-6


class TestLmmse:
    def test_orthonormal_scalar_blend(self, rng):
        model = make_partial_fourier(16, 16, 0)
        y = rng.standard_normal(32)
        r = rng.standard_normal(32)
        st_, sw = 0.7, 0.3
        x, v = lmmse_denoise(r, st_, sw, model, y)
        gw, g = sw**-2, st_**-2
        np.testing.assert_allclose(x, (gw * model.A_RI.T @ y + g * r) / (gw + g), atol=1e-12)
        assert v == pytest.approx(g / (gw + g), rel=1e-12)

    def test_huge_noise_ignores_measurement(self, rng):
        model = _random_model(rng, 5, 9)
        r = rng.standard_normal(18)
        x, v = lmmse_denoise(r, 1.0, 1e9, model, rng.standard_normal(10))
        np.testing.assert_allclose(x, r, atol=1e-9)
        assert v == pytest.approx(1.0, abs=1e-9)

    def test_matches_dense_solve(self, rng):
        model = _random_model(rng, 4, 6)  # 8 x 12 real system
        y = rng.standard_normal(8)
        r = rng.standard_normal(12)
        x, v = lmmse_denoise(r, 0.9, 0.4, model, y)
        x_ref, v_ref = _dense_lmmse(model.A_RI, y, r, 0.9, 0.4)
        np.testing.assert_allclose(x, x_ref, atol=1e-10)
        assert v == pytest.approx(v_ref, abs=1e-10)

    def test_divergence_is_jacobian_diagonal(self, rng):
        model = _random_model(rng, 3, 5)
        y = rng.standard_normal(6)
        r = rng.standard_normal(10)
        h = 1e-6
        diag = []
        for i in range(10):
            e = np.zeros(10)
            e[i] = h
            xp, _ = lmmse_denoise(r + e, 0.6, 0.5, model, y)
            xm, _ = lmmse_denoise(r - e, 0.6, 0.5, model, y)
            diag.append((xp[i] - xm[i]) / (2 * h))
        _, v = lmmse_denoise(r, 0.6, 0.5, model, y)
        assert abs(np.mean(diag) - v) < 1e-5

    def test_batched_equals_columns(self, rng):
        model = _random_model(rng, 6, 10)
        Y = rng.standard_normal((12, 3))
        R = rng.standard_normal((20, 3))
        s = np.array([0.5, 1.0, 2.0])
        X, V = lmmse_denoise(R, s, 0.3, model, Y)
        for d in range(3):
            x, v = lmmse_denoise(R[:, d], s[d], 0.3, model, Y[:, d])
            np.testing.assert_allclose(X[:, d], x, atol=1e-12)
            assert V[d] == pytest.approx(v, rel=1e-12)

    def test_rank_deficient_factor(self, rng):
        # M < N leaves a null space; the factor must account for it in the trace
        model = _random_model(rng, 2, 7)
        fac = LmmseFactor(model.A_RI)
        assert fac.s.size == 4
        _, v = fac.solve(rng.standard_normal(14), 4.0, 1.5)
        _, v_ref = _dense_lmmse(model.A_RI, np.zeros(4), np.zeros(14), 1.5**-0.5, 0.5)
        assert v == pytest.approx(v_ref, rel=1e-12)

    def test_bad_sigmas(self, rng):
        model = _random_model(rng, 2, 3)
        with pytest.raises(InvalidParameterError):
            lmmse_denoise(np.zeros(6), 0.0, 1.0, model, np.zeros(4))


class TestExtrinsic:
    def test_half(self, rng):
        x, r = rng.standard_normal(5), rng.standard_normal(5)
        r_next, s2 = extrinsic_update(x, 0.5, r, 0.3)
        np.testing.assert_allclose(r_next, 2 * x - r)
        assert s2 == pytest.approx(0.3)

    def test_lower_clamp_limit(self, rng):
        x, r = rng.standard_normal(5), rng.standard_normal(5)
        eps = 1e-12
        r_next, s2 = extrinsic_update(x, eps, r, 1.0, eps=eps)
        np.testing.assert_allclose(r_next, x, atol=1e-10)
        assert s2 < 1e-11

    @given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
    def test_ratio_monotone(self, a, b):
        _, sa = extrinsic_update(np.zeros(1), a, np.zeros(1), 1.0)
        _, sb = extrinsic_update(np.zeros(1), b, np.zeros(1), 1.0)
        assert sa == pytest.approx(a / (1 - a))
        if a < b:
            assert sa < sb

    @pytest.mark.parametrize("v", [0.0, 1.0, -0.2, 1.5])
    def test_outside_clamp(self, v):
        with pytest.raises(InvalidParameterError):
            extrinsic_update(np.zeros(2), v, np.zeros(2), 1.0)

    def test_clamp(self):
        assert clamp(0.0) == 1e-6 and clamp(1.0) == 1 - 1e-6 and clamp(0.3) == 0.3


class TestRunVamp:
    def test_over_threshold_kills_everything(self, rng):
        model = make_partial_fourier(8, 16, 0)
        y = rng.standard_normal(16)
        out = run_vamp(y, model, [VampLayerParams(1e6, 1e6)], VampConfig(T=1))
        assert not out.x_hat_RI.any()

    def test_noiseless_orthonormal_recovery(self):
        model = make_partial_fourier(32, 32, 5)
        s = generate_scene(SceneParams(N=32, rho_min=0.1, rho_max=0.1), 3)
        y = measure(model, s, 0, noise_sigma2=0.0).y_RI
        layers = [VampLayerParams(1e-4, 0.1)] * 3
        out = run_vamp(y, model, layers, VampConfig(T=3))
        x_R, x_I = np.split(out.x_hat_RI, 2)
        found = np.flatnonzero((x_R != 0) | (x_I != 0))
        assert set(s.support) <= set(found)

    def test_deterministic(self, small_model, rng):
        y = rng.standard_normal(400)
        layers = [VampLayerParams(0.2, 1.1)] * 4
        a = run_vamp(y, small_model, layers, VampConfig(T=4))
        b = run_vamp(y, small_model, layers, VampConfig(T=4))
        np.testing.assert_array_equal(a.x_hat_RI, b.x_hat_RI)
        np.testing.assert_array_equal(a.r_RI, b.r_RI)

    def test_matches_dense_recomputation(self, rng):
        model = make_partial_fourier(24, 40, 2)
        s = generate_scene(SceneParams(N=40, rho_min=0.1, rho_max=0.1, snr_min=15, snr_max=15), 9)
        y = measure(model, s, 10).y_RI
        layers = [VampLayerParams(0.2, 1.0), VampLayerParams(0.25, 1.2), VampLayerParams(0.3, 0.9)]
        out = run_vamp(y, model, layers, VampConfig(T=3))
        x_ref, r_ref, s2_ref = _dense_vamp(y, model.A_RI, layers)
        np.testing.assert_allclose(out.x_hat_RI, x_ref, atol=1e-10)
        np.testing.assert_allclose(out.r_RI, r_ref, atol=1e-10)
        assert out.sigma2_vamp == pytest.approx(s2_ref, rel=1e-10)

    def test_variance_matches_trace(self, small_model, rng):
        y = rng.standard_normal(400)
        out = run_vamp(y, small_model, [VampLayerParams(0.2, 1.1)] * 3, VampConfig(T=3))
        last = out.trace[-1]
        expected = last["sigma2_tilde"] * last["v_tilde"] / (1 - last["v_tilde"])
        assert out.sigma2_vamp == expected
        for row in out.trace:
            assert 0 < row["v"] < 1 and 0 < row["v_tilde"] < 1

    def test_batch_matches_single(self, small_model, rng):
        Y = rng.standard_normal((400, 3))
        layers = [VampLayerParams(0.2, 1.1)] * 3
        batch = run_vamp(Y, small_model, layers, VampConfig(T=3))
        for d in range(3):
            one = run_vamp(Y[:, d], small_model, layers, VampConfig(T=3))
            np.testing.assert_allclose(batch.x_hat_RI[:, d], one.x_hat_RI, atol=1e-12)
            assert batch.sigma2_vamp[d] == pytest.approx(one.sigma2_vamp, rel=1e-12)

    def test_layer_count_checked(self, small_model):
        with pytest.raises(InvalidParameterError):
            run_vamp(np.zeros(400), small_model, [VampLayerParams(1, 1)], VampConfig(T=2))

    def test_early_stop(self):
        model = make_partial_fourier(32, 32, 5)
        s = generate_scene(SceneParams(N=32, rho_min=0.1, rho_max=0.1), 3)
        y = measure(model, s, 0, noise_sigma2=0.0).y_RI
        out = run_vamp(y, model, [VampLayerParams(1e-4, 0.1)] * 20, VampConfig(T=20, early_stop_tol=1e-3))
        assert out.iterations < 20

    def test_custom_init(self, rng):
        model = make_partial_fourier(8, 16, 0)
        y = rng.standard_normal(16)
        r1, s2, _ = initial_state(y, model, VampConfig(T=1, r1_init=np.ones(32), sigma1_init=2.0))
        np.testing.assert_array_equal(r1, np.ones(32))
        assert s2 == 4.0
        _, s2_default, _ = initial_state(np.zeros(16), model)
        assert s2_default == 1e-6

    def test_layer_params_validated(self):
        for bad in (0.0, -1.0, float("inf"), float("nan")):
            with pytest.raises(InvalidParameterError):
                VampLayerParams(bad, 1.0)

    def test_trace_csv(self, tmp_path, rng):
        model = make_partial_fourier(8, 16, 0)
        out = run_vamp(rng.standard_normal(16), model, [VampLayerParams(0.5, 1.0)] * 2, VampConfig(T=2))
        path = tmp_path / "trace.csv"
        write_trace_csv(path, out.trace)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,v,v_tilde,sigma2,sigma2_tilde" and len(lines) == 3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_zero_measurement_gives_zero(seed):
    model = make_partial_fourier(8, 16, seed % 1000)
    out = run_vamp(np.zeros(16), model, [VampLayerParams(0.5, 1.0)] * 3, VampConfig(T=3))
    assert not out.x_hat_RI.any()
