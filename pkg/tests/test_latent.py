import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from crdnav import diffcore as D
from crdnav import latent as L
from crdnav.diffcore import Tensor
from crdnav.errors import ConfigError, DimensionError, NumericError

TINY = L.NetConfig(16, (4, 4, 4, 4), 16)


def tiny_model(layout=L.LatentLayout(4, 4, 8), seed=0, net=TINY):
    return L.RepresentationModel(layout, net, rng=np.random.default_rng(seed))


def images(b, size=16, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, size=(b, size, size))


# -- layout -------------------------------------------------------------------------
def test_layout_validation():
    with pytest.raises(ConfigError):
        L.LatentLayout(0, 4, 4)
    assert L.LatentLayout(3, 5, 7).total == 15


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9))
def test_split_covers_each_coordinate_once(n1, n2, n3):
    lay = L.LatentLayout(n1, n2, n3)
    z = np.arange(lay.total, dtype=float)
    parts = lay.split(z)
    assert [p.size for p in parts] == [n1, n2, n3]
    np.testing.assert_array_equal(np.concatenate(parts), z)


def test_net_config_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        L.NetConfig(24, (4, 4, 4, 4))


# -- encode / decode ---------------------------------------------------------------
@pytest.mark.parametrize("layout", [L.LatentLayout(8, 8, 8), L.LatentLayout(16, 16, 32)])
def test_output_length_matches_layout(layout):
    m = tiny_model(layout)
    out = L.encode(m.encoder, images(3), rng=np.random.default_rng(0))
    for t in (out.mu, out.log_std, out.z):
        assert t.shape == (3, layout.total)
    assert out.h.shape == out.h_rec.shape == (3, TINY.feature_dim)


def test_encode_deterministic_with_seed():
    m = tiny_model()
    a = L.encode(m.encoder, images(2), rng=np.random.default_rng(5))
    b = L.encode(m.encoder, images(2), rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a.z.data, b.z.data)
    np.testing.assert_array_equal(a.mu.data, b.mu.data)


def test_z_is_reparameterized_from_recorded_eps():
    m = tiny_model()
    out = L.encode(m.encoder, images(4), rng=np.random.default_rng(1))
    np.testing.assert_allclose(out.z.data, out.mu.data + np.exp(out.log_std.data) * out.eps, atol=0, rtol=0)
    assert np.all(out.log_std.data >= -10) and np.all(out.log_std.data <= 2)


def test_zero_weights_give_standard_normal():
    m = tiny_model()
    for p in m.encoder.parameters():
        p.data[...] = 0.0
    x = np.repeat(images(1), 4000, axis=0)
    out = L.encode(m.encoder, x, rng=np.random.default_rng(2))
    assert np.all(out.mu.data == 0.0)
    z = out.z.data
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.02


def test_reparameterization_moments_10000_draws():
    m = tiny_model()
    m.encoder.to_stats.weight.data *= 0.01
    n = m.encoder.layout.total
    m.encoder.to_stats.bias.data[:n] = np.linspace(1.0, 2.0, n)
    m.encoder.to_stats.bias.data[n:] = np.linspace(-1.0, 0.5, n)
    x = np.repeat(images(1), 10_000, axis=0)
    out = L.encode(m.encoder, x, rng=np.random.default_rng(3))
    mu, var = out.mu.data[0], np.exp(2 * out.log_std.data[0])
    np.testing.assert_allclose(out.z.data.mean(axis=0), mu, rtol=0.05)
    np.testing.assert_allclose(out.z.data.var(axis=0), var, rtol=0.05)


def test_encode_rejects_wrong_image_size():
    m = tiny_model()
    with pytest.raises(DimensionError):
        L.encode(m.encoder, np.zeros((1, 8, 8)), rng=np.random.default_rng(0))


def test_non_finite_activation_names_layer():
    m = tiny_model()
    m.encoder.convs[1].weight.data[0, 0, 0, 0] = np.inf
    with pytest.raises(NumericError, match="conv1"):
        L.encode(m.encoder, images(1), rng=np.random.default_rng(0))


def test_decode_shape_range_and_determinism():
    m = tiny_model()
    z = np.random.default_rng(0).normal(size=(3, 16))
    a = L.decode(m.decoder, z).data
    b = L.decode(m.decoder, z).data
    assert a.shape == (3, 16, 16)
    assert np.all((a > 0) & (a < 1))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(DimensionError):
        L.decode(m.decoder, np.zeros((1, 15)))


def test_decoder_consumes_every_block():
    m = tiny_model()
    z = Tensor(np.random.default_rng(0).normal(size=(2, 16)), requires_grad=True)
    D.tsum(L.decode(m.decoder, z)).backward()
    lay = m.layout
    for block in lay.split(z.grad):
        assert np.any(block != 0)


def test_overfit_ten_images():
    rng = np.random.default_rng(0)
    # two stride-2 layers keep a 4 x 4 grid at 16 x 16, as four layers do at 64 x 64
    m = L.RepresentationModel(L.LatentLayout(4, 4, 8), L.NetConfig(16, (16, 32), 64), rng=rng)
    from crdnav import world as W
    sensor = W.SensorConfig(16, 16)
    x = []
    for k in range(10):
        spec = W.generate_scenario("forest", k)
        x.append(W.render_from_pose((0.0, 0.0, 3.0), 0.3 * k, spec, sensor).data / 20.0)
    rng = np.random.default_rng(0)
    x = np.array(x)
    opt = D.Adam([(m.encoder.parameters() + m.decoder.parameters(), 1e-3)])
    for step in range(2000):
        out = L.encode(m.encoder, x, rng=rng)
        loss = L.loss_vae(x, L.decode(m.decoder, out.z), out)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with D.no_grad():
        recon = L.decode(m.decoder, L.encode_mean(m.encoder, x)).data
    assert np.mean((recon - x) ** 2) < 0.01


# -- losses ---------------------------------------------------------------------------------
def test_kl_closed_form_examples():
    assert L.kl_divergence(np.zeros(3), np.zeros(3)).item() == 0.0
    assert L.kl_divergence(np.array([1.0]), np.array([0.0])).item() == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-3, 2)), min_size=1, max_size=6))
@example([(0.0, 2.6745434372173198e-36)])
@example([(0.0, -1e-300), (0.0, 1e-9)])
def test_kl_nonnegative_and_matches_formula(pairs):
    mu = np.array([p[0] for p in pairs])
    ls = np.array([p[1] for p in pairs])
    s = np.exp(ls)
    ref = 0.5 * np.sum(mu ** 2 + s ** 2 - 1 - 2 * np.log(s))
    got = L.kl_divergence(mu, ls).item()
    assert got >= 0
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_reconstruction_term_zero_for_perfect_output():
    m = tiny_model()
    out = L.encode(m.encoder, images(2), rng=np.random.default_rng(0))
    x_hat = L.decode(m.decoder, out.z)
    rec, _ = L.vae_terms(x_hat.data, x_hat, out)
    assert rec.item() == 0.0


def test_loss_vae_pixel_normalization():
    m = tiny_model()
    x = images(2)
    out = L.encode(m.encoder, x, rng=np.random.default_rng(0))
    x_hat = L.decode(m.decoder, out.z)
    expected = np.mean(np.sum((x - x_hat.data) ** 2, axis=(1, 2))
                       + 0.5 * np.sum(out.mu.data ** 2 + np.exp(2 * out.log_std.data) - 1
                                      - 2 * out.log_std.data, axis=1)) / 256
    assert L.loss_vae(x, x_hat, out).item() == pytest.approx(expected, rel=1e-12)


def test_loss_rec_examples():
    assert L.loss_rec(np.ones(2), np.ones(2)).item() == 0.0
    assert L.loss_rec(np.ones(2), np.zeros(2)).item() == 1.0
    with pytest.raises(DimensionError):
        L.loss_rec(np.ones(2), np.ones(3))


def test_loss_rec_gradient_reaches_both_bottleneck_maps():
    m = tiny_model()
    out = L.encode(m.encoder, images(2), rng=np.random.default_rng(0))
    m.encoder.zero_grad()
    L.loss_rec(out.h, out.h_rec).backward()
    assert np.any(m.encoder.to_stats.weight.grad != 0)
    assert np.any(m.encoder.from_z.weight.grad != 0)

    x = images(2)
    eps = np.random.default_rng(1).normal(size=(2, 16))

    def f():
        o = L.encode(m.encoder, x, eps=eps)
        return L.loss_rec(o.h, o.h_rec)
    err = D.gradient_check_params(f, [m.encoder.to_stats.weight, m.encoder.from_z.weight], per_param=20)
    assert err < 1e-5


def test_loss_align_examples():
    z = np.zeros(2)
    assert L.loss_align(z, [z, z]).item() == 0.0
    assert L.loss_align(z, [np.ones(2)]).item() == 2.0
    assert L.loss_align(z, [np.ones(2), np.full(2, np.sqrt(2.0))]).item() == pytest.approx(3.0)
    with pytest.raises(ConfigError):
        L.loss_align(z, [])


def test_loss_align_gradients_reach_both_branches():
    a = Tensor(np.array([[0.5, -1.0]]), requires_grad=True)
    b = Tensor(np.array([[1.0, 1.0]]), requires_grad=True)
    L.loss_align(a, [b]).backward()
    np.testing.assert_allclose(a.grad, 2 * (a.data - b.data))
    np.testing.assert_allclose(b.grad, -2 * (a.data - b.data))


def test_loss_bundle_total_and_finiteness():
    b = L.LossBundle(1.0, 2.0, 3.0)
    assert b.total == pytest.approx(1.0 + 0.2 + 3.0)
    with pytest.raises(NumericError):
        L.LossBundle(float("nan"), 0.0, 0.0)


def test_all_losses_nonnegative_on_random_models():
    for seed in range(3):
        m = tiny_model(seed=seed)
        x = images(3, seed=seed)
        x_aug = np.stack([x * 0.9, np.clip(x + 0.1, 0, 1)])
        _, bundle, _ = L.representation_losses(m.encoder, m.decoder, x, x_aug, L.LossWeights(),
                                               np.random.default_rng(seed).normal(size=(3, 16)))
        assert bundle.l_vae >= 0 and bundle.l_rec >= 0 and bundle.l_align >= 0


# -- gradient routing ---------------------------------------------------------------------------
def test_align_gradient_is_zero_on_z1_and_z2():
    lay = L.LatentLayout(4, 4, 8)
    rng = np.random.default_rng(0)
    z = Tensor(rng.normal(size=(3, 16)), requires_grad=True)
    z_aug = Tensor(rng.normal(size=(3, 16)), requires_grad=True)
    L.loss_align(lay.split(z)[2], [lay.split(z_aug)[2]]).backward()
    for t in (z, z_aug):
        g1, g2, g3 = lay.split(t.grad)
        assert np.all(g1 == 0) and np.all(g2 == 0)
        assert np.any(g3 != 0)


def test_vae_gradient_reaches_every_block():
    m = tiny_model()
    x = images(2)
    out = L.encode(m.encoder, x, rng=np.random.default_rng(0))
    z = Tensor(out.z.data, requires_grad=True)
    L.loss_vae(x, L.decode(m.decoder, z), out).backward()
    for block in m.layout.split(z.grad):
        assert np.any(block != 0)


# -- policy view ------------------------------------------------------------------------------------
def test_policy_view_widths():
    lay = L.LatentLayout(8, 8, 8)
    z = np.arange(24.0)
    assert L.policy_view(z, np.ones(3), np.ones(3), lay).shape == (1, 22)
    assert L.policy_view(z, np.ones(3), np.ones(3), lay, ("z1", "z2", "z3")).shape == (1, 30)
    assert lay.view_width(("z3",)) == 14
    with pytest.raises(ConfigError):
        L.policy_view(z, np.ones(3), np.ones(3), lay, ())
    with pytest.raises(ConfigError):
        L.check_mask(("z4",))


def test_policy_view_contents_and_order():
    lay = L.LatentLayout(2, 3, 4)
    z = np.arange(9.0)
    v = L.policy_view(z, [10, 11, 12], [20, 21, 22], lay).data[0]
    np.testing.assert_array_equal(v, [2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 20, 21, 22])
    v = L.policy_view(z, [10, 11, 12], [20, 21, 22], lay, ("z3", "z1")).data[0]
    np.testing.assert_array_equal(v[:6], [0, 1, 5, 6, 7, 8])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
def test_policy_view_ignores_z1(noise):
    lay = L.LatentLayout(4, 3, 5)
    z = np.random.default_rng(0).normal(size=12)
    z2 = z.copy()
    z2[:4] = noise
    a = L.policy_view(z, np.ones(3), np.zeros(3), lay).data
    b = L.policy_view(z2, np.ones(3), np.zeros(3), lay).data
    np.testing.assert_array_equal(a, b)
