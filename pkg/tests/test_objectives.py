import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from midz import networks as nn
from midz.autodiff import ShapeError, Tensor, adam_step, backward, ops
from midz.autodiff.adam import AdamState
from midz.model import ModelBundle
from midz.objectives import (LossCoefficients, adversarial_losses, discriminator_loss, exclusive_representations,
                             exclusive_stage_loss, global_mi_loss, jsd_mi_lower_bound, local_mi_loss,
                             make_negative_pairing, shared_stage_loss)

LN2 = math.log(2)


def _batch(rng, b=8, same=False):
    x = rng.uniform(0, 1, size=(b, 32, 32, 3)).astype(np.float32)
    y = x.copy() if same else rng.uniform(0, 1, size=(b, 32, 32, 3)).astype(np.float32)
    return SimpleNamespace(images_x=x, images_y=y)


def _pairings(b, seed=0):
    return make_negative_pairing(b, [seed, 0]), make_negative_pairing(b, [seed, 1])


class TestJSD:
    def test_zero_scores(self):
        v = jsd_mi_lower_bound(Tensor(np.zeros(10)), Tensor(np.zeros(7))).item()
        assert v == pytest.approx(-2 * LN2, abs=1e-6)

    def test_supremum_limit(self):
        v = jsd_mi_lower_bound(Tensor(np.full(4, 60.0)), Tensor(np.full(4, -60.0))).item()
        assert -1e-6 < v <= 0.0

    def test_formula(self, rng):
        pos, neg = rng.normal(size=5), rng.normal(size=6)
        ref = np.mean(-np.log1p(np.exp(-pos))) - np.mean(np.log1p(np.exp(neg)))
        assert jsd_mi_lower_bound(Tensor(pos), Tensor(neg)).item() == pytest.approx(ref, abs=1e-5)

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            jsd_mi_lower_bound(Tensor(np.zeros(0)), Tensor(np.zeros(3)))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-20, 20, width=32), min_size=1, max_size=30),
           st.lists(st.floats(-20, 20, width=32), min_size=1, max_size=30))
    def test_never_positive(self, pos, neg):
        assert jsd_mi_lower_bound(Tensor(pos), Tensor(neg)).item() <= 0.0


class TestNegativePairing:
    def test_batch_two(self):
        np.testing.assert_array_equal(make_negative_pairing(2, 5), [1, 0])

    def test_deterministic(self):
        np.testing.assert_array_equal(make_negative_pairing(64, 9), make_negative_pairing(64, 9))

    def test_rejects_tiny_batch(self):
        with pytest.raises(ValueError):
            make_negative_pairing(1, 0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 256), st.integers(0, 2**32 - 1))
    def test_is_fixed_point_free_permutation(self, n, seed):
        p = make_negative_pairing(n, seed)
        assert sorted(p.tolist()) == list(range(n))
        assert np.all(p != np.arange(n))


class TestMILosses:
    def test_zero_scorers_give_minus_two_ln2(self, rng):
        f = Tensor(rng.normal(size=(6, 8, 8, 64)))
        z = Tensor(rng.normal(size=(6, 16)))
        pair = make_negative_pairing(6, 0)
        g = nn.init_global_scorer((8, 8, 64), 16, nn.network_rng(0, "g"), zero_output=True)
        l = nn.init_local_scorer(64, 16, nn.network_rng(0, "l"), zero_output=True)
        assert global_mi_loss(f, z, g, pair).item() == pytest.approx(-2 * LN2, abs=1e-6)
        assert local_mi_loss(f, z, l, pair).item() == pytest.approx(-2 * LN2, abs=1e-6)

    def test_row_order_invariance(self, rng):
        f = rng.normal(size=(6, 8, 8, 64)).astype(np.float32)
        z = rng.normal(size=(6, 16)).astype(np.float32)
        g = nn.init_global_scorer((8, 8, 64), 16, nn.network_rng(0, "g"))
        pair = make_negative_pairing(6, 0)
        perm = rng.permutation(6)
        inv = np.argsort(perm)
        # same negative pairs expressed in the permuted row order
        pair_perm = inv[pair[perm]]
        a = global_mi_loss(Tensor(f), Tensor(z), g, pair).item()
        b = global_mi_loss(Tensor(f[perm]), Tensor(z[perm]), g, pair_perm).item()
        assert a == pytest.approx(b, abs=1e-6)

    def test_local_on_one_by_one_map_is_global_style(self, rng):
        f = rng.normal(size=(5, 1, 1, 4)).astype(np.float32)
        z = Tensor(rng.normal(size=(5, 3)))
        p = nn.init_local_scorer(4, 3, nn.network_rng(0, "l"))
        pair = make_negative_pairing(5, 2)
        emb = nn.local_embed(Tensor(f), p)
        pos = ops.reshape(nn.local_head(emb, z, p), (5,))
        neg = ops.reshape(nn.local_head(emb, ops.take_rows(z, pair), p), (5,))
        assert local_mi_loss(Tensor(f), z, p, pair).item() == pytest.approx(jsd_mi_lower_bound(pos, neg).item(), abs=1e-6)

    def test_global_bound_increases_with_training(self, rng):
        # z is a noisy linear readout of the features, so MI is large
        proj = rng.normal(size=(8 * 8 * 4, 4)).astype(np.float32) / 16
        g = nn.init_global_scorer((8, 8, 4), 4, nn.network_rng(0, "g"))
        st_ = AdamState(lr=1e-3)
        vals = []
        for step in range(500):
            f = rng.normal(size=(64, 8, 8, 4)).astype(np.float32)
            z = f.reshape(64, -1) @ proj + 0.1 * rng.normal(size=(64, 4)).astype(np.float32)
            loss = global_mi_loss(Tensor(f), Tensor(z), g, make_negative_pairing(64, step))
            vals.append(loss.item())
            adam_step(g, backward(-loss, g), st_)
        assert np.mean(vals[-50:]) > np.mean(vals[:50]) + 0.3


class TestSharedStage:
    def test_components_and_objective(self, rng):
        m = ModelBundle.create(seed=0)
        obj, comps = shared_stage_loss(_batch(rng), m, LossCoefficients(), _pairings(8))
        c = LossCoefficients()
        expect = (c.alpha_sh * (comps["L_global_x"] + comps["L_global_y"])
                  + c.beta_sh * (comps["L_local_x"] + comps["L_local_y"]) - c.gamma * comps["L1"])
        assert obj.item() == pytest.approx(expect, abs=1e-5)

    def test_l1_zero_for_identical_inputs_and_encoders(self, rng):
        m = ModelBundle.create(seed=0, weight_sharing=True)
        _, comps = shared_stage_loss(_batch(rng, same=True), m, LossCoefficients(), _pairings(8))
        assert comps["L1"] == 0.0

    def test_gamma_enters_gradient_linearly(self, rng):
        batch = _batch(rng)
        pairings = _pairings(8)

        def grads(coeffs):
            m = ModelBundle.create(seed=0)
            obj, _ = shared_stage_loss(batch, m, coeffs, pairings)
            return backward(obj, m.flat_params(("shared_encoder",)))

        g0 = grads(LossCoefficients(gamma=0.0))
        g1 = grads(LossCoefficients(gamma=0.1))
        g2 = grads(LossCoefficients(gamma=0.2))
        for k in g0:
            np.testing.assert_allclose(g2[k] - g1[k], g1[k] - g0[k], rtol=1e-3, atol=1e-6)
        assert any(np.any(g1[k] != g0[k]) for k in g0)

    def test_all_zero_coefficients_rejected(self, rng):
        m = ModelBundle.create(seed=0)
        with pytest.raises(ValueError):
            shared_stage_loss(_batch(rng), m, LossCoefficients(alpha_sh=0, beta_sh=0, gamma=0), _pairings(8))

    def test_non_ssr_differs(self, rng):
        m = ModelBundle.create(seed=0)
        batch = _batch(rng)
        a, _ = shared_stage_loss(batch, m, LossCoefficients(), _pairings(8))
        b, _ = shared_stage_loss(batch, m, LossCoefficients(), _pairings(8), non_ssr=True)
        assert a.item() != b.item()

    def test_local_term_reaches_encoder(self, rng):
        m = ModelBundle.create(seed=0)
        coeffs = LossCoefficients(alpha_sh=0.0, beta_sh=1.0, gamma=0.0)
        obj, _ = shared_stage_loss(_batch(rng), m, coeffs, _pairings(8))
        grads = backward(obj, m.flat_params(("shared_encoder",)))
        assert any(np.abs(g).sum() > 0 for g in grads.values())


class TestAdversarial:
    def test_constant_half_discriminator(self, rng):
        p = nn.init_discriminator(4, 2, nn.network_rng(0, "d"), zero_output=True)
        s, e = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 2)))
        d_loss, enc = adversarial_losses(s, e, p, make_negative_pairing(6, 0))
        assert d_loss.item() == pytest.approx(2 * LN2, abs=1e-6)
        assert enc.item() == pytest.approx(-2 * LN2, abs=1e-6)

    def test_enc_loss_has_no_discriminator_gradient(self, rng):
        p = nn.init_discriminator(4, 2, nn.network_rng(0, "d"))
        s, e = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 2)), requires_grad=True)
        _, enc = adversarial_losses(s, e, p, make_negative_pairing(6, 0))
        grads = backward(enc, p)
        assert all(not np.any(g) for g in grads.values())
        assert np.any(e.grad)

    def test_disc_loss_has_no_encoder_gradient(self, rng):
        p = nn.init_discriminator(4, 2, nn.network_rng(0, "d"))
        e = Tensor(rng.normal(size=(6, 2)), requires_grad=True)
        d = discriminator_loss(Tensor(rng.normal(size=(6, 4))), e, p, make_negative_pairing(6, 0))
        backward(d, [e])
        assert e.grad is None or not np.any(e.grad)

    def test_separable_inputs_drive_disc_objective_to_zero(self):
        # joint rows have e == s; the pairing always matches opposite signs, so marginal rows have e == -s
        p = nn.init_discriminator(1, 1, nn.network_rng(0, "d"))
        st_ = AdamState(lr=3e-3)
        s = np.repeat([[-1.0], [1.0]], 32, axis=0).astype(np.float32)
        pair = np.roll(np.arange(64), 32)
        for _ in range(500):
            loss = discriminator_loss(Tensor(s), Tensor(s.copy()), p, pair)
            adam_step(p, backward(loss, p), st_)
        final = discriminator_loss(Tensor(s), Tensor(s.copy()), p, pair).item()
        assert 0.0 < final < 0.01


class TestExclusiveStage:
    def test_r_dimension_and_shared_gradient_zero(self, rng):
        m = ModelBundle.create(seed=0)
        m.freeze_shared()
        batch = _batch(rng)
        reps = exclusive_representations(batch, m)
        s, _, e = reps["x"]
        assert s.shape[1] + e.shape[1] == 72
        obj, comps = exclusive_stage_loss(batch, m, LossCoefficients(), _pairings(8), reps=reps)
        grads = backward(obj, m.flat_params(("shared_encoder", "discriminator")))
        assert all(not np.any(g) for g in grads.values())

    def test_lambda_zero_is_mi_only(self, rng):
        m = ModelBundle.create(seed=0)
        c = LossCoefficients(lambda_adv=0.0)
        obj, comps = exclusive_stage_loss(_batch(rng), m, c, _pairings(8))
        mi = sum(c.alpha_ex * comps[f"L_global_{d}"] + c.beta_ex * comps[f"L_local_{d}"] for d in "xy")
        assert obj.item() == pytest.approx(mi, abs=1e-5)
        assert "L_adv_x" in comps

    def test_lambda_enters_objective(self, rng):
        m = ModelBundle.create(seed=0)
        batch = _batch(rng)
        c = LossCoefficients(lambda_adv=0.5)
        obj, comps = exclusive_stage_loss(batch, m, c, _pairings(8))
        mi = sum(c.alpha_ex * comps[f"L_global_{d}"] + c.beta_ex * comps[f"L_local_{d}"] for d in "xy")
        assert obj.item() == pytest.approx(mi - 0.5 * (comps["L_adv_x"] + comps["L_adv_y"]), abs=1e-5)


class TestCoefficients:
    def test_defaults(self):
        c = LossCoefficients()
        assert (c.alpha_sh, c.alpha_ex, c.beta_sh, c.beta_ex, c.gamma) == (0.5, 0.5, 1.0, 1.0, 0.1)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossCoefficients(gamma=-0.1)
