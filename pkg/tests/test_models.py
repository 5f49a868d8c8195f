import numpy as np
import pytest

from rocgan_lab import models, nn, tensor as T
from rocgan_lab.nn import ParameterStore
from rocgan_lab.rng import SplitMix64


def small_arch(skip=False):
    return models.generator_arch(side=16, channel_scale=1 / 8, skip=skip)


class TestGeneratorArch:
    def test_table_bottleneck_full_scale(self):
        store = ParameterStore()
        gen = models.build_generator(models.generator_arch(side=64), (3, 64, 64),
                                     store, seed=0)
        assert gen.encoder.output_shape == (512, 1, 1)
        assert gen.decoder.output_shape == (3, 64, 64)

    def test_rocgan_bottlenecks_match(self):
        store = ParameterStore()
        roc = models.build_rocgan(models.generator_arch(side=64), (3, 64, 64), store, seed=0)
        assert roc.reg_encoder.output_shape == (512, 1, 1)
        assert roc.ae_encoder.output_shape == (512, 1, 1)

    def test_32px_arch_shapes(self):
        store = ParameterStore()
        gen = models.build_generator(models.generator_arch(side=32, channel_scale=1 / 8),
                                     (3, 32, 32), store, seed=0)
        assert gen.encoder.output_shape == (64, 1, 1)
        assert gen.decoder.output_shape == (3, 32, 32)

    def test_output_range_is_tanh(self):
        store = ParameterStore()
        gen = models.build_generator(small_arch(), (3, 16, 16), store, seed=1)
        x = T.Tensor(SplitMix64(3).uniform((2, 3, 16, 16), -1, 1))
        out = gen(x, train=True)
        assert out.shape == (2, 3, 16, 16)
        assert np.all(out.data >= -1.0) and np.all(out.data <= 1.0)


class TestSharedDecoder:
    def test_parameter_count_identity(self):
        # two pathways minus sharing = 2 encoders + 1 decoder
        store = ParameterStore()
        models.build_rocgan(small_arch(), (3, 16, 16), store, seed=0)
        total = store.total_parameter_count()
        enc_reg = store.total_parameter_count("enc_reg")
        enc_ae = store.total_parameter_count("enc_ae")
        dec = store.total_parameter_count("dec_reg")
        assert total == enc_reg + enc_ae + dec
        assert enc_reg == enc_ae
        assert store.total_parameter_count("dec_ae") == 0  # aliased away

    def test_decoder_is_same_storage(self):
        store = ParameterStore()
        roc = models.build_rocgan(small_arch(), (3, 16, 16), store, seed=0)
        assert store.get("dec_reg.0.w") is store.get("dec_ae.0.w")
        assert store.get("dec_reg.1.gamma") is store.get("dec_ae.1.gamma")

    def test_untied_decoders_are_independent(self):
        store = ParameterStore()
        models.build_rocgan(small_arch(), (3, 16, 16), store, seed=0, tie_decoders=False)
        assert store.get("dec_reg.0.w") is not store.get("dec_ae.0.w")

    def test_identical_encoders_give_identical_pathways(self):
        store = ParameterStore()
        roc = models.build_rocgan(small_arch(), (3, 16, 16), store, seed=0)
        # copy reg encoder weights into the ae encoder
        for built in roc.reg_encoder.layers:
            for leaf in ("w", "gamma", "beta", "running_mean", "running_var"):
                name = built.pname(leaf)
                if store.has(name):
                    store.set_data(f"enc_ae.{built.index}.{leaf}", store.get(name).data)
        x = T.Tensor(SplitMix64(8).uniform((2, 3, 16, 16), -1, 1))
        out_reg, _ = roc.forward_reg(x, train=False)
        out_ae, _ = roc.forward_ae(x, train=False)
        assert np.array_equal(out_reg.data, out_ae.data)

    def test_gradients_accumulate_from_both_pathways(self):
        store = ParameterStore()
        roc = models.build_rocgan(small_arch(), (3, 16, 16), store, seed=0)
        rng = SplitMix64(4)
        s = T.Tensor(rng.uniform((2, 3, 16, 16), -1, 1))
        y = T.Tensor(rng.uniform((2, 3, 16, 16), -1, 1))
        out_r, _ = roc.forward_reg(s)
        out_a, _ = roc.forward_ae(y)
        T.add(out_r.abs().mean(), out_a.abs().mean()).backward()
        g_both = store.get("dec_reg.0.w").grad.copy()
        store.zero_grad()
        out_r, _ = roc.forward_reg(s)
        out_r.abs().mean().backward()
        g_reg = store.get("dec_reg.0.w").grad.copy()
        assert not np.allclose(g_both, g_reg)


class TestSkipVariant:
    def test_skip_geometry(self):
        store = ParameterStore()
        roc = models.build_rocgan(small_arch(skip=True), (3, 16, 16), store, seed=0)
        x = T.Tensor(SplitMix64(5).uniform((2, 3, 16, 16), -1, 1))
        out, taps = roc.forward_reg(x)
        assert out.shape == (2, 3, 16, 16)
        # decoder layer 1 sees main flow + encoder layer 2 channels
        assert roc.reg_decoder.layers[1].in_shape[0] == \
            roc.reg_decoder.spec.scaled(roc.reg_decoder.layers[0].spec.filter[-1]) + \
            roc.reg_encoder.layers[2].out_shape[0]

    def test_no_skip_matches_plain_stack_forward(self):
        store = ParameterStore()
        gen = models.build_generator(small_arch(), (3, 16, 16), store, seed=2)
        x = T.Tensor(SplitMix64(6).uniform((2, 3, 16, 16), -1, 1))
        a = gen(x, train=False)
        code = gen.encoder(x, train=False)
        b = gen.decoder(code, train=False)
        assert np.array_equal(a.data, b.data)

    def test_encoder_taps_bottleneck_shape(self):
        store = ParameterStore()
        gen = models.build_generator(small_arch(), (3, 16, 16), store, seed=2)
        x = T.Tensor(np.zeros((2, 3, 16, 16)))
        _, taps = gen.forward(x, train=False)
        assert taps["bottleneck"].shape == (2,) + gen.encoder.output_shape


class TestDiscriminator:
    def test_logit_map_shape_64(self):
        store = ParameterStore()
        disc = models.build_discriminator((3, 64, 64), store, seed=0)
        s = T.Tensor(np.zeros((2, 3, 64, 64)))
        logits, feats = disc.discriminate(s, s, train=False)
        assert logits.shape == (2, 1, 13, 13)
        assert feats.shape[1] == 256 and feats.shape[2:] == (16, 16)

    def test_logit_map_shape_small(self):
        store = ParameterStore()
        disc = models.build_discriminator((3, 16, 16), store, seed=0, channel_scale=1 / 8)
        s = T.Tensor(np.zeros((2, 3, 16, 16)))
        logits, feats = disc.discriminate(s, s, train=False)
        assert logits.shape == (2, 1, 1, 1)
        # penultimate tap matches the third block's output
        assert feats.shape == (2,) + disc.stack.layers[2].out_shape

    def test_deterministic_in_eval_mode(self):
        store = ParameterStore()
        disc = models.build_discriminator((3, 16, 16), store, seed=0, channel_scale=1 / 8)
        rng = SplitMix64(9)
        s = T.Tensor(rng.uniform((2, 3, 16, 16), -1, 1))
        c = T.Tensor(rng.uniform((2, 3, 16, 16), -1, 1))
        l1, _ = disc.discriminate(s, c, train=False)
        l2, _ = disc.discriminate(s, c, train=False)
        assert np.array_equal(l1.data, l2.data)

    def test_misaligned_pair_raises(self):
        store = ParameterStore()
        disc = models.build_discriminator((3, 16, 16), store, seed=0, channel_scale=1 / 8)
        with pytest.raises(T.ShapeError):
            disc.discriminate(T.Tensor(np.zeros((2, 3, 16, 16))),
                              T.Tensor(np.zeros((2, 3, 8, 8))))


class TestAAE:
    def test_reconstruction_shape_and_code(self):
        store = ParameterStore()
        aae = models.build_aae_reference(small_arch(), (3, 16, 16), store, seed=0)
        y = T.Tensor(SplitMix64(11).uniform((2, 3, 16, 16), -1, 1))
        rec = aae.reconstruct(y, train=True)
        assert rec.shape == (2, 3, 16, 16)
        code = aae.encode(y, train=True)
        logits = aae.code_logits(code, train=True)
        assert logits.shape == (2, 1)
