"""Model builders: single-pathway generator, two-pathway generator with a
shared decoder, the conditioned discriminator, and the adversarial
autoencoder reference.

Generators map inputs in [-1, 1] to tanh outputs in [-1, 1]; images stored in
[0, 1] pass through ``to_model_space``/``to_unit_interval``. The two-pathway
generator ties its decoders through the parameter store's sharing groups, so
one underlying tensor per decoder parameter receives gradient contributions
from both pathways.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, tensor as T
from .nn import LayerSpec, NetworkSpec, ParameterStore, Stack, layer
from .tensor import Tensor


def to_model_space(x01: np.ndarray) -> np.ndarray:
    return 2.0 * x01 - 1.0


def to_unit_interval(x: np.ndarray) -> np.ndarray:
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)


# -- architecture catalog -----------------------------------------------------------


@dataclass(frozen=True)
class GeneratorArch:
    """Encoder/decoder stack pair plus lateral links between them.

    ``skips`` holds (encoder_layer, decoder_layer) pairs: the encoder tap is
    channel-concatenated onto that decoder layer's input.
    """

    encoder: NetworkSpec
    decoder: NetworkSpec
    skips: tuple[tuple[int, int], ...] = ()


def _enc_layer(k: int, ch: int, stride: int, bn: bool) -> LayerSpec:
    return layer("conv", k, k, ch, stride=stride, batch_norm=bn, activation="leaky_relu")


def _dec_layer(k: int, ch: int, stride: int, bn: bool, final: bool = False) -> LayerSpec:
    return layer("conv_transpose", k, k, ch, stride=stride, batch_norm=bn,
                 activation="tanh" if final else "leaky_relu")


_ENCODER_STRIDES = {64: (4, 2, 2, 4), 32: (2, 2, 2, 4), 16: (2, 2, 2, 2)}


def _scaled(count: int, scale: float) -> int:
    return max(1, round(count * scale))


def generator_arch(side: int = 64, channel_scale: float = 1.0, skip: bool = False,
                   out_channels: int = 3) -> GeneratorArch:
    """Four-block generator; strides adapt so each stage divides the side
    exactly down to a 1x1 bottleneck (the 64-pixel variant is the reference
    table: encoder 64/128/256/512 at strides 4,2,2,4, mirrored decoder).

    ``channel_scale`` shrinks hidden widths for desk-scale runs; the output
    layer keeps ``out_channels`` exactly.
    """
    if side not in _ENCODER_STRIDES:
        raise ValueError(f"unsupported side {side}; choose from {sorted(_ENCODER_STRIDES)}")
    s1, s2, s3, s4 = _ENCODER_STRIDES[side]
    cs = lambda c: _scaled(c, channel_scale)
    enc = NetworkSpec(layers=(
        _enc_layer(4, cs(64), s1, bn=False),
        _enc_layer(4, cs(128), s2, bn=True),
        _enc_layer(4, cs(256), s3, bn=True),
        _enc_layer(4, cs(512), s4, bn=True),
    ))
    # decoder mirrors the encoder: first transpose re-expands the bottleneck
    dec = NetworkSpec(layers=(
        _dec_layer(1, cs(256), s4, bn=True),
        _dec_layer(4, cs(128), s3, bn=True),
        _dec_layer(4, cs(64), s2, bn=True),
        _dec_layer(4, out_channels, s1, bn=False, final=True),
    ))
    skips = ((2, 1),) if skip else ()  # third encoder block -> second decoder block
    return GeneratorArch(encoder=enc, decoder=dec, skips=skips)


def discriminator_spec(channel_scale: float = 1.0) -> NetworkSpec:
    """Fixed conditioned-pair discriminator: strides 2,2,1,1; the penultimate
    block keeps resolution (same-padded) and the final valid conv emits the
    one-channel logit map. Feature matching taps the penultimate block."""
    cs = lambda c: _scaled(c, channel_scale)
    return NetworkSpec(layers=(
        layer("conv", 4, 4, cs(64), stride=2, batch_norm=False),
        layer("conv", 4, 4, cs(128), stride=2, batch_norm=True),
        layer("conv", 4, 4, cs(256), stride=1, batch_norm=True, padding=(1, 2)),
        layer("conv", 4, 4, 1, stride=1, batch_norm=False, activation="none", padding=0),
    ))


# -- generators ---------------------------------------------------------------------


class PathwayGenerator:
    """Encoder-decoder generator (the baseline conditional generator)."""

    def __init__(self, store: ParameterStore, encoder: Stack, decoder: Stack,
                 skips: tuple[tuple[int, int], ...]):
        self.store = store
        self.encoder = encoder
        self.decoder = decoder
        self.skips = skips

    def forward(self, s: Tensor, train: bool = True) -> tuple[Tensor, dict[str, Tensor]]:
        code, enc_taps = self.encoder.forward_with_skips(s, train=train)
        injected = {dst: enc_taps[f"layer{src}"] for src, dst in self.skips}
        out, _ = self.decoder.forward_with_skips(code, train=train, injected=injected)
        return out, enc_taps

    def __call__(self, s: Tensor, train: bool = True) -> Tensor:
        return self.forward(s, train=train)[0]


class RoCGANGenerator:
    """Two pathways, one decoder: regression from the source domain plus an
    autoencoder in the target domain whose decoder weights are the same
    storage (unless built untied)."""

    def __init__(self, store: ParameterStore, reg_encoder: Stack, ae_encoder: Stack,
                 reg_decoder: Stack, ae_decoder: Stack,
                 skips: tuple[tuple[int, int], ...], tied: bool):
        self.store = store
        self.reg_encoder = reg_encoder
        self.ae_encoder = ae_encoder
        self.reg_decoder = reg_decoder
        self.ae_decoder = ae_decoder
        self.skips = skips
        self.tied = tied
        self.reg = PathwayGenerator(store, reg_encoder, reg_decoder, skips)
        self.ae = PathwayGenerator(store, ae_encoder, ae_decoder, skips)

    def forward_reg(self, s: Tensor, train: bool = True) -> tuple[Tensor, dict[str, Tensor]]:
        return self.reg.forward(s, train=train)

    def forward_ae(self, y: Tensor, train: bool = True) -> tuple[Tensor, dict[str, Tensor]]:
        return self.ae.forward(y, train=train)


def build_generator(arch: GeneratorArch, input_shape, store: ParameterStore, seed: int,
                    enc_prefix: str = "enc_reg", dec_prefix: str = "dec_reg"
                    ) -> PathwayGenerator:
    encoder = nn.build_stack(arch.encoder, input_shape, store, enc_prefix, seed)
    inject = {dst: encoder.layers[src].out_shape[0] for src, dst in arch.skips}
    decoder = nn.build_stack(arch.decoder, encoder.output_shape, store, dec_prefix, seed,
                             inject_channels=inject)
    return PathwayGenerator(store, encoder, decoder, arch.skips)


def build_rocgan(arch: GeneratorArch, input_shape, store: ParameterStore, seed: int,
                 tie_decoders: bool = True) -> RoCGANGenerator:
    """Two independently initialized encoders; the decoders are built per
    pathway and then aliased into one parameter set (the reg decoder's
    initialization is canonical)."""
    reg_encoder = nn.build_stack(arch.encoder, input_shape, store, "enc_reg", seed)
    ae_encoder = nn.build_stack(arch.encoder, input_shape, store, "enc_ae", seed)
    if reg_encoder.output_shape != ae_encoder.output_shape:
        raise nn.StackBuildError(
            f"bottleneck mismatch: {reg_encoder.output_shape} vs {ae_encoder.output_shape}")
    inject = {dst: reg_encoder.layers[src].out_shape[0] for src, dst in arch.skips}
    reg_decoder = nn.build_stack(arch.decoder, reg_encoder.output_shape, store, "dec_reg",
                                 seed, inject_channels=inject)
    ae_decoder = nn.build_stack(arch.decoder, ae_encoder.output_shape, store, "dec_ae",
                                seed, inject_channels=inject)
    if tie_decoders:
        for built in reg_decoder.layers:
            for leaf in ("w", "b", "gamma", "beta", "running_mean", "running_var"):
                reg_name = built.pname(leaf)
                if store.has(reg_name):
                    nn.share_parameters(store, [reg_name, f"dec_ae.{built.index}.{leaf}"])
    return RoCGANGenerator(store, reg_encoder, ae_encoder, reg_decoder, ae_decoder,
                           arch.skips, tied=tie_decoders)


# -- discriminator ------------------------------------------------------------------


class Discriminator:
    """Conditioned discriminator over channel-concatenated (source, candidate)
    pairs; returns the logit map and the penultimate block's features."""

    def __init__(self, store: ParameterStore, stack: Stack):
        self.store = store
        self.stack = stack

    def discriminate(self, s: Tensor, candidate: Tensor, train: bool = True
                     ) -> tuple[Tensor, Tensor]:
        if s.shape != candidate.shape:
            raise T.ShapeError(f"source {s.shape} and candidate {candidate.shape} must align")
        pair = T.concat([s, candidate], axis=1)
        logits, taps = self.stack.forward_with_skips(pair, train=train)
        features = taps[f"layer{len(self.stack.layers) - 2}"]
        return logits, features


def build_discriminator(input_shape, store: ParameterStore, seed: int,
                        channel_scale: float = 1.0, prefix: str = "disc") -> Discriminator:
    """``input_shape`` is one image's (C, H, W); the stack sees 2C channels."""
    c, h, w = input_shape
    stack = nn.build_stack(discriminator_spec(channel_scale), (2 * c, h, w), store,
                           prefix, seed)
    return Discriminator(store, stack)


def discriminate(d: Discriminator, s: Tensor, candidate: Tensor, train: bool = True):
    return d.discriminate(s, candidate, train=train)


# -- adversarial autoencoder reference ------------------------------------------------


class AAEReference:
    """Autoencoder in the target domain with a small code discriminator that
    pushes bottleneck codes toward a standard normal prior. Capacity
    reference only: same encoder/decoder architecture as the generators."""

    def __init__(self, store: ParameterStore, encoder: Stack, decoder: Stack,
                 code_disc: Stack, code_dim: int):
        self.store = store
        self.encoder = encoder
        self.decoder = decoder
        self.code_disc = code_disc
        self.code_dim = code_dim

    def encode(self, y: Tensor, train: bool = True) -> Tensor:
        code, _ = self.encoder.forward_with_skips(y, train=train)
        return code

    def reconstruct(self, y: Tensor, train: bool = True) -> Tensor:
        out, _ = self.decoder.forward_with_skips(self.encode(y, train=train), train=train)
        return out

    def code_logits(self, code: Tensor, train: bool = True) -> Tensor:
        flat = T.reshape(code, (code.shape[0], self.code_dim))
        out, _ = self.code_disc.forward_with_skips(flat, train=train)
        return out

    def __call__(self, y: Tensor, train: bool = False) -> Tensor:
        return self.reconstruct(y, train=train)


def build_aae_reference(arch: GeneratorArch, input_shape, store: ParameterStore,
                        seed: int) -> AAEReference:
    encoder = nn.build_stack(arch.encoder, input_shape, store, "aae_enc", seed)
    decoder = nn.build_stack(arch.decoder, encoder.output_shape, store, "aae_dec", seed)
    code_dim = int(np.prod(encoder.output_shape))
    cdisc_spec = NetworkSpec(layers=(
        layer("dense", 64, activation="leaky_relu"),
        layer("dense", 1, activation="none"),
    ))
    code_disc = nn.build_stack(cdisc_spec, (code_dim,), store, "aae_cdisc", seed)
    return AAEReference(store, encoder, decoder, code_disc, code_dim)
