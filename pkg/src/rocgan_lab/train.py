"""Optimization: Adam, the alternating GAN loop, and the training modes.

One step = one discriminator update on (target real, regression output fake,
both conditioned on the source) followed by one generator update on the full
weighted objective. The autoencoder pathway's terms are computed on the same
batch's targets. Loss terms with zero weight are skipped entirely, so the
two-pathway trainer with all pathway weights at zero runs the exact same
computation graph as the baseline trainer.

Everything is deterministic given (seed, config, dataset): batches, masks and
initialization derive from counter-based streams keyed by purpose and step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import losses, models, tensor as T
from .data import CorruptionSpec, corrupt_batch
from .losses import LossWeights
from .models import to_model_space
from .nn import ParameterStore, save_checkpoint
from .rng import SplitMix64, derive_seed
from .tensor import Tensor


class DivergenceError(RuntimeError):
    """A loss or gradient went non-finite; carries the offending term."""

    def __init__(self, term: str, step: int, seed: int):
        super().__init__(f"non-finite value in {term!r} at step {step} (seed {seed})")
        self.term = term
        self.step = step
        self.seed = seed


MODES = ("cgan", "rocgan", "rocgan_skip", "aae")


@dataclass
class TrainConfig:
    mode: str = "rocgan"
    learning_rate: float = 2e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    iterations: int = 1000
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    tie_decoders: bool = True
    saturating_g_loss: bool = False
    clip_grad_norm: float | None = None
    checkpoint_every: int = 0
    aae_code_weight: float = 1.0
    semi_supervised: tuple[int, int] | None = None  # (labelled, unlabelled) batch split

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch statistics)")


class Adam:
    """Bias-corrected Adam over named parameters.

    Parameters without a gradient are left untouched (their step counter does
    not advance). Non-finite gradients abort with the parameter named.
    """

    def __init__(self, named_params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 clip_grad_norm: float | None = None):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_grad_norm = clip_grad_norm
        self._m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self._t = {name: 0 for name, _ in self.named_params}

    @classmethod
    def for_prefixes(cls, store: ParameterStore, prefixes, config: TrainConfig) -> "Adam":
        named = [(n, p) for n, p in store.canonical_items(trainable_only=True)
                 if any(n.startswith(pre) for pre in prefixes)]
        return cls(named, lr=config.learning_rate, beta1=config.adam_beta1,
                   beta2=config.adam_beta2, eps=config.adam_eps,
                   clip_grad_norm=config.clip_grad_norm)

    def step(self, step_index: int = 0, seed: int = 0) -> None:
        if self.clip_grad_norm is not None:
            total = 0.0
            for _, p in self.named_params:
                if p.grad is not None:
                    total += float((p.grad * p.grad).sum())
            norm = np.sqrt(total)
            if norm > self.clip_grad_norm:
                scale = self.clip_grad_norm / norm
                for _, p in self.named_params:
                    if p.grad is not None:
                        p.grad *= scale
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"gradient:{name}", step_index, seed)
            t = self._t[name] + 1
            self._t[name] = t
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _check_finite(metrics: dict[str, float], step: int, seed: int) -> None:
    for term, value in metrics.items():
        if not np.isfinite(value):
            raise DivergenceError(term, step, seed)


class GANTrainer:
    """Alternating optimization for the baseline and two-pathway models."""

    def __init__(self, config: TrainConfig, input_shape, channel_scale: float = 1.0):
        if config.mode == "aae":
            raise ValueError("use AAETrainer for aae mode")
        self.config = config
        self.input_shape = tuple(input_shape)
        side = self.input_shape[-1]
        self.store = ParameterStore()
        skip = config.mode == "rocgan_skip"
        arch = models.generator_arch(side=side, channel_scale=channel_scale, skip=skip,
                                     out_channels=self.input_shape[0])
        self.two_pathway = config.mode in ("rocgan", "rocgan_skip")
        if self.two_pathway:
            self.generator = models.build_rocgan(arch, self.input_shape, self.store,
                                                 seed=config.seed,
                                                 tie_decoders=config.tie_decoders)
            gen_prefixes = ("enc_reg", "dec_reg", "enc_ae", "dec_ae")
        else:
            self.generator = models.build_generator(arch, self.input_shape, self.store,
                                                    seed=config.seed)
            gen_prefixes = ("enc_reg", "dec_reg")
        self.discriminator = models.build_discriminator(self.input_shape, self.store,
                                                        seed=config.seed,
                                                        channel_scale=channel_scale)
        self.adam_g = Adam.for_prefixes(self.store, gen_prefixes, config)
        self.adam_d = Adam.for_prefixes(self.store, ("disc",), config)
        self.step_count = 0

    # regression pathway forward, shared by both model families
    def _forward_reg(self, s: Tensor, train: bool):
        if self.two_pathway:
            return self.generator.forward_reg(s, train=train)
        return self.generator.forward(s, train=train)

    def regress(self, s_np: np.ndarray) -> np.ndarray:
        """Inference-mode regression on a model-space batch."""
        with T.no_grad():
            out, _ = self._forward_reg(Tensor(s_np), train=False)
        return out.data

    def train_step(self, s_np: np.ndarray, y_np: np.ndarray,
                   extra_targets: np.ndarray | None = None) -> dict[str, float]:
        """One discriminator update then one generator update.

        ``extra_targets`` extends the autoencoder pathway's batch with
        unpaired target samples (semi-supervised mode).
        """
        cfg = self.config
        w = cfg.loss_weights
        seed = cfg.seed
        step = self.step_count
        s = Tensor(s_np)
        y = Tensor(y_np)

        # discriminator update on (real y | fake G(s)), conditioned on s
        fake, reg_taps = self._forward_reg(s, train=True)
        real_logits, _ = self.discriminator.discriminate(s, y, train=True)
        fake_logits, _ = self.discriminator.discriminate(s, fake.detach(), train=True)
        d_loss = losses.adv_loss_d(real_logits, fake_logits)
        self.store.zero_grad()
        d_loss.backward()
        self.adam_d.step(step, seed)

        # generator update on the weighted objective (fresh discriminator)
        fake_logits_g, pi_g = self.discriminator.discriminate(s, fake, train=True)
        with T.no_grad():
            _, pi_y = self.discriminator.discriminate(s, y, train=True)
        adv_g = losses.adv_loss_g(fake_logits_g, saturating=cfg.saturating_g_loss)
        content = losses.content_loss(fake, y)
        feat = losses.feature_matching_loss(pi_g, pi_y)

        ae = latent = decov = None
        metrics = {"loss_d": d_loss.item()}
        if self.two_pathway and (w.lambda_ae > 0 or w.lambda_l > 0 or w.lambda_decov > 0):
            ae_input = y
            if extra_targets is not None:
                ae_input = Tensor(np.concatenate([y_np, extra_targets], axis=0))
            ae_out, ae_taps = self.generator.forward_ae(ae_input, train=True)
            if w.lambda_ae > 0:
                ae = losses.ae_loss(ae_input, ae_out)
            if w.lambda_l > 0:
                # latent alignment needs paired samples: first batch_size rows
                e_ae = ae_taps["bottleneck"]
                if extra_targets is not None:
                    e_ae = _take_rows(e_ae, y_np.shape[0])
                latent = losses.latent_loss(reg_taps["bottleneck"], e_ae)
            if w.lambda_decov > 0 and cfg.mode == "rocgan_skip":
                code = reg_taps["bottleneck"]
                decov = losses.decov_loss(T.reshape(code, (code.shape[0], -1)))
        total = losses.total_loss_rocgan(adv_g, content, feat, w,
                                         ae=ae, latent=latent, decov=decov)
        self.store.zero_grad()
        total.backward()

        metrics.update({
            "loss_g_adv": adv_g.item(),
            "loss_content": content.item(),
            "loss_feat": feat.item(),
            "loss_ae": ae.item() if ae is not None else 0.0,
            "loss_latent": latent.item() if latent is not None else 0.0,
            "loss_decov": decov.item() if decov is not None else 0.0,
            "loss_g_total": total.item(),
        })
        _check_finite(metrics, step, seed)
        self.adam_g.step(step, seed)
        self.step_count += 1
        return metrics

    def run(self, batch_fn, iterations: int | None = None, checkpoint_dir=None,
            on_step=None) -> list[dict[str, float]]:
        """Drive ``train_step`` over seeded batches.

        ``batch_fn(step) -> (s, y)`` or ``(s, y, extra_targets)`` in model
        space. Checkpoints are written every ``checkpoint_every`` steps when a
        directory is given, plus once at the end.
        """
        iterations = self.config.iterations if iterations is None else iterations
        history = []
        for i in range(iterations):
            batch = batch_fn(self.step_count)
            metrics = self.train_step(*batch)
            metrics["step"] = float(self.step_count - 1)
            history.append(metrics)
            if on_step is not None:
                on_step(metrics)
            every = self.config.checkpoint_every
            if checkpoint_dir is not None and every and self.step_count % every == 0:
                save_checkpoint(self.store, checkpoint_dir)
        if checkpoint_dir is not None:
            save_checkpoint(self.store, checkpoint_dir)
        return history


def _take_rows(t: Tensor, n: int) -> Tensor:
    """First n batch rows of a tensor, gradients routed back to those rows."""
    full_shape = t.shape

    def backward(g):
        gx = np.zeros(full_shape)
        gx[:n] = g
        return [(t, gx)]

    return T._wrap(t.data[:n].copy(), (t,), backward)


class ImagePairSource:
    """Corruption-on-the-fly batcher over a clean [0, 1] image set.

    Every step draws indices and corruption masks from streams keyed by
    (seed, purpose, step); masks are fresh each iteration. Batches are
    returned in model space [-1, 1].
    """

    def __init__(self, images01: np.ndarray, corruption: CorruptionSpec, seed: int,
                 labelled_count: int | None = None):
        self.images01 = images01
        self.corruption = corruption
        self.seed = seed
        self.labelled_count = labelled_count  # restricts pair sampling; rest is target-only

    def pair_batch(self, step: int, size: int) -> tuple[np.ndarray, np.ndarray]:
        pool = self.labelled_count or self.images01.shape[0]
        idx = SplitMix64(derive_seed(self.seed, "idx", step)).integers(size, pool)
        y01 = self.images01[idx]
        s01 = corrupt_batch(y01, self.corruption, derive_seed(self.seed, "mask", step))
        return to_model_space(s01), to_model_space(y01)

    def unlabelled_batch(self, step: int, size: int) -> np.ndarray:
        lo = self.labelled_count or 0
        pool = self.images01.shape[0] - lo
        idx = SplitMix64(derive_seed(self.seed, "unlab", step)).integers(size, pool) + lo
        return to_model_space(self.images01[idx])

    def batch_fn(self, batch_size: int):
        return lambda step: self.pair_batch(step, batch_size)

    def semi_supervised_batch_fn(self, labelled_size: int, unlabelled_size: int):
        def fn(step: int):
            s, y = self.pair_batch(step, labelled_size)
            if unlabelled_size == 0:
                return s, y
            return s, y, self.unlabelled_batch(step, unlabelled_size)
        return fn


def train_semi_supervised(trainer: GANTrainer, source: ImagePairSource,
                          labelled_size: int, unlabelled_size: int,
                          iterations: int | None = None) -> list[dict[str, float]]:
    """Pairs feed the regression terms; the reconstruction term additionally
    consumes unpaired targets each iteration. Reduces to standard training
    when ``unlabelled_size`` is zero."""
    if source.labelled_count is not None and source.labelled_count < 1:
        raise ValueError("semi-supervised training needs a non-empty labelled set")
    history = trainer.run(source.semi_supervised_batch_fn(labelled_size, unlabelled_size),
                          iterations=iterations)
    for row in history:
        row["labelled"] = float(labelled_size)
        row["unlabelled"] = float(unlabelled_size)
    return history


class AAETrainer:
    """Reference adversarial autoencoder: reconstruction plus a code-space
    discriminator matching bottleneck codes to a standard normal prior."""

    def __init__(self, config: TrainConfig, input_shape, channel_scale: float = 1.0):
        self.config = config
        self.input_shape = tuple(input_shape)
        self.store = ParameterStore()
        arch = models.generator_arch(side=self.input_shape[-1], channel_scale=channel_scale,
                                     out_channels=self.input_shape[0])
        self.model = models.build_aae_reference(arch, self.input_shape, self.store,
                                                seed=config.seed)
        self.adam_ae = Adam.for_prefixes(self.store, ("aae_enc", "aae_dec"), config)
        self.adam_cdisc = Adam.for_prefixes(self.store, ("aae_cdisc",), config)
        self.step_count = 0

    def train_step(self, y_np: np.ndarray) -> dict[str, float]:
        cfg = self.config
        step = self.step_count
        y = Tensor(y_np)

        # reconstruction + fooling the code discriminator
        code = self.model.encode(y, train=True)
        rec, _ = self.model.decoder.forward_with_skips(code, train=True)
        recon = losses.ae_loss(y, rec)
        code_logits = self.model.code_logits(code, train=True)
        adv_enc = losses.adv_loss_g(code_logits)
        total = T.add(recon, T.mul(adv_enc, cfg.aae_code_weight))
        self.store.zero_grad()
        total.backward()
        metrics = {"loss_recon": recon.item(), "loss_code_adv": adv_enc.item()}
        _check_finite(metrics, step, cfg.seed)
        self.adam_ae.step(step, cfg.seed)

        # code discriminator: prior codes real, encoder codes fake
        prior = SplitMix64(derive_seed(cfg.seed, "prior", step)).normal(
            (y_np.shape[0], self.model.code_dim))
        prior_logits = self.model.code_disc(
            Tensor(prior), train=True)
        fake_logits = self.model.code_logits(code.detach(), train=True)
        d_loss = losses.adv_loss_d(prior_logits, fake_logits)
        self.store.zero_grad()
        d_loss.backward()
        metrics["loss_code_d"] = d_loss.item()
        _check_finite(metrics, step, cfg.seed)
        self.adam_cdisc.step(step, cfg.seed)
        self.step_count += 1
        return metrics

    def reconstruct(self, y_np: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.model.reconstruct(Tensor(y_np), train=False).data

    def run(self, batch_fn, iterations: int | None = None) -> list[dict[str, float]]:
        iterations = self.config.iterations if iterations is None else iterations
        history = []
        for _ in range(iterations):
            metrics = self.train_step(batch_fn(self.step_count))
            metrics["step"] = float(self.step_count - 1)
            history.append(metrics)
        return history
