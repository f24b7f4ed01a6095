"""Training loop: decoupled-weight-decay Adam, cosine decay, loss CSV log.

One step computes the clean pass, samples the two augmented views once per
image, reuses those views for both the self-supervised and mirrored terms,
backpropagates the weighted total, applies the optimizer, and clamps the
learned inverse temperatures. Everything is driven by the run seed; two
runs with the same config produce bit-identical checkpoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from glocal import autodiff as ad
from glocal import losses as L
from glocal.augment import AugmentationConfig, augment, make_view_rng
from glocal.checkpoint import save_checkpoint
from glocal.config import RunConfig
from glocal.data import Batch, ReportRecord, make_batches
from glocal.encoders import EncoderConfig, GlobalLocalModel, Vocabulary
from glocal.prompts import PromptGrammar


class TrainingError(RuntimeError):
    pass


class AdamW:
    """Adam with decoupled weight decay; biases and temperatures undecayed."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._decay = [not (p.name.endswith(".b") or p.name.startswith("temperatures")) for p in self.params]

    def step(self, lr_scale: float = 1.0) -> None:
        self.t += 1
        lr_t = self.lr * lr_scale
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v, decay in zip(self.params, self._m, self._v, self._decay):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if decay and self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr_t * update


def cosine_lr_scale(step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TrainResult:
    model: GlobalLocalModel
    vocab: Vocabulary
    checkpoint_dir: Path
    log_path: Path
    first_epoch_loss: float | None
    last_epoch_loss: float | None


def build_model_for_config(config: RunConfig, vocab: Vocabulary) -> GlobalLocalModel:
    enc_cfg = EncoderConfig(
        d_enc=config.model.d_enc,
        d_proj=config.model.d_proj,
        d_ss=config.model.d_ss,
        conv_channels=tuple(config.model.conv_channels),
        input_size=config.data.input_size,
        dtype=config.precision,
    )
    return GlobalLocalModel(enc_cfg, vocab, seed=config.seed, init_tau=config.model.init_tau)


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence(entropy=(seed, 0xBA7C4, epoch)).generate_state(1)[0])


def compute_batch_loss(
    model: GlobalLocalModel,
    batch: Batch,
    weights: L.LossWeights,
    aug_config: AugmentationConfig,
    seed: int,
    epoch: int,
    step: int,
    sentence_mean: bool = False,
) -> tuple[ad.Tensor, dict[str, float]]:
    """All four loss parts for one batch; unused parts are skipped."""
    lam_l, lam_g, lam_s, lam_m = weights.as_tuple()
    temps = model.temperatures
    images = np.stack([r.image.pixels for r in batch.records])

    need_text = lam_l > 0 or lam_g > 0 or lam_m > 0
    need_aug = lam_s > 0 or lam_m > 0

    p_s = p_r = None
    if need_text:
        p_s, p_r = model.embed_text(batch)

    parts: dict[str, ad.Tensor | None] = {"local": None, "global": None, "self_supervised": None, "mirrored": None}

    if lam_l > 0 or lam_g > 0:
        p_g, p_l = model.project_images(images)
        if lam_l > 0:
            parts["local"] = L.local_loss(p_l, p_s, batch.sentence_offsets, temps.inv_tau_l, sentence_mean=sentence_mean)
        if lam_g > 0:
            parts["global"] = L.global_loss(p_g, p_r, temps.inv_tau_g)

    if need_aug:
        views = []
        for view_id in (1, 2):
            view = np.stack(
                [
                    augment(batch.records[i].image.pixels, aug_config, make_view_rng(seed, epoch, step, i, view_id))
                    for i in range(batch.size)
                ]
            )
            views.append(view)
        # image encodings shared between the self-supervised and mirrored terms
        z_a = model.image_encoder(views[0])
        z_b = model.image_encoder(views[1])
        if lam_s > 0:
            enc_a = model.heads.p_e(z_a)
            enc_b = model.heads.p_e(z_b)
            parts["self_supervised"] = L.simsiam_loss(
                model.heads.p_p(enc_a), enc_a, model.heads.p_p(enc_b), enc_b
            )
        if lam_m > 0:
            aug_a = (model.heads.p_g(z_a), model.heads.p_l(z_a))
            aug_b = (model.heads.p_g(z_b), model.heads.p_l(z_b))
            parts["mirrored"] = L.mirrored_loss(
                aug_a, aug_b, p_s, p_r, batch.sentence_offsets, temps.inv_tau_l, temps.inv_tau_g,
                sentence_mean=sentence_mean,
            )

    return L.total_loss(parts, weights)


def train(
    config: RunConfig,
    records: list[ReportRecord],
    grammar: PromptGrammar,
    out_dir: str | Path | None = None,
    log_every: int = 0,
) -> TrainResult:
    """Run the full optimization and write checkpoints plus the loss log."""
    out_dir = Path(out_dir) if out_dir is not None else config.resolved_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)

    corpus = [s for r in records for s in r.sentences]
    vocab = Vocabulary.build(corpus)
    model = build_model_for_config(config, vocab)
    weights = L.LossWeights(*config.loss.weights)
    aug_config = AugmentationConfig(
        crop_scale=tuple(config.augmentation.crop_scale),
        flip_probability=config.augmentation.flip_probability,
        intensity_jitter=config.augmentation.intensity_jitter,
        noise_sigma=config.augmentation.noise_sigma,
    )
    optimizer = AdamW(
        model.parameters(),
        lr=config.train.learning_rate,
        betas=tuple(config.train.betas),
        eps=config.train.eps,
        weight_decay=config.train.weight_decay,
    )

    steps_per_epoch = math.ceil(len(records) / config.train.batch_size)
    total_steps = steps_per_epoch * config.train.epochs

    log_path = out_dir / "loss_log.csv"
    log_file = open(log_path, "w", newline="", encoding="utf-8")
    writer = csv.writer(log_file)
    writer.writerow(["step", "L_L", "L_G", "L_S", "L_M", "total", "tau_L", "tau_G"])

    def write_ckpt(tag: str) -> Path:
        ckpt = out_dir / "checkpoints" / tag
        save_checkpoint(model, ckpt)
        config.to_yaml(ckpt / "config.yaml")
        return ckpt

    last_ckpt = write_ckpt("initial")
    first_epoch_loss = None
    last_epoch_loss = None
    global_step = 0
    try:
        for epoch in range(config.train.epochs):
            batches = make_batches(records, config.train.batch_size, seed=_epoch_seed(config.seed, epoch))
            epoch_total = 0.0
            for step, batch in enumerate(batches):
                model.zero_grad()
                total, breakdown = compute_batch_loss(
                    model,
                    batch,
                    weights,
                    aug_config,
                    seed=config.seed,
                    epoch=epoch,
                    step=step,
                    sentence_mean=config.loss.local_sentence_mean,
                )
                if not math.isfinite(breakdown["total"]):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} step {step} "
                        f"(batch ids {[r.id for r in batch.records[:4]]}...): {breakdown}"
                    )
                if total.requires_grad:
                    total.backward()
                scale = (
                    cosine_lr_scale(global_step, total_steps)
                    if config.train.schedule == "cosine"
                    else 1.0
                )
                optimizer.step(lr_scale=scale)
                model.temperatures.clamp()
                writer.writerow(
                    [
                        global_step,
                        f"{breakdown['local']:.10f}",
                        f"{breakdown['global']:.10f}",
                        f"{breakdown['self_supervised']:.10f}",
                        f"{breakdown['mirrored']:.10f}",
                        f"{breakdown['total']:.10f}",
                        f"{model.temperatures.tau_l:.10f}",
                        f"{model.temperatures.tau_g:.10f}",
                    ]
                )
                epoch_total += breakdown["total"]
                global_step += 1
            epoch_mean = epoch_total / max(1, len(batches))
            if first_epoch_loss is None:
                first_epoch_loss = epoch_mean
            last_epoch_loss = epoch_mean
            if log_every and (epoch + 1) % log_every == 0:
                print(f"epoch {epoch + 1}/{config.train.epochs}  mean total loss {epoch_mean:.6f}")
            last_ckpt = write_ckpt(f"epoch_{epoch + 1:03d}")
    finally:
        log_file.close()

    return TrainResult(
        model=model,
        vocab=vocab,
        checkpoint_dir=last_ckpt,
        log_path=log_path,
        first_epoch_loss=first_epoch_loss,
        last_epoch_loss=last_epoch_loss,
    )
