"""Contrastive training objectives over batch embeddings.

All functions are pure in their tensor inputs and return a scalar Tensor;
each batch-level value is the mean over pairs so magnitudes do not scale
with batch size. ``inv_tau`` arguments are inverse temperatures (1/tau),
either a plain float or a scalar Tensor when the temperature is learned.

The local objective is asymmetric on purpose: matching an image against
sentences uses one multi-positive term (any of the report's sentences may
describe the image), while each sentence is matched against images with
its own single-positive term (a sentence that fits an image should fit
exactly that image). The symmetric multi-positive form is kept as the
``milnce_loss`` baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from glocal import autodiff as ad


class LossInputError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    """Weights for (local, global, self-supervised, mirrored)."""

    local: float = 0.5
    global_: float = 0.5
    self_supervised: float = 0.5
    mirrored: float = 0.25

    def __post_init__(self):
        vals = (self.local, self.global_, self.self_supervised, self.mirrored)
        if any(v < 0 for v in vals):
            raise LossInputError(f"loss weights must be non-negative, got {vals}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.local, self.global_, self.self_supervised, self.mirrored)


def _validate_offsets(offsets, n_rows: int, n_cols: int) -> None:
    if len(offsets) != n_rows + 1 or offsets[0] != 0 or offsets[-1] != n_cols:
        raise LossInputError(f"offsets {tuple(offsets)} do not partition {n_cols} sentences over {n_rows} reports")
    for i in range(n_rows):
        if offsets[i + 1] - offsets[i] < 1:
            raise LossInputError(f"report {i} has an empty sentence partition")


def _ownership(offsets, n_rows: int, n_cols: int, dtype):
    """0/1 matrix marking which sentence columns belong to which report row."""
    ind = np.zeros((n_rows, n_cols), dtype=dtype)
    for i in range(n_rows):
        ind[i, offsets[i] : offsets[i + 1]] = 1.0
    return ind


def local_loss(p_l: ad.Tensor, p_s: ad.Tensor, offsets, inv_tau, sentence_mean: bool = False) -> ad.Tensor:
    """Split-symmetry local contrast between images and batch sentences.

    Per image: one multi-positive term normalised over every sentence in
    the batch, plus one single-positive term per owned sentence normalised
    over images; the two directions deliberately differ. ``sentence_mean``
    averages the per-sentence terms instead of summing them (alternative
    reading; off by default).
    """
    n, m = p_l.shape[0], p_s.shape[0]
    _validate_offsets(offsets, n, m)
    ind = _ownership(offsets, n, m, p_l.dtype)
    neg_mask = np.where(ind > 0, 0.0, -np.inf)

    logits = ad.mul(ad.cosine_matrix(p_l, p_s), inv_tau)  # (N, M)
    lse_all = ad.logsumexp(logits, axis=1)
    lse_own = ad.logsumexp(ad.add(logits, ad.Tensor(neg_mask)), axis=1)
    term_a = ad.sub(lse_all, lse_own)

    col_lse = ad.logsumexp(logits, axis=0)  # (M,)
    own_logit = ad.sum_(ad.mul(logits, ad.Tensor(ind)), axis=0)  # (M,)
    per_sentence = ad.sub(col_lse, own_logit)
    term_b = ad.matmul(ad.Tensor(ind), per_sentence)  # (N,)
    if sentence_mean:
        counts = np.array([offsets[i + 1] - offsets[i] for i in range(n)], dtype=p_l.dtype)
        term_b = ad.mul(term_b, ad.Tensor(1.0 / counts))
    return ad.mean(ad.add(term_a, term_b))


def milnce_loss(p_l: ad.Tensor, p_s: ad.Tensor, offsets, inv_tau) -> ad.Tensor:
    """Symmetric multi-positive baseline: both directions sum the positives."""
    n, m = p_l.shape[0], p_s.shape[0]
    _validate_offsets(offsets, n, m)
    ind = _ownership(offsets, n, m, p_l.dtype)
    neg_mask = np.where(ind > 0, 0.0, -np.inf)

    logits = ad.mul(ad.cosine_matrix(p_l, p_s), inv_tau)
    lse_all = ad.logsumexp(logits, axis=1)
    lse_own = ad.logsumexp(ad.add(logits, ad.Tensor(neg_mask)), axis=1)
    term_a = ad.sub(lse_all, lse_own)

    col_lse = ad.logsumexp(logits, axis=0)  # (M,) over images
    col_lse_own = ad.logsumexp(ad.add(ad.reshape(col_lse, (1, m)), ad.Tensor(neg_mask)), axis=1)  # (N,)
    term_b = ad.sub(col_lse_own, lse_own)
    return ad.mean(ad.add(term_a, term_b))


def global_loss(p_g: ad.Tensor, p_r: ad.Tensor, inv_tau) -> ad.Tensor:
    """Symmetric InfoNCE between image-global and report projections."""
    n = p_g.shape[0]
    if p_r.shape[0] != n:
        raise ad.ShapeError(f"global_loss: {n} images vs {p_r.shape[0]} reports")
    eye = np.eye(n, dtype=p_g.dtype)
    logits = ad.mul(ad.cosine_matrix(p_g, p_r), inv_tau)
    diag = ad.sum_(ad.mul(logits, ad.Tensor(eye)), axis=1)
    over_reports = ad.sub(ad.logsumexp(logits, axis=1), diag)
    over_images = ad.sub(ad.logsumexp(logits, axis=0), diag)
    return ad.mean(ad.add(over_reports, over_images))


def simsiam_loss(pred_a: ad.Tensor, enc_a: ad.Tensor, pred_b: ad.Tensor, enc_b: ad.Tensor) -> ad.Tensor:
    """Negative symmetric cosine with stop-gradient targets; in [-2, 2].

    Each prediction is pulled toward the detached encoding of the other
    view; no gradient flows into either target branch.
    """
    sim_a = ad.cosine_rows(pred_a, ad.detach(enc_b))
    sim_b = ad.cosine_rows(pred_b, ad.detach(enc_a))
    return ad.mean(ad.mul(ad.add(sim_a, sim_b), -1.0))


def mirrored_loss(
    aug_a: tuple[ad.Tensor, ad.Tensor],
    aug_b: tuple[ad.Tensor, ad.Tensor],
    p_s: ad.Tensor,
    p_r: ad.Tensor,
    offsets,
    inv_tau_l,
    inv_tau_g,
    sentence_mean: bool = False,
) -> ad.Tensor:
    """Global + local objectives replayed on both augmented views.

    ``aug_a``/``aug_b`` are (p_G, p_L) projections of the augmented images;
    the text projections are shared with the clean pass.
    """
    total = None
    for p_g, p_l in (aug_a, aug_b):
        part = ad.add(
            global_loss(p_g, p_r, inv_tau_g),
            local_loss(p_l, p_s, offsets, inv_tau_l, sentence_mean=sentence_mean),
        )
        total = part if total is None else ad.add(total, part)
    return total


def total_loss(parts: dict[str, ad.Tensor | None], weights: LossWeights) -> tuple[ad.Tensor, dict[str, float]]:
    """Weighted sum of the four objectives plus a float breakdown for logging.

    ``parts`` maps "local"/"global"/"self_supervised"/"mirrored" to scalar
    tensors; entries whose weight is zero may be None and are skipped.
    """
    lam = dict(zip(("local", "global", "self_supervised", "mirrored"), weights.as_tuple()))
    total: ad.Tensor | None = None
    breakdown: dict[str, float] = {}
    for name, weight in lam.items():
        term = parts.get(name)
        if term is None and weight != 0.0:
            raise LossInputError(f"loss part {name!r} missing but its weight is {weight}")
        if weight == 0.0 or term is None:
            breakdown[name] = float(term.item()) if term is not None else 0.0
            continue
        breakdown[name] = float(term.item())
        weighted = ad.mul(term, weight)
        total = weighted if total is None else ad.add(total, weighted)
    if total is None:
        total = ad.Tensor(np.asarray(0.0))
    breakdown["total"] = float(total.item())
    return total, breakdown
