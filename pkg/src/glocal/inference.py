"""Dual-query presence scoring and local/global head fusion.

Each class is scored by comparing the image projection against the
averaged positive-query embedding versus the averaged negative-query
embedding: a two-way softmax over the two similarities. Fusion combines
the local-space and global-space scores (or features, for "cat").
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.special import expit

from glocal import autodiff as ad
from glocal.encoders import GlobalLocalModel
from glocal.prompts import PromptGrammar, PromptSet, expand


class InferenceError(ValueError):
    pass


class FusionMode(str, enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"
    MAX = "max"
    CAT = "cat"
    MEAN = "mean"


def dual_query_score(p_i: np.ndarray, q_pos: np.ndarray, q_neg: np.ndarray, tau: float) -> float:
    """Presence probability from one image vector and two query vectors.

    exp(sim_pos/tau) / (exp(sim_pos/tau) + exp(sim_neg/tau)), computed as
    logistic((sim_pos - sim_neg)/tau) for stability.
    """
    if tau <= 0:
        raise InferenceError(f"tau must be positive, got {tau}")
    p_i = np.asarray(p_i, dtype=np.float64)
    q_pos = np.asarray(q_pos, dtype=np.float64)
    q_neg = np.asarray(q_neg, dtype=np.float64)
    if p_i.shape != q_pos.shape or p_i.shape != q_neg.shape:
        raise InferenceError(f"vector shapes differ: {p_i.shape}, {q_pos.shape}, {q_neg.shape}")
    sim_pos = _cosine(p_i, q_pos)
    sim_neg = _cosine(p_i, q_neg)
    return float(expit((sim_pos - sim_neg) / tau))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= ad.EPS_NORM or nb <= ad.EPS_NORM:
        raise InferenceError("zero-norm vector in similarity")
    return float(a @ b) / (na * nb)


def _rows_cosine(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1)
    nv = np.linalg.norm(vec)
    if nv <= ad.EPS_NORM or np.any(norms <= ad.EPS_NORM):
        raise InferenceError("zero-norm vector in similarity")
    return (mat @ vec) / (norms * nv)


def embed_prompt_set(prompt_set: PromptSet, model: GlobalLocalModel) -> PromptSet:
    """Fill averaged query embeddings for both head spaces.

    Local space: mean of sentence projections of each query. Global space:
    each query is treated as a one-sentence report (attention pooled, then
    report-projected) before averaging.
    """
    with ad.no_grad():
        for kind, queries in (("pos", prompt_set.positive_queries), ("neg", prompt_set.negative_queries)):
            if not queries:
                raise InferenceError(f"{prompt_set.class_name}: empty {kind} query set")
            z = model.text_encoder.encode_sentences(queries)  # (Q, d_enc)
            local = model.heads.p_s(z).data.mean(axis=0)
            n_q = z.shape[0]
            pooled = model.attention_pool.pool_grouped(z, tuple(range(n_q + 1)))  # one query per report
            global_ = model.heads.p_r(pooled).data.mean(axis=0)
            prompt_set.embeddings[(kind, "local")] = local
            prompt_set.embeddings[(kind, "global")] = global_
    return prompt_set


def build_prompt_sets(grammar: PromptGrammar, model: GlobalLocalModel, scheme: str) -> list[PromptSet]:
    return [embed_prompt_set(expand(grammar, c, scheme), model) for c in grammar.class_names]


def predict(
    images: np.ndarray,
    prompt_sets: list[PromptSet],
    model: GlobalLocalModel,
    mode: FusionMode | str = FusionMode.MEAN,
    batch_size: int = 64,
) -> np.ndarray:
    """Score (samples, classes) presence probabilities in [0, 1]."""
    mode = FusionMode(mode)
    for ps in prompt_sets:
        if not ps.embeddings:
            raise InferenceError(f"{ps.class_name}: prompt set not embedded")
    tau_l = model.temperatures.tau_l
    tau_g = model.temperatures.tau_g

    feats_l, feats_g = [], []
    with ad.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = images[start : start + batch_size]
            p_g, p_l = model.project_images(chunk)
            feats_l.append(p_l.data)
            feats_g.append(p_g.data)
    p_l = np.concatenate(feats_l)
    p_g = np.concatenate(feats_g)

    out = np.zeros((images.shape[0], len(prompt_sets)))
    for j, ps in enumerate(prompt_sets):
        out[:, j] = _score_class(p_l, p_g, ps, mode, tau_l, tau_g)
    return out


def _score_class(
    p_l: np.ndarray, p_g: np.ndarray, ps: PromptSet, mode: FusionMode, tau_l: float, tau_g: float
) -> np.ndarray:
    def head_score(feats: np.ndarray, space: str, tau: float) -> np.ndarray:
        sim_pos = _rows_cosine(feats, ps.embeddings[("pos", space)])
        sim_neg = _rows_cosine(feats, ps.embeddings[("neg", space)])
        return expit((sim_pos - sim_neg) / tau)

    if mode is FusionMode.LOCAL:
        return head_score(p_l, "local", tau_l)
    if mode is FusionMode.GLOBAL:
        return head_score(p_g, "global", tau_g)
    if mode is FusionMode.MAX:
        return np.maximum(head_score(p_l, "local", tau_l), head_score(p_g, "global", tau_g))
    if mode is FusionMode.MEAN:
        return 0.5 * (head_score(p_l, "local", tau_l) + head_score(p_g, "global", tau_g))
    # cat: concatenate local+global features on both sides, score once with tau_g
    feats = np.concatenate([p_l, p_g], axis=1)
    q_pos = np.concatenate([ps.embeddings[("pos", "local")], ps.embeddings[("pos", "global")]])
    q_neg = np.concatenate([ps.embeddings[("neg", "local")], ps.embeddings[("neg", "global")]])
    sim_pos = _rows_cosine(feats, q_pos)
    sim_neg = _rows_cosine(feats, q_neg)
    return expit((sim_pos - sim_neg) / tau_g)
