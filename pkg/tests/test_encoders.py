"""Encoder, pooling, and projection-head behaviour tests."""

import numpy as np
import pytest

from glocal import autodiff as ad
from glocal import losses as L
from glocal.data import ReportRecord, Image, make_batch
from glocal.encoders import (
    AttentionPool,
    EncoderConfig,
    GlobalLocalModel,
    Vocabulary,
    sinusoidal_positions,
    tokenize,
)

import oracles


CFG = EncoderConfig(d_enc=16, d_proj=8, d_ss=8, conv_channels=(4, 6), input_size=16)


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary.build(["the lungs are clear", "no alpha opacity seen", "beta ring visible today"])


@pytest.fixture(scope="module")
def model(vocab):
    return GlobalLocalModel(CFG, vocab, seed=0)


def batch_of(texts_and_sentences):
    recs = []
    for i, sentences in enumerate(texts_and_sentences):
        rng = np.random.default_rng(100 + i)
        recs.append(
            ReportRecord(
                id=f"r{i}", image=Image(rng.uniform(0, 1, (16, 16))), sentences=tuple(sentences)
            )
        )
    return make_batch(recs)


class TestVocabulary:
    def test_reserved_ids(self, vocab):
        assert vocab.tokens[0] == "<pad>"
        assert vocab.tokens[1] == "<unk>"

    def test_unknown_maps_to_unk(self, vocab):
        ids = vocab.encode("zzzq unseen")
        assert all(i == 1 for i in ids)

    def test_tokenize_lowercases_and_splits_punctuation(self):
        assert tokenize("The lungs, ARE clear.") == ["the", "lungs", "are", "clear"]

    def test_save_load_round_trip(self, vocab, tmp_path):
        p = tmp_path / "vocab.txt"
        vocab.save(p)
        v2 = Vocabulary.load(p)
        assert v2.tokens == vocab.tokens


class TestImageEncoder:
    def test_deterministic_on_zero_image(self, model):
        imgs = np.zeros((1, 16, 16))
        a = model.image_encoder(imgs).data
        b = model.image_encoder(imgs).data
        assert np.array_equal(a, b)
        assert np.all(np.isfinite(a))

    def test_distinct_images_collide_rarely(self, model):
        rng = np.random.default_rng(1)
        collisions = 0
        for _ in range(1000):
            a = rng.uniform(0, 1, (16, 16))
            b = rng.uniform(0, 1, (16, 16))
            za = model.image_encoder(a[None]).data
            zb = model.image_encoder(b[None]).data
            if np.allclose(za, zb, atol=1e-9):
                collisions += 1
        assert collisions == 0

    def test_single_pixel_sensitivity(self, model):
        rng = np.random.default_rng(2)
        img = rng.uniform(0.2, 0.8, (16, 16))
        base = model.image_encoder(img[None]).data
        bumped = img.copy()
        bumped[7, 7] = min(1.0, bumped[7, 7] + 0.5)
        out = model.image_encoder(bumped[None]).data
        assert not np.allclose(base, out, atol=1e-12)

    def test_wrong_size_raises(self, model):
        with pytest.raises(ad.ShapeError):
            model.image_encoder(np.zeros((1, 8, 8)))


class TestTextEncoder:
    def test_identical_sentences_identical_embeddings(self, model):
        out = model.text_encoder.encode_sentences(["the lungs are clear", "the lungs are clear"])
        assert np.array_equal(out.data[0], out.data[1])

    def test_unknown_only_sentence_finite(self, model):
        z = model.text_encoder.encode_sentence("qqq www zzz")
        assert np.all(np.isfinite(z.data))

    def test_token_order_matters_with_positions(self, model):
        a = model.text_encoder.encode_sentence("alpha beta ring clear")
        b = model.text_encoder.encode_sentence("clear ring beta alpha")
        assert not np.allclose(a.data, b.data, atol=1e-9)

    def test_batched_matches_single(self, model):
        texts = ["the lungs are clear", "no alpha opacity seen today"]
        batched = model.text_encoder.encode_sentences(texts).data
        singles = [model.text_encoder.encode_sentence(t).data for t in texts]
        for got, want in zip(batched, singles):
            assert np.allclose(got, want, atol=1e-12)

    def test_empty_text_raises(self, model):
        with pytest.raises(ValueError):
            model.text_encoder.encode_sentence("...")

    def test_positions_alternate_sin_cos(self):
        pos = sinusoidal_positions(4, 6)
        assert pos.shape == (4, 6)
        assert np.allclose(pos[0, 0::2], 0.0)
        assert np.allclose(pos[0, 1::2], 1.0)


class TestAttentionPool:
    def test_single_sentence_weight_one(self, model):
        rng = np.random.default_rng(3)
        z = ad.Tensor(rng.standard_normal((1, CFG.d_enc)))
        pooled, weights = model.attention_pool.pool(z, return_weights=True)
        assert np.allclose(weights.data, 1.0)
        want = z.data @ model.attention_pool.wv.data
        assert np.allclose(pooled.data, want[0], atol=1e-12)

    def test_identical_embeddings_half_weights(self, model):
        rng = np.random.default_rng(4)
        row = rng.standard_normal(CFG.d_enc)
        z = ad.Tensor(np.stack([row, row]))
        _, weights = model.attention_pool.pool(z, return_weights=True)
        assert np.allclose(weights.data, 0.5, atol=1e-12)

    def test_weights_nonneg_sum_one_masked_zero(self, model):
        rng = np.random.default_rng(5)
        flat = ad.Tensor(rng.standard_normal((7, CFG.d_enc)))
        offsets = (0, 3, 4, 7)
        _, weights = model.attention_pool.pool_grouped(flat, offsets, return_weights=True)
        w = weights.data
        assert np.all(w >= 0)
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(w[1, 1:], 0.0)  # report 1 has one sentence; padding slots get zero

    def test_scalar_attention_oracle_n4(self, model):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((4, CFG.d_enc))
        pooled, weights = model.attention_pool.pool(ad.Tensor(z), return_weights=True)
        keys = z @ model.attention_pool.wk.data
        values = z @ model.attention_pool.wv.data
        w_want, pooled_want = oracles.attention_oracle(
            model.attention_pool.query.data.tolist(),
            keys.tolist(),
            values.tolist(),
            1.0 / np.sqrt(CFG.d_enc),
        )
        assert np.allclose(weights.data.ravel(), w_want, atol=1e-10)
        assert np.allclose(pooled.data, pooled_want, atol=1e-10)

    def test_all_masked_raises(self, model):
        z = ad.Tensor(np.ones((2, CFG.d_enc)))
        with pytest.raises(ValueError):
            model.attention_pool.pool(z, mask=np.array([False, False]))

    def test_convex_combination_of_values(self, model):
        rng = np.random.default_rng(7)
        z = rng.standard_normal((3, CFG.d_enc))
        pooled, weights = model.attention_pool.pool(ad.Tensor(z), return_weights=True)
        values = z @ model.attention_pool.wv.data
        recon = weights.data.ravel() @ values
        assert np.allclose(pooled.data, recon, atol=1e-12)


class TestProjections:
    def test_identity_initialized_heads_pass_through(self, vocab):
        cfg = EncoderConfig(d_enc=8, d_proj=8, d_ss=8, conv_channels=(2, 3), input_size=16)
        m = GlobalLocalModel(cfg, vocab, seed=1)
        for head in (m.heads.p_g, m.heads.p_l):
            head.w.data = np.eye(8)
            head.b.data = np.zeros(8)
        rng = np.random.default_rng(8)
        z = ad.Tensor(rng.standard_normal((3, 8)))
        assert np.allclose(m.heads.p_g(z).data, z.data)
        assert np.allclose(m.heads.p_l(z).data, z.data)

    def test_global_and_local_heads_differ_after_random_init(self, model):
        rng = np.random.default_rng(9)
        z = ad.Tensor(rng.standard_normal((4, CFG.d_enc)))
        assert not np.allclose(model.heads.p_g(z).data, model.heads.p_l(z).data, atol=1e-9)

    def test_head_layer_counts(self, model):
        assert len(model.heads.p_e.layers) == 3
        assert len(model.heads.p_p.layers) == 2

    def test_report_gradient_reaches_every_unmasked_sentence(self, model):
        rng = np.random.default_rng(10)
        flat = ad.Tensor(rng.standard_normal((5, CFG.d_enc)), requires_grad=True)
        pooled = model.attention_pool.pool_grouped(flat, (0, 2, 5))
        out = ad.sum_(model.heads.p_r(pooled))
        out.backward()
        norms = np.linalg.norm(flat.grad, axis=1)
        assert np.all(norms > 0)


class TestEndToEndModel:
    def test_bit_identical_bundles_under_seed(self, vocab):
        batch = batch_of([["the lungs are clear", "no alpha"], ["beta ring visible"]])
        outs = []
        for _ in range(2):
            m = GlobalLocalModel(CFG, vocab, seed=123)
            emb = m.embed_batch(batch)
            outs.append((emb.p_g.data, emb.p_l.data, emb.p_s.data, emb.p_r.data))
        for a, b in zip(*outs):
            assert np.array_equal(a, b)

    def test_no_dead_parameters_under_default_weights(self, model):
        batch = batch_of([["the lungs are clear", "no alpha opacity"], ["beta ring visible today"]])
        images = np.stack([r.image.pixels for r in batch.records])
        emb = model.embed_batch(batch)
        pred_a, enc_a = model.simsiam_branch(images)
        pred_b, enc_b = model.simsiam_branch(1.0 - images)
        aug_g, aug_l = model.project_images(1.0 - images)
        parts = {
            "local": L.local_loss(emb.p_l, emb.p_s, emb.offsets, model.temperatures.inv_tau_l),
            "global": L.global_loss(emb.p_g, emb.p_r, model.temperatures.inv_tau_g),
            "self_supervised": L.simsiam_loss(pred_a, enc_a, pred_b, enc_b),
            "mirrored": L.mirrored_loss(
                (aug_g, aug_l),
                (emb.p_g, emb.p_l),
                emb.p_s,
                emb.p_r,
                emb.offsets,
                model.temperatures.inv_tau_l,
                model.temperatures.inv_tau_g,
            ),
        }
        model.zero_grad()
        total, _ = L.total_loss(parts, L.LossWeights())
        total.backward()
        dead = [p.name for p in model.parameters() if p.grad is None or not np.any(p.grad != 0)]
        assert dead == []

    def test_temperature_clamp(self, vocab):
        m = GlobalLocalModel(CFG, vocab, seed=2)
        m.temperatures.log_inv_tau_l.data = np.asarray(np.log(500.0))
        m.temperatures.clamp()
        assert np.exp(m.temperatures.log_inv_tau_l.data) <= 100.0 + 1e-9
        assert m.temperatures.tau_l > 0
