"""Toy dual encoders: conv image stack, attention text stack, pooling, heads.

The image path is three stride-2 convolutions followed by global average
pooling, giving one vector per image that is then projected twice (global
and local spaces). The text path embeds tokens, applies one self-attention
block with sinusoidal positions, and mean-pools over tokens. Report
vectors come from attention pooling over the report's sentence vectors.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from glocal import autodiff as ad
from glocal.data import Batch

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; punctuation separates."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token-to-id map with reserved PAD=0 and UNK=1."""

    def __init__(self, tokens: list[str]):
        self.tokens = [PAD_TOKEN, UNK_TOKEN] + [t for t in tokens if t not in (PAD_TOKEN, UNK_TOKEN)]
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, sentences) -> "Vocabulary":
        seen = set()
        for s in sentences:
            seen.update(tokenize(s))
        return cls(sorted(seen))

    def encode(self, text: str) -> list[int]:
        toks = tokenize(text)
        if not toks:
            raise ValueError(f"no tokens in text {text!r}")
        return [self.index.get(t, UNK_ID) for t in toks]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError(f"{path}: first two vocabulary entries must be {PAD_TOKEN}, {UNK_TOKEN}")
        vocab = cls.__new__(cls)
        vocab.tokens = tokens
        vocab.index = {t: i for i, t in enumerate(tokens)}
        return vocab


def sinusoidal_positions(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Fixed transformer-style position codes, (length, dim)."""
    pos = np.arange(length, dtype=dtype)[:, None]
    i = np.arange(dim, dtype=dtype)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    out = np.zeros((length, dim), dtype=dtype)
    out[:, 0::2] = np.sin(angle[:, 0::2])
    out[:, 1::2] = np.cos(angle[:, 1::2])
    return out


@dataclass
class EncoderConfig:
    d_enc: int = 64
    d_proj: int = 32
    d_ss: int = 32
    conv_channels: tuple[int, int] = (8, 16)
    input_size: int = 64
    dtype: str = "float64"

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Linear:
    def __init__(self, rng, d_in: int, d_out: int, name: str, dtype):
        self.w = ad.Parameter(_glorot(rng, d_in, d_out, (d_in, d_out), dtype), name=f"{name}.w")
        self.b = ad.Parameter(np.zeros(d_out, dtype=dtype), name=f"{name}.b")

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


class Perceptron:
    """Stack of affine layers with ReLU between (not after) them."""

    def __init__(self, rng, dims: list[int], name: str, dtype):
        self.layers = [Linear(rng, dims[i], dims[i + 1], f"{name}.l{i}", dtype) for i in range(len(dims) - 1)]

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x

    def parameters(self):
        return [p for l in self.layers for p in l.parameters()]


class ImageEncoder:
    """Three stride-2 conv stages then global average pooling to d_enc."""

    def __init__(self, rng: np.random.Generator, config: EncoderConfig):
        c1, c2 = config.conv_channels
        c3 = config.d_enc
        dt = config.np_dtype
        self.config = config

        def conv_init(cin, cout, name):
            fan_in = cin * 9
            w = (rng.standard_normal((cout, cin, 3, 3)) * np.sqrt(2.0 / fan_in)).astype(dt)
            return (
                ad.Parameter(w, name=f"{name}.w"),
                ad.Parameter(np.zeros(cout, dtype=dt), name=f"{name}.b"),
            )

        self.w1, self.b1 = conv_init(1, c1, "image_encoder.conv1")
        self.w2, self.b2 = conv_init(c1, c2, "image_encoder.conv2")
        self.w3, self.b3 = conv_init(c2, c3, "image_encoder.conv3")

    def __call__(self, images: np.ndarray) -> ad.Tensor:
        """images: (B, H, W) in [0,1] -> (B, d_enc)."""
        if images.ndim != 3 or images.shape[1:] != (self.config.input_size, self.config.input_size):
            raise ad.ShapeError(
                f"expected (B, {self.config.input_size}, {self.config.input_size}) images, got {images.shape}"
            )
        x = ad.Tensor(np.asarray(images, dtype=self.config.np_dtype)[:, None, :, :])
        x = ad.relu(ad.conv2d(x, self.w1, self.b1, stride=2, padding=1))
        x = ad.relu(ad.conv2d(x, self.w2, self.b2, stride=2, padding=1))
        x = ad.relu(ad.conv2d(x, self.w3, self.b3, stride=2, padding=1))
        return ad.global_avg_pool(x)

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


class TextEncoder:
    """Token embeddings + one self-attention block + mean over tokens."""

    def __init__(self, rng: np.random.Generator, vocab: Vocabulary, config: EncoderConfig):
        d = config.d_enc
        dt = config.np_dtype
        self.vocab = vocab
        self.config = config
        self.embedding = ad.Parameter(
            (rng.standard_normal((len(vocab), d)) * 0.02).astype(dt), name="text_encoder.embedding"
        )
        self.wq = ad.Parameter(_glorot(rng, d, d, (d, d), dt), name="text_encoder.wq")
        self.wk = ad.Parameter(_glorot(rng, d, d, (d, d), dt), name="text_encoder.wk")
        self.wv = ad.Parameter(_glorot(rng, d, d, (d, d), dt), name="text_encoder.wv")
        self._pos_cache: dict[int, np.ndarray] = {}

    def _positions(self, length: int) -> np.ndarray:
        if length not in self._pos_cache:
            self._pos_cache[length] = sinusoidal_positions(length, self.config.d_enc, self.config.np_dtype)
        return self._pos_cache[length]

    def encode_ids(self, ids: np.ndarray, mask: np.ndarray) -> ad.Tensor:
        """ids, mask: (S, T); returns (S, d_enc) sentence vectors."""
        d = self.config.d_enc
        e = ad.gather_rows(self.embedding, ids)  # (S, T, d)
        e = ad.add(e, ad.Tensor(self._positions(ids.shape[1])))
        q = ad.matmul(e, self.wq)
        k = ad.matmul(e, self.wk)
        v = ad.matmul(e, self.wv)
        scores = ad.mul(ad.matmul(q, ad.swapaxes(k, 1, 2)), 1.0 / np.sqrt(d))
        key_mask = np.where(mask[:, None, :], 0.0, -np.inf)
        attn = ad.softmax(ad.add(scores, ad.Tensor(key_mask)), axis=-1)
        y = ad.add(e, ad.matmul(attn, v))
        m3 = mask[:, :, None].astype(y.dtype)
        counts = mask.sum(axis=1, keepdims=True).astype(y.dtype)
        return ad.mul(ad.sum_(ad.mul(y, ad.Tensor(m3)), axis=1), ad.Tensor(1.0 / counts))

    def encode_sentences(self, sentences: list[str]) -> ad.Tensor:
        """Batch-encode texts; returns (len(sentences), d_enc)."""
        if not sentences:
            raise ValueError("no sentences to encode")
        id_lists = [self.vocab.encode(s) for s in sentences]
        t_max = max(len(ids) for ids in id_lists)
        ids = np.full((len(id_lists), t_max), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(id_lists), t_max), dtype=bool)
        for i, row in enumerate(id_lists):
            ids[i, : len(row)] = row
            mask[i, : len(row)] = True
        return self.encode_ids(ids, mask)

    def encode_sentence(self, sentence: str) -> ad.Tensor:
        """Single text -> (d_enc,) vector."""
        return ad.reshape(self.encode_sentences([sentence]), (self.config.d_enc,))

    def parameters(self):
        return [self.embedding, self.wq, self.wk, self.wv]


class AttentionPool:
    """Learned-query scaled dot-product pooling over sentence vectors."""

    def __init__(self, rng: np.random.Generator, config: EncoderConfig):
        d = config.d_enc
        dt = config.np_dtype
        self.config = config
        self.query = ad.Parameter((rng.standard_normal(d) * (1.0 / np.sqrt(d))).astype(dt), name="attention_pool.query")
        self.wk = ad.Parameter(_glorot(rng, d, d, (d, d), dt), name="attention_pool.wk")
        self.wv = ad.Parameter(_glorot(rng, d, d, (d, d), dt), name="attention_pool.wv")

    def pool_grouped(self, flat: ad.Tensor, offsets, return_weights: bool = False):
        """Pool flat (M, d) sentence vectors into (N, d) report vectors.

        ``offsets`` has length N+1 and partitions the rows of ``flat``.
        """
        n = len(offsets) - 1
        counts = [offsets[i + 1] - offsets[i] for i in range(n)]
        if min(counts) < 1:
            raise ValueError("every report needs at least one sentence")
        n_max = max(counts)
        index = np.zeros((n, n_max), dtype=np.int64)
        mask = np.zeros((n, n_max), dtype=bool)
        for i in range(n):
            index[i, : counts[i]] = np.arange(offsets[i], offsets[i + 1])
            mask[i, : counts[i]] = True
        grouped = ad.gather_rows(flat, index)  # (N, n_max, d)
        keys = ad.matmul(grouped, self.wk)
        values = ad.matmul(grouped, self.wv)
        logits = ad.mul(ad.matmul(keys, self.query), 1.0 / np.sqrt(self.config.d_enc))  # (N, n_max)
        logits = ad.add(logits, ad.Tensor(np.where(mask, 0.0, -np.inf)))
        weights = ad.softmax(logits, axis=-1)
        w3 = ad.reshape(weights, (n, n_max, 1))
        pooled = ad.sum_(ad.mul(w3, values), axis=1)
        if return_weights:
            return pooled, weights
        return pooled

    def pool(self, sentence_embeddings: ad.Tensor, mask: np.ndarray | None = None, return_weights: bool = False):
        """Pool one report's (n, d) sentence matrix into a (d,) vector."""
        n = sentence_embeddings.shape[0]
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if not mask.any():
                raise ValueError("all sentences masked")
            keep = np.flatnonzero(mask)
            sentence_embeddings = ad.gather_rows(sentence_embeddings, keep)
            n = len(keep)
        out = self.pool_grouped(sentence_embeddings, (0, n), return_weights=return_weights)
        if return_weights:
            pooled, weights = out
            return ad.reshape(pooled, (self.config.d_enc,)), weights
        return ad.reshape(out, (self.config.d_enc,))

    def parameters(self):
        return [self.query, self.wk, self.wv]


class ProjectionHeads:
    """The six heads: linear p_G/p_L/p_S/p_R, 3-layer p_E, 2-layer p_P."""

    def __init__(self, rng: np.random.Generator, config: EncoderConfig):
        d, dp, ds = config.d_enc, config.d_proj, config.d_ss
        dt = config.np_dtype
        self.p_g = Linear(rng, d, dp, "heads.global", dt)
        self.p_l = Linear(rng, d, dp, "heads.local", dt)
        self.p_s = Linear(rng, d, dp, "heads.sentence", dt)
        self.p_r = Linear(rng, d, dp, "heads.report", dt)
        self.p_e = Perceptron(rng, [d, ds, ds, ds], "heads.ss_encoder", dt)  # 3 affine layers
        self.p_p = Perceptron(rng, [ds, ds, ds], "heads.ss_predictor", dt)  # 2 affine layers

    def parameters(self):
        return (
            self.p_g.parameters()
            + self.p_l.parameters()
            + self.p_s.parameters()
            + self.p_r.parameters()
            + self.p_e.parameters()
            + self.p_p.parameters()
        )


@dataclass
class BatchEmbeddings:
    """Projected batch tensors: images (global/local), sentences, reports."""

    p_g: ad.Tensor  # (N, d_proj)
    p_l: ad.Tensor  # (N, d_proj)
    p_s: ad.Tensor  # (M, d_proj), M = total sentences
    p_r: ad.Tensor  # (N, d_proj)
    offsets: tuple[int, ...]  # length N+1


class Temperatures:
    """Learned log-inverse temperatures for the local and global spaces."""

    MAX_INV_TAU = 100.0

    def __init__(self, init_tau: float = 0.07, dtype=np.float64):
        self.log_inv_tau_l = ad.Parameter(np.asarray(np.log(1.0 / init_tau), dtype=dtype), name="temperatures.local")
        self.log_inv_tau_g = ad.Parameter(np.asarray(np.log(1.0 / init_tau), dtype=dtype), name="temperatures.global")

    @property
    def inv_tau_l(self) -> ad.Tensor:
        return ad.exp(self.log_inv_tau_l)

    @property
    def inv_tau_g(self) -> ad.Tensor:
        return ad.exp(self.log_inv_tau_g)

    @property
    def tau_l(self) -> float:
        return float(np.exp(-self.log_inv_tau_l.data))

    @property
    def tau_g(self) -> float:
        return float(np.exp(-self.log_inv_tau_g.data))

    def clamp(self) -> None:
        """Keep 1/tau in (0, 100] after an optimizer step."""
        cap = np.log(self.MAX_INV_TAU)
        for p in (self.log_inv_tau_l, self.log_inv_tau_g):
            if p.data > cap:
                p.data = np.asarray(cap, dtype=p.data.dtype)

    def parameters(self):
        return [self.log_inv_tau_l, self.log_inv_tau_g]


class GlobalLocalModel:
    """All trainable pieces plus the embedding pipelines the losses consume."""

    def __init__(self, config: EncoderConfig, vocab: Vocabulary, seed: int = 0, init_tau: float = 0.07):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xE11C0DE)))
        self.config = config
        self.vocab = vocab
        self.image_encoder = ImageEncoder(rng, config)
        self.text_encoder = TextEncoder(rng, vocab, config)
        self.attention_pool = AttentionPool(rng, config)
        self.heads = ProjectionHeads(rng, config)
        self.temperatures = Temperatures(init_tau=init_tau, dtype=config.np_dtype)

    def parameters(self) -> list[ad.Parameter]:
        params = (
            self.image_encoder.parameters()
            + self.text_encoder.parameters()
            + self.attention_pool.parameters()
            + self.heads.parameters()
            + self.temperatures.parameters()
        )
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def project_images(self, images: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
        """(B,H,W) pixels -> (p_G, p_L), each (B, d_proj)."""
        z = self.image_encoder(images)
        return self.heads.p_g(z), self.heads.p_l(z)

    def simsiam_branch(self, images: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
        """(B,H,W) pixels -> (prediction, encoding), each (B, d_ss)."""
        z = self.image_encoder(images)
        enc = self.heads.p_e(z)
        pred = self.heads.p_p(enc)
        return pred, enc

    def embed_text(self, batch: Batch) -> tuple[ad.Tensor, ad.Tensor]:
        """Batch text side: (p_S (M, d_proj), p_R (N, d_proj))."""
        flat = self.text_encoder.encode_sentences(batch.sentences)
        p_s = self.heads.p_s(flat)
        pooled = self.attention_pool.pool_grouped(flat, batch.sentence_offsets)
        p_r = self.heads.p_r(pooled)
        return p_s, p_r

    def embed_batch(self, batch: Batch, images: np.ndarray | None = None) -> BatchEmbeddings:
        """Full clean-pass embeddings for one batch.

        ``images`` overrides the batch pixels (used for augmented passes,
        which reuse the clean pass's text embeddings).
        """
        if images is None:
            images = np.stack([r.image.pixels for r in batch.records])
        p_g, p_l = self.project_images(images)
        p_s, p_r = self.embed_text(batch)
        return BatchEmbeddings(p_g=p_g, p_l=p_l, p_s=p_s, p_r=p_r, offsets=batch.sentence_offsets)
