"""Encoder/decoder Transformer that translates audio windows into joint-angle windows."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..audio.features import FEATURE_DIM
from ..autodiff import Dropout, Embedding, FeedForward, LayerNorm, Linear, Module
from ..autodiff import ops as T
from .base import POSE_DIM, PoseHead, SequenceModel, WindowBatch


@dataclass
class TransformerConfig:
    layers: int = 6
    heads: int = 8
    embed_dim: int = 128
    ff_dim: int = 2048
    dropout: float = 0.1
    window: int = 20
    position_vocab: int = 8001

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.position_vocab < 2:
            raise ValueError("position_vocab must leave room for the start token")


def make_padding_mask(valid_len, window: int) -> np.ndarray:
    """1 for real positions (``< valid_len``), 0 for right padding.

    Accepts a scalar or an array of lengths (one mask row per length).
    """
    lengths = np.asarray(valid_len)
    if np.any(lengths < 1) or np.any(lengths > window):
        raise ValueError(f"valid_len must lie in [1, {window}], got {valid_len}")
    return (np.arange(window) < lengths[..., None]).astype(np.int8)


def make_causal_mask(window: int) -> np.ndarray:
    """Entry (i, j) is 1 iff j <= i."""
    if window < 1:
        raise ValueError("window must be >= 1")
    return np.tril(np.ones((window, window), dtype=np.int8))


def additive_mask(mask: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Binary keep-mask to the additive form used inside attention (0 / -inf)."""
    return np.where(np.asarray(mask) > 0, 0.0, -np.inf).astype(dtype)


def attention(q, k, v, mask=None, dropout=None):
    """softmax((q k^T + mask) / sqrt(d)) v over the last two axes.

    ``q``, ``k``, ``v`` are ``(..., L, d)``; ``mask`` is additive and must
    broadcast to the ``(..., Lq, Lk)`` score shape.
    """
    d = q.shape[-1]
    scores = T.matmul(q, T.swapaxes(k, -1, -2))
    if mask is not None:
        scores = scores + mask
    weights = T.softmax(scores * (1.0 / math.sqrt(d)), axis=-1)
    if weights.flags is not None:
        raise ValueError("attention row has every key masked")
    if dropout is not None:
        weights = dropout(weights)
    return T.matmul(weights, v)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, dropout: float, rng: np.random.Generator):
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.drop = Dropout(dropout, rng)

    def _split(self, x):
        b, length, dim = x.shape
        return T.transpose(x.reshape(b, length, self.heads, dim // self.heads), (0, 2, 1, 3))

    def forward(self, query, memory, mask=None):
        b, length, dim = query.shape
        heads = attention(self._split(self.q(query)), self._split(self.k(memory)),
                          self._split(self.v(memory)), mask, self.drop)
        merged = T.transpose(heads, (0, 2, 1, 3)).reshape(b, length, dim)
        return self.out(merged)


class EncoderBlock(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator):
        self.norm_attn = LayerNorm(cfg.embed_dim)
        self.attn = MultiHeadAttention(cfg.embed_dim, cfg.heads, cfg.dropout, rng)
        self.norm_ff = LayerNorm(cfg.embed_dim)
        self.ff = FeedForward(cfg.embed_dim, cfg.ff_dim, cfg.dropout, rng)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x, pad_mask):
        h = self.norm_attn(x)
        x = x + self.drop(self.attn(h, h, pad_mask))
        return x + self.drop(self.ff(self.norm_ff(x)))


class DecoderBlock(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator):
        self.norm_self = LayerNorm(cfg.embed_dim)
        self.self_attn = MultiHeadAttention(cfg.embed_dim, cfg.heads, cfg.dropout, rng)
        self.norm_cross = LayerNorm(cfg.embed_dim)
        self.cross_attn = MultiHeadAttention(cfg.embed_dim, cfg.heads, cfg.dropout, rng)
        self.norm_ff = LayerNorm(cfg.embed_dim)
        self.ff = FeedForward(cfg.embed_dim, cfg.ff_dim, cfg.dropout, rng)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x, memory, causal_mask, pad_mask):
        h = self.norm_self(x)
        x = x + self.drop(self.self_attn(h, h, causal_mask))
        x = x + self.drop(self.cross_attn(self.norm_cross(x), memory, pad_mask))
        return x + self.drop(self.ff(self.norm_ff(x)))


class TransformerTranslator(SequenceModel):
    """Encoder over the audio window, decoder over the right-shifted pose window.

    One learned position table is shared by both sides and indexed by absolute
    frame index within the song; index 0 is the start token.
    """

    variant = "transformer"

    def __init__(self, config: TransformerConfig | None = None, seed: int = 0):
        self.config = cfg = config or TransformerConfig()
        rng = np.random.default_rng(seed)
        self.audio_embed = Linear(FEATURE_DIM, cfg.embed_dim, rng)
        self.pose_embed = Linear(POSE_DIM, cfg.embed_dim, rng)
        self.positions = Embedding(cfg.position_vocab, cfg.embed_dim, rng)
        self.drop = Dropout(cfg.dropout, rng)
        self.encoder = [EncoderBlock(cfg, rng) for _ in range(cfg.layers)]
        self.encoder_norm = LayerNorm(cfg.embed_dim)
        self.decoder = [DecoderBlock(cfg, rng) for _ in range(cfg.layers)]
        self.decoder_norm = LayerNorm(cfg.embed_dim)
        self.head = PoseHead(cfg.embed_dim, rng)

    def architecture(self) -> dict:
        return {"variant": self.variant, **asdict(self.config)}

    def _position(self, index):
        return self.positions(np.minimum(index, self.config.position_vocab - 1))

    def encode(self, audio, positions, pad_mask):
        dtype = self.audio_embed.weight.dtype
        x = self.audio_embed(T.Tensor(audio, dtype=dtype)) + self._position(positions)
        x = self.drop(x)
        for block in self.encoder:
            x = block(x, pad_mask)
        return self.encoder_norm(x)

    def decode(self, shifted_poses, positions, memory, causal_mask, pad_mask):
        dtype = self.pose_embed.weight.dtype
        x = self.pose_embed(T.Tensor(shifted_poses, dtype=dtype)) + self._position(positions)
        x = self.drop(x)
        for block in self.decoder:
            x = block(x, memory, causal_mask, pad_mask)
        return self.head(self.decoder_norm(x))

    def forward(self, batch: WindowBatch):
        dtype = self.audio_embed.weight.dtype
        window = batch.window
        # (B, 1, 1, K): broadcast over heads and query rows
        pad = additive_mask(make_padding_mask(batch.valid_len, window), dtype)[:, None, None, :]
        causal = additive_mask(make_causal_mask(window), dtype)
        memory = self.encode(batch.audio, batch.audio_positions, pad)
        return self.decode(batch.shifted_poses, batch.pose_positions, memory, causal, pad)
