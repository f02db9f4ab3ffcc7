"""Small transformer stacks shared by every encoder and decoder here.

One weight layout serves three call patterns: a bidirectional encoder pooled
at a trailing summary token, a causal next-token decoder, and the decoder
variant conditioned on a latent row vector.  All forwards run over a single
sequence laid out as a (length, width) matrix; a block-diagonal batched
decoder forward packs several sequences into one matrix so training steps
pay for one tape instead of many.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    add_rowvec,
    affine,
    dropout,
    gather_rows,
    gelu,
    layer_norm,
    matmul_nt,
    multihead_attention,
)

NEG_INF = -1e30  # additive mask value; underflows to exact zero after softmax


@dataclass(frozen=True)
class TransformerConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    max_len: int = 192
    dropout: float = 0.1
    causal: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ShapeError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout rate {self.dropout} outside [0, 1)")
        if self.max_len < 1 or self.n_layers < 1:
            raise ValueError("max_len and n_layers must be positive")


def init_params(config: TransformerConfig, vocab_size: int,
                rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh weights: uniform(-0.1, 0.1) matrices, zero biases, unit gains.

    The output projection is the transpose of the token embedding, so no
    separate tensor exists for it.
    """
    d, f = config.d_model, config.d_ff

    def u(*shape):
        return Tensor(rng.uniform(-0.1, 0.1, size=shape))

    p = {"tok_emb": u(vocab_size, d), "pos_emb": u(config.max_len, d)}
    for i in range(config.n_layers):
        pre = f"layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + "attn." + name] = u(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + "attn." + name] = Tensor(np.zeros((1, d)))
        p[pre + "ffn.w1"] = u(d, f)
        p[pre + "ffn.b1"] = Tensor(np.zeros((1, f)))
        p[pre + "ffn.w2"] = u(f, d)
        p[pre + "ffn.b2"] = Tensor(np.zeros((1, d)))
        for ln in ("ln1", "ln2"):
            p[pre + ln + ".g"] = Tensor(np.ones((1, d)))
            p[pre + ln + ".b"] = Tensor(np.zeros((1, d)))
    return p


_MASK_CACHE: dict[tuple, np.ndarray] = {}


def causal_mask(n: int) -> np.ndarray:
    got = _MASK_CACHE.get(("c", n))
    if got is None:
        got = np.where(np.tril(np.ones((n, n), dtype=bool)), 0.0, NEG_INF)
        _MASK_CACHE[("c", n)] = got
    return got


def block_causal_mask(lengths: tuple) -> np.ndarray:
    """Causal attention inside each segment, nothing across segments."""
    key = ("b",) + tuple(lengths)
    got = _MASK_CACHE.get(key)
    if got is None:
        total = sum(lengths)
        got = np.full((total, total), NEG_INF)
        off = 0
        for n in lengths:
            got[off:off + n, off:off + n] = causal_mask(n)
            off += n
        _MASK_CACHE[key] = got
    return got


def pad_columns_mask(n: int, real: np.ndarray) -> np.ndarray:
    """Full attention restricted to columns flagged real (shape (n,) bool)."""
    m = np.zeros((n, n))
    m[:, ~np.asarray(real, dtype=bool)] = NEG_INF
    return m


def _check_len(n: int, config: TransformerConfig) -> None:
    if n > config.max_len:
        raise ShapeError(f"sequence length {n} exceeds max_len {config.max_len}")
    if n < 1:
        raise ShapeError("empty sequence")


def _stack(params: dict, config: TransformerConfig, h: Tensor,
           mask: np.ndarray | None, z: Tensor | None,
           train: bool, rng) -> Tensor:
    """Run the block stack over hidden rows h; returns top-layer rows.

    z, when given, is broadcast-added to every query, key and value right
    after their projections in every layer.  Wiring per block: attention,
    residual, layer norm, feed-forward, residual, layer norm.
    """
    p = config.dropout if train else 0.0
    for i in range(config.n_layers):
        pre = f"layers.{i}."
        q = affine(h, params[pre + "attn.wq"], params[pre + "attn.bq"])
        k = affine(h, params[pre + "attn.wk"], params[pre + "attn.bk"])
        v = affine(h, params[pre + "attn.wv"], params[pre + "attn.bv"])
        if z is not None:
            q, k, v = (_add_latent(t, z) for t in (q, k, v))
        a = multihead_attention(q, k, v, config.n_heads, mask)
        a = affine(a, params[pre + "attn.wo"], params[pre + "attn.bo"])
        if p > 0.0:
            a = dropout(a, p, rng)
        g = layer_norm(add(a, h), params[pre + "ln1.g"], params[pre + "ln1.b"])
        f = gelu(affine(g, params[pre + "ffn.w1"], params[pre + "ffn.b1"]))
        f = affine(f, params[pre + "ffn.w2"], params[pre + "ffn.b2"])
        if p > 0.0:
            f = dropout(f, p, rng)
        h = layer_norm(add(f, g), params[pre + "ln2.g"], params[pre + "ln2.b"])
    return h


def _add_latent(t: Tensor, z: Tensor) -> Tensor:
    # z is either one row broadcast over all positions, or one row per position
    if z.shape[0] == 1:
        return add_rowvec(t, z)
    return add(t, z)


def _check_latent(z: Tensor, config: TransformerConfig, n_rows: int) -> None:
    if z.shape[1] != config.d_model:
        raise ShapeError(
            f"latent width {z.shape[1]} != d_model {config.d_model}")
    if z.shape[0] not in (1, n_rows):
        raise ShapeError(
            f"latent rows {z.shape[0]} not 1 or sequence length {n_rows}")


def _embed(params: dict, config: TransformerConfig, token_ids,
           positions=None) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    if positions is None:
        positions = np.arange(len(ids))
    return add(gather_rows(params["tok_emb"], ids),
               gather_rows(params["pos_emb"], positions))


def encoder_forward(params: dict, config: TransformerConfig, token_ids,
                    cls_id: int | None = None, real=None,
                    train: bool = False, rng=None) -> Tensor:
    """Bidirectional pass pooled at the final position; returns (1, d_model).

    The last token is the summary slot and must be cls_id when given.  real,
    when given, flags genuine positions; padded columns are masked out of
    attention and the final position must be genuine.
    """
    if config.causal:
        raise ValueError("encoder_forward needs a bidirectional config")
    ids = np.asarray(token_ids, dtype=np.int64)
    _check_len(len(ids), config)
    if cls_id is not None and ids[-1] != cls_id:
        raise ShapeError(
            f"last token id {ids[-1]} is not the summary token {cls_id}")
    mask = None
    if real is not None:
        real = np.asarray(real, dtype=bool)
        if real.shape != ids.shape:
            raise ShapeError("real-position flags must match sequence shape")
        if not real[-1]:
            raise ShapeError("summary position flagged as padding")
        mask = pad_columns_mask(len(ids), real)
    h = _embed(params, config, ids)
    if train and config.dropout > 0.0:
        h = dropout(h, config.dropout, rng)
    h = _stack(params, config, h, mask, None, train, rng)
    return gather_rows(h, np.array([len(ids) - 1]))


def decoder_forward(params: dict, config: TransformerConfig, token_ids,
                    z: Tensor | None = None, train: bool = False,
                    rng=None) -> Tensor:
    """Causal pass over one sequence; returns next-token logits (T, vocab).

    With z given, the latent row joins the computation at three sites: summed
    into every input embedding, into every projected query, key and value,
    and into every top-layer hidden row before the tied output projection.
    """
    if not config.causal:
        raise ValueError("decoder_forward needs a causal config")
    ids = np.asarray(token_ids, dtype=np.int64)
    _check_len(len(ids), config)
    if z is not None:
        _check_latent(z, config, len(ids))
    h = _embed(params, config, ids)
    if z is not None:
        h = _add_latent(h, z)
    if train and config.dropout > 0.0:
        h = dropout(h, config.dropout, rng)
    h = _stack(params, config, h, causal_mask(len(ids)), z, train, rng)
    if z is not None:
        h = _add_latent(h, z)
    return matmul_nt(h, params["tok_emb"])


def batch_decoder_forward(params: dict, config: TransformerConfig, seqs,
                          z_rows: Tensor | None = None, train: bool = False,
                          rng=None) -> Tensor:
    """Causal pass over several sequences packed into one row matrix.

    seqs is a list of id sequences; rows are concatenated, positions restart
    at zero inside each one, and the mask keeps attention within each
    segment.  z_rows, when given, carries one latent row per packed row.
    Returns logits (sum of lengths, vocab).
    """
    if not config.causal:
        raise ValueError("batch_decoder_forward needs a causal config")
    lengths = tuple(len(s) for s in seqs)
    if not lengths:
        raise ShapeError("no sequences to pack")
    for n in lengths:
        _check_len(n, config)
    ids = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
    positions = np.concatenate([np.arange(n) for n in lengths])
    if z_rows is not None:
        _check_latent(z_rows, config, len(ids))
    h = _embed(params, config, ids, positions)
    if z_rows is not None:
        h = _add_latent(h, z_rows)
    if train and config.dropout > 0.0:
        h = dropout(h, config.dropout, rng)
    h = _stack(params, config, h, block_causal_mask(lengths), z_rows,
               train, rng)
    if z_rows is not None:
        h = _add_latent(h, z_rows)
    return matmul_nt(h, params["tok_emb"])


def attention_weight_matrix(params: dict, config: TransformerConfig,
                            token_ids, layer: int = 0) -> np.ndarray:
    """Softmax attention weights of one layer, for mask inspection."""
    from .autodiff import attention_probs, no_tape

    ids = np.asarray(token_ids, dtype=np.int64)
    _check_len(len(ids), config)
    mask = causal_mask(len(ids)) if config.causal else None
    with no_tape():
        h = _embed(params, config, ids)
        for i in range(config.n_layers):
            pre = f"layers.{i}."
            q = affine(h, params[pre + "attn.wq"], params[pre + "attn.bq"])
            k = affine(h, params[pre + "attn.wk"], params[pre + "attn.bk"])
            v = affine(h, params[pre + "attn.wv"], params[pre + "attn.bv"])
            if i == layer:
                return attention_probs(q.data, k.data, config.n_heads, mask)
            a = multihead_attention(q, k, v, config.n_heads, mask)
            a = affine(a, params[pre + "attn.wo"], params[pre + "attn.bo"])
            g = layer_norm(add(a, h), params[pre + "ln1.g"],
                           params[pre + "ln1.b"])
            f = gelu(affine(g, params[pre + "ffn.w1"], params[pre + "ffn.b1"]))
            f = affine(f, params[pre + "ffn.w2"], params[pre + "ffn.b2"])
            h = layer_norm(add(f, g), params[pre + "ln2.g"],
                           params[pre + "ln2.b"])
    raise ValueError(f"layer {layer} outside 0..{config.n_layers - 1}")
