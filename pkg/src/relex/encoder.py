"""Self-attention document encoder.

Token plus learned position embeddings feed a stack of residual blocks:
multi-head scaled dot-product attention (keys, values and queries from
separate ReLU affine maps), layer norm over the attention residual,
then a width-1 / width-5 / width-1 convolution stack whose interior
width is a multiple of the model width. Block k computes

    b_k = b_{k-1} + convs(LN(b_{k-1} + attention(b_{k-1})))

Padding positions are masked out of attention and zeroed after every
sub-step, so appending padding never changes real-token states.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor


@dataclass
class EncoderConfig:
    vocab_size: int
    d: int = 128
    blocks: int = 2
    heads: int = 4
    max_positions: int = 512
    conv_mult: int = 4           # interior conv width multiplier
    conv_mid_width: int = 5      # width-1 ablation removes the n-gram conv
    use_attention: bool = True   # False gives the conv-only ablation
    scale_by_head_dim: bool = False  # score scale 1/sqrt(d/H) instead of 1/sqrt(d)
    post_block_layer_norm: bool = False
    keep_word: float = 1.0       # token -> UNK swap, applied by the trainer
    keep_interior: float = 1.0
    keep_final: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"model width {self.d} not divisible by {self.heads} heads")
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if self.conv_mid_width % 2 == 0:
            raise ValueError("middle conv width must be odd")
        for name in ("keep_word", "keep_interior", "keep_final"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator,
                        ps: ParamSet | None = None, prefix: str = "enc.") -> ParamSet:
    """Allocate all encoder tensors: N(0, 0.01) embeddings, fan-in
    uniform affine/conv maps, unit layer-norm gains."""
    ps = ps if ps is not None else ParamSet()
    dt = cfg.np_dtype
    d, hd = cfg.d, cfg.d // cfg.heads
    ps.add(prefix + "tok_emb", rng.normal(0.0, 0.01, (cfg.vocab_size, d)).astype(dt))
    ps.add(prefix + "pos_emb", rng.normal(0.0, 0.01, (cfg.max_positions, d)).astype(dt))
    ps.add(prefix + "pos_fallback", rng.normal(0.0, 0.01, (1, d)).astype(dt))
    inner = cfg.conv_mult * d
    for k in range(cfg.blocks):
        b = f"{prefix}block{k}."
        for h in range(cfg.heads):
            for role in ("q", "k", "v"):
                ps.add(f"{b}head{h}.w{role}", _uniform(rng, d, (d, hd), dt))
                ps.add(f"{b}head{h}.b{role}", np.zeros(hd, dtype=dt))
        ps.add(b + "ln_gain", np.ones(d, dtype=dt))
        ps.add(b + "ln_bias", np.zeros(d, dtype=dt))
        ps.add(b + "conv_in.k", _uniform(rng, d, (1, d, inner), dt))
        ps.add(b + "conv_in.b", np.zeros(inner, dtype=dt))
        ps.add(b + "conv_mid.k",
               _uniform(rng, cfg.conv_mid_width * inner,
                        (cfg.conv_mid_width, inner, inner), dt))
        ps.add(b + "conv_mid.b", np.zeros(inner, dtype=dt))
        ps.add(b + "conv_out.k", _uniform(rng, inner, (1, inner, d), dt))
        ps.add(b + "conv_out.b", np.zeros(d, dtype=dt))
        if cfg.post_block_layer_norm:
            ps.add(b + "ln2_gain", np.ones(d, dtype=dt))
            ps.add(b + "ln2_bias", np.zeros(d, dtype=dt))
    return ps


def dropout(x: Tensor, keep: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/keep at train time."""
    if not train or keep >= 1.0 or rng is None:
        return x
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / np.asarray(keep, x.data.dtype)
    return ad.mul(x, Tensor(mask))


def embed(token_ids, cfg: EncoderConfig, params: ParamSet,
          prefix: str = "enc.") -> Tensor:
    """Token embedding plus position embedding; positions past the table
    use the single trained fallback vector."""
    ids = np.asarray(token_ids, dtype=np.int64)
    tok = ad.gather_rows(params[prefix + "tok_emb"], ids)
    table = ad.concat([params[prefix + "pos_emb"], params[prefix + "pos_fallback"]],
                      axis=0)
    positions = np.minimum(np.arange(len(ids)), cfg.max_positions)
    pos = ad.gather_rows(table, positions)
    return ad.add(tok, pos)


def multi_head_attention(states: Tensor, cfg: EncoderConfig, params: ParamSet,
                         block: int, mask: np.ndarray | None = None,
                         prefix: str = "enc.") -> Tensor:
    """Scaled dot-product attention over all tokens, one pass per head.

    Per head: q/k/v come from ReLU affine maps of the input, weights are
    softmax_j(q_i . k_j / scale), masked key positions are excluded, and
    the head outputs are concatenated. Returns LN(states + concat).
    """
    b = f"{prefix}block{block}."
    scale = float(np.sqrt(cfg.d // cfg.heads if cfg.scale_by_head_dim else cfg.d))
    key_mask = None if mask is None else np.broadcast_to(
        np.asarray(mask, bool)[None, :], (states.shape[0], states.shape[0]))
    head_outputs = []
    for h in range(cfg.heads):
        hp = f"{b}head{h}."
        q = ad.relu(ad.add(ad.matmul(states, params[hp + "wq"]), params[hp + "bq"]))
        k = ad.relu(ad.add(ad.matmul(states, params[hp + "wk"]), params[hp + "bk"]))
        v = ad.relu(ad.add(ad.matmul(states, params[hp + "wv"]), params[hp + "bv"]))
        logits = ad.mul(ad.matmul(q, ad.transpose(k, (1, 0))), 1.0 / scale)
        weights = ad.softmax(logits, axis=1, mask=key_mask)
        head_outputs.append(ad.matmul(weights, v))
    merged = ad.concat(head_outputs, axis=1)
    return ad.layer_norm(ad.add(states, merged),
                         params[b + "ln_gain"], params[b + "ln_bias"])


def conv_block(states: Tensor, cfg: EncoderConfig, params: ParamSet, block: int,
               prefix: str = "enc.") -> Tensor:
    """ReLU(width-1) -> ReLU(width-w) -> width-1 back to model width."""
    b = f"{prefix}block{block}."
    t0 = ad.relu(ad.conv1d(states, params[b + "conv_in.k"], params[b + "conv_in.b"]))
    t1 = ad.relu(ad.conv1d(t0, params[b + "conv_mid.k"], params[b + "conv_mid.b"]))
    return ad.conv1d(t1, params[b + "conv_out.k"], params[b + "conv_out.b"])


def encode_document(token_ids, cfg: EncoderConfig, params: ParamSet,
                    mask: np.ndarray | None = None,
                    rng: np.random.Generator | None = None, train: bool = False,
                    prefix: str = "enc.") -> Tensor:
    """Contextual token states after all residual blocks.

    ``mask`` marks padding positions (True = padding); padded states are
    zeroed after embedding and after every block so they can never leak
    into real tokens through the convolutions.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size < 1:
        raise ValueError("encode_document: empty document")
    keep = None
    if mask is not None:
        keep = Tensor((~np.asarray(mask, bool))[:, None].astype(cfg.np_dtype))
    states = embed(ids, cfg, params, prefix)
    states = dropout(states, cfg.keep_interior, rng, train)
    if keep is not None:
        states = ad.mul(states, keep)
    for k in range(cfg.blocks):
        if cfg.use_attention:
            m = multi_head_attention(states, cfg, params, k, mask, prefix)
        else:
            b = f"{prefix}block{k}."
            m = ad.layer_norm(states, params[b + "ln_gain"], params[b + "ln_bias"])
        if keep is not None:
            m = ad.mul(m, keep)
        contribution = conv_block(m, cfg, params, k, prefix)
        contribution = dropout(contribution, cfg.keep_interior, rng, train)
        if keep is not None:
            contribution = ad.mul(contribution, keep)
        states = ad.add(states, contribution)
        if cfg.post_block_layer_norm:
            b = f"{prefix}block{k}."
            states = ad.layer_norm(states, params[b + "ln2_gain"], params[b + "ln2_bias"])
            if keep is not None:
                states = ad.mul(states, keep)
    return states


def load_word_vectors(path, vocab_tokens: dict[str, int], d: int,
                      rng: np.random.Generator,
                      dtype=np.float32) -> tuple[np.ndarray, int]:
    """Pre-trained embedding import: 'token v1 .. vd' lines.

    Tokens absent from the file keep their random N(0, 0.01) init.
    Returns the table and the number of tokens that matched.
    """
    table = rng.normal(0.0, 0.01, (len(vocab_tokens), d)).astype(dtype)
    matched = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != d + 1:
                continue
            idx = vocab_tokens.get(parts[0])
            if idx is None:
                continue
            table[idx] = np.asarray([float(v) for v in parts[1:]], dtype=dtype)
            matched += 1
    return table, matched
