"""
Toy-scale BART-shaped encoder-decoder

Bidirectional transformer encoder over the document, causal transformer
decoder with cross-attention, learned positional embeddings, post-layer-norm
blocks and a token embedding shared between encoder, decoder and output
projection (when tied).
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from semsim import tensor_autodiff as ad
from semsim.errors import ConfigError, DataError, LengthError
from semsim.tensor_autodiff import Tensor
from semsim.tokenizer import TokenSequence

logger = logging.getLogger(__name__)

INIT_RANGE = 0.08


@dataclass
class ModelConfig:
    vocab_size: int = 1000
    encoder_layers: int = 2
    decoder_layers: int = 2
    d_model: int = 64
    heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1
    max_positions: int = 256
    tie_embeddings: bool = True
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2
    precision: int = 32

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.precision not in ad.PRECISIONS:
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SeqModel:
    """Parameters of the encoder-decoder plus its dropout RNG and mode flag"""
    config: ModelConfig
    params: Dict[str, Tensor]
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    training: bool = False

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def train(self) -> "SeqModel":
        self.training = True
        return self

    def eval(self) -> "SeqModel":
        self.training = False
        return self


@dataclass
class EncoderState:
    """Contextual document representations [B, S, D] and the source key mask [B, S]"""
    states: Tensor
    mask: np.ndarray

    @property
    def length(self) -> int:
        return self.states.shape[1]


# ---------------------------------------------------------------------------
# Parameter construction

def _uniform(rng: np.random.Generator, *shape) -> np.ndarray:
    return rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)


def _attention_params(prefix: str, d: int, rng) -> Dict[str, np.ndarray]:
    params = {}
    for proj in ('q', 'k', 'v', 'o'):
        params[f"{prefix}.{proj}.weight"] = _uniform(rng, d, d)
        params[f"{prefix}.{proj}.bias"] = np.zeros(d)
    return params


def _norm_params(prefix: str, d: int) -> Dict[str, np.ndarray]:
    return {f"{prefix}.gamma": np.ones(d), f"{prefix}.beta": np.zeros(d)}


def _ffn_params(prefix: str, d: int, ffn: int, rng) -> Dict[str, np.ndarray]:
    return {
        f"{prefix}.fc1.weight": _uniform(rng, d, ffn),
        f"{prefix}.fc1.bias": np.zeros(ffn),
        f"{prefix}.fc2.weight": _uniform(rng, ffn, d),
        f"{prefix}.fc2.bias": np.zeros(d),
    }


def encoder_param_arrays(prefix: str, layers: int, d: int, ffn: int, max_positions: int,
                         rng) -> Dict[str, np.ndarray]:
    """Positional table, embedding norm and `layers` encoder blocks under `prefix`"""
    arrays = {f"{prefix}.positions": _uniform(rng, max_positions, d)}
    arrays.update(_norm_params(f"{prefix}.embed_norm", d))
    for i in range(layers):
        block = f"{prefix}.layers.{i}"
        arrays.update(_attention_params(f"{block}.self_attn", d, rng))
        arrays.update(_norm_params(f"{block}.self_attn_norm", d))
        arrays.update(_ffn_params(f"{block}.ffn", d, ffn, rng))
        arrays.update(_norm_params(f"{block}.final_norm", d))
    return arrays


def init_model(config: ModelConfig, seed: int = 0) -> SeqModel:
    """
    Build a freshly initialised model

    Matrices are uniform(-0.08, 0.08); biases and the output bias are zero.
    Initialisation and dropout draw from separate streams of `seed`.
    """
    init_rng, dropout_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    d, ffn = config.d_model, config.ffn_dim
    arrays = {'embed_tokens': _uniform(init_rng, config.vocab_size, d)}
    arrays.update(encoder_param_arrays('encoder', config.encoder_layers, d, ffn,
                                       config.max_positions, init_rng))
    arrays['decoder.positions'] = _uniform(init_rng, config.max_positions, d)
    arrays.update(_norm_params('decoder.embed_norm', d))
    for i in range(config.decoder_layers):
        block = f"decoder.layers.{i}"
        arrays.update(_attention_params(f"{block}.self_attn", d, init_rng))
        arrays.update(_norm_params(f"{block}.self_attn_norm", d))
        arrays.update(_attention_params(f"{block}.cross_attn", d, init_rng))
        arrays.update(_norm_params(f"{block}.cross_attn_norm", d))
        arrays.update(_ffn_params(f"{block}.ffn", d, ffn, init_rng))
        arrays.update(_norm_params(f"{block}.final_norm", d))
    if not config.tie_embeddings:
        arrays['output_projection'] = _uniform(init_rng, d, config.vocab_size)
    arrays['output_bias'] = np.zeros(config.vocab_size)

    dtype = ad.PRECISIONS[config.precision]
    params = {name: Tensor(values, requires_grad=True, name=name, dtype=dtype)
              for name, values in arrays.items()}
    n_values = int(np.sum([p.values.size for p in params.values()]))
    logger.info(f"Initialised model: {len(params)} tensors, {n_values:,} parameters")
    return SeqModel(config=config, params=params, rng=dropout_rng)


# ---------------------------------------------------------------------------
# Building blocks

def _linear(x: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def _norm(x: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    return ad.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    batch, time, d = x.shape
    return ad.transpose(ad.reshape(x, (batch, time, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    batch, heads, time, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (batch, time, heads * dh))


def multi_head_attention(query: Tensor, memory: Tensor, mask_add: np.ndarray,
                         params: Dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    """
    Scaled dot-product attention

    Args:
        query: [B, Tq, D]
        memory: [B, Tk, D]
        mask_add: additive mask broadcastable to [B, H, Tq, Tk] (0 or MASK_VALUE)
    """
    q = _split_heads(_linear(query, params, f"{prefix}.q"), heads)
    k = _split_heads(_linear(memory, params, f"{prefix}.k"), heads)
    v = _split_heads(_linear(memory, params, f"{prefix}.v"), heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), scale)
    scores = ad.add(scores, Tensor(mask_add, dtype=scores.values.dtype))
    context = ad.matmul(ad.softmax(scores, axis=-1), v)
    return _linear(_merge_heads(context), params, f"{prefix}.o")


def _ffn(x: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    return _linear(ad.gelu(_linear(x, params, f"{prefix}.fc1")), params, f"{prefix}.fc2")


def key_mask(mask: np.ndarray) -> np.ndarray:
    """[B, S] boolean keep-mask -> additive [B, 1, 1, S]"""
    return np.where(mask, 0.0, ad.MASK_VALUE)[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    upper = np.triu(np.ones((length, length), dtype=bool), k=1)
    return np.where(upper, ad.MASK_VALUE, 0.0)[None, None, :, :]


def embed_positions(inputs: Tensor, params: Dict[str, Tensor], prefix: str,
                    dropout: float, rng, training: bool) -> Tensor:
    """Add learned positions to input vectors [B, T, D], normalise, apply dropout"""
    positions = params[f"{prefix}.positions"]
    length = inputs.shape[1]
    if length > positions.shape[0]:
        raise LengthError(f"sequence of length {length} exceeds max positions {positions.shape[0]}")
    x = ad.add(inputs, ad.embedding(positions, np.arange(length)))
    x = _norm(x, params, f"{prefix}.embed_norm")
    return ad.dropout(x, dropout, rng, training)


def encoder_stack(x: Tensor, mask: np.ndarray, params: Dict[str, Tensor], prefix: str,
                  layers: int, heads: int, dropout: float, rng, training: bool) -> Tensor:
    """Post-norm bidirectional encoder blocks over embedded inputs"""
    mask_add = key_mask(mask)
    for i in range(layers):
        block = f"{prefix}.layers.{i}"
        attn = multi_head_attention(x, x, mask_add, params, f"{block}.self_attn", heads)
        x = _norm(ad.add(x, ad.dropout(attn, dropout, rng, training)), params, f"{block}.self_attn_norm")
        ff = _ffn(x, params, f"{block}.ffn")
        x = _norm(ad.add(x, ad.dropout(ff, dropout, rng, training)), params, f"{block}.final_norm")
    return x


# ---------------------------------------------------------------------------
# Public operations

def pad_batch(sequences: Sequence[Sequence[int]], pad_id: int) -> np.ndarray:
    width = max(len(s) for s in sequences)
    batch = np.full((len(sequences), width), pad_id, dtype=np.int64)
    for row, seq in enumerate(sequences):
        batch[row, :len(seq)] = seq
    return batch


def encode_batch(src_ids: np.ndarray, model: SeqModel) -> EncoderState:
    """Encode a padded [B, S] id batch"""
    cfg = model.config
    src_ids = np.asarray(src_ids, dtype=np.int64)
    if src_ids.shape[1] > cfg.max_positions:
        raise LengthError(f"document of length {src_ids.shape[1]} exceeds max positions {cfg.max_positions}")
    mask = src_ids != cfg.pad_id
    x = ad.embedding(model.params['embed_tokens'], src_ids)
    x = embed_positions(x, model.params, 'encoder', cfg.dropout, model.rng, model.training)
    states = encoder_stack(x, mask, model.params, 'encoder', cfg.encoder_layers, cfg.heads,
                           cfg.dropout, model.rng, model.training)
    return EncoderState(states=states, mask=mask)


def encode(doc: TokenSequence, model: SeqModel) -> EncoderState:
    """Encode one document; pad ids inside it are masked out of attention"""
    return encode_batch(np.asarray([doc.ids], dtype=np.int64), model)


def decoder_logits(tgt_in: np.ndarray, enc: EncoderState, model: SeqModel) -> Tensor:
    """Next-token logits [B, T, V] for a padded [B, T] decoder input batch"""
    cfg, params = model.config, model.params
    tgt_in = np.asarray(tgt_in, dtype=np.int64)
    if tgt_in.shape[1] > cfg.max_positions:
        raise LengthError(f"prefix of length {tgt_in.shape[1]} exceeds max positions {cfg.max_positions}")
    x = ad.embedding(params['embed_tokens'], tgt_in)
    x = embed_positions(x, params, 'decoder', cfg.dropout, model.rng, model.training)
    self_mask = causal_mask(tgt_in.shape[1])
    cross_mask = key_mask(enc.mask)
    for i in range(cfg.decoder_layers):
        block = f"decoder.layers.{i}"
        attn = multi_head_attention(x, x, self_mask, params, f"{block}.self_attn", cfg.heads)
        x = _norm(ad.add(x, ad.dropout(attn, cfg.dropout, model.rng, model.training)),
                  params, f"{block}.self_attn_norm")
        cross = multi_head_attention(x, enc.states, cross_mask, params, f"{block}.cross_attn", cfg.heads)
        x = _norm(ad.add(x, ad.dropout(cross, cfg.dropout, model.rng, model.training)),
                  params, f"{block}.cross_attn_norm")
        ff = _ffn(x, params, f"{block}.ffn")
        x = _norm(ad.add(x, ad.dropout(ff, cfg.dropout, model.rng, model.training)),
                  params, f"{block}.final_norm")
    if cfg.tie_embeddings:
        projection = ad.transpose(params['embed_tokens'])
    else:
        projection = params['output_projection']
    return ad.add(ad.matmul(x, projection), params['output_bias'])


def decode_distributions(target_prefix: TokenSequence, enc: EncoderState, model: SeqModel) -> Tensor:
    """
    Per-step next-token distributions [T, V] for a single prefix

    Row t is p(s_t | s_1..s_{t-1}, S_doc) given the prefix tokens up to t.
    """
    if not target_prefix.ids or target_prefix.ids[0] != model.config.bos_id:
        raise DataError("decoder prefix must begin with <s>")
    logits = decoder_logits(np.asarray([target_prefix.ids], dtype=np.int64), enc, model)
    probs = ad.softmax(logits, axis=-1)
    return ad.reshape(probs, probs.shape[1:])


def teacher_forcing_batch(refs: Sequence[TokenSequence], pad_id: int):
    """Decoder inputs (reference shifted right), targets and the target mask"""
    tgt_in = pad_batch([r.ids[:-1] for r in refs], pad_id)
    targets = pad_batch([r.ids[1:] for r in refs], pad_id)
    mask = np.zeros(targets.shape, dtype=bool)
    for row, ref in enumerate(refs):
        mask[row, :len(ref.ids) - 1] = True
    return tgt_in, targets, mask


def ml_loss_from_logits(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    return ad.nll_loss(ad.log_softmax(logits, axis=-1), targets, mask)


def ml_loss_batch(docs: Sequence[TokenSequence], refs: Sequence[TokenSequence], model: SeqModel) -> Tensor:
    """Summed maximum-likelihood loss over a batch under teacher forcing"""
    pad = model.config.pad_id
    enc = encode_batch(pad_batch([d.ids for d in docs], pad), model)
    tgt_in, targets, mask = teacher_forcing_batch(refs, pad)
    return ml_loss_from_logits(decoder_logits(tgt_in, enc, model), targets, mask)


def ml_loss(doc: TokenSequence, ref: TokenSequence, model: SeqModel) -> Tensor:
    """-sum_t log p(s_t^r | s_<t^r, S_doc) over the m reference positions"""
    return ml_loss_batch([doc], [ref], model)


def layer_names(model: SeqModel) -> List[str]:
    """Group prefixes used to check that every layer receives gradient"""
    cfg = model.config
    names = ['embed_tokens', 'encoder.positions', 'decoder.positions']
    names += [f"encoder.layers.{i}." for i in range(cfg.encoder_layers)]
    names += [f"decoder.layers.{i}." for i in range(cfg.decoder_layers)]
    return names


def copy_model(model: SeqModel) -> SeqModel:
    """Independent snapshot (values and RNG state) of a model"""
    params = {name: Tensor(p.values.copy(), requires_grad=p.requires_grad, frozen=p.frozen,
                           name=name, dtype=p.values.dtype)
              for name, p in model.params.items()}
    rng = np.random.default_rng()
    rng.bit_generator.state = model.rng.bit_generator.state
    return SeqModel(config=model.config, params=params, rng=rng, training=model.training)


def next_token_logprobs(prefixes: np.ndarray, enc: EncoderState, model: SeqModel) -> np.ndarray:
    """Log-probabilities [B, V] of the token following each equal-length prefix"""
    batch = prefixes.shape[0]
    if enc.states.shape[0] != batch:
        enc = EncoderState(
            states=Tensor(np.repeat(enc.states.values, batch, axis=0), dtype=enc.states.values.dtype),
            mask=np.repeat(enc.mask, batch, axis=0),
        )
    logits = decoder_logits(prefixes, enc, model)
    return ad.log_softmax(logits, axis=-1).values[:, -1, :]
