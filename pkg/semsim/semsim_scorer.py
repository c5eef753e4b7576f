"""
SemSim layer: frozen sequence encoder + linear similarity head

    e_ref = LM(S_ref), e_gen = LM(S_gen)
    Score = W [e_ref ; e_gen] + b
    L_semsim = -Score

All scorer tensors are frozen but keep requires_grad, so backward passes
through them into whatever produced the soft generated sequence. The head
is either seeded-random or fitted once, before freezing, to predict how
much probability a candidate puts on the reference tokens.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from semsim import tensor_autodiff as ad
from semsim.checkpoint import StoredTensor, read_container, to_tensors, write_container
from semsim.errors import CheckpointError, ConfigError, DataError, DimensionError, LengthError, ValidationError
from semsim.seq2seq_model import SeqModel, embed_positions, encoder_param_arrays, encoder_stack, pad_batch
from semsim.tensor_autodiff import Tensor
from semsim.tokenizer import TokenSequence

logger = logging.getLogger(__name__)

POOLINGS = ('mean', 'first')
ROW_SUM_TOLERANCE = 1e-4

# one-hot weight of the reference / uniform blends the agreement head is fitted on
AGREEMENT_MIXES = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0)
HEAD_RIDGE = 1e-2


@dataclass
class ScorerConfig:
    vocab_size: int = 1000
    layers: int = 2
    d_model: int = 64
    heads: int = 4
    ffn_dim: int = 128
    max_positions: int = 256
    pooling: str = 'mean'
    pad_id: int = 0
    bos_id: int = 1
    precision: int = 32

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ScorerLM:
    config: ScorerConfig
    params: Dict[str, Tensor]

    @property
    def d(self) -> int:
        return self.config.d_model


@dataclass
class SemSimHead:
    W: Tensor
    b: Tensor

    def parameters(self) -> List[Tensor]:
        return [self.W, self.b]


@dataclass
class SemSimLayer:
    """Frozen scorer LM with its head"""
    lm: ScorerLM
    head: SemSimHead

    def parameters(self) -> List[Tensor]:
        return list(self.lm.params.values()) + self.head.parameters()

    def named_parameters(self) -> Dict[str, Tensor]:
        named = dict(self.lm.params)
        named.update({'head.W': self.head.W, 'head.b': self.head.b})
        return named


@dataclass
class SoftSequence:
    """Per-position distributions over the vocabulary: [L, V] or [B, L, V] with a [B, L] mask"""
    probs: Tensor
    mask: Optional[np.ndarray] = None

    def validate(self) -> None:
        values = self.probs.values
        batched = values if values.ndim == 3 else values[None]
        mask = np.ones(batched.shape[:2], dtype=bool) if self.mask is None else np.asarray(self.mask, bool)
        if (batched < 0).any():
            raise ValidationError("soft sequence has negative probabilities")
        sums = batched.sum(axis=-1)[mask]
        if sums.size and np.abs(sums - 1.0).max() > ROW_SUM_TOLERANCE:
            raise ValidationError(f"soft sequence rows must sum to 1 (max deviation {np.abs(sums - 1.0).max():.2e})")


def _frozen(values: np.ndarray, name: str, precision: int) -> Tensor:
    return Tensor(values, requires_grad=True, frozen=True, name=name, dtype=ad.PRECISIONS[precision])


def init_head(d: int, seed: int, precision: int = 32) -> SemSimHead:
    """W ~ N(0, 1) / sqrt(2d), b = 0"""
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((1, 2 * d)) / np.sqrt(2 * d)
    return SemSimHead(W=_frozen(weights, 'head.W', precision), b=_frozen(np.zeros(1), 'head.b', precision))


def init_scorer(config: ScorerConfig, seed: int = 0) -> SemSimLayer:
    """Seeded random scorer and head, used when no pretrained scorer checkpoint exists"""
    lm_rng, head_seed = np.random.default_rng(seed), seed + 1
    arrays = {'lm.embed_tokens': lm_rng.uniform(-0.08, 0.08, size=(config.vocab_size, config.d_model))}
    arrays.update(encoder_param_arrays('lm', config.layers, config.d_model, config.ffn_dim,
                                       config.max_positions, lm_rng))
    params = {name: _frozen(values, name, config.precision) for name, values in arrays.items()}
    return SemSimLayer(lm=ScorerLM(config=config, params=params),
                       head=init_head(config.d_model, head_seed, config.precision))


def scorer_from_model(model: SeqModel, seed: int = 0, pooling: str = 'mean') -> SemSimLayer:
    """Copy the generator's encoder weights into a frozen scorer"""
    mc = model.config
    config = ScorerConfig(vocab_size=mc.vocab_size, layers=mc.encoder_layers, d_model=mc.d_model,
                          heads=mc.heads, ffn_dim=mc.ffn_dim, max_positions=mc.max_positions,
                          pooling=pooling, pad_id=mc.pad_id, bos_id=mc.bos_id, precision=mc.precision)
    params = {'lm.embed_tokens': _frozen(model.params['embed_tokens'].values.copy(), 'lm.embed_tokens',
                                         mc.precision)}
    for name, tensor in model.params.items():
        if name.startswith('encoder.'):
            new_name = 'lm.' + name[len('encoder.'):]
            params[new_name] = _frozen(tensor.values.copy(), new_name, mc.precision)
    logger.info(f"Scorer built from generator encoder: {len(params)} frozen tensors")
    return SemSimLayer(lm=ScorerLM(config=config, params=params), head=init_head(mc.d_model, seed, mc.precision))


def reference_agreement(ref_ids: np.ndarray, mask: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Mean probability each [L, V] row block puts on its aligned reference token: [B]"""
    picked = np.take_along_axis(np.asarray(probs), np.asarray(ref_ids)[..., None], axis=-1)[..., 0]
    mask = np.asarray(mask, dtype=np.float64)
    return (picked * mask).sum(axis=1) / mask.sum(axis=1)


def fit_agreement_head(lm: ScorerLM, batches: Iterable[Tuple[np.ndarray, np.ndarray, Sequence[np.ndarray]]],
                       mixes: Sequence[float] = AGREEMENT_MIXES, ridge: float = HEAD_RIDGE) -> SemSimHead:
    """
    Ridge-regression head scoring how closely a soft sequence follows its reference

    Args:
        lm: frozen scorer encoder
        batches: (reference ids [B, L], mask [B, L], candidate distributions [B, L, V] ...)
            per batch; blends of the one-hot reference with the uniform
            distribution are added as candidates
        mixes: one-hot weights of those blends
        ridge: L2 penalty on W (b is not penalized)

    The regression target of a candidate is reference_agreement().

    Raises:
        DataError: no batches
    """
    vocab = lm.config.vocab_size
    dtype = lm.params['lm.embed_tokens'].values.dtype
    features, targets = [], []
    for ref_ids, mask, candidates in batches:
        ref_ids, mask = np.asarray(ref_ids, dtype=np.int64), np.asarray(mask, dtype=bool)
        e_ref = embed_id_batch(ref_ids, mask, lm).values.astype(np.float64)
        one_hot = np.eye(vocab)[ref_ids]
        blends = [alpha * one_hot + (1.0 - alpha) / vocab for alpha in mixes]
        for probs in list(candidates) + blends:
            soft = SoftSequence(probs=Tensor(probs, dtype=dtype), mask=mask)
            e_gen = embed_soft_batch(soft, lm).values.astype(np.float64)
            features.append(np.concatenate([e_ref, e_gen], axis=1))
            targets.append(reference_agreement(ref_ids, mask, probs))
    if not features:
        raise DataError("no reference batches to fit the SemSim head on")

    x, y = np.concatenate(features), np.concatenate(targets)
    x_mean, y_mean = x.mean(axis=0), y.mean()
    centered = x - x_mean
    weights = np.linalg.solve(centered.T @ centered + ridge * np.eye(x.shape[1]), centered.T @ (y - y_mean))
    bias = y_mean - x_mean @ weights
    residual = y - (x @ weights + bias)
    spread = float(((y - y_mean) ** 2).sum())
    r2 = 1.0 - float((residual ** 2).sum()) / spread if spread > 0 else 1.0
    logger.info(f"SemSim head fitted on {len(y)} candidates (R^2 {r2:.3f})")
    precision = lm.config.precision
    return SemSimHead(W=_frozen(weights[None, :], 'head.W', precision),
                      b=_frozen(np.array([bias]), 'head.b', precision))


# ---------------------------------------------------------------------------
# Encoding

def _pool_weights(mask: np.ndarray, pooling: str, dtype) -> np.ndarray:
    if pooling == 'first':
        weights = np.zeros(mask.shape)
        weights[:, 0] = 1.0
    else:
        weights = mask / mask.sum(axis=1, keepdims=True)
    return weights[..., None].astype(dtype)


def _encode_inputs(inputs: Tensor, mask: np.ndarray, lm: ScorerLM) -> Tensor:
    """[B, L, d] input vectors -> pooled [B, d] sequence embeddings"""
    cfg = lm.config
    if inputs.shape[1] > cfg.max_positions:
        raise LengthError(f"sequence of length {inputs.shape[1]} exceeds scorer max positions {cfg.max_positions}")
    if not mask.any(axis=1).all():
        raise DataError("cannot embed an empty sequence")
    x = embed_positions(inputs, lm.params, 'lm', 0.0, None, False)
    states = encoder_stack(x, mask, lm.params, 'lm', cfg.layers, cfg.heads, 0.0, None, False)
    weights = Tensor(_pool_weights(mask, cfg.pooling, states.values.dtype), dtype=states.values.dtype)
    return ad.reduce_sum(ad.mul(states, weights), axis=1)


def scorer_input_ids(seq: TokenSequence, lm: ScorerLM) -> List[int]:
    """Token ids the scorer sees: the sequence without <s> and padding"""
    skip = {lm.config.bos_id, lm.config.pad_id}
    return [i for i in seq.ids if i not in skip]


def embed_id_batch(ids: np.ndarray, mask: np.ndarray, lm: ScorerLM) -> Tensor:
    inputs = ad.embedding(lm.params['lm.embed_tokens'], ids)
    return _encode_inputs(inputs, np.asarray(mask, dtype=bool), lm)


def embed_sequence(seq: TokenSequence, lm: ScorerLM) -> Tensor:
    """e_seq in R^d for a discrete token sequence"""
    ids = scorer_input_ids(seq, lm)
    if not ids:
        raise DataError("cannot embed an empty sequence")
    batch = np.asarray([ids], dtype=np.int64)
    pooled = embed_id_batch(batch, np.ones(batch.shape, dtype=bool), lm)
    return ad.reshape(pooled, (lm.d,))


def embed_soft_batch(soft: SoftSequence, lm: ScorerLM) -> Tensor:
    """Expected-embedding encoding of [B, L, V] distributions -> [B, d]"""
    soft.validate()
    probs = soft.probs if soft.probs.ndim == 3 else ad.reshape(soft.probs, (1,) + soft.probs.shape)
    mask = np.ones(probs.shape[:2], dtype=bool) if soft.mask is None else np.asarray(soft.mask, dtype=bool)
    if probs.shape[-1] != lm.params['lm.embed_tokens'].shape[0]:
        raise DimensionError(f"soft sequence vocabulary {probs.shape[-1]} does not match scorer "
                             f"vocabulary {lm.params['lm.embed_tokens'].shape[0]}")
    inputs = ad.matmul(probs, lm.params['lm.embed_tokens'])
    return _encode_inputs(inputs, mask, lm)


def embed_soft_sequence(soft: SoftSequence, lm: ScorerLM) -> Tensor:
    """e_gen in R^d where each input vector is sum_v soft[p, v] * E[v]"""
    if soft.probs.ndim != 2:
        raise DimensionError(f"expected [L, V] soft sequence, got {soft.probs.shape}")
    if soft.probs.shape[0] == 0:
        raise DataError("cannot embed an empty sequence")
    return ad.reshape(embed_soft_batch(soft, lm), (lm.d,))


# ---------------------------------------------------------------------------
# Score and loss

def semsim_score(e_ref: Tensor, e_gen: Tensor, head: SemSimHead) -> Tensor:
    """W [e_ref ; e_gen] + b (reference first); scalar for vectors, [B] for batches"""
    d2 = head.W.shape[-1]
    if e_ref.shape != e_gen.shape or 2 * e_ref.shape[-1] != d2:
        raise DimensionError(f"embedding extents {e_ref.shape} / {e_gen.shape} do not fit head of width {d2}")
    e = ad.concat([e_ref, e_gen], axis=-1)
    single = e.ndim == 1
    if single:
        e = ad.reshape(e, (1, d2))
    score = ad.add(ad.matmul(e, ad.transpose(head.W)), head.b)
    return ad.reshape(score, () if single else (score.shape[0],))


def semsim_loss(doc_ignored, ref: TokenSequence, soft_gen: SoftSequence, lm: ScorerLM,
                head: SemSimHead) -> Tensor:
    """-Score_semsim(embed(ref), embed(soft_gen)); the document does not enter the score"""
    return ad.mul(semsim_score(embed_sequence(ref, lm), embed_soft_sequence(soft_gen, lm), head), -1.0)


def semsim_loss_batch(ref_ids: np.ndarray, mask: np.ndarray, soft_probs: Tensor, lm: ScorerLM,
                      head: SemSimHead) -> Tensor:
    """Summed -Score over a batch of aligned reference ids [B, L] and soft outputs [B, L, V]"""
    e_ref = embed_id_batch(ref_ids, mask, lm)
    e_gen = embed_soft_batch(SoftSequence(probs=soft_probs, mask=mask), lm)
    return ad.mul(ad.reduce_sum(semsim_score(e_ref, e_gen, head)), -1.0)


def score_texts(reference: TokenSequence, candidate: TokenSequence, lm: ScorerLM, head: SemSimHead) -> float:
    """Score of two discrete sequences (the `score` subcommand)"""
    return semsim_score(embed_sequence(reference, lm), embed_sequence(candidate, lm), head).item()


def pad_ids(sequences: Sequence[Sequence[int]], pad_id: int):
    ids = pad_batch(sequences, pad_id)
    mask = np.zeros(ids.shape, dtype=bool)
    for row, seq in enumerate(sequences):
        mask[row, :len(seq)] = True
    return ids, mask


# ---------------------------------------------------------------------------
# Persistence

def scorer_from_tensors(config: Dict, tensors: Dict[str, Tensor]) -> SemSimLayer:
    """Rebuild a SemSimLayer from named tensors ('lm.*', 'head.W', 'head.b'), forcing frozen"""
    scorer_config = ScorerConfig(**config)
    for tensor in tensors.values():
        tensor.frozen = True
        tensor.requires_grad = True
    try:
        head = SemSimHead(W=tensors.pop('head.W'), b=tensors.pop('head.b'))
    except KeyError as e:
        raise CheckpointError(f"scorer tensors are missing {e}") from e
    if head.W.shape != (1, 2 * scorer_config.d_model) or head.b.shape != (1,):
        raise CheckpointError(f"head shapes {head.W.shape} / {head.b.shape} do not match d={scorer_config.d_model}")
    return SemSimLayer(lm=ScorerLM(config=scorer_config, params=tensors), head=head)


def save_scorer(scorer: SemSimLayer, path, extra: Optional[Dict] = None):
    header = {'kind': 'scorer', 'scorer_config': scorer.lm.config.to_dict()}
    header.update(extra or {})
    tensors = [StoredTensor(name, p.values, True, 'scorer') for name, p in scorer.named_parameters().items()]
    return write_container(path, header, tensors)


def load_scorer(path) -> SemSimLayer:
    header, stored = read_container(path)
    if header.get('kind') != 'scorer':
        raise CheckpointError(f"{path} is not a scorer checkpoint")
    layer = scorer_from_tensors(header['scorer_config'], to_tensors(stored, 'scorer'))
    logger.info(f"   📂 Loaded scorer {path}: {len(layer.lm.params)} encoder tensors, pooling={layer.lm.config.pooling}")
    return layer
