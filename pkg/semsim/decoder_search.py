"""
Beam search with trigram blocking, length limits and a length penalty

The search core only needs a step function mapping a list of generated
prefixes (without <s>) to next-token log-probabilities [n, V], so tiny
hand-built distributions can be searched exactly like the model.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np

from semsim.errors import ConfigError, DataError
from semsim.seq2seq_model import SeqModel, encode, next_token_logprobs
from semsim.tensor_autodiff import Tensor
from semsim.tokenizer import TokenSequence

logger = logging.getLogger(__name__)

StepFn = Callable[[List[List[int]]], np.ndarray]
Trigram = Tuple[int, int, int]


@dataclass
class SearchConfig:
    beam: int = 5
    min_len: int = 55
    max_len: int = 140
    lenpen: float = 1.0
    trigram_block: bool = True

    def __post_init__(self):
        if self.beam < 1:
            raise ConfigError(f"beam size must be >= 1, got {self.beam}")
        if not 0 <= self.min_len <= self.max_len:
            raise ConfigError(f"need 0 <= min_len <= max_len, got {self.min_len} / {self.max_len}")
        if self.max_len < 1:
            raise ConfigError("max_len must be at least 1 (room for </s>)")
        if self.lenpen < 0:
            raise ConfigError(f"length penalty must be >= 0, got {self.lenpen}")


@dataclass
class Hypothesis:
    """Generated tokens (</s> included once finished) and their log-probability"""
    tokens: List[int] = field(default_factory=list)
    logprob: float = 0.0
    trigrams: Set[Trigram] = field(default_factory=set)
    finished: bool = False

    @property
    def length(self) -> int:
        return len(self.tokens)

    def extend(self, token: int, logprob: float, eos_id: int) -> "Hypothesis":
        trigrams = set(self.trigrams)
        if len(self.tokens) >= 2:
            trigrams.add((self.tokens[-2], self.tokens[-1], token))
        return Hypothesis(tokens=self.tokens + [token], logprob=logprob, trigrams=trigrams,
                          finished=token == eos_id)


def apply_trigram_block(hyp: Hypothesis, step_logprobs):
    """Mask every token that would repeat a trigram already in the hypothesis"""
    as_tensor = isinstance(step_logprobs, Tensor)
    values = np.array(step_logprobs.values if as_tensor else step_logprobs, dtype=np.float64)
    if len(hyp.tokens) >= 2:
        last = (hyp.tokens[-2], hyp.tokens[-1])
        for a, b, c in hyp.trigrams:
            if (a, b) == last:
                values[c] = -np.inf
    return Tensor(values, dtype=np.float64) if as_tensor else values


def length_penalized_score(hyp: Hypothesis, alpha: float) -> float:
    if hyp.length == 0:
        raise DataError("cannot score an empty hypothesis")
    return hyp.logprob / (hyp.length ** alpha)


def _mask_row(row: np.ndarray, hyp: Hypothesis, cfg: SearchConfig, eos_id: int,
              banned: FrozenSet[int]) -> np.ndarray:
    row = np.array(row, dtype=np.float64)
    for token in banned:
        row[token] = -np.inf
    if cfg.trigram_block:
        row = apply_trigram_block(hyp, row)
    next_length = hyp.length + 1
    if next_length < cfg.min_len:
        row[eos_id] = -np.inf
    if next_length >= cfg.max_len:
        eos_value = row[eos_id]
        row[:] = -np.inf
        row[eos_id] = eos_value
    return row


def search(step_fn: StepFn, eos_id: int, cfg: SearchConfig, banned_ids: Sequence[int] = ()) -> List[Hypothesis]:
    """
    Beam search over a step function

    Every step expands all active hypotheses and keeps the `beam` best
    expansions by cumulative log-probability; ties go to the earlier
    hypothesis, then the smaller token id. Expansions ending in </s> are
    finished. Returns finished hypotheses, best length-penalized score first.

    Raises:
        DataError: no hypothesis can satisfy the length and blocking constraints
    """
    banned = frozenset(banned_ids)
    active = [Hypothesis()]
    finished: List[Hypothesis] = []
    while active:
        logprobs = np.asarray(step_fn([h.tokens for h in active]), dtype=np.float64)
        candidates = []
        for index, hyp in enumerate(active):
            row = _mask_row(logprobs[index], hyp, cfg, eos_id, banned)
            for token in np.flatnonzero(np.isfinite(row)):
                candidates.append((hyp.logprob + row[token], index, int(token)))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

        next_active = []
        for score, index, token in candidates[:cfg.beam]:
            hyp = active[index].extend(token, float(score), eos_id)
            (finished if hyp.finished else next_active).append(hyp)
        active = next_active

    if not finished:
        raise DataError("no hypothesis satisfies the decoding constraints")
    finished.sort(key=lambda h: (-length_penalized_score(h, cfg.lenpen), h.length, h.tokens))
    return finished


def greedy_search(step_fn: StepFn, eos_id: int, cfg: SearchConfig, banned_ids: Sequence[int] = ()) -> Hypothesis:
    """Argmax decoding under the same masks as search(); equals beam size 1"""
    banned = frozenset(banned_ids)
    hyp = Hypothesis()
    while not hyp.finished:
        row = _mask_row(np.asarray(step_fn([hyp.tokens]), dtype=np.float64)[0], hyp, cfg, eos_id, banned)
        if not np.isfinite(row).any():
            raise DataError("no hypothesis satisfies the decoding constraints")
        scores = hyp.logprob + row
        token = int(np.argmax(scores))
        hyp = hyp.extend(token, float(scores[token]), eos_id)
    return hyp


def model_step_fn(doc: TokenSequence, model: SeqModel) -> StepFn:
    """Step function over a model, encoding the document once"""
    enc = encode(doc, model)
    bos = model.config.bos_id

    def step(prefixes: List[List[int]]) -> np.ndarray:
        batch = np.asarray([[bos] + list(p) for p in prefixes], dtype=np.int64)
        return next_token_logprobs(batch, enc, model)

    return step


def _decode_with(doc: TokenSequence, model: SeqModel, cfg: SearchConfig, greedy: bool) -> TokenSequence:
    was_training = model.training
    model.eval()
    try:
        mc = model.config
        step = model_step_fn(doc, model)
        banned = (mc.pad_id, mc.bos_id)
        if greedy:
            best = greedy_search(step, mc.eos_id, cfg, banned)
        else:
            best = search(step, mc.eos_id, cfg, banned)[0]
    finally:
        model.training = was_training
    logger.debug(f"decoded {best.length} tokens, logprob {best.logprob:.3f}")
    return TokenSequence(ids=best.tokens, role='generated')


def beam_search(doc: TokenSequence, model: SeqModel, cfg: SearchConfig) -> TokenSequence:
    """
    Generate a summary for one document

    Returns the generated ids (ending in </s>, without <s>) of the best
    finished hypothesis under logprob / length ** cfg.lenpen.
    """
    return _decode_with(doc, model, cfg, greedy=False)


def greedy_decode(doc: TokenSequence, model: SeqModel, cfg: Optional[SearchConfig] = None) -> TokenSequence:
    cfg = cfg or SearchConfig(beam=1)
    return _decode_with(doc, model, cfg, greedy=True)
