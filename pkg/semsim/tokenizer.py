"""
Character-level byte-pair encoding

Every word is split into a word-boundary marker followed by its characters;
merges are learned greedily by pair frequency (ties broken by the
lexicographically smallest pair) and replayed in learned order at encode
time.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache, partial
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from semsim.errors import DataError, VocabIndexError

logger = logging.getLogger(__name__)

WORD_MARKER = '▁'
PAD, BOS, EOS, UNK = '<pad>', '<s>', '</s>', '<unk>'
SPECIALS = (PAD, BOS, EOS, UNK)

ROLES = ('document', 'reference', 'generated')
VOCAB_HEADER = '#semsim-vocab v1'
WORD_CACHE_SIZE = 65536

Pair = Tuple[str, str]


@dataclass
class Vocab:
    """Token table, learned merges and special ids"""
    tokens: List[str]
    merges: List[Pair]
    token_to_id: Dict[str, int] = field(init=False)
    ranks: Dict[Pair, int] = field(init=False)
    _pieces: Callable[[str], Tuple[str, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.token_to_id = {token: idx for idx, token in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")
        self.ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._pieces = lru_cache(maxsize=WORD_CACHE_SIZE)(partial(_segment_word, vocab=self))

    def word_pieces(self, word: str) -> Tuple[str, ...]:
        """Surface tokens of one whitespace-free word, memoized per vocabulary"""
        return self._pieces(word)

    def word_cache_info(self):
        return self._pieces.cache_info()

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def special_ids(self) -> Tuple[int, ...]:
        return tuple(self.token_to_id[s] for s in SPECIALS)


@dataclass
class TokenSequence:
    """Token ids plus the role they play (document / reference / generated)"""
    ids: List[int]
    role: Optional[str] = None

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        if self.role is not None and self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    @property
    def length(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)


def _split_words(text: str) -> List[List[str]]:
    return [[WORD_MARKER] + list(word) for word in text.split()]


def _merge_pair(symbols: List[str], pair: Pair) -> List[str]:
    merged = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            merged.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return merged


def train_bpe(corpus: Iterable[str], target_vocab: int) -> Vocab:
    """
    Learn a BPE vocabulary

    Args:
        corpus: text collection
        target_vocab: desired vocabulary size including special tokens

    Returns:
        Vocab with base symbols, specials and the learned merges
    """
    word_counts = Counter()
    for text in corpus:
        for word in text.split():
            word_counts[word] += 1
    if not word_counts:
        raise DataError("cannot train BPE on an empty corpus")

    base = sorted({symbol for word in word_counts for symbol in _split_words(word)[0]})
    if target_vocab <= len(base) + len(SPECIALS):
        raise DataError(
            f"target_vocab {target_vocab} must exceed base symbols + specials ({len(base) + len(SPECIALS)})"
        )

    tokens = list(SPECIALS) + base
    known = set(tokens)
    words = {word: _split_words(word)[0] for word in word_counts}
    merges: List[Pair] = []

    while len(tokens) < target_vocab:
        pair_counts = Counter()
        for word, symbols in words.items():
            count = word_counts[word]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(pair for pair, count in pair_counts.items() if count == best_count)
        merges.append(best)
        new_token = best[0] + best[1]
        if new_token not in known:
            tokens.append(new_token)
            known.add(new_token)
        words = {word: _merge_pair(symbols, best) for word, symbols in words.items()}

    logger.info(f"BPE trained: {len(tokens)} tokens, {len(merges)} merges")
    return Vocab(tokens=tokens, merges=merges)


def _apply_merges(symbols: List[str], vocab: Vocab) -> List[str]:
    while len(symbols) > 1:
        ranked = [(vocab.ranks.get(pair), i) for i, pair in enumerate(zip(symbols, symbols[1:]))]
        ranked = [(rank, i) for rank, i in ranked if rank is not None]
        if not ranked:
            break
        best_rank = min(rank for rank, _ in ranked)
        symbols = _merge_pair(symbols, vocab.merges[best_rank])
    return symbols


def _segment_word(word: str, vocab: Vocab) -> Tuple[str, ...]:
    symbols = [WORD_MARKER] + list(word)
    if all(ch not in vocab.token_to_id for ch in word):
        # a word made only of unknown symbols carries no boundary marker
        symbols = list(word)
    return tuple(s if s in vocab.token_to_id else UNK for s in _apply_merges(symbols, vocab))


def tokenize(text: str, vocab: Vocab) -> List[str]:
    """Surface tokens of `text` after merge replay; unknown symbols become <unk>"""
    pieces: List[str] = []
    for word in text.split():
        pieces.extend(vocab.word_pieces(word))
    return pieces


def encode(text: str, vocab: Vocab, role: Optional[str] = None) -> TokenSequence:
    """
    Encode text; document/reference/generated roles are wrapped in <s> ... </s>

    Args:
        text: raw text
        vocab: trained vocabulary
        role: None for raw token ids without specials
    """
    ids = [vocab.token_to_id[token] for token in tokenize(text, vocab)]
    if role is not None:
        ids = [vocab.bos_id] + ids + [vocab.eos_id]
    return TokenSequence(ids=ids, role=role)


def decode(seq, vocab: Vocab) -> str:
    ids = seq.ids if isinstance(seq, TokenSequence) else list(seq)
    specials = set(vocab.special_ids)
    pieces = []
    for token_id in ids:
        if token_id < 0 or token_id >= vocab.size:
            raise VocabIndexError(f"token id {token_id} outside vocabulary of size {vocab.size}")
        if token_id in specials:
            continue
        pieces.append(vocab.tokens[token_id])
    return ''.join(pieces).replace(WORD_MARKER, ' ').strip()


def save_vocab(vocab: Vocab, path) -> Path:
    """Write tokens (one per line, id order) followed by the merge list"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{VOCAB_HEADER} {vocab.size} {len(vocab.merges)}"]
    lines.extend(vocab.tokens)
    lines.extend(f"{a} {b}" for a, b in vocab.merges)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def load_vocab(path) -> Vocab:
    lines = Path(path).read_text(encoding='utf-8').split('\n')
    header = lines[0].split()
    if len(header) != 4 or ' '.join(header[:2]) != VOCAB_HEADER:
        raise DataError(f"{path} is not a semsim vocabulary file", line_number=1)
    n_tokens, n_merges = int(header[2]), int(header[3])
    tokens = lines[1:1 + n_tokens]
    merges = []
    for offset, line in enumerate(lines[1 + n_tokens:1 + n_tokens + n_merges]):
        parts = line.split(' ')
        if len(parts) != 2:
            raise DataError(f"malformed merge {line!r}", line_number=2 + n_tokens + offset)
        merges.append((parts[0], parts[1]))
    return Vocab(tokens=tokens, merges=merges)
