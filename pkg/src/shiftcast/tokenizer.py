"""Word-level vocabulary with whole-number tokens and digit fallback."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

BOS, EOS, PAD, UNK = "<s>", "</s>", "<pad>", "<unk>"
SPECIALS = (BOS, EOS, PAD, UNK)
BOS_ID, EOS_ID, PAD_ID, UNK_ID = range(4)
PUNCT = ".,"


class EmptyCorpus(ValueError):
    pass


class UnknownId(ValueError):
    pass


def split_words(text: str) -> list[str]:
    """Whitespace split, then peel leading/trailing ``.``/``,`` into their own tokens."""
    out: list[str] = []
    for chunk in text.split():
        lead: list[str] = []
        while chunk and chunk[0] in PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and chunk[-1] in PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def _is_number(tok: str) -> bool:
    return tok.isascii() and tok.isdigit()


class Vocabulary:
    """Bidirectional token/id map; ids 0-3 are ``<s> </s> <pad> <unk>``."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the four special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.id_to_token: tuple[str, ...] = tuple(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.id_to_token)}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls(json.loads(text)["tokens"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def encode(self, text: str, add_specials: bool = False) -> list[int]:
        return encode(text, self, add_specials)

    def decode(self, ids: Iterable[int]) -> str:
        return decode(ids, self)


def build_vocab(corpus: Iterable[str]) -> Vocabulary:
    """Specials, then every distinct word by descending frequency, ties lexicographic."""
    counts: Counter[str] = Counter()
    seen_any = False
    for text in corpus:
        seen_any = True
        counts.update(split_words(text))
    if not seen_any:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    for tok in SPECIALS:
        counts.pop(tok, None)
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocabulary(list(SPECIALS) + ordered)


def encode(text: str, vocab: Vocabulary, add_specials: bool = False) -> list[int]:
    ids = [BOS_ID] if add_specials else []
    table = vocab.token_to_id
    for tok in split_words(text):
        if tok in table:
            ids.append(table[tok])
        elif _is_number(tok):
            ids.extend(table.get(ch, UNK_ID) for ch in tok)
        else:
            ids.append(UNK_ID)
    if add_specials:
        ids.append(EOS_ID)
    return ids


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Join tokens back into text.

    Punctuation attaches to the previous word and consecutive numeric tokens
    are glued, which undoes the digit fallback of :func:`encode`.
    """
    pieces: list[str] = []
    prev_numeric = False
    n = len(vocab)
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise UnknownId(f"token id {i} outside vocabulary of size {n}")
        if i in (BOS_ID, EOS_ID, PAD_ID):
            continue
        tok = vocab.id_to_token[i]
        numeric = _is_number(tok)
        if pieces and tok in PUNCT:
            pieces[-1] += tok
        elif pieces and numeric and prev_numeric:
            pieces[-1] += tok
        else:
            pieces.append(tok)
        prev_numeric = numeric
    return " ".join(pieces)
