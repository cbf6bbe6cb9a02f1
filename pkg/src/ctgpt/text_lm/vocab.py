from __future__ import annotations

import re
from pathlib import Path
from typing import Dict, Iterable, List

from ..errors import ArgumentError, FormatError

PAD, BOS, EOS, STOP, UNK = 0, 1, 2, 3, 4
IMAGE_SENTINEL = -200
SPECIALS = ("<pad>", "<bos>", "<eos>", "<stop>", "<unk>")

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> List[str]:
    """Lowercase, split on whitespace; each punctuation mark is its own token."""
    return _TOKEN_RE.findall(text.lower())


def join_tokens(tokens: Iterable[str]) -> str:
    out = []
    for tok in tokens:
        if out and not (len(tok) == 1 and not tok.isalnum()):
            out.append(" ")
        out.append(tok)
    return "".join(out)


def normalize_text(text: str) -> str:
    return join_tokens(tokenize(text))


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = list(SPECIALS)
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, text: str) -> List[int]:
        return [self.stoi.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS, EOS, STOP):
                continue
            if not 0 <= i < len(self.itos):
                raise ArgumentError(f"id {i} outside vocab of size {len(self.itos)}")
            words.append(self.itos[i])
        return join_tokens(words)

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos)), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        v = cls()
        v.itos, v.stoi = [], {}
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            try:
                tok, idx = line.rsplit("\t", 1)
                idx = int(idx)
            except ValueError:
                raise FormatError(f"{path}:{n + 1}: expected 'token<TAB>id'") from None
            if idx != len(v.itos):
                raise FormatError(f"{path}:{n + 1}: ids must be dense and ordered")
            v.itos.append(tok)
            v.stoi[tok] = idx
        if tuple(v.itos[:len(SPECIALS)]) != SPECIALS:
            raise FormatError(f"{path}: special tokens missing or reordered")
        return v


def build_vocab(corpus: Iterable[str]) -> Vocab:
    texts = list(corpus)
    if not texts:
        raise ArgumentError("cannot build a vocabulary from an empty corpus")
    tokens = sorted({t for text in texts for t in tokenize(text)})
    return Vocab(tokens)
