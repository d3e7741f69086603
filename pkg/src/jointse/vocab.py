"""Character vocabulary with reserved ids 0=blank, 1=sos/eos, 2=pad."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

BLANK, SOS_EOS, PAD = 0, 1, 2
RESERVED = ("<blank>", "<sos/eos>", "<pad>")
DEFAULT_ALPHABET = "abcdefghij"


@dataclass
class TokenSequence:
    tokens: list
    text: str = ""

    def __len__(self):
        return len(self.tokens)


@dataclass
class Vocabulary:
    symbols: list = field(default_factory=lambda: list(DEFAULT_ALPHABET))

    def __post_init__(self):
        self.symbols = [str(s) for s in self.symbols]
        if not self.symbols:
            raise InvalidInputError("vocabulary needs at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise InvalidInputError("duplicate vocabulary symbols")
        self._index = {s: i + len(RESERVED) for i, s in enumerate(self.symbols)}

    @property
    def tokens(self):
        return list(RESERVED) + self.symbols

    def __len__(self):
        return len(RESERVED) + len(self.symbols)

    def tokenize(self, text):
        if not text:
            raise InvalidInputError("cannot tokenize an empty transcript")
        try:
            ids = [self._index[ch] for ch in text]
        except KeyError as exc:
            raise InvalidInputError(f"character {exc.args[0]!r} not in vocabulary") from None
        return TokenSequence(ids, text)

    def detokenize(self, tokens):
        ids = getattr(tokens, "tokens", tokens)
        out = []
        for i in ids:
            i = int(i)
            if i < len(RESERVED) or i >= len(self):
                raise InvalidInputError(f"token id {i} is not a symbol")
            out.append(self.symbols[i - len(RESERVED)])
        return "".join(out)

    def strip_special(self, ids):
        return [int(i) for i in ids if len(RESERVED) <= int(i) < len(self)]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.rstrip("\n")]
        if tuple(lines[:3]) != RESERVED:
            raise InvalidInputError(f"{path}: first three lines must be {RESERVED}")
        return cls(lines[3:])


def pad_targets(seqs, pad=PAD):
    """Stack id lists into ``[B, U_max]`` plus their lengths."""
    lengths = np.array([len(s) for s in seqs])
    out = np.full((len(seqs), max(lengths.max(), 1)), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths
