"""Closed vocabulary for the template QA language.

Tokens are whitespace-delimited words.  The vocabulary is assembled from the
template file plus every possible slot filler, so encoding any generated QA
pair never hits an unknown word.  Ids are stable: specials first, then the
sorted word list.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from dima.errors import CapacityError, NotFoundError

BOS = "<bos>"
EOS = "<eos>"
PAD = "<pad>"
SEP = "<sep>"
SPECIALS = (PAD, BOS, SEP, EOS)

MAX_VOCAB = 256

BUCKET_STEP = 0.5
BUCKET_LIMIT = 40  # tokens b-40 .. b40 cover +/- 20 m


def bucket_token(value: float) -> str:
    idx = int(np.clip(round(value / BUCKET_STEP), -BUCKET_LIMIT, BUCKET_LIMIT))
    return f"b{idx}"


def template_text() -> str:
    return resources.files("dima.assets").joinpath("qa_templates.txt").read_text()


def _template_words(text: str) -> set[str]:
    words: set[str] = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("["):
            continue
        for tok in line.split()[1:]:  # drop the Q/A tag
            if not (tok.startswith("{") and tok.endswith("}")):
                words.add(tok)
    return words


# closed slot filler sets; multiword fillers contribute every word
_FILLER_WORDS = [
    "stay", "stopped", "keep", "going", "straight", "steer", "left", "right",
    "reverse", "turn", "around", "start", "moving", "pass", "vehicle", "ahead",
    "steering", "reversing", "slow", "moderate", "fast",
    "car", "truck", "pedestrian", "bicycle", "of", "behind",
] + [str(d) for d in range(10)] + [f"b{i}" for i in range(-BUCKET_LIMIT, BUCKET_LIMIT + 1)]


class Vocabulary:
    def __init__(self, tokens: list[str]):
        if len(tokens) != len(set(tokens)):
            raise CapacityError("duplicate tokens in vocabulary")
        if len(tokens) > MAX_VOCAB:
            raise CapacityError(f"vocabulary of {len(tokens)} exceeds {MAX_VOCAB}")
        self.tokens = list(tokens)
        self.ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: list[str]) -> list[int]:
        missing = [w for w in words if w not in self.ids]
        if missing:
            raise NotFoundError(f"unknown tokens: {missing}")
        return [self.ids[w] for w in words]

    def decode(self, ids: list[int]) -> list[str]:
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise NotFoundError(f"token id {i} out of range")
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path) as fh:
            return cls([line.rstrip("\n") for line in fh if line.strip()])


def build_vocab() -> Vocabulary:
    words = _template_words(template_text()) | set(_FILLER_WORDS)
    return Vocabulary(list(SPECIALS) + sorted(words))
