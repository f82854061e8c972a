"""Token vocabulary built from training notes.

Cleaning rule: lowercase everything, then drop any token containing a
non-alphabetic character. Ids are dense, with id 0 reserved for the unknown
token; known tokens are numbered in lexicographic order so the same notes
always produce the same vocabulary.
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass, field

import numpy as np

UNK_TOKEN = "<unk>"
UNK_ID = 0

VOCAB_FORMAT_VERSION = 1


def clean_tokens(text: str) -> list[str]:
    """Whitespace tokenization, lowercased, alphabetic tokens only."""
    return [t for t in text.lower().split() if t.isalpha()]


@dataclass
class Vocabulary:
    token_to_id: dict[str, int] = field(default_factory=lambda: {UNK_TOKEN: UNK_ID})

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, text: str, max_len: int) -> np.ndarray:
        """Token ids for a document, truncated to max_len.

        A document with no surviving tokens encodes as a single unknown
        token so every document has at least one position.
        """
        if max_len <= 0:
            raise ValueError(f"max_len must be positive, got {max_len}")
        ids = [
            self.token_to_id.get(tok, UNK_ID) for tok in clean_tokens(text)[:max_len]
        ]
        if not ids:
            ids = [UNK_ID]
        return np.asarray(ids, dtype=np.int64)

    def sha256(self) -> str:
        blob = json.dumps(self.token_to_id, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def build_vocabulary(texts) -> Vocabulary:
    """Collect every surviving training token, lexicographically numbered
    after the reserved unknown id."""
    tokens: set[str] = set()
    for text in texts:
        tokens.update(clean_tokens(text))
    tokens.discard(UNK_TOKEN)
    mapping = {UNK_TOKEN: UNK_ID}
    for i, tok in enumerate(sorted(tokens), start=1):
        mapping[tok] = i
    return Vocabulary(token_to_id=mapping)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    payload = {"format_version": VOCAB_FORMAT_VERSION, "tokens": vocab.token_to_id}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_vocabulary(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != VOCAB_FORMAT_VERSION:
        raise ValueError(f"unsupported vocabulary format version: {version!r}")
    return Vocabulary(token_to_id={t: int(i) for t, i in payload["tokens"].items()})


def load_text_embeddings(path, vocab: Vocabulary, d_e: int, rng) -> np.ndarray:
    """Initial word-embedding matrix from a whitespace text file.

    Each line is `token v1 v2 ... v_{d_e}`. Tokens outside the vocabulary
    are skipped; vocabulary tokens absent from the file (the unknown token
    included) keep a random uniform(-0.1, 0.1) row.
    """
    emb = rng.uniform(-0.1, 0.1, size=(len(vocab), d_e))
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, vals = parts[0], parts[1:]
            if len(vals) != d_e:
                raise ValueError(
                    f"{path}:{lineno}: expected {d_e} values, got {len(vals)}"
                )
            idx = vocab.token_to_id.get(token)
            if idx is not None:
                emb[idx] = np.asarray([float(v) for v in vals])
    return emb
