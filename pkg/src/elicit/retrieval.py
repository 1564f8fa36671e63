"""Text encoding and anchor retrieval.

Finds the bank snippet whose doctor utterance is most similar to the current
question, always excluding the current patient's own records. The fallback
encoder is a deterministic hashed bag-of-tokens; the remote encoder delegates
to the embeddings endpoint in `backends`.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass

import numpy as np

from .bank import Snippet, SnippetBank

FALLBACK_DIM = 256
REMOTE_DIM = 384

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmptyTextError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class EmptyCandidateSetError(ValueError):
    """Raised when excluding the patient leaves no snippet to retrieve from."""


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray
    dim: int

    def __post_init__(self):
        if self.values.shape != (self.dim,):
            raise DimensionMismatchError(f"expected shape ({self.dim},), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite values")


class FallbackEncoder:
    """Deterministic dependency-free encoder: hashed token counts, L2-normalised."""

    kind = "fallback"

    def __init__(self, dim: int = FALLBACK_DIM):
        self.dim = dim

    def encode(self, text: str) -> Embedding:
        stripped = text.strip()
        if not stripped:
            raise EmptyTextError("cannot encode empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        tokens = _TOKEN_RE.findall(stripped.lower())
        if not tokens:
            vec[0] = 1.0  # punctuation-only input still gets a unit vector
        for tok in tokens:
            vec[zlib.crc32(tok.encode("utf-8")) % self.dim] += 1.0
        vec /= np.linalg.norm(vec)
        return Embedding(values=vec, dim=self.dim)


class RemoteEncoder:
    """Encoder backed by the embeddings endpoint; vectors are re-normalised here."""

    kind = "remote"

    def __init__(self, client, dim: int = REMOTE_DIM):
        self.client = client
        self.dim = dim

    def encode(self, text: str) -> Embedding:
        stripped = text.strip()
        if not stripped:
            raise EmptyTextError("cannot encode empty text")
        vec = np.asarray(self.client.embed([stripped])[0], dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
        return Embedding(values=vec, dim=len(vec))


def encode(backend, text: str) -> Embedding:
    return backend.encode(text)


def cosine(u: Embedding, v: Embedding) -> float:
    if u.dim != v.dim:
        raise DimensionMismatchError(f"dim mismatch: {u.dim} vs {v.dim}")
    nu = np.linalg.norm(u.values)
    nv = np.linalg.norm(v.values)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    val = float(np.dot(u.values, v.values) / (nu * nv))
    return min(1.0, max(-1.0, val))


def _tie_key(s: Snippet) -> tuple:
    # content-based: permuting bank order must never change the winner
    return (s.patient_id, s.session_id, s.scenario_id, s.doctor_curr, s.patient_reply)


class AnchorRetriever:
    """Precomputes doctor-utterance embeddings for one bank and retrieves anchors.

    Retrieval audit: every retrieved snippet's patient id is appended to
    `audit_log`, which validation harnesses may inspect for leakage.
    """

    def __init__(self, bank: SnippetBank, backend):
        if len(bank) == 0:
            raise EmptyCandidateSetError("bank is empty")
        self.bank = bank
        self.backend = backend
        self._embeddings = [backend.encode(s.doctor_curr) for s in bank.snippets]
        self.audit_log: list[str] = []

    def retrieve(self, query: str, exclude_patient: str) -> tuple[Snippet, float]:
        q = self.backend.encode(query)
        best: tuple[float, tuple, int] | None = None
        for i, s in enumerate(self.bank.snippets):
            if s.patient_id == exclude_patient:
                continue
            cand = (cosine(q, self._embeddings[i]), _tie_key(s), i)
            if best is None or cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                best = cand
        if best is None:
            raise EmptyCandidateSetError(
                f"every snippet belongs to excluded patient {exclude_patient!r}"
            )
        snippet = self.bank.snippets[best[2]]
        self.audit_log.append(snippet.patient_id)
        return snippet, best[0]


def retrieve_anchor(
    bank: SnippetBank, query: str, exclude_patient: str, backend
) -> tuple[Snippet, float]:
    """One-shot retrieval without a precomputed index (brute-force semantics)."""
    return AnchorRetriever(bank, backend).retrieve(query, exclude_patient)
