"""Candidate selection among first-stage samples via a pluggable scorer.

A scorer maps (image, prompt) to a float; higher is better. ``select_best``
returns the argmax index, breaking ties toward the lowest index. Scoring the
edited crop (rather than the full composited frame) is the default working
view; callers that want whole-image scoring pass that image in.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Protocol, Sequence

import numpy as np

from .backend_protocol import BackendClient, image_to_chw
from .errors import BackendError


class Scorer(Protocol):
    def score(self, image: np.ndarray, prompt: str) -> float: ...


class MockScorer:
    """Negative L2 distance to a reference buffer; ignores the prompt.

    With the default zero reference the score is -||image||_2, matching the
    test server's scoring rule.
    """

    def __init__(self, reference: np.ndarray | None = None):
        self.reference = None if reference is None else np.asarray(reference, dtype=np.float64)

    def score(self, image: np.ndarray, prompt: str) -> float:
        x = np.asarray(image, dtype=np.float64)
        ref = np.zeros_like(x) if self.reference is None else self.reference
        if ref.shape != x.shape:
            raise ValueError(f"reference shape {ref.shape} != image shape {x.shape}")
        return -float(np.sqrt(((x - ref) ** 2).sum()))


class RemoteScorer:
    """Scores via the /v1/score endpoint of a backend server."""

    def __init__(self, client: BackendClient):
        self.client = client

    def score(self, image: np.ndarray, prompt: str) -> float:
        return self.client.score(image_to_chw(np.asarray(image, dtype=np.float32)), prompt)


def select_best(scorer: Scorer, candidates: Sequence[np.ndarray], prompt: str,
                jobs: int = 1) -> int:
    """Index of the highest-scoring candidate; ties break to the lowest index.

    ``jobs`` > 1 scores candidates concurrently; selection order is unaffected
    because scores are collected positionally.
    """
    if len(candidates) == 0:
        raise ValueError("need at least one candidate")
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(candidates) == 1:
        scores = [scorer.score(c, prompt) for c in candidates]
    else:
        with ThreadPoolExecutor(max_workers=min(jobs, len(candidates))) as pool:
            scores = list(pool.map(lambda c: scorer.score(c, prompt), candidates))
    for i, s in enumerate(scores):
        if not np.isfinite(s):
            raise BackendError(f"scorer returned non-finite score {s!r} for candidate {i}")
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best
