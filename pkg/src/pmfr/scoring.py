"""Token-overlap relevance scoring.

One scorer instance is shared by KB retrieval, adequacy assessment and
evidence ranking so all three agree on what "relevant" means. The scoring
function is a swappable surface: anything with ``score`` / ``score_batch``
can stand in (an embedding scorer, for instance).
"""

from __future__ import annotations

from importlib import resources

from . import _kernels

_DEFAULT_STOPWORDS: frozenset[str] | None = None


def load_stopwords() -> frozenset[str]:
    """Load the packaged stopword list (cached)."""
    global _DEFAULT_STOPWORDS
    if _DEFAULT_STOPWORDS is None:
        text = resources.files("pmfr.data").joinpath("stopwords.txt").read_text("utf-8")
        words = [ln.strip() for ln in text.splitlines()]
        _DEFAULT_STOPWORDS = frozenset(w for w in words if w and not w.startswith("#"))
    return _DEFAULT_STOPWORDS


class OverlapScorer:
    """Overlap coefficient |T(query) ∩ T(doc)| / |T(query)| in [0, 1].

    T splits on non-alphanumerics, lowercases, and drops a fixed stopword
    list. A query with no surviving tokens scores 0 against everything.
    """

    def __init__(self, stopwords: frozenset[str] | None = None):
        self.stopwords = load_stopwords() if stopwords is None else frozenset(stopwords)

    def tokenize(self, text: str) -> set[str]:
        return _kernels.tokenize(text, self.stopwords)

    def score(self, query: str, doc: str) -> float:
        return _kernels.overlap(self.tokenize(query), self.tokenize(doc))

    def score_batch(self, query: str, docs: list[str]) -> list[float]:
        return _kernels.score_batch(query, docs, self.stopwords)


DEFAULT_SCORER = OverlapScorer()
