"""Pure-Python scoring kernel, the fallback when the compiled one is absent.

Must stay bit-identical to ``_scoring.pyx``: same token charset (ASCII
alphanumeric runs), same lowercasing, same overlap arithmetic.
"""

import re

_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")


def tokenize(text, stopwords):
    """Split on non-alphanumerics, lowercase, drop stopwords; returns a set."""
    return {t for t in (m.lower() for m in _TOKEN_RE.findall(text)) if t not in stopwords}


def overlap(query_tokens, doc_tokens):
    """Overlap coefficient |q ∩ d| / |q|; 0.0 for an empty query set."""
    if not query_tokens:
        return 0.0
    return len(query_tokens & doc_tokens) / len(query_tokens)


def score_batch(query, docs, stopwords):
    """Score a query against many documents; one tokenize of the query."""
    q = tokenize(query, stopwords)
    if not q:
        return [0.0] * len(docs)
    n = len(q)
    out = []
    for doc in docs:
        d = tokenize(doc, stopwords)
        out.append(len(q & d) / n)
    return out
