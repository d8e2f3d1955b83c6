# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled scoring kernel. Bit-identical contract with _scoring_py."""


cdef inline bint _is_alnum(Py_UCS4 ch):
    return (u'0' <= ch <= u'9') or (u'a' <= ch <= u'z') or (u'A' <= ch <= u'Z')


cpdef set tokenize(str text, frozenset stopwords):
    """Split on non-alphanumerics, lowercase, drop stopwords; returns a set."""
    cdef Py_ssize_t i, n = len(text), start = -1
    cdef Py_UCS4 ch
    cdef set out = set()
    cdef str tok
    for i in range(n):
        ch = text[i]
        if _is_alnum(ch):
            if start < 0:
                start = i
        elif start >= 0:
            tok = text[start:i].lower()
            if tok not in stopwords:
                out.add(tok)
            start = -1
    if start >= 0:
        tok = text[start:n].lower()
        if tok not in stopwords:
            out.add(tok)
    return out


cpdef double overlap(set query_tokens, set doc_tokens):
    """Overlap coefficient |q ∩ d| / |q|; 0.0 for an empty query set."""
    cdef Py_ssize_t nq = len(query_tokens)
    if nq == 0:
        return 0.0
    cdef Py_ssize_t inter = 0
    cdef set small = query_tokens, large = doc_tokens
    if len(doc_tokens) < nq:
        small = doc_tokens
        large = query_tokens
    for tok in small:
        if tok in large:
            inter += 1
    return inter / <double> nq


def score_batch(str query, list docs, frozenset stopwords):
    """Score a query against many documents; one tokenize of the query."""
    cdef set q = tokenize(query, stopwords)
    cdef Py_ssize_t nq = len(q)
    cdef list out = []
    cdef set d
    cdef Py_ssize_t inter
    if nq == 0:
        return [0.0] * len(docs)
    for doc in docs:
        d = tokenize(<str> doc, stopwords)
        inter = 0
        if len(d) < nq:
            for tok in d:
                if tok in q:
                    inter += 1
        else:
            for tok in q:
                if tok in d:
                    inter += 1
        out.append(inter / <double> nq)
    return out
