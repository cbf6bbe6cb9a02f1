"""Report-generation metrics: BLEU, ROUGE-N/L, exact-match METEOR and distinct-n.

All scorers take token lists; a plain string is tokenized with the LM tokenizer
first so callers can pass raw report text.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

from .errors import ArgumentError
from .text_lm.vocab import tokenize

Tokens = Union[str, Sequence[str]]
METRICS = ("BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR")
ROW_LABEL = "Model / Method"


def _toks(x: Tokens) -> List[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def clipped_overlap(cand: Sequence[str], ref: Sequence[str], n: int) -> int:
    c, r = ngrams(cand, n), ngrams(ref, n)
    return sum(min(k, r[g]) for g, k in c.items())


def bleu(cand: Tokens, ref: Tokens, max_n: int = 4) -> float:
    """Sentence BLEU with a 1/(2*denominator) floor for empty n-gram matches."""
    c, r = _toks(cand), _toks(ref)
    if not c:
        return 0.0
    if max_n < 1:
        raise ArgumentError("max_n must be >= 1")
    top = min(max_n, len(c))
    logs = []
    for n in range(1, top + 1):
        denom = len(c) - n + 1
        hits = clipped_overlap(c, r, n)
        logs.append(math.log(hits / denom if hits else 1.0 / (2 * denom)))
    bp = math.exp(1.0 - len(r) / len(c)) if len(c) < len(r) else 1.0
    return bp * math.exp(sum(logs) / top)


def _prf(hits: int, n_cand: int, n_ref: int) -> Tuple[float, float, float]:
    p = hits / n_cand if n_cand else 0.0
    r = hits / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def rouge_n(cand: Tokens, ref: Tokens, n: int = 1) -> Tuple[float, float, float]:
    if n < 1:
        raise ArgumentError("n must be >= 1")
    c, r = _toks(cand), _toks(ref)
    return _prf(clipped_overlap(c, r, n), max(len(c) - n + 1, 0), max(len(r) - n + 1, 0))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_prf(cand: Tokens, ref: Tokens) -> Tuple[float, float, float]:
    c, r = _toks(cand), _toks(ref)
    return _prf(lcs_length(c, r), len(c), len(r))


def rouge_l(cand: Tokens, ref: Tokens) -> float:
    return rouge_l_prf(cand, ref)[2]


def align_exact(cand: Sequence[str], ref: Sequence[str]) -> List[Tuple[int, int]]:
    """Greedy left-to-right one-to-one alignment of identical unigrams."""
    used = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(cand):
        for j, other in enumerate(ref):
            if not used[j] and other == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def count_chunks(pairs: Sequence[Tuple[int, int]]) -> int:
    chunks = 0
    last = None
    for i, j in sorted(pairs):
        if last is None or i != last[0] + 1 or j != last[1] + 1:
            chunks += 1
        last = (i, j)
    return chunks


def meteor_lite(cand: Tokens, ref: Tokens) -> float:
    c, r = _toks(cand), _toks(ref)
    pairs = align_exact(c, r)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    fmean = 10 * p * rec / (rec + 9 * p)
    return fmean * (1.0 - 0.5 * (count_chunks(pairs) / m) ** 3)


def distinct_n(samples: Sequence[Tokens], n: int = 2) -> float:
    if n < 1:
        raise ArgumentError("n must be >= 1")
    seen = set()
    total = 0
    for s in samples:
        toks = _toks(s)
        for i in range(len(toks) - n + 1):
            seen.add(tuple(toks[i:i + n]))
            total += 1
    return len(seen) / total if total else 0.0


def score_pair(cand: Tokens, ref: Tokens) -> Dict[str, float]:
    c, r = _toks(cand), _toks(ref)
    return {
        "BLEU": bleu(c, r),
        "ROUGE-1": rouge_n(c, r, 1)[2],
        "ROUGE-2": rouge_n(c, r, 2)[2],
        "ROUGE-L": rouge_l(c, r),
        "METEOR": meteor_lite(c, r),
    }


@dataclass
class ScoredPair:
    id: str
    candidate: List[str]
    reference: List[str]
    scores: Dict[str, float]


@dataclass
class EvalReport:
    pairs: List[ScoredPair]
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def means(self) -> Dict[str, float]:
        if not self.pairs:
            return {m: 0.0 for m in METRICS}
        return {m: sum(p.scores[m] for p in self.pairs) / len(self.pairs) for m in METRICS}

    def row(self, label: str = "") -> str:
        means = self.means
        label = label or str(self.metadata.get("label", "run"))
        return "\t".join([label] + [f"{means[m]:.4f}" for m in METRICS])

    def to_tsv(self, label: str = "") -> str:
        return format_table([self.row(label)])

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "means": self.means,
            "pairs": [
                {"id": p.id, "candidate": " ".join(p.candidate), "reference": " ".join(p.reference), "scores": p.scores}
                for p in self.pairs
            ],
        }

    def save(self, out_dir, stem: str = "eval", label: str = "") -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.tsv").write_text(self.to_tsv(label), encoding="utf-8")
        (out_dir / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


def format_table(rows: Sequence[str], first_column: str = ROW_LABEL) -> str:
    return "\n".join(["\t".join((first_column,) + METRICS), *rows]) + "\n"


def evaluate_pairs(
    references: Mapping[str, Tokens],
    generations: Mapping[str, Tokens],
    metadata: Mapping[str, object] = None,
) -> EvalReport:
    """Score generations against references keyed by record id; output is ordered by id."""
    if len(references) != len(generations) or set(references) != set(generations):
        raise ArgumentError(
            f"need exactly one generation per reference ({len(generations)} generations, {len(references)} references)"
        )
    pairs = []
    for rid in sorted(references):
        c, r = _toks(generations[rid]), _toks(references[rid])
        pairs.append(ScoredPair(rid, c, r, score_pair(c, r)))
    return EvalReport(pairs, dict(metadata or {}))
