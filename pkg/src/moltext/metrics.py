"""String, chemistry, and text-overlap metrics plus report assembly.

Two report shapes: :class:`MetricsReport` scores SMILES candidates against
references (string metrics over all pairs, chemistry metrics over the
pairs where both sides parse, with the denominators reported), and
:class:`TextMetricsReport` scores generated descriptions (word-level BLEU,
ROUGE, simplified METEOR).

The fingerprint-comparison column normally filled by a pretrained
activity model is reported as "n/a": scoring it needs model weights this
package does not ship.  MACCS-style keys are likewise absent; Morgan and
path fingerprints stand in, each under its own clearly named column.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from moltext import smiles as sm

__all__ = [
    "MetricsReport",
    "TextMetricsReport",
    "ReportCounts",
    "levenshtein",
    "bleu",
    "tanimoto",
    "rouge_n",
    "rouge_l",
    "meteor_simplified",
    "evaluate_text2mol",
    "evaluate_mol2text",
    "per_pair_records",
    "render_text2mol_table",
    "render_mol2text_table",
]

FCD_PLACEHOLDER = "n/a (requires pretrained activity model)"


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,  # delete
                cur[j - 1] + 1,  # insert
                prev[j - 1] + (ca != cb),  # substitute
            )
        prev = cur
    return prev[-1]


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidate: Sequence[str],
    reference: Sequence[str],
    max_n: int = 4,
    weights: Sequence[float] | None = None,
) -> float:
    """Sentence BLEU with brevity penalty and 1e-9 numerator smoothing.

    Orders whose n-gram total is zero (candidate shorter than n) are
    dropped and the remaining weights renormalized, so bleu(x, x) is 1.0
    for any nonempty x.  Orders with n-grams but zero matches get the
    smoothing numerator instead.  Pass token lists: characters for SMILES,
    words for prose.
    """
    cand = list(candidate)
    ref = list(reference)
    if not cand or not ref:
        return 0.0
    if weights is None:
        weights = [1.0 / max_n] * max_n
    if len(weights) != max_n:
        raise ValueError(f"need {max_n} weights, got {len(weights)}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {sum(weights)!r}")

    log_sum = 0.0
    used_weight = 0.0
    for n in range(1, max_n + 1):
        total = len(cand) - n + 1
        if total < 1:
            continue
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        matched = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        p = (matched if matched > 0 else 1e-9) / total
        log_sum += weights[n - 1] * math.log(p)
        used_weight += weights[n - 1]
    if used_weight <= 0.0:
        return 0.0
    geo_mean = math.exp(log_sum / used_weight)
    brevity = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return brevity * geo_mean


def tanimoto(a: sm.BitFingerprint, b: sm.BitFingerprint) -> float:
    """|A and B| / |A or B|; 0.0 when both fingerprints are all-zero."""
    if a.nbits != b.nbits:
        raise ValueError(f"fingerprint widths differ: {a.nbits} vs {b.nbits}")
    union = len(a.bits | b.bits)
    if union == 0:
        return 0.0
    return len(a.bits & b.bits) / union


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> float:
    """Recall-mode n-gram overlap: clipped matches over reference count."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    ref_counts = _ngram_counts(list(reference), n)
    total = sum(ref_counts.values())
    if total == 0:
        return 0.0
    cand_counts = _ngram_counts(list(candidate), n)
    matched = sum(min(c, cand_counts[g]) for g, c in ref_counts.items())
    return matched / total


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """F1 over the longest common subsequence (beta = 1)."""
    cand = list(candidate)
    ref = list(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 2.0 * p * r / (p + r)


# A deliberately small Porter-style stripper: enough to equate common
# inflections (cats/cat, running/run after doubling is NOT undone, walked/
# walk).  Frozen by tests; not a full stemmer and not meant to be.
def _stem(word: str) -> str:
    w = word.lower()
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif not w.endswith("ss") and w.endswith("s") and len(w) > 3:
        w = w[:-1]
    for suffix in ("ing", "ed", "ly"):
        if w.endswith(suffix) and len(w) - len(suffix) >= 3:
            w = w[: -len(suffix)]
            break
    return w


def meteor_simplified(
    candidate: Sequence[str],
    reference: Sequence[str],
    alpha: float = 0.9,
) -> float:
    """Unigram-alignment score: exact matches first, stemmed second.

    F_mean = P*R / (alpha*P + (1-alpha)*R) with recall-heavy alpha = 0.9,
    discounted by 0.5 * (chunks / matches)^3.  No synonym table.  A text
    scored against itself gives 1 - 0.5/m^3 for m tokens, not 1.0: the
    single chunk still pays its (small) penalty.
    """
    cand = list(candidate)
    ref = list(reference)
    if not cand or not ref:
        return 0.0

    ref_taken = [False] * len(ref)
    mapping: dict[int, int] = {}
    for exact in (True, False):
        for i, tok in enumerate(cand):
            if i in mapping:
                continue
            key = tok if exact else _stem(tok)
            for j, rtok in enumerate(ref):
                if ref_taken[j]:
                    continue
                if key == (rtok if exact else _stem(rtok)):
                    mapping[i] = j
                    ref_taken[j] = True
                    break

    m = len(mapping)
    if m == 0:
        return 0.0
    precision = m / len(cand)
    recall = m / len(ref)
    f_mean = precision * recall / (alpha * precision + (1.0 - alpha) * recall)

    chunks = 0
    prev: tuple[int, int] | None = None
    for i in sorted(mapping):
        j = mapping[i]
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


# ------------------------------------------------------------------ reports


@dataclass(frozen=True)
class ReportCounts:
    pairs: int
    valid_candidates: int
    # Pairs where reference and candidate both parse; the denominator for
    # canonical match and the fingerprint similarities.
    fts_pairs: int


@dataclass(frozen=True)
class MetricsReport:
    bleu: float
    exact: float
    canonical_match: float
    levenshtein: float
    validity: float
    path_fts: float
    morgan_fts: float
    counts: ReportCounts

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["fcd"] = None
        rec["kind"] = "text2mol"
        return rec


@dataclass(frozen=True)
class TextMetricsReport:
    bleu2: float
    bleu4: float
    rouge1: float
    rouge2: float
    rougeL: float
    meteor: float
    counts: ReportCounts

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["kind"] = "mol2text"
        return rec


def _parse_or_none(text: str) -> sm.MoleculeGraph | None:
    try:
        return sm.parse_smiles(text)
    except sm.SmilesError:
        return None


def evaluate_text2mol(
    references: Sequence[str],
    candidates: Sequence[str],
    *,
    morgan_radius: int = 2,
    fp_bits: int = 2048,
    path_max_len: int = 7,
) -> MetricsReport:
    """Score candidate SMILES against references, one candidate per pair.

    String metrics (character BLEU, exact match, edit distance) cover all
    pairs; validity covers all candidates; canonical match and the two
    fingerprint similarities cover only the pairs where both sides parse,
    and that denominator is reported in ``counts.fts_pairs``.
    """
    if len(references) != len(candidates):
        raise ValueError(
            f"length mismatch: {len(references)} references vs {len(candidates)} candidates"
        )
    if not references:
        raise ValueError("no pairs to evaluate")

    bleu_sum = exact_sum = lev_sum = 0.0
    valid = 0
    canon_sum = morgan_sum = path_sum = 0.0
    both = 0
    for ref, cand in zip(references, candidates):
        bleu_sum += bleu(list(cand), list(ref), max_n=4)
        exact_sum += 1.0 if ref == cand else 0.0
        lev_sum += levenshtein(ref, cand)
        g_cand = _parse_or_none(cand)
        if g_cand is not None:
            valid += 1
        g_ref = _parse_or_none(ref)
        if g_cand is None or g_ref is None:
            continue
        both += 1
        canon_sum += 1.0 if sm.canonical_smiles(g_ref) == sm.canonical_smiles(g_cand) else 0.0
        morgan_sum += tanimoto(
            sm.morgan_fingerprint(g_ref, morgan_radius, fp_bits),
            sm.morgan_fingerprint(g_cand, morgan_radius, fp_bits),
        )
        path_sum += tanimoto(
            sm.path_fingerprint(g_ref, path_max_len, fp_bits),
            sm.path_fingerprint(g_cand, path_max_len, fp_bits),
        )

    n = len(references)
    return MetricsReport(
        bleu=bleu_sum / n,
        exact=exact_sum / n,
        canonical_match=canon_sum / both if both else 0.0,
        levenshtein=lev_sum / n,
        validity=valid / n,
        path_fts=path_sum / both if both else 0.0,
        morgan_fts=morgan_sum / both if both else 0.0,
        counts=ReportCounts(pairs=n, valid_candidates=valid, fts_pairs=both),
    )


def _words(text: str) -> list[str]:
    return text.lower().split()


def evaluate_mol2text(references: Sequence[str], candidates: Sequence[str]) -> TextMetricsReport:
    """Score generated descriptions with word-level overlap metrics."""
    if len(references) != len(candidates):
        raise ValueError(
            f"length mismatch: {len(references)} references vs {len(candidates)} candidates"
        )
    if not references:
        raise ValueError("no pairs to evaluate")
    sums = [0.0] * 6
    for ref, cand in zip(references, candidates):
        rw, cw = _words(ref), _words(cand)
        sums[0] += bleu(cw, rw, max_n=2)
        sums[1] += bleu(cw, rw, max_n=4)
        sums[2] += rouge_n(cw, rw, 1)
        sums[3] += rouge_n(cw, rw, 2)
        sums[4] += rouge_l(cw, rw)
        sums[5] += meteor_simplified(cw, rw)
    n = len(references)
    return TextMetricsReport(
        bleu2=sums[0] / n,
        bleu4=sums[1] / n,
        rouge1=sums[2] / n,
        rouge2=sums[3] / n,
        rougeL=sums[4] / n,
        meteor=sums[5] / n,
        counts=ReportCounts(pairs=n, valid_candidates=n, fts_pairs=n),
    )


def per_pair_records(
    references: Sequence[str], candidates: Sequence[str], ids: Sequence[str] | None = None
) -> Iterable[dict]:
    """One JSON-ready record per pair with the string-level metrics."""
    for k, (ref, cand) in enumerate(zip(references, candidates)):
        rec = {
            "id": ids[k] if ids is not None else str(k),
            "reference": ref,
            "candidate": cand,
            "bleu": bleu(list(cand), list(ref), max_n=4),
            "exact": ref == cand,
            "levenshtein": levenshtein(ref, cand),
            "valid": _parse_or_none(cand) is not None,
        }
        yield rec


def _fmt_row(cells: list[str], widths: list[int]) -> str:
    return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()


def _render_table(headers: list[str], values: list[str], counts: ReportCounts) -> str:
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    lines = [
        _fmt_row(headers, widths),
        _fmt_row(["-" * w for w in widths], widths),
        _fmt_row(values, widths),
        "",
        f"pairs={counts.pairs}  valid_candidates={counts.valid_candidates}"
        f"  fts_pairs={counts.fts_pairs}",
    ]
    return "\n".join(lines) + "\n"


def render_text2mol_table(report: MetricsReport) -> str:
    headers = [
        "BLEU", "Exact", "Canonical", "Levenshtein", "Validity",
        "Path FTS", "Morgan FTS", "FCD",
    ]
    values = [
        f"{report.bleu:.4f}",
        f"{report.exact:.4f}",
        f"{report.canonical_match:.4f}",
        f"{report.levenshtein:.4f}",
        f"{report.validity:.4f}",
        f"{report.path_fts:.4f}",
        f"{report.morgan_fts:.4f}",
        FCD_PLACEHOLDER,
    ]
    return _render_table(headers, values, report.counts)


def render_mol2text_table(report: TextMetricsReport) -> str:
    headers = ["BLEU-2", "BLEU-4", "ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR"]
    values = [
        f"{report.bleu2:.4f}",
        f"{report.bleu4:.4f}",
        f"{report.rouge1:.4f}",
        f"{report.rouge2:.4f}",
        f"{report.rougeL:.4f}",
        f"{report.meteor:.4f}",
    ]
    return _render_table(headers, values, report.counts)


def report_to_json_line(report: MetricsReport | TextMetricsReport) -> str:
    return json.dumps(report.to_record(), sort_keys=True)
