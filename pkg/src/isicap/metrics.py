"""Measurement stack: sliding-window feature-in-text classifier, attribute
coverage, and issue alignment.

The classifier scans a caption left to right. Each aspect keyword binds
to the nearest head noun at token distance 0..window, where distance 0
means the keyword itself doubles as a part keyword (head nouns that
lexicalize an aspect, e.g. shape words). If the nearest head within the
window is a generic whole-body word, the aspect modifies something too
unspecific to count and yields no pair; with no head in the window it
also yields no pair. Each aspect keyword binds at most once.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, UnknownIssueMapping
from .worlds import UNKNOWN, AttributeSchema, SymbolicImage


@dataclass(frozen=True)
class ClassifierConfig:
    part_keywords: dict
    aspect_keywords: dict
    window: int = 6
    generic_parts: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self,
            "part_keywords",
            {p: frozenset(s) for p, s in self.part_keywords.items()},
        )
        object.__setattr__(
            self,
            "aspect_keywords",
            {
                issue: {v: frozenset(kw) for v, kw in values.items()}
                for issue, values in self.aspect_keywords.items()
            },
        )
        object.__setattr__(self, "generic_parts", frozenset(self.generic_parts))
        if self.window < 1:
            raise ValueError("window must be at least 1")
        seen: set = set()
        for part, syns in self.part_keywords.items():
            if seen & syns:
                raise ValueError("part synonym sets must be disjoint across parts")
            seen |= syns
        if seen & self.generic_parts:
            raise ValueError("generic parts must not double as part synonyms")


def load_classifier_config(path) -> ClassifierConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"cannot read classifier config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    try:
        return ClassifierConfig(
            part_keywords=doc["part_keywords"],
            aspect_keywords=doc["aspect_keywords"],
            window=doc.get("window", 6),
            generic_parts=frozenset(doc.get("generic_parts", ())),
        )
    except (TypeError, KeyError) as e:
        raise ParseError(f"{path}: classifier config needs part/aspect keyword maps") from e


def bundled_classifier_path(name: str = "shapes6") -> Path:
    return Path(__file__).parent / "data" / f"{name}.classifier.json"


@dataclass(frozen=True)
class ExtractedPair:
    """One (part, aspect-value) mention: `aspect` is (issue label, value),
    `span` the half-open token range from the keyword to its head."""

    part: str
    aspect: tuple[str, str]
    span: tuple[int, int]


def classify_caption(caption, config: ClassifierConfig) -> list:
    caption = list(caption)
    token_part = {
        syn: part for part, syns in config.part_keywords.items() for syn in syns
    }
    token_aspects: dict = {}
    for issue, values in config.aspect_keywords.items():
        for value, keywords in values.items():
            for kw in keywords:
                token_aspects.setdefault(kw, []).append((issue, value))

    pairs = []
    for t, tok in enumerate(caption):
        aspects = token_aspects.get(tok)
        if not aspects:
            continue
        bound = None
        for j in range(t, min(t + config.window, len(caption) - 1) + 1):
            head = caption[j]
            if head in config.generic_parts and j > t:
                break  # modifies a whole-body word; too unspecific to extract
            if head in token_part:
                bound = (token_part[head], j)
                break
        if bound is None:
            continue
        part, j = bound
        for issue, value in sorted(aspects):
            pairs.append(ExtractedPair(part=part, aspect=(issue, value), span=(t, j + 1)))
    return pairs


def pair_attribute(schema: AttributeSchema, pair: ExtractedPair):
    """The schema attribute a pair addresses (part and aspect tags match),
    or None when no attribute carries that tagging."""
    for a in schema.attributes:
        if a.part == pair.part and a.aspect == pair.aspect[0]:
            return a
    return None


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float


def _scores(precision: float, recall: float) -> Scores:
    return Scores(precision=precision, recall=recall, f1=_f1(precision, recall))


def _report_dict(report) -> dict:
    return {
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "precision_undefined": report.precision_undefined,
        "counts": {"tp": report.counts.tp, "fp": report.counts.fp, "fn": report.counts.fn},
        "per_issue": {
            k: {"precision": s.precision, "recall": s.recall, "f1": s.f1}
            for k, s in sorted(report.per_issue.items())
        },
    }


@dataclass(frozen=True)
class CoverageReport:
    """Attribute coverage of the union of per-issue captions.

    Precision counts raw extractions (duplicates included); recall counts
    distinct truth attributes recovered. tp/fp are raw correct/incorrect
    extraction counts, fn the number of missed truth attributes. A report
    with no extractions carries precision 0 flagged undefined so corpus
    aggregation stays total.
    """

    precision: float
    recall: float
    f1: float
    per_issue: dict
    counts: Counts
    precision_undefined: bool = False

    to_dict = _report_dict


@dataclass(frozen=True)
class AlignmentReport:
    """Corpus issue alignment: recall is the fraction of runs resolved
    correctly, precision the on-issue share of all extractions. tp/fn
    count runs, fp counts off-issue extractions."""

    precision: float
    recall: float
    f1: float
    per_issue: dict
    counts: Counts
    precision_undefined: bool = False

    to_dict = _report_dict


@dataclass(frozen=True)
class CoverageTallies:
    """Raw material of a coverage report; tallies from independent images
    add, which is what corpus aggregation does."""

    extractions: Counter  # attribute name (or None) -> raw extraction count
    correct: Counter  # attribute name -> correct extraction count
    covered: Counter  # attribute name -> images on which it was covered
    truth: Counter  # attribute name -> images on which it has a known value

    @staticmethod
    def empty() -> "CoverageTallies":
        return CoverageTallies(Counter(), Counter(), Counter(), Counter())

    def __add__(self, other: "CoverageTallies") -> "CoverageTallies":
        return CoverageTallies(
            self.extractions + other.extractions,
            self.correct + other.correct,
            self.covered + other.covered,
            self.truth + other.truth,
        )


def coverage_tallies(
    per_issue_captions: dict,
    truth: SymbolicImage,
    schema: AttributeSchema,
    config: ClassifierConfig,
    eos: str | None = None,
) -> CoverageTallies:
    """Classify the concatenation of one image's per-issue captions and
    compare the extracted (attribute, value) pairs against its value map."""
    tokens: list = []
    for label in sorted(per_issue_captions):
        tokens.extend(t for t in per_issue_captions[label] if t != eos)
    pairs = classify_caption(tokens, config)

    tallies = CoverageTallies.empty()
    for attr_name, value in truth.values.items():
        if value != UNKNOWN:
            tallies.truth[attr_name] += 1
    covered = set()
    for pair in pairs:
        attr = pair_attribute(schema, pair)
        name = attr.name if attr is not None else None
        tallies.extractions[name] += 1
        value = truth.values.get(name, UNKNOWN) if name is not None else UNKNOWN
        if value != UNKNOWN and value == pair.aspect[1]:
            tallies.correct[name] += 1
            covered.add(name)
    for name in covered:
        tallies.covered[name] += 1
    return tallies


def coverage_report(tallies: CoverageTallies) -> CoverageReport:
    total_ext = sum(tallies.extractions.values())
    total_correct = sum(tallies.correct.values())
    total_truth = sum(tallies.truth.values())
    total_covered = sum(
        min(tallies.covered[a], tallies.truth[a]) for a in tallies.truth
    )
    precision = total_correct / total_ext if total_ext else 0.0
    recall = total_covered / total_truth if total_truth else 0.0

    per_issue = {}
    for name in sorted(set(tallies.truth) | (set(tallies.extractions) - {None})):
        ext = tallies.extractions[name]
        p = tallies.correct[name] / ext if ext else 0.0
        r = tallies.covered[name] / tallies.truth[name] if tallies.truth[name] else 0.0
        per_issue[name] = _scores(p, r)

    return CoverageReport(
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        per_issue=per_issue,
        counts=Counts(
            tp=total_correct, fp=total_ext - total_correct, fn=total_truth - total_covered
        ),
        precision_undefined=total_ext == 0,
    )


def attribute_coverage(
    per_issue_captions: dict,
    truth: SymbolicImage,
    schema: AttributeSchema,
    config: ClassifierConfig,
    eos: str | None = None,
) -> CoverageReport:
    return coverage_report(
        coverage_tallies(per_issue_captions, truth, schema, config, eos=eos)
    )


@dataclass(frozen=True)
class AlignmentOutcome:
    """One (caption, issue) run: whether the issue was resolved, resolved
    with the true value, and how many extractions addressed other issues."""

    resolved: bool
    correct: bool
    off_issue: int
    on_issue: int


def issue_alignment(
    caption,
    issue,
    truth: SymbolicImage,
    schema: AttributeSchema,
    config: ClassifierConfig,
    eos: str | None = None,
) -> AlignmentOutcome:
    try:
        attr = schema.attribute(issue.label)
    except Exception as e:
        raise UnknownIssueMapping(issue.label) from e
    if attr.aspect not in config.aspect_keywords or attr.part not in config.part_keywords:
        raise UnknownIssueMapping(
            f"issue {issue.label!r} has no classifier-known (part, aspect) pair"
        )
    tokens = [t for t in caption if t != eos]
    pairs = classify_caption(tokens, config)
    on = [p for p in pairs if p.part == attr.part and p.aspect[0] == attr.aspect]
    return AlignmentOutcome(
        resolved=bool(on),
        correct=any(truth.values.get(attr.name) == p.aspect[1] for p in on),
        off_issue=len(pairs) - len(on),
        on_issue=len(on),
    )


def aggregate_alignment(runs) -> AlignmentReport:
    """Fold per-run (issue label, AlignmentOutcome) pairs into the corpus
    report."""
    runs = list(runs)
    total_on = sum(o.on_issue for _, o in runs)
    total_ext = sum(o.on_issue + o.off_issue for _, o in runs)
    resolved_correct = sum(1 for _, o in runs if o.resolved and o.correct)
    precision = total_on / total_ext if total_ext else 0.0
    recall = resolved_correct / len(runs) if runs else 0.0

    per_issue = {}
    for label in sorted({label for label, _ in runs}):
        mine = [o for lbl, o in runs if lbl == label]
        on = sum(o.on_issue for o in mine)
        ext = sum(o.on_issue + o.off_issue for o in mine)
        rc = sum(1 for o in mine if o.resolved and o.correct)
        per_issue[label] = _scores(on / ext if ext else 0.0, rc / len(mine))

    return AlignmentReport(
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        per_issue=per_issue,
        counts=Counts(
            tp=resolved_correct,
            fp=sum(o.off_issue for _, o in runs),
            fn=len(runs) - resolved_correct,
        ),
        precision_undefined=total_ext == 0,
    )
