"""Issues: partitions of image ids into disjoint cells, and sampled contexts.

An issue partitions a domain of image ids; each cell is one possible
resolution. Issues come from attribute tables (one cell per observed
value, "unknown" included) or from question/answer tables (one cell per
distinct answer string, questions matched exactly).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import ImageNotInIssue, ParseError, UnknownQuestion
from .worlds import World


@dataclass(frozen=True)
class Issue:
    """A partition of a set of image ids into disjoint non-empty cells."""

    cells: tuple[frozenset, ...]
    label: str

    def __post_init__(self):
        cells = tuple(frozenset(c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        seen = set()
        for c in cells:
            if not c:
                raise ValueError(f"issue {self.label!r} has an empty cell")
            if seen & c:
                raise ValueError(f"issue {self.label!r} has overlapping cells")
            seen |= c

    def domain(self) -> frozenset:
        return frozenset().union(*self.cells) if self.cells else frozenset()


@dataclass(frozen=True)
class Context:
    """The image set one decode reasons over: the target's cell-mates plus
    distractors drawn from the other cells, capped by a size budget."""

    target: str
    same_cell: tuple[str, ...]
    distractors: tuple[str, ...]
    issue_label: str

    def __post_init__(self):
        if self.target not in self.same_cell:
            raise ValueError("target must be in same_cell")
        if set(self.same_cell) & set(self.distractors):
            raise ValueError("same_cell and distractors overlap")

    def images(self) -> tuple[str, ...]:
        return self.same_cell + self.distractors


def _check_partition(issue: Issue, domain) -> Issue:
    # cells must tile the declared domain exactly
    assert sum(len(c) for c in issue.cells) == len(issue.domain())
    assert issue.domain() == frozenset(domain)
    return issue


def partition_by_attribute(world: World, attribute: str) -> Issue:
    """Group the world's images into equivalence classes by one attribute."""
    world.schema.attribute(attribute)  # raises UnknownAttribute
    by_value: dict = {}
    for im in world.images:
        by_value.setdefault(im.values[attribute], set()).add(im.id)
    cells = tuple(frozenset(by_value[v]) for v in sorted(by_value))
    return _check_partition(Issue(cells=cells, label=attribute), world.ids())


def load_qa_table(path) -> list:
    """Read a QA table: a JSON list of {question, image_id, answer}."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"cannot read QA table {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    rows = []
    for k, row in enumerate(doc):
        try:
            rows.append((row["question"], row["image_id"], row["answer"]))
        except (TypeError, KeyError) as e:
            raise ParseError(f"{path}: row {k} needs question/image_id/answer") from e
    return rows


def partition_by_qa(qa, question: str) -> Issue:
    """Partition the images paired with `question` by their answer strings.

    `qa` is an iterable of (question, image_id, answer) rows; the question
    must occur verbatim. Answer strings are taken as-is: normalization of
    free-text answers happens upstream of the table.
    """
    by_answer: dict = {}
    for q, image_id, answer in qa:
        if q == question:
            by_answer.setdefault(answer, set()).add(image_id)
    if not by_answer:
        raise UnknownQuestion(question)
    domain = set().union(*by_answer.values())
    cells = tuple(frozenset(by_answer[a]) for a in sorted(by_answer))
    return _check_partition(Issue(cells=cells, label=question), domain)


def cell_of(issue: Issue, image_id: str) -> frozenset:
    """The unique cell containing `image_id`."""
    for c in issue.cells:
        if image_id in c:
            return c
    raise ImageNotInIssue(f"{image_id!r} not in issue {issue.label!r}")


def sample_context(issue: Issue, target: str, budget: int, seed: int) -> Context:
    """Draw a computation context of at most `budget` images around `target`.

    The target is always kept. The remaining slots are split evenly
    between the target's cell-mates and the union of the other cells
    (distractor identity per cell is irrelevant to the utilities, so
    distractor cells are merged before sampling). Pools smaller than
    their share are taken whole and the leftover rolls to the other
    side. Sampling is uniform without replacement and deterministic
    given the seed.
    """
    if budget < 2:
        raise ValueError("budget must be at least 2")
    target_cell = cell_of(issue, target)
    mates = sorted(target_cell - {target})
    others = sorted(issue.domain() - target_cell)

    remaining = budget - 1
    mate_share = remaining // 2
    take_mates = min(len(mates), mate_share)
    take_others = min(len(others), remaining - take_mates)
    take_mates = min(len(mates), remaining - take_others)  # roll leftover back

    rng = random.Random(seed)
    picked_mates = sorted(rng.sample(mates, take_mates))
    picked_others = sorted(rng.sample(others, take_others))
    return Context(
        target=target,
        same_cell=(target, *picked_mates),
        distractors=tuple(picked_others),
        issue_label=issue.label,
    )


def issue_to_dict(issue: Issue) -> dict:
    return {"label": issue.label, "cells": [sorted(c) for c in issue.cells]}


def issue_from_dict(doc: dict) -> Issue:
    try:
        return Issue(
            cells=tuple(frozenset(c) for c in doc["cells"]), label=doc["label"]
        )
    except (TypeError, KeyError) as e:
        raise ParseError("issue document needs label and cells") from e


def load_issue(path) -> Issue:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"cannot read issue file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return issue_from_dict(doc)
