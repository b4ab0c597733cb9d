"""The pragmatic model hierarchy, applied one token at a time.

Per decoding step, a literal-speaker row is collected for every context
image and Bayes-inverted (flat prior) into listener columns. The speaker
variants then score each candidate token as

    score(w) = alpha * U(w) - cost(w),        cost(w) = -log S0(w | target, prefix)

with U = U1 = log L1(target | w)                       for the plain pragmatic speaker,
     U = U1C = log sum of L1 mass in the target cell   for the issue-sensitive speaker,
     U = (1-beta) * U1C + beta * U2                    for the entropy-penalized speaker,

where U2 is the entropy of the listener restricted to the target cell:
evenness across cell-mates, discouraging descriptions specific to any one
of them. The per-step scores are normalized over the vocabulary; a whole
caption's incremental log-probability is the sum of its step terms.

An exact caption-level counterpart enumerates every EOS-terminated
sequence up to a length cap and applies the same transform globally; it
is intractable in general and exists as the desk-scale oracle.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass

import numpy as np

from .dist import Dist, entropy, log_mass, log_normalize, mask_renormalize
from .errors import AllMassZero, EnumerationTooLarge, UnknownToken
from .issues import Context
from .speakers import SpeakerBackend, caption_logprob

NEG_INF = float("-inf")

MODELS = ("s0", "s1", "s1c", "s1ch")

DEFAULT_ENUM_CAP = 100_000
ENUM_CAP_ENV = "ISIC_ENUM_CAP"


@dataclass(frozen=True)
class RsaConfig:
    """Hyperparameters of the speaker hierarchy.

    Defaults follow the published settings for the entropy-penalized
    speaker: rationality 10, entropy weight 0.4, context cell size 40.
    `entropy_mode` picks between the within-cell renormalized entropy
    (default: pure evenness; mass-in-cell is already rewarded by the
    issue utility) and entropy of the masked unnormalized vector.
    `mixture_base` picks which utility the entropy mixes with; the
    issue-sensitive one keeps the mixed speaker issue-sensitive.
    """

    alpha: float = 10.0
    beta: float = 0.4
    budget: int = 40
    max_len: int = 16
    decode: str = "greedy"
    beam_width: int = 5
    prior: str = "flat"
    entropy_mode: str = "renormalized"
    mixture_base: str = "issue"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.budget < 2:
            raise ValueError("budget must be at least 2")
        if self.max_len < 1:
            raise ValueError("max_len must be positive")
        if self.decode not in ("greedy", "beam"):
            raise ValueError("decode must be 'greedy' or 'beam'")
        if self.beam_width < 1:
            raise ValueError("beam width must be at least 1")
        if self.prior != "flat":
            raise ValueError("only the flat prior is supported")
        if self.entropy_mode not in ("renormalized", "unnormalized"):
            raise ValueError("entropy_mode must be 'renormalized' or 'unnormalized'")
        if self.mixture_base not in ("issue", "plain"):
            raise ValueError("mixture_base must be 'issue' or 'plain'")


@dataclass(frozen=True)
class StepState:
    """One decoding step: S0 rows per context image and the Bayes-inverted
    listener columns per token (tokens no image can produce are absent)."""

    prefix: tuple[str, ...]
    s0_rows: dict
    l1_cols: dict

    def vocab(self) -> tuple[str, ...]:
        return next(iter(self.s0_rows.values())).support

    def images(self) -> tuple[str, ...]:
        return tuple(self.s0_rows)


def listener_step(s0_rows: dict, token: str) -> Dist:
    """L1(image | token, prefix): Bayes over the per-image S0 rows, flat prior."""
    images = tuple(s0_rows)
    logits = [s0_rows[i].logprob(token) for i in images]
    return log_normalize(logits, images)


def build_step_state(backend: SpeakerBackend, images, prefix) -> StepState:
    prefix = tuple(prefix)
    rows = {}
    vocab = None
    for i in images:
        d = backend.next_token_logprobs(i, prefix)
        if vocab is None:
            vocab = d.support
        elif d.support != vocab:
            raise ValueError(f"backend returned misaligned support for image {i!r}")
        rows[i] = d
    cols = {}
    for tok in vocab:
        try:
            cols[tok] = listener_step(rows, tok)
        except AllMassZero:
            continue
    return StepState(prefix=prefix, s0_rows=rows, l1_cols=cols)


def utility_u1(l1: Dist, target: str) -> float:
    """log L1(target | token): -inf is a legal value (token rules target out)."""
    return l1.logprob(target)


def utility_u1_issue(l1: Dist, target: str, issue_cell) -> float:
    """log of the listener mass landing anywhere in the target's cell."""
    issue_cell = frozenset(issue_cell)
    if target not in issue_cell:
        raise ValueError("target must belong to issue_cell")
    return log_mass(l1, issue_cell)


def utility_u2_entropy(l1: Dist, issue_cell, mode: str = "renormalized") -> float:
    """Evenness of the listener within the cell (entropy, nats).

    The renormalized mode conditions the listener on the cell before
    taking the entropy; the unnormalized mode applies the entropy formula
    to the masked vector as printed. Raises AllMassZero when the cell
    carries no mass.
    """
    issue_cell = frozenset(issue_cell)
    if mode == "renormalized":
        return entropy(mask_renormalize(l1, issue_cell))
    if mode == "unnormalized":
        if log_mass(l1, issue_cell) == NEG_INF:
            raise AllMassZero("zero total mass on issue cell")
        h = 0.0
        for i in issue_cell:
            lp = l1.logprob(i)
            if lp > NEG_INF:
                h -= np.exp(lp) * lp
        return float(h)
    raise ValueError(f"unknown entropy mode {mode!r}")


def _combined_utility(l1: Dist, target: str, issue_cell, model: str, config: RsaConfig) -> float:
    """The utility U entering alpha*U - cost for one candidate, -inf legal."""
    if model == "s1":
        return utility_u1(l1, target)
    if model == "s1c":
        return utility_u1_issue(l1, target, issue_cell)
    if model == "s1ch":
        if config.mixture_base == "issue":
            base = utility_u1_issue(l1, target, issue_cell)
        else:
            base = utility_u1(l1, target)
        if config.beta == 0.0:
            return base
        if log_mass(l1, issue_cell) == NEG_INF:
            # the candidate rules out the whole cell; no evenness to speak of
            return NEG_INF
        h = utility_u2_entropy(l1, issue_cell, mode=config.entropy_mode)
        if config.beta == 1.0:
            return h
        if base == NEG_INF:
            return NEG_INF
        return (1.0 - config.beta) * base + config.beta * h
    raise ValueError(f"unknown model {model!r}")


def _require_cell(model: str, issue_cell, images) -> frozenset | None:
    if model in ("s1c", "s1ch"):
        if issue_cell is None:
            raise ValueError(f"model {model!r} requires an issue cell")
        cell = frozenset(issue_cell) & frozenset(images)
        if not cell:
            raise ValueError("issue cell shares no image with the context")
        return cell
    return None


def speaker_step(
    state: StepState,
    config: RsaConfig,
    target: str,
    issue_cell=None,
    model: str = "s1ch",
) -> Dist:
    """Next-token distribution of the chosen speaker at this step."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    row = state.s0_rows[target]
    if model == "s0" or config.alpha == 0.0:
        # alpha = 0: score(w) = -cost(w) = log S0(w), i.e. the literal row
        return row
    cell = _require_cell(model, issue_cell, state.images())
    vocab = row.support
    scores = np.full(len(vocab), NEG_INF)
    for k, tok in enumerate(vocab):
        l1 = state.l1_cols.get(tok)
        if l1 is None:
            continue  # no image can produce tok; row.logp[k] is -inf too
        u = _combined_utility(l1, target, cell, model, config)
        if u == NEG_INF:
            continue
        scores[k] = config.alpha * u + row.logp[k]
    return log_normalize(scores, vocab)


def decode_greedy(
    backend: SpeakerBackend, context: Context, config: RsaConfig, model: str = "s1ch"
) -> tuple[str, ...]:
    """Argmax decode to EOS or the length cap; ties go to the lowest
    vocabulary index, so decodes are deterministic across platforms."""
    images = context.images()
    cell = context.same_cell if model in ("s1c", "s1ch") else None
    eos = backend.eos_token
    prefix: list = []
    while len(prefix) < config.max_len:
        state = build_step_state(backend, images, prefix)
        d = speaker_step(state, config, context.target, issue_cell=cell, model=model)
        tok = d.support[int(np.argmax(d.logp))]
        prefix.append(tok)
        if tok == eos:
            return tuple(prefix)
    prefix.append(eos)
    return tuple(prefix)


def decode_beam(
    backend: SpeakerBackend, context: Context, config: RsaConfig, model: str = "s1ch"
) -> tuple[str, ...]:
    """Beam search over cumulative per-step log-scores.

    Completed hypotheses are compared by total log-score with ties broken
    lexicographically by vocabulary index, which makes beam width 1
    reproduce the greedy decode token for token.
    """
    images = context.images()
    cell = context.same_cell if model in ("s1c", "s1ch") else None
    eos = backend.eos_token
    width = config.beam_width

    def step_dist(prefix):
        state = build_step_state(backend, images, prefix)
        return speaker_step(state, config, context.target, issue_cell=cell, model=model)

    def rank(hyp):
        return (-hyp[1], hyp[2])

    # hypothesis: (tokens, cumulative log-score, vocab-index path); EOS
    # extensions compete for beam slots like any candidate, and only the
    # survivors enter the completed pool (this is what makes beam width 1
    # reproduce greedy decoding exactly, length cap included)
    live = [((), 0.0, ())]
    completed = []
    for _ in range(config.max_len):
        candidates = []
        for tokens, score, path in live:
            d = step_dist(tokens)
            for k, tok in enumerate(d.support):
                lp = float(d.logp[k])
                if lp == NEG_INF:
                    continue
                candidates.append((tokens + (tok,), score + lp, path + (k,)))
        candidates.sort(key=rank)
        live = []
        for hyp in candidates[:width]:
            if hyp[0][-1] == eos:
                completed.append(hyp)
            else:
                live.append(hyp)
        if not live:
            break
        # step scores never exceed 0, so a completion outranking every
        # live hypothesis cannot be beaten anymore
        if completed and rank(min(completed, key=rank)) <= rank(live[0]):
            break
    else:
        for tokens, score, path in live:
            d = step_dist(tokens)
            k = d.support.index(eos)
            completed.append((tokens + (eos,), score + float(d.logp[k]), path + (k,)))
    if not completed:
        raise AllMassZero("no completable hypothesis")
    return min(completed, key=rank)[0]


def decode(backend, context, config, model="s1ch"):
    if config.decode == "beam":
        return decode_beam(backend, context, config, model)
    return decode_greedy(backend, context, config, model)


def caption_level_incremental(
    backend: SpeakerBackend,
    context: Context,
    config: RsaConfig,
    model: str,
    caption,
) -> float:
    """Sum of per-step log-probabilities of `caption` (the product form)."""
    caption = tuple(caption)
    vocab = backend.vocabulary()
    eos = backend.eos_token
    if not caption or caption[-1] != eos or eos in caption[:-1]:
        raise ValueError("caption must end with EOS (and contain it only there)")
    for t in caption:
        if t not in vocab:
            raise UnknownToken(t)
    images = context.images()
    cell = context.same_cell if model in ("s1c", "s1ch") else None
    total = 0.0
    for n, tok in enumerate(caption):
        state = build_step_state(backend, images, caption[:n])
        d = speaker_step(state, config, context.target, issue_cell=cell, model=model)
        lp = d.logprob(tok)
        if lp == NEG_INF:
            return NEG_INF
        total += lp
    return total


def enumerate_captions(vocab, eos: str, max_len: int) -> list:
    """All EOS-terminated sequences with at most `max_len` content tokens."""
    content = [t for t in vocab if t != eos]
    out = []
    for k in range(max_len + 1):
        for body in itertools.product(content, repeat=k):
            out.append(body + (eos,))
    return out


def enumeration_cap() -> int:
    return int(os.environ.get(ENUM_CAP_ENV, str(DEFAULT_ENUM_CAP)))


def exact_caption_speaker(
    backend: SpeakerBackend,
    context: Context,
    config: RsaConfig,
    model: str,
    max_len: int,
) -> Dist:
    """The intractable caption-level model, computed exactly at toy scale.

    Enumerates every caption with up to `max_len` content tokens, forms
    the caption-level listener by Bayes over whole-caption S0
    log-probabilities, scores captions with the same utilities as the
    incremental steps, and normalizes globally over the enumerated space.
    Supports are caption tuples.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    vocab = backend.vocabulary()
    eos = backend.eos_token
    n_content = len(vocab) - 1
    count = sum(n_content**k for k in range(max_len + 1))
    cap = enumeration_cap()
    if count > cap:
        raise EnumerationTooLarge(
            f"{count} captions exceed the enumeration cap {cap} "
            f"(set {ENUM_CAP_ENV} to raise it)"
        )
    captions = enumerate_captions(vocab, eos, max_len)
    images = context.images()
    cell = _require_cell(model, context.same_cell, images)

    logprob = {
        i: np.array([caption_logprob(backend, i, c) for c in captions]) for i in images
    }
    target_lp = logprob[context.target]

    scores = np.full(len(captions), NEG_INF)
    for k in range(len(captions)):
        col = np.array([logprob[i][k] for i in images])
        if np.all(np.isneginf(col)):
            continue  # caption impossible for every context image
        if model == "s0" or config.alpha == 0.0:
            scores[k] = target_lp[k]
            continue
        l1 = log_normalize(col, images)
        u = _combined_utility(l1, context.target, cell, model, config)
        if u == NEG_INF:
            continue
        scores[k] = config.alpha * u + target_lp[k]
    return log_normalize(scores, [tuple(c) for c in captions])
