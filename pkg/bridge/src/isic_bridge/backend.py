"""Backends servable over the wire protocol.

A backend exposes `vocab()` (token list ending nowhere in particular but
containing exactly one EOS) and `logprobs(image_id, prefix)` returning a
normalized log-probability vector aligned with the vocabulary. The mock
backend reimplements the truth-weighted unigram rule straight from a
world file, so a served distribution can be checked against an
independent in-process implementation to the last few ulps.

To wrap a real conditional caption model, subclass BridgeBackend and
return your model's next-token log-probabilities from `logprobs`; the
server does the rest.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

NEG_INF = float("-inf")

# weights of the reference synthetic speaker; these mirror the consumer's
# documented defaults, which is what makes the mock useful for conformance
P_TRUE = 10.0
P_NOISE = 0.1
P_FUNCTION = 0.5
EOS_RATE = 3.0
MAX_LEN = 6


class BridgeBackend:
    def vocab(self) -> list:
        raise NotImplementedError

    def eos(self) -> str:
        raise NotImplementedError

    def logprobs(self, image_id: str, prefix) -> list:
        raise NotImplementedError


def _log_normalize(weights):
    logs = [math.log(w) if w > 0 else NEG_INF for w in weights]
    peak = max(logs)
    if peak == NEG_INF:
        raise ValueError("all weights are zero")
    norm = peak + math.log(sum(math.exp(x - peak) for x in logs))
    return [x - norm for x in logs]


class MockTemplateBackend(BridgeBackend):
    """Truth-weighted unigram speaker with a repetition penalty and a
    geometrically growing EOS hazard, read from a world file."""

    def __init__(
        self,
        world_path,
        p_true: float = P_TRUE,
        p_noise: float = P_NOISE,
        p_function: float = P_FUNCTION,
        eos_rate: float = EOS_RATE,
        max_len: int = MAX_LEN,
    ):
        doc = json.loads(Path(world_path).read_text(encoding="utf-8"))
        lex = doc["lexicon"]
        self._vocab = list(lex["vocab"])
        self._eos = lex["eos"]
        self._function = set(lex["function_tokens"])
        self._meanings = {
            tok: [tuple(pair) for pair in pairs]
            for tok, pairs in lex["meanings"].items()
        }
        self._images = {im["id"]: dict(im["values"]) for im in doc["images"]}
        self.p_true = p_true
        self.p_noise = p_noise
        self.p_function = p_function
        self.eos_rate = eos_rate
        self.max_len = max_len

    def vocab(self):
        return list(self._vocab)

    def eos(self):
        return self._eos

    def _true_of(self, values, token) -> bool:
        return any(values.get(a) == v for a, v in self._meanings.get(token, ()))

    def logprobs(self, image_id, prefix):
        values = self._images.get(image_id)
        if values is None:
            raise KeyError(f"unknown image id {image_id!r}")
        prefix = list(prefix)
        for t in prefix:
            if t not in self._vocab:
                raise KeyError(f"unknown token {t!r} in prefix")
        if len(prefix) >= self.max_len:
            return [0.0 if t == self._eos else NEG_INF for t in self._vocab]
        emitted = set(prefix)
        weights = []
        for t in self._vocab:
            if t == self._eos:
                weights.append(self.p_noise * self.eos_rate ** len(prefix))
            elif t in self._function:
                weights.append(self.p_function)
            elif t in emitted:
                weights.append(self.p_noise)
            elif self._true_of(values, t):
                weights.append(self.p_true)
            else:
                weights.append(self.p_noise)
        return _log_normalize(weights)


def mock_backend(world_path, **params) -> MockTemplateBackend:
    return MockTemplateBackend(world_path, **params)
