"""Base-speaker backends: the "next-token log-distribution given image and
prefix" contract, with a synthetic template speaker, the feature-averaging
baseline, and a client for external speakers over a line-oriented socket
protocol.

The template speaker is a truth-weighted unigram model with a repetition
penalty: the decoding-time method under test only needs *some* valid
conditional distribution, and this one keeps toy-world behavior
analytically checkable. Its EOS hazard grows geometrically with prefix
length, so expected caption length is finite and enumeration truncation
error is boundable.
"""

from __future__ import annotations

import json
import math
import socket
import threading
from dataclasses import dataclass

import numpy as np

from .dist import Dist, log_normalize
from .errors import EmptyCell, ProtocolError, Timeout, UnknownToken, VocabMismatch
from .worlds import Lexicon, World, truth_value

NORMALIZATION_TOLERANCE = 1e-6


class SpeakerBackend:
    """Contract: a deterministic next-token log-distribution per (image, prefix).

    Every returned Dist has support equal to `vocabulary()` in the same
    order, every call.
    """

    def vocabulary(self) -> tuple[str, ...]:
        raise NotImplementedError

    @property
    def eos_token(self) -> str:
        raise NotImplementedError

    def next_token_logprobs(self, image_id: str, prefix) -> Dist:
        raise NotImplementedError


@dataclass(frozen=True)
class TemplateSpeakerParams:
    """Weights of the synthetic speaker.

    p_true/p_noise weight true/false content tokens, p_function weights
    function tokens, and the EOS weight is p_noise * eos_rate**len(prefix);
    at prefix length max_len the distribution collapses to EOS.
    """

    p_true: float = 10.0
    p_noise: float = 0.1
    p_function: float = 0.5
    eos_rate: float = 3.0
    max_len: int = 6

    def __post_init__(self):
        if not self.p_true > self.p_noise >= 0:
            raise ValueError("need p_true > p_noise >= 0")
        if self.p_function < 0:
            raise ValueError("p_function must be nonnegative")
        if self.eos_rate <= 1:
            raise ValueError("eos_rate must exceed 1")
        if self.max_len < 1:
            raise ValueError("max_len must be positive")


def _log_weight(w: float) -> float:
    return math.log(w) if w > 0 else float("-inf")


class _UnigramSpeaker(SpeakerBackend):
    """Shared machinery for the template and feature-average speakers.

    Subclass hook `_truth_fraction(image_id, token)` returns the fraction
    of the conditioning cell the token is true of; the template speaker is
    the singleton case where the fraction is 0 or 1.
    """

    def __init__(self, world: World, lexicon: Lexicon, params: TemplateSpeakerParams):
        self.world = world
        self.lexicon = lexicon
        self.params = params
        self._vocab = tuple(lexicon.vocab)
        self._known = frozenset(im.id for im in world.images)

    def vocabulary(self) -> tuple[str, ...]:
        return self._vocab

    @property
    def eos_token(self) -> str:
        return self.lexicon.eos

    def _truth_fraction(self, image_id: str, token: str) -> float:
        raise NotImplementedError

    def next_token_logprobs(self, image_id: str, prefix) -> Dist:
        if image_id not in self._known:
            raise KeyError(f"unknown image id {image_id!r}")
        prefix = tuple(prefix)
        for t in prefix:
            if t not in self.lexicon.vocab:
                raise UnknownToken(t)
        p = self.params
        if len(prefix) >= p.max_len:
            logits = [0.0 if t == self.lexicon.eos else float("-inf") for t in self._vocab]
            return log_normalize(logits, self._vocab)
        emitted = set(prefix)
        logits = []
        for t in self._vocab:
            if t == self.lexicon.eos:
                w = p.p_noise * p.eos_rate ** len(prefix)
            elif t in self.lexicon.function_tokens:
                w = p.p_function
            elif t in emitted:
                w = p.p_noise
            else:
                frac = self._truth_fraction(image_id, t)
                if frac >= 1.0:
                    w = p.p_true
                elif frac <= 0.0:
                    w = p.p_noise
                else:
                    w = p.p_noise + (p.p_true - p.p_noise) * frac
            logits.append(_log_weight(w))
        return log_normalize(logits, self._vocab)


class TemplateSpeaker(_UnigramSpeaker):
    def _truth_fraction(self, image_id: str, token: str) -> float:
        return 1.0 if truth_value(self.world.image(image_id), token, self.lexicon) else 0.0


class AvgFeatureSpeaker(_UnigramSpeaker):
    """Conditions on the mean truth indicator over a cell instead of one image."""

    def __init__(self, world, lexicon, params, cell):
        super().__init__(world, lexicon, params)
        cell = tuple(sorted(cell))
        if not cell:
            raise EmptyCell("feature-average cell is empty")
        members = [world.image(i) for i in cell]
        self._fractions = {
            t: sum(truth_value(im, t, lexicon) for im in members) / len(members)
            for t in lexicon.content_tokens()
        }

    def _truth_fraction(self, image_id: str, token: str) -> float:
        return self._fractions[token]


def template_speaker(
    world: World, lexicon: Lexicon | None = None, params: TemplateSpeakerParams | None = None
) -> SpeakerBackend:
    return TemplateSpeaker(world, lexicon or world.lexicon, params or TemplateSpeakerParams())


def avg_feature_speaker(
    world: World,
    lexicon: Lexicon | None = None,
    params: TemplateSpeakerParams | None = None,
    cell=(),
) -> SpeakerBackend:
    return AvgFeatureSpeaker(
        world, lexicon or world.lexicon, params or TemplateSpeakerParams(), cell
    )


class CachedBackend(SpeakerBackend):
    """Memoizes next_token_logprobs per (image, prefix).

    Sound because the backend contract requires determinism; worthwhile
    wherever enumeration revisits shared prefixes.
    """

    def __init__(self, backend: SpeakerBackend):
        self._backend = backend
        self._cache: dict = {}

    def vocabulary(self):
        return self._backend.vocabulary()

    @property
    def eos_token(self):
        return self._backend.eos_token

    def next_token_logprobs(self, image_id, prefix):
        key = (image_id, tuple(prefix))
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = self._backend.next_token_logprobs(image_id, prefix)
        return hit


class RemoteSpeaker(SpeakerBackend):
    """Client for the speaker wire protocol (newline-delimited JSON over a
    stream socket, one request in flight per connection).

    Served vectors are validated: the length must match the handshake
    vocabulary and the probability mass must be 1 within 1e-6, after which
    the vector is renormalized exactly. Out-of-tolerance vectors are
    bridging bugs and fail loudly.
    """

    def __init__(self, endpoint, timeout: float = 10.0):
        host, port = _parse_endpoint(endpoint)
        self._lock = threading.Lock()
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except socket.timeout as e:
            raise Timeout(f"connecting to {host}:{port}") from e
        except OSError as e:
            raise ProtocolError(f"cannot connect to {host}:{port}: {e}") from e
        self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
        reply = self._request({"type": "hello"})
        if reply.get("type") != "vocab" or "tokens" not in reply or "eos" not in reply:
            raise ProtocolError(f"bad handshake reply: {reply}")
        self._vocab = tuple(reply["tokens"])
        self._eos = reply["eos"]
        if self._eos not in self._vocab:
            raise ProtocolError("handshake EOS is not in the served vocabulary")

    def _request(self, message: dict) -> dict:
        with self._lock:
            try:
                self._sock.sendall((json.dumps(message) + "\n").encode("utf-8"))
                line = self._reader.readline()
            except socket.timeout as e:
                raise Timeout("remote speaker did not answer") from e
            except OSError as e:
                raise ProtocolError(f"connection failed: {e}") from e
        if not line:
            raise ProtocolError("server closed the connection")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"malformed reply: {line!r}") from e
        if not isinstance(reply, dict):
            raise ProtocolError(f"malformed reply: {line!r}")
        if reply.get("type") == "error":
            raise ProtocolError(f"server error: {reply.get('message', '')}")
        return reply

    def vocabulary(self) -> tuple[str, ...]:
        return self._vocab

    @property
    def eos_token(self) -> str:
        return self._eos

    def next_token_logprobs(self, image_id: str, prefix) -> Dist:
        reply = self._request(
            {"type": "next", "image": image_id, "prefix": list(prefix)}
        )
        if reply.get("type") != "dist" or "logp" not in reply:
            raise ProtocolError(f"bad next-token reply: {reply}")
        logp = np.asarray(reply["logp"], dtype=float)
        if logp.ndim != 1 or logp.shape[0] != len(self._vocab):
            raise VocabMismatch(
                f"served vector length {logp.shape} does not match vocabulary "
                f"size {len(self._vocab)}"
            )
        if np.isnan(logp).any() or np.isposinf(logp).any():
            raise ProtocolError("served vector contains NaN or +inf")
        mass = float(np.sum(np.exp(logp)))
        if abs(mass - 1.0) > NORMALIZATION_TOLERANCE:
            raise ProtocolError(
                f"served vector has probability mass {mass:.8f}, outside tolerance"
            )
        return log_normalize(logp, self._vocab)

    def close(self):
        try:
            self._reader.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_endpoint(endpoint):
    if isinstance(endpoint, (tuple, list)) and len(endpoint) == 2:
        return endpoint[0], int(endpoint[1])
    host, _, port = str(endpoint).rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


def remote_speaker(endpoint, timeout: float = 10.0) -> RemoteSpeaker:
    return RemoteSpeaker(endpoint, timeout=timeout)


def caption_logprob(backend: SpeakerBackend, image_id: str, caption) -> float:
    """Log-probability of an EOS-terminated caption under a backend."""
    caption = tuple(caption)
    vocab = set(backend.vocabulary())
    eos = backend.eos_token
    if not caption or caption[-1] != eos:
        raise ValueError("caption must end with EOS")
    for t in caption:
        if t not in vocab:
            raise UnknownToken(t)
    total = 0.0
    for n, tok in enumerate(caption):
        d = backend.next_token_logprobs(image_id, caption[:n])
        total += d.logprob(tok)
    return total
