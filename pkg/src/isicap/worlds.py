"""Symbolic image domains: attribute schemas, images, worlds, lexicons.

A world file is a UTF-8 JSON document with keys `schema` (list of
{name, values, part?, aspect?}), `images` (list of {id, values}) and
`lexicon` ({vocab, meanings, function_tokens, eos}). Attributes an image
does not mention are filled with the explicit value "unknown", which is
always allowed in addition to the declared value set; partitions must
place every image in exactly one cell and "unknown" forms its own cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, SchemaViolation, UnknownAttribute, UnknownToken

UNKNOWN = "unknown"


@dataclass(frozen=True)
class Attribute:
    name: str
    values: tuple[str, ...]
    part: str | None = None
    aspect: str | None = None

    def allowed(self) -> frozenset:
        return frozenset(self.values) | {UNKNOWN}


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError("attribute names are not unique")
        for a in self.attributes:
            if not a.values:
                raise ValueError(f"attribute {a.name!r} has an empty value set")

    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise UnknownAttribute(name)


@dataclass(frozen=True)
class SymbolicImage:
    id: str
    values: dict

    def value(self, attribute: str) -> str:
        return self.values[attribute]


@dataclass(frozen=True)
class Lexicon:
    """Token inventory plus the (attribute, value) pairs each token describes.

    Meanings are *sets* of pairs, so a single token may truthfully cover
    several values (caption language rarely aligns one-to-one with an
    attribute system). Function tokens carry empty meanings and are
    vacuously true of every image, as is EOS.
    """

    vocab: tuple[str, ...]
    meanings: dict
    function_tokens: frozenset
    eos: str

    def __post_init__(self):
        if self.vocab.count(self.eos) != 1:
            raise ValueError("EOS must appear in the vocabulary exactly once")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocabulary tokens are not unique")
        unknown = set(self.meanings) - set(self.vocab)
        if unknown:
            raise ValueError(f"meanings for tokens outside the vocabulary: {sorted(unknown)}")

    def content_tokens(self) -> tuple[str, ...]:
        return tuple(
            t for t in self.vocab if t != self.eos and t not in self.function_tokens
        )

    def restrict(self, tokens) -> "Lexicon":
        """Sub-lexicon keeping only `tokens` (EOS is always retained)."""
        keep = set(tokens) | {self.eos}
        vocab = tuple(t for t in self.vocab if t in keep)
        return Lexicon(
            vocab=vocab,
            meanings={t: m for t, m in self.meanings.items() if t in keep},
            function_tokens=frozenset(t for t in self.function_tokens if t in keep),
            eos=self.eos,
        )


@dataclass(frozen=True)
class World:
    schema: AttributeSchema
    images: tuple[SymbolicImage, ...]
    lexicon: Lexicon

    def __post_init__(self):
        ids = [im.id for im in self.images]
        if len(set(ids)) != len(ids):
            raise ValueError("image ids are not unique")

    def ids(self) -> tuple[str, ...]:
        return tuple(im.id for im in self.images)

    def image(self, image_id: str) -> SymbolicImage:
        for im in self.images:
            if im.id == image_id:
                return im
        raise KeyError(image_id)


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ParseError(f"{where}: missing key {key!r}")
    return doc[key]


def load_world(path) -> World:
    """Load and validate a world file; see the module docstring for the format."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"cannot read world file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return world_from_dict(doc, where=str(path))


def world_from_dict(doc: dict, where: str = "<world>") -> World:
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: top level must be an object")
    schema_doc = _require(doc, "schema", where)
    images_doc = _require(doc, "images", where)
    lex_doc = _require(doc, "lexicon", where)

    attrs = []
    for k, a in enumerate(schema_doc):
        name = _require(a, "name", f"{where}: schema[{k}]")
        values = _require(a, "values", f"{where}: schema[{k}]")
        attrs.append(
            Attribute(
                name=name,
                values=tuple(values),
                part=a.get("part"),
                aspect=a.get("aspect"),
            )
        )
    try:
        schema = AttributeSchema(tuple(attrs))
    except ValueError as e:
        raise ParseError(f"{where}: {e}") from e

    images = []
    for k, im in enumerate(images_doc):
        image_id = _require(im, "id", f"{where}: images[{k}]")
        raw = _require(im, "values", f"{where}: images[{k}]")
        values = {}
        for a in schema.attributes:
            v = raw.get(a.name, UNKNOWN)
            if v not in a.allowed():
                raise SchemaViolation(
                    f"{where}: image {image_id!r}, attribute {a.name!r}: "
                    f"value {v!r} not in allowed set"
                )
            values[a.name] = v
        stray = set(raw) - set(schema.names())
        if stray:
            raise SchemaViolation(
                f"{where}: image {image_id!r} assigns undeclared attributes {sorted(stray)}"
            )
        images.append(SymbolicImage(id=image_id, values=values))

    vocab = tuple(_require(lex_doc, "vocab", f"{where}: lexicon"))
    eos = _require(lex_doc, "eos", f"{where}: lexicon")
    meanings = {}
    for tok, pairs in _require(lex_doc, "meanings", f"{where}: lexicon").items():
        pairset = frozenset((a, v) for a, v in pairs)
        for a, v in pairset:
            try:
                attr = schema.attribute(a)
            except UnknownAttribute:
                raise ParseError(
                    f"{where}: lexicon meaning for {tok!r} names unknown attribute {a!r}"
                ) from None
            if v not in attr.allowed():
                raise ParseError(
                    f"{where}: lexicon meaning for {tok!r} names unknown value {v!r} of {a!r}"
                )
        meanings[tok] = pairset
    function_tokens = frozenset(_require(lex_doc, "function_tokens", f"{where}: lexicon"))
    try:
        lexicon = Lexicon(vocab=vocab, meanings=meanings, function_tokens=function_tokens, eos=eos)
    except ValueError as e:
        raise ParseError(f"{where}: lexicon: {e}") from e

    try:
        return World(schema=schema, images=tuple(images), lexicon=lexicon)
    except ValueError as e:
        raise ParseError(f"{where}: {e}") from e


def world_to_dict(world: World) -> dict:
    schema = []
    for a in world.schema.attributes:
        entry = {"name": a.name, "values": list(a.values)}
        if a.part is not None:
            entry["part"] = a.part
        if a.aspect is not None:
            entry["aspect"] = a.aspect
        schema.append(entry)
    return {
        "schema": schema,
        "images": [{"id": im.id, "values": dict(im.values)} for im in world.images],
        "lexicon": {
            "vocab": list(world.lexicon.vocab),
            "eos": world.lexicon.eos,
            "function_tokens": sorted(world.lexicon.function_tokens),
            "meanings": {
                t: sorted(map(list, m)) for t, m in sorted(world.lexicon.meanings.items())
            },
        },
    }


def save_world(world: World, path) -> None:
    Path(path).write_text(
        json.dumps(world_to_dict(world), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def truth_value(image: SymbolicImage, token: str, lexicon: Lexicon) -> bool:
    """True iff some meaning of `token` matches the image's value map.

    Function tokens and EOS are vacuously true.
    """
    if token not in lexicon.vocab:
        raise UnknownToken(token)
    if token == lexicon.eos or token in lexicon.function_tokens:
        return True
    return any(image.values.get(a) == v for a, v in lexicon.meanings.get(token, ()))


def bundled_world_path(name: str = "shapes6") -> Path:
    """Path of a world file shipped with the package."""
    return Path(__file__).parent / "data" / f"{name}.world.json"
