"""Event schema: the closed vocabulary of event types and argument roles."""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import SchemaError

_SCHEMA_KEYS = {"name", "version", "event_types"}
_TYPE_KEYS = {"name", "definition", "roles"}
_ROLE_KEYS = {"name", "definition"}


@dataclass(frozen=True)
class ArgumentRoleDef:
    name: str
    definition: str


@dataclass(frozen=True)
class EventTypeDef:
    name: str
    definition: str
    roles: tuple[ArgumentRoleDef, ...]

    @property
    def role_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.roles)

    def role(self, name: str) -> ArgumentRoleDef | None:
        for r in self.roles:
            if r.name == name:
                return r
        return None


@dataclass(frozen=True)
class EventSchema:
    name: str
    event_types: tuple[EventTypeDef, ...]
    version: str = ""

    def __post_init__(self) -> None:
        if not self.event_types:
            raise SchemaError("schema must define at least one event type", "event_types")
        seen: set[str] = set()
        for i, et in enumerate(self.event_types):
            if et.name in seen:
                raise SchemaError(f"duplicate event type {et.name!r}", f"event_types[{i}].name")
            seen.add(et.name)
            roles: set[str] = set()
            for j, r in enumerate(et.roles):
                if r.name in roles:
                    raise SchemaError(
                        f"duplicate role {r.name!r} in event type {et.name!r}",
                        f"event_types[{i}].roles[{j}].name",
                    )
                roles.add(r.name)

    @property
    def type_names(self) -> tuple[str, ...]:
        return tuple(et.name for et in self.event_types)

    def get(self, name: str) -> EventTypeDef | None:
        for et in self.event_types:
            if et.name == name:
                return et
        return None

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and self.get(name) is not None

    def has_role(self, event_type: str, role: str) -> bool:
        et = self.get(event_type)
        return et is not None and et.role(role) is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "version": self.version,
            "event_types": [
                {
                    "name": et.name,
                    "definition": et.definition,
                    "roles": [{"name": r.name, "definition": r.definition} for r in et.roles],
                }
                for et in self.event_types
            ],
        }


def _text(obj: dict, key: str, path: str, *, allow_empty: bool = False) -> str:
    if key not in obj:
        raise SchemaError(f"missing required key {key!r}", path)
    value = obj[key]
    if not isinstance(value, str):
        raise SchemaError(f"{key!r} must be a string", f"{path}.{key}")
    value = value.strip()
    if not value and not allow_empty:
        raise SchemaError(f"{key!r} must be non-empty", f"{path}.{key}")
    return value


def _check_keys(obj: Any, allowed: set[str], path: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError("expected a JSON object", path)
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise SchemaError(f"unknown key(s) {', '.join(map(repr, unknown))}", path)


def schema_from_dict(doc: Any) -> EventSchema:
    """Validate a decoded schema document and build an :class:`EventSchema`."""
    _check_keys(doc, _SCHEMA_KEYS, "$")
    name = _text(doc, "name", "$")
    version = _text(doc, "version", "$", allow_empty=True) if "version" in doc else ""
    raw_types = doc.get("event_types")
    if not isinstance(raw_types, list):
        raise SchemaError("'event_types' must be an array", "$.event_types")

    types = []
    for i, rt in enumerate(raw_types):
        tpath = f"event_types[{i}]"
        _check_keys(rt, _TYPE_KEYS, tpath)
        raw_roles = rt.get("roles", [])
        if not isinstance(raw_roles, list):
            raise SchemaError("'roles' must be an array", f"{tpath}.roles")
        roles = []
        for j, rr in enumerate(raw_roles):
            rpath = f"{tpath}.roles[{j}]"
            _check_keys(rr, _ROLE_KEYS, rpath)
            roles.append(ArgumentRoleDef(_text(rr, "name", rpath), _text(rr, "definition", rpath)))
        types.append(EventTypeDef(_text(rt, "name", tpath), _text(rt, "definition", tpath), tuple(roles)))
    return EventSchema(name=name, event_types=tuple(types), version=version)


def load_schema(source: str | Path | bytes) -> EventSchema:
    """Load a schema from a JSON file path or raw document bytes.

    Raises:
        SchemaError: on malformed JSON or any validation failure. The error's
            ``path`` names the offending location in the document.
    """
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source).decode("utf-8")
    else:
        raw = Path(source).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON ({exc.msg} at line {exc.lineno})", "$") from exc
    return schema_from_dict(doc)


def maritime_schema() -> EventSchema:
    """The bundled 16-type / 6-role Maritime schema."""
    data = resources.files("evextract.data").joinpath("maritime_schema.json").read_bytes()
    return load_schema(data)


def schema_subset(schema: EventSchema, types: Iterable[str]) -> EventSchema:
    """Restrict ``schema`` to the given event types, keeping schema order."""
    wanted = {t.strip() for t in types}
    unknown = sorted(t for t in wanted if t not in schema)
    if unknown:
        raise SchemaError(f"unknown event type(s): {', '.join(unknown)}", "event_types")
    kept = tuple(et for et in schema.event_types if et.name in wanted)
    return EventSchema(name=schema.name, event_types=kept, version=schema.version)
