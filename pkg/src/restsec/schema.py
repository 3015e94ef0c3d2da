"""OpenAPI v3 ingestion: normalized endpoint/parameter model and path-hierarchy queries."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import yaml

logger = logging.getLogger(__name__)

HTTP_VERBS = ("GET", "POST", "PUT", "PATCH", "DELETE", "HEAD", "OPTIONS")

# Verbs that can modify a specific resource; several oracles reason about this trio.
MODIFYING_VERBS = ("DELETE", "PUT", "PATCH")

PARAM_LOCATIONS = ("path", "query", "header", "body-field")

_PLACEHOLDER_RE = re.compile(r"\{([^{}/]+)\}")


class SchemaError(Exception):
    """Base error for schema loading and queries."""


class SchemaParseError(SchemaError):
    """Document does not parse; carries a location when the parser provides one."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class UnsupportedVersionError(SchemaError):
    """Document is not OpenAPI v3."""


class UnknownPathError(SchemaError):
    """Queried path is not declared in the schema."""


def path_placeholders(path: str) -> list[str]:
    return _PLACEHOLDER_RE.findall(path)


@dataclass(frozen=True, order=True)
class EndpointId:
    """One schema operation: HTTP verb plus path template."""

    verb: str
    path: str

    def __post_init__(self):
        if self.verb not in HTTP_VERBS:
            raise ValueError(f"unknown HTTP verb: {self.verb!r}")
        if not self.path.startswith("/"):
            raise ValueError(f"path must start with '/': {self.path!r}")
        names = path_placeholders(self.path)
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate placeholder names in path: {self.path!r}")

    def __str__(self):
        return f"{self.verb} {self.path}"

    @property
    def placeholders(self) -> list[str]:
        return path_placeholders(self.path)


@dataclass
class Constraints:
    """Input constraints attached to one parameter or body field."""

    min_length: int | None = None
    max_length: int | None = None
    enum: list | None = None
    pattern: str | None = None
    minimum: float | None = None
    maximum: float | None = None

    def __post_init__(self):
        if (
            self.min_length is not None
            and self.max_length is not None
            and self.min_length > self.max_length
        ):
            raise SchemaError(f"minLength {self.min_length} > maxLength {self.max_length}")
        if self.minimum is not None and self.maximum is not None and self.minimum > self.maximum:
            raise SchemaError(f"minimum {self.minimum} > maximum {self.maximum}")

    def allows_string(self, value: str) -> bool:
        """True when a string value satisfies every declared constraint."""
        if self.min_length is not None and len(value) < self.min_length:
            return False
        if self.max_length is not None and len(value) > self.max_length:
            return False
        if self.enum is not None and value not in self.enum:
            return False
        if self.pattern is not None:
            try:
                if not re.fullmatch(self.pattern, value):
                    return False
            except re.error:
                return False
        return True


@dataclass
class ParamSpec:
    """One input slot of an endpoint (path/query/header parameter or flattened body field)."""

    name: str
    location: str
    value_kind: str = "string"
    constraints: Constraints = field(default_factory=Constraints)
    required: bool = False


@dataclass
class EndpointSpec:
    id: EndpointId
    parameters: list[ParamSpec] = field(default_factory=list)
    body_media_type: str | None = None
    declared_responses: set[int] = field(default_factory=set)

    def params_in(self, *locations: str) -> list[ParamSpec]:
        return [p for p in self.parameters if p.location in locations]


@dataclass
class PathNode:
    """Node of the declared-path hierarchy; children reference declared templates only."""

    template: str
    children: list[str] = field(default_factory=list)
    endpoints: list[str] = field(default_factory=list)


def _strip_slash(path: str) -> str:
    return path[:-1] if path.endswith("/") and len(path) > 1 else path


class SchemaModel:
    """Immutable view of the declared endpoints of one OpenAPI document."""

    def __init__(self, endpoints: list[EndpointSpec], warnings: list[str], source: str = ""):
        self.endpoints: dict[EndpointId, EndpointSpec] = {e.id: e for e in endpoints}
        self.warnings = list(warnings)
        self.source = source
        self._verbs_by_path: dict[str, list[str]] = {}
        for eid in self.endpoints:
            self._verbs_by_path.setdefault(eid.path, []).append(eid.verb)

    @property
    def paths(self) -> list[str]:
        return sorted(self._verbs_by_path)

    def endpoint_ids(self) -> list[EndpointId]:
        return sorted(self.endpoints)

    def spec_for(self, endpoint: EndpointId) -> EndpointSpec:
        return self.endpoints[endpoint]

    def verbs_at(self, path: str) -> list[str]:
        if path not in self._verbs_by_path:
            raise UnknownPathError(f"path not declared in schema: {path}")
        return sorted(self._verbs_by_path[path])

    def has(self, verb: str, path: str) -> bool:
        return EndpointId(verb, path) in self.endpoints

    def path_tree(self) -> dict[str, PathNode]:
        """One node per declared path; parent is the nearest declared URL ancestor."""
        nodes = {p: PathNode(p, endpoints=self.verbs_at(p)) for p in self.paths}
        for p in self.paths:
            parent = None
            for candidate in self._ancestor_prefixes(p):
                if candidate in nodes:
                    parent = candidate
            if parent is not None:
                nodes[parent].children.append(p)
        return nodes

    def _ancestor_prefixes(self, path: str) -> list[str]:
        """Strict URL-path prefixes of `path`, root-first, matched against declared paths.

        A declared path equal to the input modulo a trailing slash is not an ancestor.
        """
        segments = [s for s in _strip_slash(path).split("/") if s != ""]
        out = []
        for i in range(1, len(segments)):
            prefix = "/" + "/".join(segments[:i])
            for candidate in (prefix, prefix + "/"):
                if candidate in self._verbs_by_path and _strip_slash(candidate) != _strip_slash(path):
                    out.append(candidate)
        return out

    def top_get_ancestor(self, path: str) -> EndpointId | None:
        """GET endpoint on the ancestor path closest to the root, if any."""
        if path not in self._verbs_by_path:
            raise UnknownPathError(f"path not declared in schema: {path}")
        for candidate in self._ancestor_prefixes(path):
            if "GET" in self._verbs_by_path[candidate]:
                return EndpointId("GET", candidate)
        return None

    def undeclared_verbs(self, path: str, allow_header: list[str]) -> list[str]:
        """Verbs advertised by an Allow header but not declared at `path`.

        OPTIONS and HEAD are always excluded; order follows the Allow header.
        """
        declared = set(self.verbs_at(path))
        out = []
        for verb in allow_header:
            v = verb.strip().upper()
            if not v or v in ("OPTIONS", "HEAD") or v in declared or v not in HTTP_VERBS:
                continue
            if v not in out:
                out.append(v)
        return out


def _parse_document(document: bytes | str, fmt: str):
    if isinstance(document, bytes):
        document = document.decode("utf-8", errors="replace")
    if fmt == "json":
        try:
            return json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    if fmt == "yaml":
        try:
            return yaml.safe_load(document)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark
            raise SchemaParseError(
                f"invalid YAML: {exc.problem or exc}",
                None if mark is None else mark.line + 1,
                None if mark is None else mark.column + 1,
            ) from exc
        except yaml.YAMLError as exc:
            raise SchemaParseError(f"invalid YAML: {exc}") from exc
    raise ValueError(f"unknown schema format: {fmt!r} (expected 'json' or 'yaml')")


class _RefResolver:
    """Resolves internal $ref pointers; external file/URL refs are rejected."""

    def __init__(self, root: dict, warnings: list[str]):
        self.root = root
        self.warnings = warnings

    def resolve(self, node, seen: frozenset = frozenset()):
        if isinstance(node, list):
            return [self.resolve(item, seen) for item in node]
        if not isinstance(node, dict):
            return node
        if "$ref" in node:
            ref = node["$ref"]
            if not isinstance(ref, str) or not ref.startswith("#/"):
                raise SchemaError(
                    f"external $ref not supported: {ref!r} (only internal '#/' references)"
                )
            if ref in seen:
                self.warnings.append(f"circular $ref left unresolved: {ref}")
                return {}
            target = self._lookup(ref)
            return self.resolve(target, seen | {ref})
        return {k: self.resolve(v, seen) for k, v in node.items()}

    def _lookup(self, ref: str):
        node = self.root
        for token in ref[2:].split("/"):
            token = token.replace("~1", "/").replace("~0", "~")
            if not isinstance(node, dict) or token not in node:
                raise SchemaError(f"unresolvable $ref: {ref}")
            node = node[token]
        return node


def _constraints_from(schema: dict) -> Constraints:
    return Constraints(
        min_length=schema.get("minLength"),
        max_length=schema.get("maxLength"),
        enum=schema.get("enum"),
        pattern=schema.get("pattern"),
        minimum=schema.get("minimum"),
        maximum=schema.get("maximum"),
    )


def _value_kind(schema: dict) -> str:
    kind = schema.get("type")
    if kind in ("string", "integer", "number", "boolean", "array", "object"):
        return kind
    if "properties" in schema:
        return "object"
    return "string"


def _pick_alternative(schema: dict, warnings: list[str], where: str) -> dict:
    for key in ("oneOf", "anyOf"):
        alternatives = schema.get(key)
        if isinstance(alternatives, list) and alternatives:
            warnings.append(f"{where}: {key} with {len(alternatives)} alternatives, using the first")
            return alternatives[0]
    return schema


def _flatten_body(schema: dict, warnings: list[str], where: str, prefix: str = "",
                  required_names: set | None = None, depth: int = 0) -> list[ParamSpec]:
    """Flatten a body schema into body-field ParamSpecs with dotted names for nesting."""
    params: list[ParamSpec] = []
    if depth > 8:
        warnings.append(f"{where}: body nesting deeper than 8 levels, truncated")
        return params
    schema = _pick_alternative(schema, warnings, where)
    kind = _value_kind(schema)
    if kind == "object":
        props = schema.get("properties") or {}
        required = set(schema.get("required") or [])
        for name, sub in sorted(props.items()):
            if not isinstance(sub, dict):
                continue
            sub = _pick_alternative(sub, warnings, f"{where}.{name}")
            dotted = f"{prefix}{name}"
            if _value_kind(sub) == "object" and sub.get("properties"):
                params.extend(
                    _flatten_body(sub, warnings, where, prefix=f"{dotted}.", depth=depth + 1)
                )
            else:
                params.append(
                    ParamSpec(
                        name=dotted,
                        location="body-field",
                        value_kind=_value_kind(sub),
                        constraints=_constraints_from(sub),
                        required=name in required,
                    )
                )
        if not props:
            warnings.append(f"{where}: body object declares no properties")
    else:
        params.append(
            ParamSpec(
                name=prefix or "body",
                location="body-field",
                value_kind=kind,
                constraints=_constraints_from(schema),
                required=True,
            )
        )
    return params


def load_schema(document: bytes | str, fmt: str = "json", source: str = "") -> SchemaModel:
    """Parse an OpenAPI v3 document into a SchemaModel.

    Unsupported constructs are recorded as warnings rather than failures; a
    document that is not OpenAPI v3 raises UnsupportedVersionError.
    """
    data = _parse_document(document, fmt)
    if not isinstance(data, dict):
        raise SchemaParseError("document is not a mapping")
    version = data.get("openapi")
    if version is None:
        if "swagger" in data:
            raise UnsupportedVersionError(
                f"OpenAPI version < 3 not supported (swagger {data['swagger']!r})"
            )
        raise UnsupportedVersionError("missing 'openapi' version field")
    if not str(version).startswith("3"):
        raise UnsupportedVersionError(f"OpenAPI version {version!r} not supported (need 3.x)")

    warnings: list[str] = []
    resolver = _RefResolver(data, warnings)
    paths = data.get("paths") or {}
    if not paths:
        warnings.append("empty schema: no paths declared")

    endpoints: list[EndpointSpec] = []
    for path, item in sorted(paths.items()):
        if not isinstance(item, dict):
            warnings.append(f"{path}: path item is not a mapping, skipped")
            continue
        item = resolver.resolve(item)
        shared_params = item.get("parameters") or []
        for verb_key, op in sorted(item.items()):
            verb = verb_key.upper()
            if verb not in HTTP_VERBS or not isinstance(op, dict):
                continue
            where = f"{verb} {path}"
            try:
                eid = EndpointId(verb, path)
            except ValueError as exc:
                raise SchemaError(f"{where}: {exc}") from exc
            params: list[ParamSpec] = []
            for raw in list(shared_params) + list(op.get("parameters") or []):
                if not isinstance(raw, dict) or "name" not in raw:
                    warnings.append(f"{where}: malformed parameter entry skipped")
                    continue
                loc = raw.get("in", "query")
                if loc not in ("path", "query", "header"):
                    warnings.append(f"{where}: parameter location {loc!r} unsupported, skipped")
                    continue
                pschema = _pick_alternative(raw.get("schema") or {}, warnings, where)
                params.append(
                    ParamSpec(
                        name=raw["name"],
                        location=loc,
                        value_kind=_value_kind(pschema),
                        constraints=_constraints_from(pschema),
                        required=bool(raw.get("required", loc == "path")),
                    )
                )
            body_media = None
            body = op.get("requestBody")
            if isinstance(body, dict):
                content = body.get("content") or {}
                if content:
                    media = (
                        "application/json"
                        if "application/json" in content
                        else sorted(content)[0]
                    )
                    body_media = media
                    if "multipart" in media or "form-data" in media:
                        warnings.append(f"{where}: multipart/form-data body unhandled")
                    else:
                        body_schema = (content.get(media) or {}).get("schema") or {}
                        params.extend(_flatten_body(body_schema, warnings, where))
            declared_responses = set()
            for code in (op.get("responses") or {}):
                if isinstance(code, str) and code.isdigit():
                    declared_responses.add(int(code))
                elif isinstance(code, int):
                    declared_responses.add(code)
                elif code != "default":
                    warnings.append(f"{where}: response key {code!r} ignored")
            declared_placeholders = set(eid.placeholders)
            have = {p.name for p in params if p.location == "path"}
            for missing in sorted(declared_placeholders - have):
                warnings.append(f"{where}: path placeholder {missing!r} undeclared, synthesized")
                params.append(ParamSpec(missing, "path", "string", required=True))
            endpoints.append(EndpointSpec(eid, params, body_media, declared_responses))

    model = SchemaModel(endpoints, warnings, source=source)
    for message in warnings:
        logger.debug("schema warning: %s", message)
    return model


def load_schema_source(source: str, timeout: float = 10.0) -> SchemaModel:
    """Load a schema from a local file path or an HTTP(S) URL, inferring the format."""
    if source.startswith(("http://", "https://")):
        import requests

        resp = requests.get(source, timeout=timeout)
        resp.raise_for_status()
        raw = resp.content
    else:
        with open(source, "rb") as fh:
            raw = fh.read()
    fmt = "yaml" if source.rsplit("?", 1)[0].endswith((".yaml", ".yml")) else "json"
    head = raw.lstrip()[:1]
    if head not in (b"{", b"["):
        fmt = "yaml"
    return load_schema(raw, fmt=fmt, source=source)
