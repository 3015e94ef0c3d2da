"""Base test pool: schema-driven fuzzing, pool queries, slicing, and composition."""

from __future__ import annotations

import copy
import json
import logging
import random
import re
import string
import time
from dataclasses import dataclass, field

from restsec.auth import ANONYMOUS, AuthIdentity
from restsec.executor import (
    EXTRACT_BODY_FIELD,
    EXTRACT_LOCATION,
    SLOT_PATH_ARG,
    Binding,
    ExecutedCall,
    HttpAction,
    Provenance,
    TestCase,
    match_status,
)
from restsec.schema import EndpointId, EndpointSpec, ParamSpec, SchemaModel

logger = logging.getLogger(__name__)

# Identity filters for pool queries.
IDENTITY_ANY = "*"
IDENTITY_AUTHENTICATED = "*authenticated*"

CORPUS_FORMAT_VERSION = 1


class CompositionError(Exception):
    """Two test cases cannot be combined (placeholder mismatch)."""


@dataclass(frozen=True)
class PoolRef:
    """Stable reference to one executed call inside the pool."""

    entry_index: int
    call_index: int


@dataclass
class PoolEntry:
    test: TestCase
    calls: list[ExecutedCall]


class TestPool:
    """Executed test cases plus an index by (endpoint, status, identity)."""

    def __init__(self):
        self.entries: list[PoolEntry] = []
        self._by_endpoint: dict[EndpointId, list[PoolRef]] = {}

    def __len__(self):
        return len(self.entries)

    def add(self, test: TestCase, calls: list[ExecutedCall]) -> int | None:
        """Record a test and its executions; a partial run is trimmed to what ran."""
        if not calls:
            return None
        if len(calls) < len(test.calls):
            test = TestCase(
                copy.deepcopy(test.calls[: len(calls)]),
                [copy.deepcopy(b) for b in test.bindings if b.target_call_index < len(calls)],
                copy.deepcopy(test.provenance),
            )
        entry_index = len(self.entries)
        self.entries.append(PoolEntry(test, calls))
        for call_index, call in enumerate(calls):
            ref = PoolRef(entry_index, call_index)
            self._by_endpoint.setdefault(call.action.endpoint, []).append(ref)
        return entry_index

    def entry(self, ref: PoolRef) -> PoolEntry:
        return self.entries[ref.entry_index]

    def call_at(self, ref: PoolRef) -> ExecutedCall:
        return self.entries[ref.entry_index].calls[ref.call_index]

    def endpoints(self) -> list[EndpointId]:
        return sorted(self._by_endpoint)

    def _identity_matches(self, name: str, identity_filter: str) -> bool:
        if identity_filter == IDENTITY_ANY:
            return True
        if identity_filter == IDENTITY_AUTHENTICATED:
            return name != ANONYMOUS
        return name == identity_filter

    def find_all(
        self,
        endpoint: EndpointId,
        status: int | str | None = None,
        identity: str = IDENTITY_ANY,
        duration_below_ms: float | None = None,
    ) -> list[PoolRef]:
        """All matching calls, shortest-test-first then insertion order."""
        out = []
        for ref in self._by_endpoint.get(endpoint, []):
            call = self.call_at(ref)
            if call.timed_out and status is not None:
                continue
            if status is not None and not match_status(status, call.status):
                continue
            if not self._identity_matches(call.action.identity, identity):
                continue
            if duration_below_ms is not None and call.duration_ms >= duration_below_ms:
                continue
            out.append(ref)
        out.sort(key=lambda r: (len(self.entries[r.entry_index].test.calls), r.entry_index, r.call_index))
        return out

    def find(
        self,
        endpoint: EndpointId,
        status: int | str | None = None,
        identity: str = IDENTITY_ANY,
        duration_below_ms: float | None = None,
    ) -> PoolRef | None:
        """Deterministic best match: fewest calls, ties broken by earliest insertion."""
        matches = self.find_all(endpoint, status, identity, duration_below_ms)
        return matches[0] if matches else None

    def index_keys(self) -> set[tuple[EndpointId, int, str]]:
        keys = set()
        for entry in self.entries:
            for call in entry.calls:
                keys.add((call.action.endpoint, call.status, call.action.identity))
        return keys


def slice_prefix(pool: TestPool, ref: PoolRef) -> TestCase:
    """Copy of the test truncated after the target call.

    Kept calls expect their originally observed statuses; bindings that fall
    outside the prefix are dropped.
    """
    entry = pool.entry(ref)
    n = ref.call_index + 1
    calls = [copy.deepcopy(c) for c in entry.test.calls[:n]]
    for i, call in enumerate(calls):
        call.expected_status = entry.calls[i].status
    bindings = [copy.deepcopy(b) for b in entry.test.bindings if b.target_call_index < n]
    return TestCase(calls, bindings, copy.deepcopy(entry.test.provenance))


def slice_solo(pool: TestPool, ref: PoolRef) -> TestCase:
    """Single-call copy of the target; bound inputs keep their observed concrete values."""
    entry = pool.entry(ref)
    action = copy.deepcopy(entry.calls[ref.call_index].action)
    action.expected_status = entry.calls[ref.call_index].status
    return TestCase([action], [], copy.deepcopy(entry.test.provenance))


def concat_and_bind(head: TestCase, tail: TestCase, bind_resource: bool = False) -> TestCase:
    """Concatenate two tests; optionally bind tail calls to the head target's resource.

    The head target is the head's last call. With bind_resource, every path
    placeholder of every tail call takes that call's concrete value, or reuses
    the head's dynamic Binding when the value came from one. A placeholder the
    head target cannot supply raises CompositionError.
    """
    offset = len(head.calls)
    calls = [copy.deepcopy(c) for c in head.calls] + [copy.deepcopy(c) for c in tail.calls]
    bindings = [copy.deepcopy(b) for b in head.bindings] + [b.shifted(offset) for b in tail.bindings]

    if bind_resource:
        anchor = head.calls[-1]
        anchor_index = offset - 1
        anchor_bindings = {
            b.target_slot_name: b
            for b in head.bindings
            if b.target_call_index == anchor_index and b.target_slot_kind == SLOT_PATH_ARG
        }
        for target_index in range(offset, len(calls)):
            call = calls[target_index]
            for name in call.endpoint.placeholders:
                bindings = [
                    b
                    for b in bindings
                    if not (
                        b.target_call_index == target_index
                        and b.target_slot_kind == SLOT_PATH_ARG
                        and b.target_slot_name == name
                    )
                ]
                if name in anchor_bindings:
                    src = anchor_bindings[name]
                    bindings.append(
                        Binding(
                            src.source_call_index,
                            src.extractor_kind,
                            target_index,
                            SLOT_PATH_ARG,
                            name,
                            src.extractor_path,
                        )
                    )
                elif name in anchor.path_args:
                    call.path_args[name] = anchor.path_args[name]
                else:
                    raise CompositionError(
                        f"placeholder {name!r} of {call.endpoint} not supplied by head target {anchor.endpoint}"
                    )
    return TestCase(calls, bindings, copy.deepcopy(head.provenance))


def concat_tests(parts: list[TestCase], provenance: Provenance | None = None) -> TestCase:
    """Plain concatenation of several tests, shifting bindings."""
    combined = parts[0].clone()
    for part in parts[1:]:
        combined = concat_and_bind(combined, part, bind_resource=False)
    if provenance is not None:
        combined.provenance = provenance
    return combined


_PATTERN_ATTEMPTS = 100
_ALPHABET = string.ascii_letters + string.digits


class ValueGenerator:
    """Seeded input generation honoring declared parameter constraints."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self._enum_counters: dict[tuple, int] = {}
        self._length_counters: dict[tuple, int] = {}
        self.warnings: list[str] = []
        self._pattern_warned: set[tuple] = set()

    def value(self, endpoint: EndpointId, param: ParamSpec):
        c = param.constraints
        if c.enum:
            key = (endpoint, param.name)
            i = self._enum_counters.get(key, 0)
            self._enum_counters[key] = i + 1
            return c.enum[i % len(c.enum)]
        if param.value_kind == "integer":
            return self._integer(param)
        if param.value_kind == "number":
            lo = c.minimum if c.minimum is not None else 0.0
            hi = c.maximum if c.maximum is not None else 1000.0
            return round(self.rng.uniform(lo, hi), 3)
        if param.value_kind == "boolean":
            return self.rng.choice([True, False])
        if param.value_kind == "array":
            return []
        if param.value_kind == "object":
            return {}
        return self._string(endpoint, param)

    def _integer(self, param: ParamSpec) -> int:
        c = param.constraints
        if c.minimum is not None or c.maximum is not None:
            lo = int(c.minimum) if c.minimum is not None else 0
            hi = int(c.maximum) if c.maximum is not None else lo + 1000
            return self.rng.randint(lo, hi)
        if param.location == "path":
            # Wide id space keeps random probes clear of created resources.
            return self.rng.randint(1, 999_999_937)
        return self.rng.randint(0, 1000)

    def _string(self, endpoint: EndpointId, param: ParamSpec) -> str:
        c = param.constraints
        if c.pattern:
            for _ in range(_PATTERN_ATTEMPTS):
                candidate = self._plain_string(endpoint, param)
                if c.allows_string(candidate):
                    return candidate
            key = (endpoint, param.name)
            if key not in self._pattern_warned:
                self._pattern_warned.add(key)
                message = (
                    f"{endpoint}: no value matching pattern {c.pattern!r} for "
                    f"{param.name!r} after {_PATTERN_ATTEMPTS} attempts"
                )
                self.warnings.append(message)
                logger.warning(message)
            return self._plain_string(endpoint, param)
        return self._plain_string(endpoint, param)

    def _plain_string(self, endpoint: EndpointId, param: ParamSpec) -> str:
        c = param.constraints
        lo = c.min_length if c.min_length is not None else 1
        hi = c.max_length if c.max_length is not None else max(lo, 12)
        key = (endpoint, param.name)
        i = self._length_counters.get(key, 0)
        self._length_counters[key] = i + 1
        length = [lo, hi, (lo + hi) // 2][i % 3]
        return "".join(self.rng.choice(_ALPHABET) for _ in range(length))

    def fresh_resource_id(self, param: ParamSpec):
        if param.value_kind in ("integer", "number"):
            return self.rng.randint(1, 999_999_937)
        return "res" + "".join(self.rng.choice(string.digits) for _ in range(9))


def build_action(
    spec: EndpointSpec,
    identity: str,
    gen: ValueGenerator,
    path_args: dict | None = None,
) -> HttpAction:
    """One concrete action for an endpoint, generating any missing inputs."""
    action = HttpAction(endpoint=spec.id, identity=identity)
    action.path_args = dict(path_args or {})
    for p in spec.params_in("path"):
        if p.name not in action.path_args:
            action.path_args[p.name] = str(gen.value(spec.id, p))
    for p in spec.params_in("query"):
        if p.required or gen.rng.random() < 0.5:
            action.query[p.name] = str(gen.value(spec.id, p))
    for p in spec.params_in("header"):
        if p.required:
            action.headers[p.name] = str(gen.value(spec.id, p))
    body_fields = spec.params_in("body-field")
    if body_fields:
        payload: dict = {}
        for p in body_fields:
            node = payload
            parts = p.name.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = gen.value(spec.id, p)
        action.body = json.dumps(payload)
        action.body_media_type = spec.body_media_type or "application/json"
    elif spec.body_media_type:
        action.body = "{}"
        action.body_media_type = spec.body_media_type
    return action


@dataclass
class CreationPlan:
    """How to make the resource addressed by a path exist before touching it."""

    kind: str                 # "put-id" | "post-collection"
    creator: EndpointId
    bound_placeholder: str | None = None   # placeholder filled from the creator response


def creation_plan(schema: SchemaModel, path: str, prefer_post: bool = False) -> CreationPlan | None:
    placeholders = EndpointId("GET", path).placeholders
    if not placeholders:
        return None
    plans = []
    if schema.has("PUT", path):
        plans.append(CreationPlan("put-id", EndpointId("PUT", path)))
    parent = path.rsplit("/", 1)[0]
    for candidate in (parent, parent + "/"):
        if candidate and candidate in schema.paths and schema.has("POST", candidate):
            plans.append(
                CreationPlan("post-collection", EndpointId("POST", candidate), placeholders[-1])
            )
            break
    if not plans:
        return None
    if prefer_post:
        plans.sort(key=lambda p: p.kind != "post-collection")
    return plans[0]


def build_chain(
    schema: SchemaModel,
    plan: CreationPlan,
    target: EndpointSpec,
    creator_identity: str,
    actor_identity: str,
    gen: ValueGenerator,
    extractor_kind: str = EXTRACT_LOCATION,
) -> TestCase:
    """Creation call followed by the target call addressing the same resource."""
    creator_spec = schema.spec_for(plan.creator)
    if plan.kind == "put-id":
        shared = {
            p.name: str(gen.fresh_resource_id(p)) for p in creator_spec.params_in("path")
        }
        create = build_action(creator_spec, creator_identity, gen, path_args=shared)
        act = build_action(target, actor_identity, gen, path_args=dict(shared))
        return TestCase([create, act])
    create = build_action(creator_spec, creator_identity, gen)
    path_args = {
        name: create.path_args[name]
        for name in target.id.placeholders
        if name in create.path_args
    }
    act = build_action(target, actor_identity, gen, path_args=path_args)
    # The bound placeholder gets a provisional value; the binding overwrites it.
    act.path_args.setdefault(plan.bound_placeholder, "0")
    binding = Binding(
        0,
        extractor_kind,
        1,
        SLOT_PATH_ARG,
        plan.bound_placeholder,
        "id" if extractor_kind == EXTRACT_BODY_FIELD else None,
    )
    return TestCase([create, act], [binding])


def _denied(endpoint: EndpointId, deny_paths: tuple[str, ...]) -> bool:
    if endpoint.verb == "GET":
        return False
    return any(endpoint.path.startswith(prefix) for prefix in deny_paths)


def _sweep_tests(
    schema: SchemaModel,
    identities: list[AuthIdentity],
    gen: ValueGenerator,
    sweep_index: int,
    deny_paths: tuple[str, ...],
):
    names = [i.name for i in identities]
    users = [i.name for i in identities if not i.is_anonymous]
    for endpoint in schema.endpoint_ids():
        if _denied(endpoint, deny_paths):
            continue
        spec = schema.spec_for(endpoint)
        for name in names:
            yield TestCase([build_action(spec, name, gen)])
        if not endpoint.placeholders:
            continue
        plan = creation_plan(schema, endpoint.path, prefer_post=sweep_index % 2 == 1)
        if plan is None or _denied(plan.creator, deny_paths):
            continue
        for name in names:
            yield build_chain(schema, plan, spec, name, name, gen)
        for creator in users:
            for actor in names:
                if actor == creator:
                    continue
                yield build_chain(schema, plan, spec, creator, actor, gen)


def base_fuzz(
    schema: SchemaModel,
    identities: list[AuthIdentity],
    executor,
    budget_seconds: float,
    seed: int = 0,
    deny_paths: tuple[str, ...] = (),
) -> TestPool:
    """Build the base pool: per endpoint, attempts under each identity plus chains.

    Generation is seeded-deterministic. The budget is a hard cap; fuzzing also
    stops early once a full sweep adds no new (endpoint, status, identity)
    coverage after at least two sweeps.
    """
    pool = TestPool()
    if budget_seconds <= 0:
        return pool
    rng = random.Random(seed)
    gen = ValueGenerator(rng)
    deadline = time.monotonic() + budget_seconds
    sweeps = 0
    while True:
        keys_before = len(pool.index_keys())
        for test in _sweep_tests(schema, identities, gen, sweeps, deny_paths):
            if time.monotonic() >= deadline:
                logger.info("fuzz budget exhausted after %d tests", len(pool))
                return pool
            result = executor.run_test_case(test)
            pool.add(test, result.calls)
            if result.unbindable and test.bindings:
                retry = _rebind_with_body_field(test)
                if retry is not None:
                    retry_result = executor.run_test_case(retry)
                    pool.add(retry, retry_result.calls)
        sweeps += 1
        if sweeps >= 2 and len(pool.index_keys()) == keys_before:
            logger.info("coverage stabilized after %d sweeps (%d tests)", sweeps, len(pool))
            return pool


def _rebind_with_body_field(test: TestCase) -> TestCase | None:
    """Fallback for creators answering without a Location header: bind on body 'id'."""
    retry = test.clone()
    changed = False
    for b in retry.bindings:
        if b.extractor_kind == EXTRACT_LOCATION:
            b.extractor_kind = EXTRACT_BODY_FIELD
            b.extractor_path = "id"
            changed = True
    return retry if changed else None


@dataclass
class CorpusMeta:
    target_base_url: str
    schema_source: str
    seed: int


def save_corpus(pool: TestPool, path: str, meta: CorpusMeta):
    """Persist the pool so the security phase can re-run without re-fuzzing."""
    data = {
        "formatVersion": CORPUS_FORMAT_VERSION,
        "targetBaseUrl": meta.target_base_url,
        "schemaSource": meta.schema_source,
        "seed": meta.seed,
        "entries": [
            {"test": entry.test.to_dict(), "calls": [c.to_dict() for c in entry.calls]}
            for entry in pool.entries
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)


def load_corpus(path: str) -> tuple[TestPool, CorpusMeta]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    version = data.get("formatVersion")
    if version != CORPUS_FORMAT_VERSION:
        raise ValueError(f"unsupported corpus formatVersion: {version!r}")
    pool = TestPool()
    for raw in data.get("entries", []):
        pool.add(
            TestCase.from_dict(raw["test"]),
            [ExecutedCall.from_dict(c) for c in raw["calls"]],
        )
    meta = CorpusMeta(
        target_base_url=data.get("targetBaseUrl", ""),
        schema_source=data.get("schemaSource", ""),
        seed=data.get("seed", 0),
    )
    return pool, meta
