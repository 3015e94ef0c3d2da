"""Post-fuzzing security phase: 403-scenario synthesis plus nine automated oracles."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources

from restsec.auth import ANONYMOUS, AuthIdentity
from restsec.corpus import (
    IDENTITY_ANY,
    IDENTITY_AUTHENTICATED,
    CompositionError,
    PoolRef,
    TestPool,
    concat_and_bind,
    concat_tests,
    slice_prefix,
    slice_solo,
)
from restsec.executor import (
    SLOT_PATH_ARG,
    Binding,
    HttpAction,
    Provenance,
    RunResult,
    TestCase,
    match_status,
    verify_statuses,
)
from restsec.schema import MODIFYING_VERBS, EndpointId, SchemaModel
from restsec.stacktrace import TracePattern, load_default_patterns, scan_body

logger = logging.getLogger(__name__)

FAULT_LABELS = {
    100: "HTTP Status 500",
    101: "schema mismatch",
    200: "SQL Injection (SQLi)",
    201: "Cross-Site Scripting (XSS)",
    204: "Existence Leakage",
    205: "Not Recognized Authentication",
    206: "Missed Authorization Checks",
    900: "Ignore Anonymous",
    901: "Anonymous Modifications",
    902: "Leaked Stack Trace",
    903: "Hidden Accessible",
}

# Security oracles in execution order: pool-reusing ones first, injections last.
ORACLE_ORDER = (205, 204, 206, 901, 900, 902, 903, 200, 201)

# Stats row code for the 403-scenario synthesis step (not a fault code).
SYNTHESIS_STEP = 0

F903_EXEMPT_STATUSES = (403, 405, 501)

_INJECTABLE_LOCATIONS = ("query", "body-field")


class FaultCodeError(ValueError):
    pass


def fault_label(code: int) -> str:
    if code not in FAULT_LABELS:
        raise FaultCodeError(f"unknown fault code: {code}")
    return FAULT_LABELS[code]


@dataclass
class Fault:
    """One detected fault with its re-executable reproduction."""

    code: int
    endpoint: EndpointId
    reproduction: TestCase
    evidence: str
    flagged_call_index: int

    @property
    def label(self) -> str:
        return fault_label(self.code)


@dataclass
class OracleStats:
    code: int
    new_tests_executed: int = 0
    elapsed_ms: int = 0


@dataclass
class PhaseStats:
    per_oracle: list[OracleStats] = field(default_factory=list)
    truncated: bool = False

    @property
    def total_elapsed_ms(self) -> int:
        return sum(s.elapsed_ms for s in self.per_oracle)

    def new_tests_for(self, code: int) -> int:
        return sum(s.new_tests_executed for s in self.per_oracle if s.code == code)


def _load_payload_lines(filename: str) -> list[str]:
    raw = resources.files("restsec").joinpath(f"data/{filename}").read_text()
    return [line for line in raw.splitlines() if line.strip() and not line.startswith("#")]


def load_payload_file(path: str) -> list[str]:
    """User-supplied payload list: one payload per line, # comments ignored."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip() and not line.startswith("#")]


def default_sqli_payload_templates() -> list[str]:
    return _load_payload_lines("sqli_payloads.txt")


def default_xss_payloads() -> list[str]:
    return _load_payload_lines("xss_payloads.txt")


def render_sqli_payloads(templates: list[str], sleep_seconds: float) -> list[str]:
    return [
        t.replace("{S}", f"{sleep_seconds:.2f}").replace("{SI}", str(int(round(sleep_seconds))))
        for t in templates
    ]


@dataclass
class SecurityConfig:
    """Oracle toggles and thresholds for one security phase."""

    enabled_oracles: frozenset[int] = frozenset(ORACLE_ORDER)
    sqli_sleep_seconds: float = 5.0
    sqli_baseline_max_ms: int = 2000
    sqli_payloads: list[str] | None = None     # rendered payloads; default list when None
    xss_payloads: list[str] | None = None
    stack_trace_patterns: list[TracePattern] | None = None
    phase_time_budget_s: float | None = None

    def validate(self):
        unknown = self.enabled_oracles - set(ORACLE_ORDER)
        if unknown:
            raise FaultCodeError(f"unknown oracle codes: {sorted(unknown)}")
        if self.sqli_sleep_seconds * 1000 <= self.sqli_baseline_max_ms:
            raise ValueError(
                f"sqli sleep ({self.sqli_sleep_seconds}s) must exceed the baseline cap "
                f"({self.sqli_baseline_max_ms}ms)"
            )
        if 200 in self.enabled_oracles and self.sqli_payloads is not None and not self.sqli_payloads:
            raise ValueError("SQLi oracle enabled with an empty payload list")
        if 201 in self.enabled_oracles and self.xss_payloads is not None and not self.xss_payloads:
            raise ValueError("XSS oracle enabled with an empty payload list")

    def resolved_sqli_payloads(self) -> list[str]:
        if self.sqli_payloads is not None:
            return list(self.sqli_payloads)
        return render_sqli_payloads(default_sqli_payload_templates(), self.sqli_sleep_seconds)

    def resolved_xss_payloads(self) -> list[str]:
        if self.xss_payloads is not None:
            return list(self.xss_payloads)
        return default_xss_payloads()

    def resolved_patterns(self) -> list[TracePattern]:
        if self.stack_trace_patterns is not None:
            return list(self.stack_trace_patterns)
        return load_default_patterns()


class SecurityPhase:
    """Runs synthesis plus every enabled oracle against an executed pool.

    Single-threaded against one target; composed scenarios are re-executed and
    confirmed before a fault is reported, never inferred from the pool alone.
    """

    def __init__(
        self,
        pool: TestPool,
        schema: SchemaModel,
        identities: list[AuthIdentity],
        executor,
        config: SecurityConfig | None = None,
    ):
        self.pool = pool
        self.schema = schema
        self.identities = identities
        self.users = [i.name for i in identities if not i.is_anonymous]
        self.executor = executor
        self.config = config or SecurityConfig()
        self.config.validate()
        self._new_tests = 0

    # -- plumbing ---------------------------------------------------------

    def _run(self, test: TestCase) -> RunResult:
        self._new_tests += 1
        return self.executor.run_test_case(test)

    def _execute_single(self, action: HttpAction):
        self._new_tests += 1
        credentials = self.executor.credentials_for(action.identity)
        return self.executor.execute(action, credentials)

    def _identity_of(self, ref: PoolRef) -> str:
        return self.pool.call_at(ref).action.identity

    @staticmethod
    def _stamp(test: TestCase, result: RunResult) -> TestCase:
        """Freeze the confirming run's statuses into the reproduction."""
        for call, observed in zip(test.calls, result.calls):
            call.expected_status = observed.status
        return test

    def _confirmed(self, test: TestCase, result: RunResult) -> bool:
        return result.complete and verify_statuses(test, result.calls)

    def _duplicate_last_call(self, test: TestCase, identity: str) -> TestCase:
        """Append a copy of the test's last call under another identity,
        re-using any bindings that fed the original call."""
        out = test.clone()
        dup = copy.deepcopy(out.calls[-1])
        dup.identity = identity
        dup.expected_status = None
        last_index = len(out.calls) - 1
        out.calls.append(dup)
        for b in list(out.bindings):
            if b.target_call_index == last_index:
                out.bindings.append(
                    Binding(
                        b.source_call_index,
                        b.extractor_kind,
                        last_index + 1,
                        b.target_slot_kind,
                        b.target_slot_name,
                        b.extractor_path,
                    )
                )
        return out

    # -- phase ------------------------------------------------------------

    def run(self) -> tuple[list[Fault], PhaseStats]:
        stats = PhaseStats()
        faults: dict[tuple[int, EndpointId], Fault] = {}
        started = time.perf_counter()
        budget = self.config.phase_time_budget_s
        enabled = self.config.enabled_oracles
        if not enabled:
            logger.info("security phase: all oracles disabled")
            return [], stats

        steps: list[tuple[int, callable]] = []
        if enabled & {204, 205, 206, 900}:
            steps.append((SYNTHESIS_STEP, self.synthesize_403))
        oracle_methods = {
            205: self.oracle_not_recognized_auth,
            204: self.oracle_existence_leakage,
            206: self.oracle_missed_authorization,
            901: self.oracle_anonymous_modifications,
            900: self.oracle_ignore_anonymous,
            902: self.oracle_leaked_stack_trace,
            903: self.oracle_hidden_accessible,
            200: self.oracle_sql_injection,
            201: self.oracle_xss,
        }
        for code in ORACLE_ORDER:
            if code in enabled:
                steps.append((code, oracle_methods[code]))
        steps.append((100, self.tag_server_errors))

        for code, step in steps:
            if budget is not None and (time.perf_counter() - started) >= budget:
                stats.truncated = True
                logger.warning(
                    "security phase budget exhausted, skipping remaining oracles from %s", code
                )
                break
            self._new_tests = 0
            step_started = time.perf_counter()
            found: list[Fault] = []
            try:
                found = step() or []
            except Exception:
                logger.exception("oracle %s failed; continuing with the next one", code)
            elapsed_ms = int(round((time.perf_counter() - step_started) * 1000))
            stats.per_oracle.append(OracleStats(code, self._new_tests, elapsed_ms))
            for fault in found:
                key = (fault.code, fault.endpoint)
                if key in faults:
                    logger.info("duplicate fault %s on %s ignored", fault.code, fault.endpoint)
                    continue
                faults[key] = fault
        ordered = sorted(faults.values(), key=lambda f: (f.code, f.endpoint))
        return ordered, stats

    # -- 403 synthesis (pre-step) ------------------------------------------

    def synthesize_403(self) -> list[Fault]:
        """Give every endpoint a 403 entry where one can be produced.

        Endpoints without any 401 are skipped: most likely no authentication
        mechanism is present. New 403-ending tests are added to the pool.
        """
        for endpoint in self.schema.endpoint_ids():
            if self.pool.find(endpoint, 403) is not None:
                continue
            if self.pool.find(endpoint, 401) is None:
                continue
            if self._try_synthesize_403(endpoint) is None:
                logger.debug("no 403 scenario found for %s", endpoint)
        return []

    def _try_synthesize_403(self, endpoint: EndpointId) -> PoolRef | None:
        for ref in self.pool.find_all(endpoint, "2xx", IDENTITY_AUTHENTICATED):
            owner = self._identity_of(ref)
            base = slice_prefix(self.pool, ref)
            for other in self.users:
                if other == owner:
                    continue
                candidate = self._duplicate_last_call(base, other)
                candidate.provenance = Provenance("securitySynthesis", SYNTHESIS_STEP)
                result = self._run(candidate)
                if not result.complete or len(result.calls) != len(candidate.calls):
                    continue
                prefix_ok = all(
                    match_status(call.expected_status, obs.status)
                    for call, obs in zip(candidate.calls[:-1], result.calls[:-1])
                )
                if prefix_ok and result.calls[-1].status == 403:
                    self._stamp(candidate, result)
                    entry_index = self.pool.add(candidate, result.calls)
                    logger.debug("synthesized 403 for %s via %s", endpoint, other)
                    return PoolRef(entry_index, len(candidate.calls) - 1)
        return None

    # -- F205: not recognized authentication --------------------------------

    def oracle_not_recognized_auth(self) -> list[Fault]:
        """401 answered to a user whose credentials demonstrably work elsewhere."""
        faults = []
        for x in self.schema.endpoint_ids():
            t1 = self.pool.find(x, 401, IDENTITY_AUTHENTICATED)
            if t1 is None:
                continue
            user = self._identity_of(t1)
            scenario = self._f205_scenario(x, user, t1)
            if scenario is None:
                continue
            test, result = scenario
            if self._confirmed(test, result):
                faults.append(
                    Fault(
                        205,
                        x,
                        test,
                        f"{x} answered 401 to user {user!r} whose credentials were accepted "
                        "elsewhere on an endpoint that enforces authentication",
                        len(test.calls) - 1,
                    )
                )
        return faults

    def _f205_scenario(self, x: EndpointId, user: str, t1: PoolRef):
        for y in self.schema.endpoint_ids():
            if y == x:
                continue
            t2 = self.pool.find(y, "2xx", user)
            if t2 is None:
                continue
            t3 = self.pool.find(y, 401) or self.pool.find(y, 403)
            if t3 is None:
                continue
            test = concat_tests(
                [slice_prefix(self.pool, t3), slice_prefix(self.pool, t2), slice_prefix(self.pool, t1)],
                Provenance("securitySynthesis", 205),
            )
            result = self._run(test)
            return test, result
        return None

    # -- F204: existence leakage --------------------------------------------

    def oracle_existence_leakage(self) -> list[Fault]:
        """403 for protected resources but 404 for missing ones on the same GET."""
        faults = []
        for x in self.schema.endpoint_ids():
            if x.verb != "GET":
                continue
            t1 = self.pool.find(x, 403)
            t2 = self.pool.find(x, 404)
            if t1 is None or t2 is None:
                continue
            user = self._identity_of(t2)
            test = concat_tests(
                [slice_prefix(self.pool, t1), slice_prefix(self.pool, t2)],
                Provenance("securitySynthesis", 204),
            )
            flagged = len(test.calls) - 1
            ancestor_call = None
            if user != ANONYMOUS:
                ancestor = self.schema.top_get_ancestor(x.path)
                if ancestor is not None:
                    ancestor_call = self._ancestor_action(ancestor, t2, user)
                    if ancestor_call is None:
                        logger.debug("cannot instantiate ancestor %s for %s", ancestor, x)
                        continue
                    test.calls.append(ancestor_call)
            result = self._run(test)
            if not result.complete or len(result.calls) != len(test.calls):
                continue
            base_n = len(test.calls) - (1 if ancestor_call is not None else 0)
            if not all(
                match_status(test.calls[i].expected_status, result.calls[i].status)
                for i in range(base_n)
            ):
                continue
            if ancestor_call is not None and result.calls[-1].status != 404:
                logger.debug("F204 inconclusive on %s: ancestor answered %s", x, result.calls[-1].status)
                continue
            self._stamp(test, result)
            evidence = (
                f"{x} distinguishes protected resources (403) from missing ones (404)"
            )
            if ancestor_call is not None:
                evidence += f"; ancestor GET also answered 404 for user {user!r}"
            elif user == ANONYMOUS:
                evidence += "; the 404 was served to an unauthenticated caller"
            else:
                evidence += "; no GET ancestor exists to legitimize the 404"
            faults.append(Fault(204, x, test, evidence, flagged))
        return faults

    def _ancestor_action(self, ancestor: EndpointId, t2: PoolRef, user: str) -> HttpAction | None:
        source_args = self.pool.call_at(t2).action.path_args
        args = {}
        for name in ancestor.placeholders:
            if name not in source_args:
                return None
            args[name] = source_args[name]
        return HttpAction(endpoint=ancestor, identity=user, path_args=args)

    # -- F206: missed authorization checks ------------------------------------

    def oracle_missed_authorization(self) -> list[Fault]:
        """One modifying verb forbidden while a sibling verb on the same resource is allowed."""
        faults = []
        for path in self.schema.paths:
            declared = [v for v in MODIFYING_VERBS if self.schema.has(v, path)]
            if len(declared) < 2:
                continue
            for verb in declared:
                forbidden = self._forbidden_case(EndpointId(verb, path))
                if forbidden is None:
                    continue
                c_k, user = forbidden
                for other_verb in declared:
                    if other_verb == verb:
                        continue
                    fault = self._f206_cross_check(c_k, user, verb, EndpointId(other_verb, path))
                    if fault is not None:
                        faults.append(fault)
        return faults

    def _forbidden_case(self, endpoint: EndpointId) -> tuple[TestCase, str] | None:
        """A test ending in an authenticated 403 on the endpoint, from the pool or created."""
        ref = self.pool.find(endpoint, 403, IDENTITY_AUTHENTICATED)
        if ref is not None:
            return slice_prefix(self.pool, ref), self._identity_of(ref)
        synthesized = self._try_synthesize_403(endpoint)
        if synthesized is not None:
            return slice_prefix(self.pool, synthesized), self._identity_of(synthesized)
        return None

    def _f206_cross_check(
        self, c_k: TestCase, user: str, forbidden_verb: str, other: EndpointId
    ) -> Fault | None:
        t_j = self.pool.find(other, "2xx")
        if t_j is None:
            return None
        c_j = slice_solo(self.pool, t_j)
        c_j.calls[0].identity = user
        c_j.calls[0].expected_status = None
        try:
            z = concat_and_bind(c_k, c_j, bind_resource=True)
        except CompositionError as exc:
            logger.debug("F206 inapplicable for %s vs %s: %s", forbidden_verb, other, exc)
            return None
        z.provenance = Provenance("securitySynthesis", 206)
        result = self._run(z)
        if not result.complete or len(result.calls) != len(z.calls):
            return None
        prefix_ok = all(
            match_status(call.expected_status, obs.status)
            for call, obs in zip(z.calls[:-1], result.calls[:-1])
        )
        if not prefix_ok or not 200 <= result.calls[-1].status < 300:
            return None
        self._stamp(z, result)
        return Fault(
            206,
            other,
            z,
            f"user {user!r} is forbidden (403) to {forbidden_verb} the resource but "
            f"{other.verb} on the same resource succeeded with {result.calls[-1].status}",
            len(z.calls) - 1,
        )

    # -- F901: anonymous modifications ---------------------------------------

    def oracle_anonymous_modifications(self) -> list[Fault]:
        """Pool scan: 2xx on DELETE/PUT/PATCH without credentials (anonymous PUT 201 exempt)."""
        faults = []
        seen: set[EndpointId] = set()
        for entry_index, entry in enumerate(self.pool.entries):
            for call_index, call in enumerate(entry.calls):
                endpoint = call.action.endpoint
                if endpoint in seen or endpoint.verb not in MODIFYING_VERBS:
                    continue
                if call.action.identity != ANONYMOUS:
                    continue
                if not 200 <= call.status < 300:
                    continue
                if endpoint.verb == "PUT" and call.status == 201:
                    continue    # a PUT may legitimately create anonymously
                seen.add(endpoint)
                reproduction = slice_prefix(self.pool, PoolRef(entry_index, call_index))
                reproduction.provenance = Provenance("securitySynthesis", 901)
                faults.append(
                    Fault(
                        901,
                        endpoint,
                        reproduction,
                        f"{endpoint} answered {call.status} to a request without any "
                        "authentication information",
                        len(reproduction.calls) - 1,
                    )
                )
        return faults

    # -- F900: ignore anonymous ------------------------------------------------

    def oracle_ignore_anonymous(self) -> list[Fault]:
        """Credentials are checked when present but requests without any succeed."""
        faults = []
        for x in self.schema.endpoint_ids():
            t1 = self.pool.find(x, 401, IDENTITY_AUTHENTICATED) or self.pool.find(
                x, 403, IDENTITY_AUTHENTICATED
            )
            if t1 is None:
                continue
            c1 = slice_prefix(self.pool, t1)
            fault = self._f900_anonymous_entry(x, c1) or self._f900_stripped(x, c1)
            if fault is not None:
                faults.append(fault)
        return faults

    def _f900_anonymous_entry(self, x: EndpointId, c1: TestCase) -> Fault | None:
        t2 = self.pool.find(x, "2xx", ANONYMOUS)
        if t2 is None:
            return None
        test = concat_tests([c1, slice_prefix(self.pool, t2)], Provenance("securitySynthesis", 900))
        result = self._run(test)
        if not self._confirmed(test, result):
            return None
        return Fault(
            900,
            x,
            test,
            f"{x} rejects some credentials yet serves {result.calls[-1].status} to "
            "requests without any authentication",
            len(test.calls) - 1,
        )

    def _f900_stripped(self, x: EndpointId, c1: TestCase) -> Fault | None:
        blocked_user = c1.calls[-1].identity
        t3 = next(
            (
                ref
                for ref in self.pool.find_all(x, "2xx", IDENTITY_AUTHENTICATED)
                if self._identity_of(ref) != blocked_user
            ),
            None,
        )
        if t3 is None:
            return None
        c3 = slice_prefix(self.pool, t3)
        c3.calls[-1].identity = ANONYMOUS
        c3.calls[-1].expected_status = None
        test = concat_tests([c1, c3], Provenance("securitySynthesis", 900))
        result = self._run(test)
        if not result.complete or len(result.calls) != len(test.calls):
            return None
        prefix_ok = all(
            match_status(call.expected_status, obs.status)
            for call, obs in zip(test.calls[:-1], result.calls[:-1])
        )
        if prefix_ok and 200 <= result.calls[-1].status < 300:
            self._stamp(test, result)
            return Fault(
                900,
                x,
                test,
                f"{x} rejects some credentials yet the same call succeeded "
                f"({result.calls[-1].status}) once credentials were removed",
                len(test.calls) - 1,
            )
        return None

    # -- F902: leaked stack traces ----------------------------------------------

    def oracle_leaked_stack_trace(self) -> list[Fault]:
        """Scan one representative 500 body per endpoint for trace fingerprints."""
        patterns = self.config.resolved_patterns()
        faults = []
        for x in self.pool.endpoints():
            refs = self.pool.find_all(x, 500)
            if not refs:
                continue
            representative = min(
                refs, key=lambda r: (len(self.pool.call_at(r).response_body), r.entry_index, r.call_index)
            )
            body = self.pool.call_at(representative).response_body
            match = scan_body(body, patterns)
            if match is None:
                continue
            reproduction = slice_prefix(self.pool, representative)
            reproduction.provenance = Provenance("securitySynthesis", 902)
            faults.append(
                Fault(
                    902,
                    x,
                    reproduction,
                    f"500 response body contains a {match.language} stack trace "
                    f"(pattern {match.pattern}: {match.snippet!r})",
                    len(reproduction.calls) - 1,
                )
            )
        return faults

    # -- F903: hidden accessible ---------------------------------------------

    def oracle_hidden_accessible(self) -> list[Fault]:
        """Probe OPTIONS per declared path and call any advertised undeclared verb."""
        faults = []
        flagged: set[EndpointId] = set()
        identity_names = [ANONYMOUS] + self.users
        for path in self.schema.paths:
            probe_args = self._probe_args(path)
            for identity in identity_names:
                options_action = HttpAction(
                    endpoint=EndpointId("OPTIONS", path), identity=identity, path_args=dict(probe_args)
                )
                observed_options = self._execute_single(options_action)
                allow_raw = None
                for name, value in observed_options.response_headers.items():
                    if name.lower() == "allow":
                        allow_raw = value
                        break
                if not allow_raw:
                    logger.debug("no Allow header on OPTIONS %s as %s, skipped", path, identity)
                    continue
                hidden = self.schema.undeclared_verbs(path, allow_raw.split(","))
                for verb in hidden:
                    endpoint = EndpointId(verb, path)
                    if endpoint in flagged:
                        continue
                    hidden_action = HttpAction(
                        endpoint=endpoint, identity=identity, path_args=dict(probe_args)
                    )
                    observed = self._execute_single(hidden_action)
                    if observed.timed_out or observed.status in F903_EXEMPT_STATUSES:
                        continue
                    flagged.add(endpoint)
                    options_copy = copy.deepcopy(options_action)
                    options_copy.expected_status = observed_options.status
                    hidden_copy = copy.deepcopy(hidden_action)
                    hidden_copy.expected_status = observed.status
                    reproduction = TestCase(
                        [options_copy, hidden_copy],
                        provenance=Provenance("securitySynthesis", 903),
                    )
                    faults.append(
                        Fault(
                            903,
                            endpoint,
                            reproduction,
                            f"Allow header advertises {verb} on {path} which the schema does not "
                            f"declare; calling it answered {observed.status} "
                            f"(not one of {F903_EXEMPT_STATUSES})",
                            1,
                        )
                    )
        return faults

    def _probe_args(self, path: str) -> dict[str, str]:
        args = {}
        for name in EndpointId("GET", path).placeholders:
            args[name] = "1"
        return args

    # -- F200: SQL injection -----------------------------------------------------

    def oracle_sql_injection(self) -> list[Fault]:
        """Append sleep payloads to string inputs; a delayed response betrays injection."""
        payloads = self.config.resolved_sqli_payloads()
        max_ms = self.config.sqli_baseline_max_ms
        sleep_ms = self.config.sqli_sleep_seconds * 1000
        faults = []
        for x in self.schema.endpoint_ids():
            params = self._injectable_string_params(x)
            if not params:
                continue
            t1 = self.pool.find(x, "2xx", duration_below_ms=max_ms)
            if t1 is None:
                continue
            c1 = slice_prefix(self.pool, t1)
            baseline_index = len(c1.calls) - 1
            for payload in payloads:
                candidate = self._duplicate_last_call(c1, c1.calls[-1].identity)
                injected = candidate.calls[-1]
                if not self._extend_strings(injected, params, payload):
                    continue
                candidate.provenance = Provenance("securitySynthesis", 200)
                result = self._run(candidate)
                if not result.complete or len(result.calls) != len(candidate.calls):
                    continue
                baseline_ms = result.calls[baseline_index].duration_ms
                injected_ms = result.calls[-1].duration_ms
                if baseline_ms < max_ms and injected_ms > sleep_ms:
                    self._stamp(candidate, result)
                    candidate.calls[baseline_index].max_duration_ms = max_ms
                    candidate.calls[-1].min_duration_ms = int(sleep_ms)
                    faults.append(
                        Fault(
                            200,
                            x,
                            candidate,
                            f"payload {payload!r} appended to string inputs delayed the "
                            f"response beyond {self.config.sqli_sleep_seconds:.0f}s while the "
                            f"baseline stayed under {max_ms}ms",
                            len(candidate.calls) - 1,
                        )
                    )
                    break
        return faults

    def _injectable_string_params(self, endpoint: EndpointId) -> list:
        spec = self.schema.endpoints.get(endpoint)
        if spec is None:
            return []
        return [
            p
            for p in spec.parameters
            if p.location in _INJECTABLE_LOCATIONS and p.value_kind == "string"
        ]

    def _extend_strings(self, action: HttpAction, params, payload: str) -> bool:
        """Append the payload to every constraint-compatible string input; True if any changed."""
        changed = False
        body = _parse_json_body(action)
        for p in params:
            if p.location == "query":
                current = action.query.get(p.name)
                if current is None:
                    continue
                extended = current + payload
                if p.constraints.allows_string(extended):
                    action.query[p.name] = extended
                    changed = True
            elif p.location == "body-field" and isinstance(body, dict):
                node, leaf = _body_field_node(body, p.name)
                if node is None or not isinstance(node.get(leaf), str):
                    continue
                extended = node[leaf] + payload
                if p.constraints.allows_string(extended):
                    node[leaf] = extended
                    changed = True
        if body is not None and changed:
            action.body = json.dumps(body)
        return changed

    # -- F201: XSS ---------------------------------------------------------------

    def oracle_xss(self) -> list[Fault]:
        """Replace string inputs with XSS payloads; flag verbatim echoes (reflected/stored)."""
        payloads = self.config.resolved_xss_payloads()
        faults = []
        for x in self.schema.endpoint_ids():
            params = self._injectable_string_params(x)
            if not params:
                continue
            t1 = self.pool.find(x, "2xx")
            if t1 is None:
                continue
            c1 = slice_prefix(self.pool, t1)
            target_index = len(c1.calls) - 1
            stored_get = self._stored_xss_get(x) if x.verb in ("POST", "PUT", "PATCH") else None
            for payload in payloads:
                candidate = c1.clone()
                target = candidate.calls[target_index]
                target.expected_status = None
                if not self._replace_strings(target, params, payload):
                    continue
                if stored_get is not None:
                    follow_up = HttpAction(
                        endpoint=stored_get,
                        identity=target.identity,
                        path_args={
                            name: target.path_args[name]
                            for name in stored_get.placeholders
                            if name in target.path_args
                        },
                    )
                    if set(stored_get.placeholders) - set(follow_up.path_args):
                        stored_get = None
                    else:
                        candidate.calls.append(follow_up)
                        follow_up_index = len(candidate.calls) - 1
                        for b in list(candidate.bindings):
                            if (
                                b.target_call_index == target_index
                                and b.target_slot_kind == SLOT_PATH_ARG
                                and b.target_slot_name in stored_get.placeholders
                            ):
                                candidate.bindings.append(
                                    Binding(
                                        b.source_call_index,
                                        b.extractor_kind,
                                        follow_up_index,
                                        b.target_slot_kind,
                                        b.target_slot_name,
                                        b.extractor_path,
                                    )
                                )
                candidate.provenance = Provenance("securitySynthesis", 201)
                result = self._run(candidate)
                if not result.complete:
                    continue
                target_obs = result.calls[target_index]
                fault = None
                if 200 <= target_obs.status < 300 and payload in target_obs.response_body:
                    self._stamp(candidate, result)
                    fault = Fault(
                        201,
                        x,
                        candidate,
                        f"payload {payload!r} reflected verbatim in the {x} response body",
                        target_index,
                    )
                elif (
                    stored_get is not None
                    and len(result.calls) == len(candidate.calls)
                    and payload in result.calls[-1].response_body
                ):
                    self._stamp(candidate, result)
                    fault = Fault(
                        201,
                        x,
                        candidate,
                        f"payload {payload!r} sent to {x} was stored and returned verbatim "
                        f"by {stored_get}",
                        len(candidate.calls) - 1,
                    )
                if fault is not None:
                    faults.append(fault)
                    break
        return faults

    def _stored_xss_get(self, endpoint: EndpointId) -> EndpointId | None:
        """GET used to read back a stored payload: same template, else parent collection."""
        if self.schema.has("GET", endpoint.path):
            return EndpointId("GET", endpoint.path)
        parent = endpoint.path.rsplit("/", 1)[0]
        for candidate in (parent, parent + "/"):
            if candidate and candidate in self.schema.paths and self.schema.has("GET", candidate):
                return EndpointId("GET", candidate)
        return None

    def _replace_strings(self, action: HttpAction, params, payload: str) -> bool:
        changed = False
        body = _parse_json_body(action)
        for p in params:
            if not p.constraints.allows_string(payload):
                continue
            if p.location == "query":
                if p.name in action.query:
                    action.query[p.name] = payload
                    changed = True
            elif p.location == "body-field" and isinstance(body, dict):
                node, leaf = _body_field_node(body, p.name)
                if node is not None and leaf in node:
                    node[leaf] = payload
                    changed = True
        if body is not None and changed:
            action.body = json.dumps(body)
        return changed

    # -- incidental F100 tagging ----------------------------------------------

    def tag_server_errors(self) -> list[Fault]:
        """Tag endpoints with recorded 500s; no new executions."""
        faults = []
        for x in self.pool.endpoints():
            refs = self.pool.find_all(x, 500)
            if not refs:
                continue
            representative = refs[0]
            reproduction = slice_prefix(self.pool, representative)
            faults.append(
                Fault(
                    100,
                    x,
                    reproduction,
                    f"{x} answered 500",
                    len(reproduction.calls) - 1,
                )
            )
        return faults


def _parse_json_body(action: HttpAction):
    if action.body is None:
        return None
    try:
        return json.loads(action.body)
    except (ValueError, TypeError):
        return None


def _body_field_node(body: dict, dotted: str):
    """Containing object and leaf key for a dotted body path, or (None, leaf)."""
    node = body
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.get(part) if isinstance(node, dict) else None
        if node is None:
            return None, parts[-1]
    if not isinstance(node, dict):
        return None, parts[-1]
    return node, parts[-1]


def run_security_phase(
    pool: TestPool,
    schema: SchemaModel,
    identities: list[AuthIdentity],
    executor,
    config: SecurityConfig | None = None,
) -> tuple[list[Fault], PhaseStats]:
    """Run 403 synthesis and all enabled oracles; returns deduplicated faults and stats.

    Credentials are re-acquired at the start of the phase so emitted tests
    carry fresh tokens.
    """
    if executor.resolver is not None:
        executor.resolver.invalidate()
    phase = SecurityPhase(pool, schema, identities, executor, config)
    return phase.run()
