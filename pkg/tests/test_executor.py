import json
import socket

import pytest

from restsec.auth import ANONYMOUS, ResolvedCredential
from restsec.executor import (
    Binding,
    HttpAction,
    HttpExecutor,
    TestCase,
    TransportError,
    match_status,
    verify_statuses,
)
from restsec.schema import EndpointId


def act(verb, path, identity=ANONYMOUS, **kwargs):
    return HttpAction(endpoint=EndpointId(verb, path), identity=identity, **kwargs)


def anon():
    return ResolvedCredential(ANONYMOUS, {})


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_match_status_exact_class_and_none():
    assert match_status(201, 201)
    assert not match_status(201, 200)
    assert match_status("2xx", 204)
    assert not match_status("2xx", 301)
    assert match_status(None, 500)
    with pytest.raises(ValueError):
        match_status("6xx", 200)


def test_execute_records_403_from_protected_resource(rig):
    r = rig("existence-leakage")
    put = r.executor.execute(
        act("PUT", "/api/resources/{id}", path_args={"id": "12"}),
        ResolvedCredential("BAR", {"Authorization": "BAR"}),
    )
    assert put.status == 201
    get = r.executor.execute(
        act("GET", "/api/resources/{id}", path_args={"id": "12"}),
        ResolvedCredential("FOO", {"Authorization": "FOO"}),
    )
    assert get.status == 403
    assert get.duration_ms >= 0
    assert not get.timed_out


def test_unreachable_host_raises_transport_error():
    executor = HttpExecutor(f"http://127.0.0.1:{free_port()}", timeout_s=2)
    with pytest.raises(TransportError):
        executor.execute(act("GET", "/x"), anon())


def test_server_sleep_reflected_in_duration(start_server):
    handle = start_server("sql-injection", sleep_seconds=1.3)
    executor = HttpExecutor(handle.base_url)
    call = executor.execute(
        act(
            "POST",
            "/api/sqli/body/vulnerable",
            body=json.dumps({"username": "x' OR SLEEP(1.30)-- -", "password": "y"}),
            body_media_type="application/json",
        ),
        anon(),
    )
    assert call.status == 200
    assert call.duration_ms > 1300


def test_timeout_marks_call_timed_out(start_server):
    handle = start_server("sql-injection", sleep_seconds=2.0)
    executor = HttpExecutor(handle.base_url, timeout_s=0.5)
    call = executor.execute(
        act(
            "POST",
            "/api/sqli/body/vulnerable",
            body=json.dumps({"username": "x' OR SLEEP(2.00)-- -", "password": "y"}),
        ),
        anon(),
    )
    assert call.timed_out
    assert call.status == 0


def test_redirects_are_not_followed(start_server):
    handle = start_server("login-flow")
    executor = HttpExecutor(handle.base_url)
    call = executor.execute(act("GET", "/redirect"), anon())
    assert call.status == 302
    assert call.response_headers.get("Location") == "/api/task/logg/1"


def test_response_body_cap_truncates(rig):
    r = rig("existence-leakage")
    r.executor.body_cap_bytes = 10
    r.executor.run_test_case(
        TestCase([act("PUT", "/api/resources/{id}", identity="BAR", path_args={"id": "5"})])
    )
    result = r.executor.run_test_case(
        TestCase([act("GET", "/api/resources/{id}", identity="BAR", path_args={"id": "5"})])
    )
    call = result.calls[0]
    assert call.truncated
    assert len(call.response_body.encode()) <= 10


def test_rendered_path_quotes_arguments():
    action = act("GET", "/items/{id}", path_args={"id": "a/b c"})
    assert action.rendered_path() == "/items/a%2Fb%20c"


def test_run_test_case_binds_location_header(rig):
    r = rig("correct")
    test = TestCase(
        calls=[
            act("POST", "/api/resources", identity="FOO"),
            act("GET", "/api/resources/{id}", identity="FOO", path_args={"id": "0"}),
        ],
        bindings=[Binding(0, "locationHeader", 1, "pathArg", "id")],
    )
    result = r.executor.run_test_case(test)
    assert result.complete
    assert [c.status for c in result.calls] == [201, 200]
    created = result.calls[0].response_headers["Location"].rsplit("/", 1)[-1]
    assert result.calls[1].action.path_args["id"] == created


def test_run_test_case_binds_body_field(rig):
    r = rig("correct")
    test = TestCase(
        calls=[
            act("POST", "/api/resources", identity="FOO"),
            act("GET", "/api/resources/{id}", identity="FOO", path_args={"id": "0"}),
        ],
        bindings=[Binding(0, "bodyField", 1, "pathArg", "id", extractor_path="id")],
    )
    result = r.executor.run_test_case(test)
    assert result.complete
    assert [c.status for c in result.calls] == [201, 200]


def test_single_call_test_yields_one_executed_call(rig):
    r = rig("correct")
    result = r.executor.run_test_case(TestCase([act("GET", "/api/resources", identity="FOO")]))
    assert result.complete
    assert len(result.calls) == 1
    assert result.calls[0].status == 200


def test_binding_from_absent_body_field_is_unbindable(rig):
    r = rig("correct")
    test = TestCase(
        calls=[
            act("POST", "/api/resources", identity="FOO"),
            act("GET", "/api/resources/{id}", identity="FOO", path_args={"id": "0"}),
        ],
        bindings=[Binding(0, "bodyField", 1, "pathArg", "id", extractor_path="no_such_field")],
    )
    result = r.executor.run_test_case(test)
    assert result.unbindable
    assert len(result.calls) == 1
    assert "no_such_field" in result.failure


def test_original_test_not_mutated_by_binding(rig):
    r = rig("correct")
    test = TestCase(
        calls=[
            act("POST", "/api/resources", identity="FOO"),
            act("GET", "/api/resources/{id}", identity="FOO", path_args={"id": "0"}),
        ],
        bindings=[Binding(0, "locationHeader", 1, "pathArg", "id")],
    )
    r.executor.run_test_case(test)
    assert test.calls[1].path_args["id"] == "0"


def make_verify_pair(statuses, expected):
    calls = [act("GET", "/x", expected_status=e) for e in expected]
    test = TestCase(calls)
    from restsec.executor import ExecutedCall

    observed = [ExecutedCall(action=c.clone(), status=s) for c, s in zip(calls, statuses)]
    return test, observed


def test_verify_statuses_exact_match():
    test, observed = make_verify_pair([201, 403, 404], [201, 403, 404])
    assert verify_statuses(test, observed)


def test_verify_statuses_class_match():
    test, observed = make_verify_pair([204], ["2xx"])
    assert verify_statuses(test, observed)


def test_verify_statuses_mismatch():
    test, observed = make_verify_pair([201, 200], [201, 403])
    assert not verify_statuses(test, observed)


def test_verify_statuses_length_mismatch():
    test, observed = make_verify_pair([201, 403], [201, 403])
    assert not verify_statuses(test, observed[:1])


def test_binding_validation():
    with pytest.raises(ValueError):
        Binding(2, "locationHeader", 1, "pathArg", "id")
    with pytest.raises(ValueError):
        Binding(0, "nope", 1, "pathArg", "id")
    with pytest.raises(ValueError):
        TestCase([], [])


def test_action_round_trip_serialization():
    action = act(
        "POST",
        "/items/{id}",
        identity="FOO",
        path_args={"id": "4"},
        query={"q": "x"},
        headers={"X-Extra": "1"},
        body='{"a": 1}',
        body_media_type="application/json",
        expected_status="2xx",
        min_duration_ms=5000,
    )
    assert HttpAction.from_dict(action.to_dict()) == action


def test_test_case_round_trip_serialization():
    test = TestCase(
        calls=[act("POST", "/items"), act("GET", "/items/{id}", path_args={"id": "0"})],
        bindings=[Binding(0, "locationHeader", 1, "pathArg", "id")],
    )
    assert TestCase.from_dict(test.to_dict()) == test
