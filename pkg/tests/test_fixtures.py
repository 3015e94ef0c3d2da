import json

import pytest
import requests

from restsec.fixtures import (
    FIXTURES,
    SEEDED_FIXTURES,
    auth_path,
    schema_path,
    start_fixture,
    stop_fixture,
)
from restsec.auth import load_auth_file
from restsec.schema import load_schema_source

FOO = {"Authorization": "FOO"}
BAR = {"Authorization": "BAR"}


def test_registry_covers_all_nine_fault_codes():
    seeded = {FIXTURES[name].seeded_fault_code for name in SEEDED_FIXTURES}
    assert seeded == {200, 201, 204, 205, 206, 900, 901, 902, 903}


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixture_schema_and_auth_files_load(name):
    spec = FIXTURES[name]
    model = load_schema_source(str(schema_path(spec)))
    assert model.endpoints
    identities = load_auth_file(str(auth_path(spec)))
    assert identities[-1].is_anonymous


def test_existence_leakage_behavior(start_server):
    h = start_server("existence-leakage")
    assert requests.put(h.base_url + "/api/resources/12", headers=BAR).status_code == 201
    assert requests.get(h.base_url + "/api/resources/12", headers=BAR).status_code == 200
    assert requests.get(h.base_url + "/api/resources/12", headers=FOO).status_code == 403
    assert requests.get(h.base_url + "/api/resources/339", headers=BAR).status_code == 404
    assert requests.get(h.base_url + "/api/resources/12").status_code == 401


def test_not_recognized_auth_behavior(start_server):
    h = start_server("not-recognized-auth")
    # BAR may post; FOO wrongly gets 401 instead of 403.
    assert requests.post(h.base_url + "/api/resources/", headers=BAR).status_code == 201
    assert requests.post(h.base_url + "/api/resources/", headers=FOO).status_code == 401
    assert requests.post(h.base_url + "/api/resources/").status_code == 401
    assert requests.put(h.base_url + "/api/resources/721", headers=BAR).status_code == 201
    assert requests.put(h.base_url + "/api/resources/721", headers=FOO).status_code == 403
    assert requests.put(h.base_url + "/api/resources/577", headers=FOO).status_code == 201


def test_missed_authorization_behavior(start_server):
    h = start_server("missed-authorization")
    base = h.base_url + "/api/forbiddendelete/resources/214"
    assert requests.put(base, headers=BAR).status_code == 201
    assert requests.delete(base, headers=FOO).status_code == 403
    assert requests.put(base, headers=FOO).status_code == 204   # the seeded bug
    assert requests.delete(base, headers=BAR).status_code == 204
    assert requests.delete(base, headers=BAR).status_code == 404


def test_anonymous_modifications_behavior(start_server):
    h = start_server("anonymous-modifications")
    assert requests.put(h.base_url + "/api/resources/196").status_code == 201
    assert requests.put(h.base_url + "/api/resources/196").status_code == 204


def test_ignore_anonymous_behavior(start_server):
    h = start_server("ignore-anonymous")
    base = h.base_url + "/api/resources/483"
    assert requests.put(base, headers=FOO).status_code == 201
    owner_view = requests.get(base, headers=FOO)
    assert owner_view.status_code == 200
    assert "FOO" in owner_view.text
    assert requests.get(base, headers=BAR).status_code == 403
    anonymous_view = requests.get(base)
    assert anonymous_view.status_code == 200
    assert "FOO" in anonymous_view.text
    assert requests.get(h.base_url + "/api/resources/999").status_code == 403


def test_leaked_stack_trace_behavior(start_server):
    h = start_server("leaked-stack-trace")
    resp = requests.get(h.base_url + "/api/resources/null-pointer-json")
    assert resp.status_code == 500
    data = resp.json()
    assert data["error"]["type"] == "java.lang.NullPointerException"
    assert any(line.startswith("\tat ") for line in data["error"]["stack"])


def test_leaked_stack_trace_can_be_disabled(start_server):
    h = start_server("leaked-stack-trace", trace_enabled=False)
    resp = requests.get(h.base_url + "/api/resources/null-pointer-json")
    assert resp.status_code == 500
    assert resp.json() == {"error": "internal error"}


def test_hidden_accessible_behavior(start_server):
    h = start_server("hidden-accessible")
    opt = requests.options(h.base_url + "/api/resources")
    assert opt.status_code == 200
    assert opt.headers["Allow"] == "HEAD,DELETE,POST,GET,OPTIONS,PUT"
    hidden_get = requests.get(h.base_url + "/api/resources")
    assert hidden_get.status_code == 200
    assert "OK" in hidden_get.text
    assert requests.put(h.base_url + "/api/resources").status_code == 415
    assert requests.delete(h.base_url + "/api/resources").status_code == 405


def test_sql_injection_fixture_sleeps_on_signature(start_server):
    h = start_server("sql-injection", sleep_seconds=1.2)
    fast = requests.post(
        h.base_url + "/api/sqli/body/vulnerable", json={"username": "a", "password": "b"}
    )
    assert fast.status_code == 200
    assert fast.text == "MATCHED: 0"
    assert fast.elapsed.total_seconds() < 1.0
    slow = requests.post(
        h.base_url + "/api/sqli/body/vulnerable",
        json={"username": "a' OR SLEEP(1.20)-- -", "password": "b"},
    )
    assert slow.status_code == 200
    assert slow.elapsed.total_seconds() > 1.2


def test_sql_injection_sleep_can_be_disabled(start_server):
    h = start_server("sql-injection", sleep_enabled=False)
    slow = requests.post(
        h.base_url + "/api/sqli/body/vulnerable",
        json={"username": "a' OR SLEEP(5.00)-- -", "password": "b"},
    )
    assert slow.elapsed.total_seconds() < 1.0


def test_xss_guestbook_stores_verbatim(start_server):
    h = start_server("xss-guestbook")
    payload = "<img src=x onerror=alert('XSS')>"
    resp = requests.post(
        h.base_url + "/api/stored/json/guestbook", params={"name": payload, "entry": "hi"}
    )
    assert resp.status_code == 200
    assert resp.json()["success"] is True
    listing = requests.get(h.base_url + "/api/stored/json/guestbook")
    assert listing.json()["entries"] == [{"name": payload, "entry": "hi"}]


def test_xss_guestbook_sanitizing_variant(start_server):
    h = start_server("xss-guestbook", sanitize=True)
    payload = "<script>alert('XSS')</script>"
    requests.post(h.base_url + "/api/stored/json/guestbook", params={"name": payload, "entry": "x"})
    listing = requests.get(h.base_url + "/api/stored/json/guestbook")
    assert payload not in json.dumps(listing.json())
    assert "&lt;script&gt;" in listing.json()["entries"][0]["name"]


def test_correct_fixture_has_no_leak_and_strict_auth(start_server):
    h = start_server("correct")
    created = requests.post(h.base_url + "/api/resources", headers=FOO)
    assert created.status_code == 201
    rid = created.json()["id"]
    assert created.headers["Location"] == f"/api/resources/{rid}"
    base = h.base_url + f"/api/resources/{rid}"
    assert requests.get(base, headers=FOO).status_code == 200
    # Foreign and missing resources are indistinguishable: 403 either way.
    assert requests.get(base, headers=BAR).status_code == 403
    assert requests.get(h.base_url + "/api/resources/999999", headers=BAR).status_code == 403
    assert requests.put(h.base_url + "/api/resources/999999", headers=BAR).status_code == 403
    assert requests.delete(base, headers=BAR).status_code == 403
    assert requests.get(base).status_code == 401
    assert requests.delete(base, headers=FOO).status_code == 204


def test_unknown_path_and_method_defaults(start_server):
    h = start_server("correct")
    assert requests.get(h.base_url + "/nope").status_code == 404
    resp = requests.patch(h.base_url + "/api/resources/5", headers=FOO)
    assert resp.status_code == 405
    assert "Allow" in resp.headers


def test_restart_resets_state():
    spec = FIXTURES["existence-leakage"]
    handle = start_fixture(spec)
    requests.put(handle.base_url + "/api/resources/42", headers=FOO)
    assert requests.get(handle.base_url + "/api/resources/42", headers=FOO).status_code == 200
    stop_fixture(handle)
    fresh = start_fixture(spec)
    try:
        assert requests.get(fresh.base_url + "/api/resources/42", headers=FOO).status_code == 404
    finally:
        stop_fixture(fresh)


def test_stop_fixture_is_idempotent():
    handle = start_fixture(FIXTURES["correct"])
    stop_fixture(handle)
    stop_fixture(handle)
    assert handle.stopped
