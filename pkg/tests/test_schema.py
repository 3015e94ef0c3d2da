import json

import pytest

from restsec.fixtures import FIXTURES, schema_path
from restsec.schema import (
    EndpointId,
    SchemaError,
    SchemaParseError,
    UnknownPathError,
    UnsupportedVersionError,
    load_schema,
    load_schema_source,
)

ITEMS_DOC = {
    "openapi": "3.0.3",
    "info": {"title": "items", "version": "1"},
    "paths": {
        "/items": {
            "post": {"responses": {"201": {"description": "created"}}},
        },
        "/items/{id}": {
            "parameters": [
                {"name": "id", "in": "path", "required": True, "schema": {"type": "integer"}}
            ],
            "get": {"responses": {"200": {"description": "ok"}}},
            "put": {"responses": {"200": {"description": "ok"}}},
            "delete": {"responses": {"204": {"description": "gone"}}},
        },
    },
}


def make_doc(paths: dict) -> str:
    return json.dumps({"openapi": "3.0.3", "info": {"title": "t", "version": "1"}, "paths": paths})


def get_op(**extra):
    op = {"responses": {"200": {"description": "ok"}}}
    op.update(extra)
    return op


def test_load_schema_enumerates_declared_endpoints():
    model = load_schema(json.dumps(ITEMS_DOC))
    assert len(model.endpoints) == 4
    assert set(model.endpoint_ids()) == {
        EndpointId("POST", "/items"),
        EndpointId("GET", "/items/{id}"),
        EndpointId("PUT", "/items/{id}"),
        EndpointId("DELETE", "/items/{id}"),
    }


def test_load_schema_empty_paths_warns():
    model = load_schema(make_doc({}))
    assert len(model.endpoints) == 0
    assert any("empty schema" in w for w in model.warnings)


def test_missed_authorization_fixture_schema_has_two_endpoints_on_one_path():
    model = load_schema_source(str(schema_path(FIXTURES["missed-authorization"])))
    assert set(model.endpoint_ids()) == {
        EndpointId("PUT", "/api/forbiddendelete/resources/{id}"),
        EndpointId("DELETE", "/api/forbiddendelete/resources/{id}"),
    }
    assert model.paths == ["/api/forbiddendelete/resources/{id}"]


def test_load_schema_yaml():
    doc = "openapi: '3.0.3'\ninfo: {title: t, version: '1'}\npaths:\n  /x:\n    get:\n      responses:\n        '200': {description: ok}\n"
    model = load_schema(doc, fmt="yaml")
    assert model.endpoint_ids() == [EndpointId("GET", "/x")]


def test_load_schema_is_deterministic():
    raw = json.dumps(ITEMS_DOC)
    a, b = load_schema(raw), load_schema(raw)
    assert a.endpoint_ids() == b.endpoint_ids()
    assert a.warnings == b.warnings
    assert {e: [p.name for p in s.parameters] for e, s in a.endpoints.items()} == {
        e: [p.name for p in s.parameters] for e, s in b.endpoints.items()
    }


def test_malformed_json_reports_location():
    with pytest.raises(SchemaParseError) as err:
        load_schema('{"openapi": "3.0.3",\n  "paths": }')
    assert "line 2" in str(err.value)


def test_swagger_two_rejected():
    with pytest.raises(UnsupportedVersionError):
        load_schema(json.dumps({"swagger": "2.0", "paths": {}}))
    with pytest.raises(UnsupportedVersionError):
        load_schema(json.dumps({"openapi": "2.0", "paths": {}}))


def test_external_ref_rejected():
    doc = make_doc(
        {"/x": {"get": {"responses": {"200": {"description": "ok"}},
                        "parameters": [{"$ref": "other.json#/components/p"}]}}}
    )
    with pytest.raises(SchemaError, match="external"):
        load_schema(doc)


def test_internal_ref_resolved():
    doc = json.dumps(
        {
            "openapi": "3.0.3",
            "info": {"title": "t", "version": "1"},
            "components": {
                "parameters": {
                    "idParam": {
                        "name": "id",
                        "in": "path",
                        "required": True,
                        "schema": {"type": "integer"},
                    }
                }
            },
            "paths": {
                "/x/{id}": {
                    "get": {
                        "parameters": [{"$ref": "#/components/parameters/idParam"}],
                        "responses": {"200": {"description": "ok"}},
                    }
                }
            },
        }
    )
    model = load_schema(doc)
    spec = model.spec_for(EndpointId("GET", "/x/{id}"))
    assert [p.name for p in spec.params_in("path")] == ["id"]
    assert spec.params_in("path")[0].value_kind == "integer"


def test_one_of_body_picks_first_alternative_with_warning():
    doc = make_doc(
        {
            "/x": {
                "post": {
                    "requestBody": {
                        "content": {
                            "application/json": {
                                "schema": {
                                    "oneOf": [
                                        {"type": "object", "properties": {"a": {"type": "string"}}},
                                        {"type": "object", "properties": {"b": {"type": "string"}}},
                                    ]
                                }
                            }
                        }
                    },
                    "responses": {"200": {"description": "ok"}},
                }
            }
        }
    )
    model = load_schema(doc)
    spec = model.spec_for(EndpointId("POST", "/x"))
    assert [p.name for p in spec.params_in("body-field")] == ["a"]
    assert any("oneOf" in w for w in model.warnings)


def test_nested_body_fields_get_dotted_names():
    doc = make_doc(
        {
            "/x": {
                "post": {
                    "requestBody": {
                        "content": {
                            "application/json": {
                                "schema": {
                                    "type": "object",
                                    "properties": {
                                        "user": {
                                            "type": "object",
                                            "properties": {
                                                "name": {"type": "string", "maxLength": 10}
                                            },
                                        }
                                    },
                                }
                            }
                        }
                    },
                    "responses": {"200": {"description": "ok"}},
                }
            }
        }
    )
    spec = load_schema(doc).spec_for(EndpointId("POST", "/x"))
    fields = spec.params_in("body-field")
    assert [p.name for p in fields] == ["user.name"]
    assert fields[0].constraints.max_length == 10


def test_multipart_body_recorded_as_warning():
    doc = make_doc(
        {
            "/x": {
                "post": {
                    "requestBody": {
                        "content": {"multipart/form-data": {"schema": {"type": "object"}}}
                    },
                    "responses": {"200": {"description": "ok"}},
                }
            }
        }
    )
    model = load_schema(doc)
    assert any("multipart" in w for w in model.warnings)


def test_duplicate_placeholder_rejected():
    with pytest.raises(ValueError):
        EndpointId("GET", "/a/{x}/b/{x}")


def test_missing_path_param_synthesized_with_warning():
    doc = make_doc({"/a/{id}": {"get": get_op()}})
    model = load_schema(doc)
    spec = model.spec_for(EndpointId("GET", "/a/{id}"))
    assert [p.name for p in spec.params_in("path")] == ["id"]
    assert any("synthesized" in w for w in model.warnings)


# -- path hierarchy ----------------------------------------------------------


def ancestors_doc():
    return make_doc(
        {
            "/data": {"get": get_op()},
            "/data/{id}": {"get": get_op()},
            "/data/{id}/bar": {"get": get_op()},
        }
    )


def test_top_get_ancestor_prefers_the_root_most_path():
    model = load_schema(ancestors_doc())
    assert model.top_get_ancestor("/data/{id}/bar") == EndpointId("GET", "/data")


def test_top_get_ancestor_absent_when_no_ancestor_has_get():
    model = load_schema(make_doc({"/data/{id}": {"get": get_op()}}))
    assert model.top_get_ancestor("/data/{id}") is None


def test_top_get_ancestor_highest_wins():
    model = load_schema(
        make_doc(
            {
                "/a/{x}": {"get": get_op()},
                "/a/{x}/b": {"get": get_op()},
                "/a/{x}/b/{y}": {"get": get_op()},
            }
        )
    )
    assert model.top_get_ancestor("/a/{x}/b/{y}") == EndpointId("GET", "/a/{x}")


def test_top_get_ancestor_never_returns_the_input_path():
    model = load_schema(ancestors_doc())
    for path in model.paths:
        anc = model.top_get_ancestor(path)
        assert anc is None or anc.path != path


def test_top_get_ancestor_unknown_path():
    model = load_schema(ancestors_doc())
    with pytest.raises(UnknownPathError):
        model.top_get_ancestor("/nope")


def test_trailing_slash_paths_stay_distinct():
    model = load_schema(
        make_doc({"/api/resources/": {"post": get_op()}, "/api/resources": {"get": get_op()}})
    )
    assert model.verbs_at("/api/resources/") == ["POST"]
    assert model.verbs_at("/api/resources") == ["GET"]


def test_path_tree_mirrors_hierarchy():
    model = load_schema(ancestors_doc())
    tree = model.path_tree()
    assert len(tree) == len(model.paths)
    assert tree["/data"].children == ["/data/{id}"]
    assert tree["/data/{id}"].children == ["/data/{id}/bar"]
    reachable = [p for node in tree.values() for p in node.endpoints]
    assert len(reachable) == len(model.endpoints)


# -- undeclared verbs ----------------------------------------------------------


def test_undeclared_verbs_paper_example():
    model = load_schema(make_doc({"/api/resources": {"post": get_op()}}))
    assert model.undeclared_verbs("/api/resources", "HEAD,POST,GET,OPTIONS".split(",")) == ["GET"]


def test_undeclared_verbs_exclusion_set_only():
    model = load_schema(make_doc({"/x": {"get": get_op()}}))
    assert model.undeclared_verbs("/x", ["OPTIONS", "HEAD"]) == []


def test_undeclared_verbs_set_difference():
    model = load_schema(make_doc({"/x": {"get": get_op(), "put": get_op()}}))
    allow = "HEAD,DELETE,GET,OPTIONS,PUT,PATCH".split(",")
    assert model.undeclared_verbs("/x", allow) == ["DELETE", "PATCH"]


def test_undeclared_verbs_never_contains_declared_options_or_head():
    model = load_schema(make_doc({"/x": {"get": get_op(), "post": get_op()}}))
    allow = ["GET", "POST", "PUT", "PATCH", "DELETE", "OPTIONS", "HEAD"]
    result = model.undeclared_verbs("/x", allow)
    assert set(result).isdisjoint({"GET", "POST", "OPTIONS", "HEAD"})


def test_constraints_consistency_enforced():
    doc = make_doc(
        {
            "/x": {
                "get": {
                    "parameters": [
                        {
                            "name": "q",
                            "in": "query",
                            "schema": {"type": "string", "minLength": 9, "maxLength": 2},
                        }
                    ],
                    "responses": {"200": {"description": "ok"}},
                }
            }
        }
    )
    with pytest.raises(SchemaError):
        load_schema(doc)
