from __future__ import annotations

import io
import json
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import random_dataset
from warpbench.models import fit_ease, fit_itemknn, fit_userknn, save_checkpoint
from warpbench.serve import InferenceService, McpServer, ServeConfig, create_app, serve_stdio
from warpbench.serve.mcp import INVALID_PARAMS, METHOD_NOT_FOUND, PARSE_ERROR

TITLES = {f"i{i}": f"Movie {i}" for i in range(25)}


@pytest.fixture(scope="module")
def service():
    d = random_dataset(np.random.default_rng(4), 30, 25, 0.25)
    return InferenceService(
        {"ease": fit_ease(d, 5.0), "itemknn": fit_itemknn(d, 10), "userknn": fit_userknn(d, 10)},
        default_k=5, aliases=TITLES,
    )


@pytest.fixture(scope="module")
def client(service):
    return TestClient(create_app(service))


def rpc(server, method, params=None, id_=1):
    msg = {"jsonrpc": "2.0", "id": id_, "method": method}
    if params is not None:
        msg["params"] = params
    return json.loads(server.handle_line(json.dumps(msg)))


def call(server, **arguments):
    return rpc(server, "tools/call", {"name": "recommend", "arguments": arguments})


def strip(body):
    return {k: v for k, v in body.items() if k != "latency_ms"}


def test_rest_recommend_user(client):
    r = client.post("/recommend", json={"model": "ease", "user_id": "u3", "k": 3})
    assert r.status_code == 200
    body = r.json()
    scores = [x["score"] for x in body["items"]]
    assert len(scores) == 3 and scores == sorted(scores, reverse=True)
    assert body["model"] == "ease" and body["latency_ms"] >= 0
    assert body["items"][0]["title"] == TITLES[body["items"][0]["item_id"]]


def test_rest_k_larger_than_catalog(client):
    body = client.post("/recommend", json={"model": "ease", "user_id": "u3", "k": 1000}).json()
    assert 0 < len(body["items"]) <= 25


@pytest.mark.parametrize("payload,status,code", [
    ({"model": "nope", "user_id": "u1"}, 404, "unknown_model"),
    ({"model": "ease", "user_id": "stranger"}, 422, "unknown_user"),
    ({"model": "userknn", "item_sequence": ["i1"]}, 422, "unsupported_query"),
    ({"model": "ease", "item_sequence": ["zz"]}, 422, "unknown_items"),
    ({"model": "ease", "user_id": "u1", "k": 0}, 400, "bad_request"),
    ({"model": "ease", "user_id": "u1", "item_sequence": ["i1"]}, 400, "bad_request"),
    ({"model": "ease", "user_id": "u1", "extra": 1}, 400, "bad_request"),
    ([1, 2], 400, "bad_request"),
])
def test_rest_errors(client, payload, status, code):
    r = client.post("/recommend", json=payload)
    assert r.status_code == status and r.json()["error"]["code"] == code


def test_rest_malformed_json(client):
    assert client.post("/recommend", content=b"{not json", headers={"content-type": "application/json"}).status_code == 400


def test_rest_inventory_and_health(client, service):
    models = client.get("/models").json()["models"]
    assert [m["name"] for m in models] == list(service.models)
    assert models[0]["family"] == "ease" and models[0]["n_items"] == 25
    h1, h2 = client.get("/health").json(), client.get("/health").json()
    assert h1.keys() == h2.keys() and h1["engine_version"]


def test_rest_unknown_user_with_sequence_falls_back(client):
    body = client.post("/recommend", json={"model": "ease", "item_sequence": ["i1", "i2", "nope"], "k": 4}).json()
    assert len(body["items"]) == 4 and body["warnings"] == ["unknown item id 'nope' skipped"]
    assert {"i1", "i2"}.isdisjoint(x["item_id"] for x in body["items"])


def test_mcp_surface(service):
    s = McpServer(service)
    init = rpc(s, "initialize", {"protocolVersion": "2024-11-05", "capabilities": {}})
    assert init["result"]["protocolVersion"] == "2024-11-05" and "tools" in init["result"]["capabilities"]
    tools = rpc(s, "tools/list")["result"]["tools"]
    assert [t["name"] for t in tools] == ["recommend"]
    assert {"model", "user_id", "item_sequence", "top_k"} <= set(tools[0]["inputSchema"]["properties"])
    assert rpc(s, "frobnicate")["error"]["code"] == METHOD_NOT_FOUND
    assert json.loads(s.handle_line("{oops"))["error"]["code"] == PARSE_ERROR
    assert json.loads(s.handle_line("{oops"))["id"] is None
    assert rpc(s, "tools/call", {"name": "other"})["error"]["code"] == INVALID_PARAMS
    assert call(s, model="ease", top_k=0)["error"]["code"] == INVALID_PARAMS
    assert s.handle_line(json.dumps({"jsonrpc": "2.0", "method": "notifications/initialized"})) is None


def test_mcp_titles_sequence_top3(service):
    s = McpServer(service)
    out = call(s, model="itemknn", item_sequence=["Movie 1", "Movie 2", "Movie 3"], top_k=3)["result"]
    assert out["isError"] is False and len(out["structuredContent"]["items"]) == 3
    assert json.loads(out["content"][0]["text"])["items"] == out["structuredContent"]["items"]


def test_mcp_tool_error_is_reported_in_result(service):
    out = call(McpServer(service), model="ease", user_id="stranger")["result"]
    assert out["isError"] is True and "unknown_user" in out["content"][0]["text"]


@pytest.mark.parametrize("query", [
    {"model": "ease", "user_id": "u7", "k": 5},
    {"model": "itemknn", "user_id": "u0", "k": 10},
    {"model": "ease", "item_sequence": ["i3", "i4", "i5"], "k": 3},
    {"model": "itemknn", "item_sequence": ["Movie 8"], "k": 6},
])
def test_rest_and_mcp_agree(client, service, query):
    rest = client.post("/recommend", json=query).json()
    args = {k: v for k, v in query.items() if k != "k"} | {"top_k": query["k"]}
    mcp = call(McpServer(service), **args)["result"]["structuredContent"]
    assert strip(rest) == strip(mcp)


def test_concurrent_requests_identical(client):
    q = {"model": "ease", "user_id": "u5", "k": 8}
    with ThreadPoolExecutor(4) as pool:
        bodies = list(pool.map(lambda _: strip(client.post("/recommend", json=q).json()), range(16)))
    assert all(b == bodies[0] for b in bodies)


def test_stdio_loop_is_sequential(service):
    lines = [
        json.dumps({"jsonrpc": "2.0", "id": 1, "method": "initialize", "params": {}}),
        json.dumps({"jsonrpc": "2.0", "method": "notifications/initialized"}),
        "",
        "garbage",
        json.dumps({"jsonrpc": "2.0", "id": 2, "method": "tools/list"}),
    ]
    out = io.StringIO()
    serve_stdio(McpServer(service), io.StringIO("\n".join(lines) + "\n"), out)
    replies = [json.loads(x) for x in out.getvalue().splitlines()]
    assert [r.get("id") for r in replies] == [1, None, 2]


def test_serve_config_and_cli_stdio(tmp_path):
    d = random_dataset(np.random.default_rng(1), 10, 8, 0.4)
    ckpt = save_checkpoint(fit_ease(d, 1.0), tmp_path / "ease.npz")
    with pytest.raises(ValueError):
        ServeConfig({})
    cfg = tmp_path / "serve.yaml"
    cfg.write_text(f"seed: 0\nserve:\n  transport: stdio\n  checkpoints: {{ease: {ckpt}}}\n")
    msgs = [
        {"jsonrpc": "2.0", "id": 1, "method": "tools/list"},
        {"jsonrpc": "2.0", "id": 2, "method": "tools/call",
         "params": {"name": "recommend", "arguments": {"model": "ease", "user_id": "u1", "top_k": 2}}},
    ]
    proc = subprocess.run([sys.executable, "-m", "warpbench.cli", "serve", "--config", str(cfg)],
                          input="\n".join(json.dumps(m) for m in msgs) + "\n", capture_output=True, text=True,
                          timeout=120)
    assert proc.returncode == 0, proc.stderr
    replies = [json.loads(x) for x in proc.stdout.splitlines()]
    assert replies[0]["result"]["tools"][0]["name"] == "recommend"
    assert len(replies[1]["result"]["structuredContent"]["items"]) == 2
