"""The same fitted model answered through the in-process service and the MCP tool.

Fits EASE on a toy log, then asks for recommendations by user id and by an
item sequence given as titles, the way an agent would call the tool.

    python3 demos/serve_roundtrip.py
"""
from __future__ import annotations

import json

from warpbench.ingest import RawInteraction, build_dataset
from warpbench.models import fit_ease
from warpbench.serve import InferenceService, McpServer
from warpbench.serve.core import RecommendRequest

TITLES = {"m1": "Alien", "m2": "Aliens", "m3": "Heat", "m4": "Ronin", "m5": "Brazil", "m6": "Solaris"}
LOG = {
    "ann": ["m1", "m2", "m6"], "bob": ["m3", "m4"], "cy": ["m1", "m2", "m5"],
    "dee": ["m3", "m4", "m2"], "eve": ["m5", "m6", "m1"], "fox": ["m1", "m6"],
}


def main() -> None:
    data = build_dataset([RawInteraction(u, i, 1.0, None) for u, items in LOG.items() for i in items])
    service = InferenceService({"ease": fit_ease(data, 1.0)}, default_k=3, aliases=TITLES)

    direct = service.recommend(RecommendRequest.from_mapping({"model": "ease", "user_id": "bob", "k": 3}))
    print("for bob:", [(x["title"], round(x["score"], 3)) for x in direct["items"]])

    server = McpServer(service)
    for msg in (
        {"jsonrpc": "2.0", "id": 1, "method": "initialize", "params": {"protocolVersion": "2024-11-05"}},
        {"jsonrpc": "2.0", "id": 2, "method": "tools/list"},
        {"jsonrpc": "2.0", "id": 3, "method": "tools/call", "params": {
            "name": "recommend", "arguments": {"model": "ease", "item_sequence": ["Alien", "Aliens"], "top_k": 3}}},
    ):
        reply = json.loads(server.handle_line(json.dumps(msg)))
        if msg["method"] == "tools/call":
            print("after Alien, Aliens:", [x["title"] for x in reply["result"]["structuredContent"]["items"]])
        elif msg["method"] == "tools/list":
            print("tools:", [t["name"] for t in reply["result"]["tools"]])
        else:
            print("server:", reply["result"]["serverInfo"])
    print("malformed line ->", json.loads(server.handle_line("{"))["error"])


if __name__ == "__main__":
    main()
