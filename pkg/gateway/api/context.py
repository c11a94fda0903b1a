"""
API for contexts, placement programs and actuator rules.
"""

from __future__ import annotations

from flask import g, request

from gateway.context_diversity import observation_from_json
from . import json_response, CONTEXT_API

END_POINT = "/api/context"


@CONTEXT_API.route(f"{END_POINT}/dump", methods=["GET"])
def dump_contexts():
    return json_response(
        {
            "contexts": g.gateway.contexts.snapshot(),
            "programs": {name: p.describe() for name, p in g.gateway.contexts.programs.items()},
        }
    )


@CONTEXT_API.route(f"{END_POINT}/place", methods=["POST"])
def place_observation():
    """
    Runs the placement programs on one observation.

    Body: {"name": "sensor101", "values": {"loc": "Kista", ...}}
    """
    body = request.get_json(silent=True)
    if not isinstance(body, dict) or "name" not in body or not isinstance(body.get("values"), dict):
        return json_response({"error": "Body must be {\"name\": ..., \"values\": {...}}."}, 400)
    changed = g.gateway.contexts.place_observation(observation_from_json(body))
    return json_response({"changed": [c.id for c in changed], "contexts": g.gateway.contexts.snapshot()})


@CONTEXT_API.route(f"{END_POINT}/rules", methods=["GET"])
def list_rules():
    return json_response({"rules": g.gateway.rules.to_list()})


@CONTEXT_API.route(f"{END_POINT}/rules/evaluate", methods=["POST"])
def evaluate_rules():
    """
    Actuator states for the posted readings.

    Body: {"phone.pos": 400, "living_room.temp": 19}
    """
    readings = request.get_json(silent=True)
    if not isinstance(readings, dict):
        return json_response({"error": "Body must be an object of readings."}, 400)
    return json_response(g.gateway.rules.evaluate(readings))
