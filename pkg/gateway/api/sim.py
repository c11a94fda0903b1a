"""
API for the simulated broker and the run statistics.
"""

from __future__ import annotations

from flask import g, request

from . import json_response, SIM_API

END_POINT = "/api/sim"


def _broker():
    return g.gateway.broker


@SIM_API.route(f"{END_POINT}/stats", methods=["GET"])
def get_stats():
    return json_response(g.gateway.run_stats().to_dict())


@SIM_API.route(f"{END_POINT}/publish", methods=["POST"])
def publish():
    """
    Publishes a message on the simulated broker.

    Query:
      - topic: required
      - payload: optional text (default empty)
      - protocol: "mqtt" (default) publishes, "coap" notifies
    """
    if _broker() is None:
        return json_response({"error": "The gateway is not running against the simulated broker."}, 409)
    topic = request.args.get("topic")
    if topic is None:
        return json_response({"error": "No topic specified."}, 400)
    payload = request.args.get("payload", "").encode("utf-8")
    if request.args.get("protocol", "mqtt") == "coap":
        reached = _broker().notify(topic, payload)
    else:
        reached = _broker().publish(topic, payload)
    return json_response({"topic": topic, "sessions": reached})


@SIM_API.route(f"{END_POINT}/drop", methods=["POST"])
def drop_sessions():
    """Cuts every session on the simulated broker; the gateway reconnects with backoff."""
    if _broker() is None:
        return json_response({"error": "The gateway is not running against the simulated broker."}, 409)
    return json_response({"dropped": _broker().drop_sessions()})


@SIM_API.route(f"{END_POINT}/heartbeat", methods=["GET"])
def heartbeat():
    """
    Returns the simulated clock and the broker counters.
    """
    broker = _broker()
    if broker is None:
        return json_response({"simulated": False})
    return json_response({"simulated": True, "now_us": broker.now_us, "counts": broker.counts,
                          "sessions": broker.sessions})
