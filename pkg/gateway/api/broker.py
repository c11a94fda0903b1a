"""
API for the broker list and the protocol ranking.
"""

from __future__ import annotations

from flask import current_app, g, request

from gateway.protocol_adapter import Protocol
from . import json_response, BROKER_API

END_POINT = "/api/broker"


@BROKER_API.route(f"{END_POINT}/list", methods=["GET"])
def list_brokers():
    return json_response(
        {
            "brokers": [b.to_dict() for b in g.gateway.discovery.broker_list()],
            "ranking": g.gateway.ranking.to_list(),
        }
    )


@BROKER_API.route(f"{END_POINT}/add", methods=["POST"])
def add_broker():
    """
    Adds a broker at runtime and connects to it.

    Query:
      - address: required, "ip:port"
      - protocol: optional, "mqtt" or "coap"
    """
    address = request.args.get("address")
    if not address:
        return json_response({"error": "No address specified."}, 400)
    protocol = request.args.get("protocol") or None
    if protocol is not None and protocol not in {p.value for p in Protocol}:
        return json_response({"error": f"Unknown protocol {protocol!r}."}, 400)

    added = g.gateway.add_broker(address, protocol)
    current_app.logger.info("add-broker %s: %s", address, "added" if added else "already known")
    return json_response({"address": address, "added": added}, 200 if added else 409)
