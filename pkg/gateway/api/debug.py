"""
Connectivity and overview endpoints of the admin API.
"""
from flask import g
from . import json_response, DEBUG_API


@DEBUG_API.route("/")
def api_index():
    """
    Brokers, adapters, ranking, discovery counters, clusters and RunStats in one document.
    """
    return json_response(g.gateway.status())


@DEBUG_API.route("/api/hello", methods=["GET"])
def api_hello():
    """
    Returns: { "message": "Hello World" }
    """
    return json_response({"message": "Hello World"})


@DEBUG_API.route("/api/string/<text>", methods=["GET"])
def api_string(text):
    """Echo: /api/string/test -> { "received": "test" }"""
    return json_response({"received": text})


@DEBUG_API.route("/api/health", methods=["GET"])
def api_health():
    """
    Liveness of the gateway: open sessions and classification requests still queued.
    """
    gateway = g.gateway
    adapters = {str(address): adapter.protocol.value for address, adapter in list(gateway.adapters.items())}
    return json_response({"sessions": adapters, "pending": gateway.requests.qsize()})
