"""
Shared helpers and Flask blueprints for all API modules.
"""

from __future__ import annotations

from typing import Any, Dict

from flask import Blueprint, jsonify

from gateway.errors import GatewayError


DEBUG_API = Blueprint("debug", __name__)
BROKER_API = Blueprint("broker", __name__)
DEVICE_API = Blueprint("device", __name__)
SIM_API = Blueprint("sim", __name__)
CONTEXT_API = Blueprint("context", __name__)


def json_response(payload: Dict[str, Any], status: int = 200):
    """
    Return a proper JSON response for API endpoints.

    Args:
        payload: JSON-serializable dictionary to return to the client.
        status: HTTP status code (default: 200).

    Returns:
        A Flask Response object with application/json content type.
    """
    return jsonify(payload), status


def error_response(err: GatewayError):
    """Any GatewayError escaping a handler becomes {"error": ...} with its status."""
    return json_response(err.to_dict(), err.status)
