"""
API for the device manager: sensor agents and their clusters.
"""

from __future__ import annotations

from flask import g, request

from . import json_response, DEVICE_API

END_POINT = "/api/device"


@DEVICE_API.route(f"{END_POINT}/clusters", methods=["GET"])
def get_clusters():
    return json_response(g.gateway.device_manager.to_dict())


@DEVICE_API.route(f"{END_POINT}/cluster/<int:cluster_id>", methods=["GET"])
def get_cluster(cluster_id: int):
    """Members of one cluster; an archived cluster is restored first."""
    members = g.gateway.device_manager.get_cluster(cluster_id)
    if not members:
        return json_response({"error": f"Cluster {cluster_id} is empty."}, 404)
    return json_response({"cluster_id": cluster_id, "members": [a.to_dict() for a in members]})


@DEVICE_API.route(f"{END_POINT}/recluster", methods=["POST"])
def recluster():
    moved = g.gateway.recluster()
    return json_response({"moved": moved, "clusters": g.gateway.device_manager.partition_sizes()})


@DEVICE_API.route(f"{END_POINT}/read", methods=["GET"])
def get_agent_status():
    """
    Read sensor agent state + message log.

    Query:
      - sa_id: required int
      - since_message_id: optional int (only return newer messages)
    """
    try:
        sa_id: int = int(request.args["sa_id"])
    except KeyError:
        return json_response({"error": "Missing sa_id"}, 400)
    except ValueError:
        return json_response({"error": "Invalid sa_id"}, 400)

    agent = g.gateway.device_manager.activate(sa_id)
    if agent is None:
        return json_response({"error": f"No sensor agent {sa_id}"}, 404)

    since = request.args.get("since_message_id")
    since_id = 0
    if since is not None and since != "":
        try:
            since_id = int(since)
        except ValueError:
            since_id = 0

    last_id, msgs = agent.get_messages_since(since_id)

    return json_response(
        {
            "sa_id": sa_id,
            "status": agent.to_dict(),
            "cluster_id": g.gateway.device_manager.cluster_of(sa_id),
            "last_message_id": last_id,
            "messages": msgs,
        }
    )
