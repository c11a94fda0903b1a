"""
fixtures.py

Load the reference data sets shipped in gateway/db/: clustering example
sets, dialect messages, context groups, rule traces and the XML/JSON
mapping corpus.
"""

from __future__ import annotations

import json
import os
from functools import lru_cache
from typing import Any, Dict, List, Tuple

from gateway.context_diversity import Context, SensorObservation, load_contexts, observation_from_json
from gateway.dsl_synthesis import IoExample, load_examples
from gateway.interoperability import tuplify
from gateway.logic import Trace

DB_DIR = os.path.join(os.path.dirname(__file__), "db")

CLUSTER_BY_TYPE = os.path.join(DB_DIR, "cluster_by_type.json")
CLUSTER_BY_ID = os.path.join(DB_DIR, "cluster_by_id.json")
CONTEXTS = os.path.join(DB_DIR, "contexts.json")


@lru_cache(maxsize=None)
def _load(name: str) -> Any:
    with open(os.path.join(DB_DIR, name), "r", encoding="utf-8") as f:
        return json.load(f)


def clustering_examples(by: str = "type") -> List[IoExample]:
    """
    Example sets for the clustering program.

    Args:
        by: "type" (first attribute) or "id" (second attribute).
    """
    paths = {"type": CLUSTER_BY_TYPE, "id": CLUSTER_BY_ID}
    if by not in paths:
        raise ValueError(f"Unknown clustering example set {by!r}.")
    return load_examples(paths[by])


def translation_fixture(src: str, dst: str) -> Tuple[List[IoExample], Any, Any]:
    """
    Learning examples, a message to translate and its expected translation.

    Returns:
        (examples, message, expected) with JSON arrays turned into tuples.
    """
    entry = _load("interop.json")[f"{src}-{dst}"]
    examples = [IoExample(tuplify(e["input"]), tuplify(e["output"])) for e in entry["examples"]]
    return examples, tuplify(entry["message"]), tuplify(entry["expected"])


def context_fixture() -> Tuple[List[Context], SensorObservation]:
    """The four reference contexts and the new sensor to place."""
    return load_contexts(CONTEXTS), observation_from_json(_load("contexts.json")["sensor"])


def rule_traces() -> Dict[str, Tuple[Trace, List[int]]]:
    out = {}
    for entry in _load("rules.json")["traces"]:
        trace = Trace(entry["indep_start"], entry["indep_end"], entry["dep_start"], entry["dep_goal"])
        out[entry["name"]] = (trace, list(entry["candidates"]))
    return out


def rule_witnesses() -> List[Tuple[Dict[str, float], Dict[str, bool]]]:
    return [(dict(w["readings"]), dict(w["expected"])) for w in _load("rules.json")["readings"]]


def mapping_rows() -> List[Tuple[str, str]]:
    """(json, xml body) pairs of the conversion mapping."""
    return [(row["json"], row["xml"]) for row in _load("mapping.json")]
