"""
Device manager.

SensorAgent is the gateway-side model of one device stream. The
DeviceManager stores agents in clusters keyed by the output of the active
clustering program (a pipeline over registry L), regenerates that program
from examples, and moves idle clusters to an on-disk archive:

    archive_dir/cluster_<id>.json   {"cluster_id": n, "members": [agent, ...]}
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from gateway.dsl_synthesis import (
    LIST_REGISTRY,
    DslProgram,
    IoExample,
    Synthesizer,
    evaluate,
    load_program,
    save_program,
)
from gateway.errors import ArchiveCorrupt, EvaluationError, NoProgram, UnknownIndex
from gateway.files import write_json

logger = logging.getLogger(__name__)

UNCLASSIFIED: int = -1
CLUSTERING_PROGRAM: str = "clustering.prog"
MAX_LOG: int = 100


@dataclass
class SensorAgent:
    """
    One device stream.

    attributes: [device type, device id, readings...]
    """

    sa_id: int
    attributes: List[int]
    resource_id: str = ""
    location: str = ""
    last_active: float = 0.0

    # Delivered messages for polling (thread-safe)
    _messages: List[Dict[str, Any]] = field(default_factory=list, repr=False, compare=False)
    _last_message_id: int = field(default=0, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if not self.attributes:
            raise ValueError("A sensor agent needs at least one attribute.")
        self.attributes = [int(a) for a in self.attributes]

    def touch(self, now: float) -> None:
        with self._lock:
            self.last_active = max(self.last_active, float(now))

    def deliver(self, payload: bytes, now: float) -> int:
        """Log a delivered message and return its id."""
        with self._lock:
            self._last_message_id += 1
            self._messages.append(
                {
                    "id": self._last_message_id,
                    "sa_id": self.sa_id,
                    "payload": payload.decode("utf-8", errors="replace"),
                    "ts": float(now),
                }
            )
            del self._messages[:-MAX_LOG]
            self.last_active = max(self.last_active, float(now))
            return self._last_message_id

    def get_messages_since(self, since_message_id: int) -> Tuple[int, List[Dict[str, Any]]]:
        """Return (last_message_id, messages with id > since_message_id)."""
        with self._lock:
            out = [m for m in self._messages if m["id"] > max(since_message_id, 0)]
            return self._last_message_id, out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sa_id": self.sa_id,
            "attributes": list(self.attributes),
            "resource_id": self.resource_id,
            "location": self.location,
            "last_active": self.last_active,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SensorAgent":
        return cls(
            sa_id=int(data["sa_id"]),
            attributes=[int(a) for a in data["attributes"]],
            resource_id=str(data.get("resource_id", "")),
            location=str(data.get("location", "")),
            last_active=float(data.get("last_active", 0.0)),
        )


class DeviceManager:
    """
    Clusters of sensor agents.

    Single writer: insert, regenerate, recluster, evict and restore are
    serialized on one lock; readers get copies.
    """

    def __init__(
        self,
        synthesizer: Optional[Synthesizer] = None,
        program_dir: Optional[str] = None,
        archive_dir: Optional[str] = None,
        clock: Callable[[], float] = time.time,
    ):
        self.synthesizer = synthesizer if synthesizer is not None else Synthesizer()
        self.program_dir = program_dir
        self.archive_dir = archive_dir
        self.clock = clock
        self.active_program: Optional[DslProgram] = None

        self._agents: Dict[int, SensorAgent] = {}
        self._clusters: Dict[int, List[int]] = {}
        self._cluster_of: Dict[int, int] = {}
        # cluster id -> sa ids of archived clusters
        self._archived: Dict[int, List[int]] = {}
        # sa id -> resource id of agents found in the archive at startup
        self._archived_resources: Dict[int, str] = {}
        self._lock = threading.RLock()
        self._stats: Dict[str, int] = {"inserted": 0, "unclassified": 0, "evicted": 0, "restored": 0}

    # -------------------------
    # Programs
    # -------------------------
    def set_program(self, program: DslProgram) -> None:
        if program.registry_id != LIST_REGISTRY.registry_id:
            raise UnknownIndex(f"Clustering programs run over registry L, not {program.registry_id}.")
        LIST_REGISTRY.validate(program)
        with self._lock:
            self.active_program = program
        logger.info("Active clustering program: %s.", program.describe())

    def load_clustering_program(self, path: str) -> DslProgram:
        """Parse `path` and make it active; on any error the old program stays."""
        program = load_program(path)
        self.set_program(program)
        return program

    def regenerate(self, examples: Sequence[IoExample], path: Optional[str] = None) -> str:
        """
        Synthesize a clustering program from `examples`, save it and load it.

        Raises:
            NotFound: no program fits; nothing is written, the old program stays.
        """
        if path is None:
            path = os.path.join(self.program_dir or ".", CLUSTERING_PROGRAM)
        with self._lock:
            program = self.synthesizer.synthesize(examples, LIST_REGISTRY.registry_id)
            save_program(program, path)
            self.set_program(program)
        return path

    def classify(self, attributes: Sequence[int]) -> int:
        if self.active_program is None:
            raise NoProgram("No clustering program loaded.")
        try:
            label = evaluate(self.active_program, list(attributes))
        except EvaluationError as err:
            logger.warning("Clustering %s failed: %s.", list(attributes), err)
            return UNCLASSIFIED
        if isinstance(label, bool) or not isinstance(label, (int, float)) or label != int(label):
            logger.warning("Clustering %s gave non-integer label %r.", list(attributes), label)
            return UNCLASSIFIED
        return int(label)

    # -------------------------
    # Agents
    # -------------------------
    def _detach(self, sa_id: int) -> None:
        old = self._cluster_of.pop(sa_id, None)
        if old is None:
            return
        members = self._clusters[old]
        members.remove(sa_id)
        if not members:
            del self._clusters[old]

    def _attach(self, agent: SensorAgent, cluster_id: int) -> None:
        self._agents[agent.sa_id] = agent
        self._clusters.setdefault(cluster_id, []).append(agent.sa_id)
        self._cluster_of[agent.sa_id] = cluster_id

    def insert(self, agent: SensorAgent) -> int:
        """Run `agent` through the clustering program and store it; returns the cluster id."""
        cluster_id = self.classify(agent.attributes)
        with self._lock:
            if cluster_id in self._archived:
                self.restore(cluster_id)
            self._detach(agent.sa_id)
            for members in self._archived.values():
                if agent.sa_id in members:
                    members.remove(agent.sa_id)
            agent.touch(self.clock())
            self._attach(agent, cluster_id)
            self._stats["inserted"] += 1
            if cluster_id == UNCLASSIFIED:
                self._stats["unclassified"] += 1
        return cluster_id

    def recluster(self) -> int:
        """Re-evaluate every stored agent with the active program; returns how many moved."""
        moved = 0
        with self._lock:
            for sa_id, agent in list(self._agents.items()):
                cluster_id = self.classify(agent.attributes)
                if cluster_id != self._cluster_of.get(sa_id):
                    self._detach(sa_id)
                    self._attach(agent, cluster_id)
                    moved += 1
        logger.info("Reclustered %d agents.", moved)
        return moved

    def get_agent(self, sa_id: int) -> Optional[SensorAgent]:
        with self._lock:
            return self._agents.get(sa_id)

    def activate(self, sa_id: int) -> Optional[SensorAgent]:
        """Like get_agent, but restores the agent's cluster if it was archived."""
        with self._lock:
            if sa_id not in self._agents:
                for cid, members in list(self._archived.items()):
                    if sa_id in members:
                        self.restore(cid)
                        break
            return self._agents.get(sa_id)

    def cluster_of(self, sa_id: int) -> Optional[int]:
        with self._lock:
            return self._cluster_of.get(sa_id)

    def get_cluster(self, cluster_id: int) -> List[SensorAgent]:
        """Members of `cluster_id`; an archived cluster is restored first."""
        with self._lock:
            if cluster_id in self._archived:
                self.restore(cluster_id)
            return [self._agents[i] for i in self._clusters.get(cluster_id, [])]

    def clusters(self) -> Dict[int, List[int]]:
        with self._lock:
            return {cid: list(members) for cid, members in self._clusters.items()}

    def partition_sizes(self) -> Dict[int, int]:
        """Cluster sizes, archived clusters included."""
        with self._lock:
            sizes = {cid: len(m) for cid, m in self._clusters.items()}
            for cid, members in self._archived.items():
                sizes[cid] = sizes.get(cid, 0) + len(members)
            return sizes

    @property
    def stats(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._stats)

    # -------------------------
    # Archive
    # -------------------------
    def _archive_path(self, cluster_id: int) -> str:
        if not self.archive_dir:
            raise ValueError("No archive directory configured.")
        return os.path.join(self.archive_dir, f"cluster_{cluster_id}.json")

    def _archive(self, cluster_id: int) -> None:
        members = [self._agents[i] for i in self._clusters[cluster_id]]
        write_json(self._archive_path(cluster_id),
                   {"cluster_id": cluster_id, "members": [a.to_dict() for a in members]})
        for agent in members:
            del self._agents[agent.sa_id]
            del self._cluster_of[agent.sa_id]
        del self._clusters[cluster_id]
        self._archived[cluster_id] = [a.sa_id for a in members]
        self._stats["evicted"] += 1

    def evict_inactive(self, ttl: float) -> List[int]:
        """Archive clusters whose newest member is older than `ttl` seconds."""
        if not ttl > 0:
            raise ValueError("ttl must be positive.")
        if math.isinf(ttl):
            return []
        with self._lock:
            cutoff = self.clock() - ttl
            stale = [
                cid for cid, members in self._clusters.items()
                if max(self._agents[i].last_active for i in members) < cutoff
            ]
            for cid in stale:
                self._archive(cid)
        if stale:
            logger.info("Archived idle clusters %s.", stale)
        return stale

    def archive_all(self) -> List[int]:
        with self._lock:
            ids = list(self._clusters)
            for cid in ids:
                self._archive(cid)
        return ids

    def restore(self, cluster_id: int) -> List[SensorAgent]:
        """
        Load an archived cluster back verbatim.

        Raises:
            ArchiveCorrupt: the archive file is missing fields or is not JSON.
        """
        path = self._archive_path(cluster_id)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
            if int(data["cluster_id"]) != cluster_id:
                raise ValueError(f"file holds cluster {data['cluster_id']}")
            members = [SensorAgent.from_dict(m) for m in data["members"]]
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ArchiveCorrupt(f"Cannot restore cluster {cluster_id} from {path}: {e}") from None

        with self._lock:
            for agent in members:
                # an agent re-inserted after archiving is newer than its archived copy
                if agent.sa_id in self._agents:
                    continue
                self._attach(agent, cluster_id)
            self._archived.pop(cluster_id, None)
            self._stats["restored"] += 1
        os.unlink(path)
        return members

    def load_archive_index(self) -> List[int]:
        """Index the cluster files already in the archive directory (after a restart)."""
        if not self.archive_dir or not os.path.isdir(self.archive_dir):
            return []
        found = []
        for name in sorted(os.listdir(self.archive_dir)):
            stem, ext = os.path.splitext(name)
            if ext != ".json" or not stem.startswith("cluster_"):
                continue
            try:
                cid = int(stem[len("cluster_"):])
                with open(os.path.join(self.archive_dir, name), "r", encoding="utf-8") as f:
                    members = json.load(f)["members"]
                ids = [int(m["sa_id"]) for m in members]
                resources = {int(m["sa_id"]): str(m.get("resource_id", "")) for m in members}
            except (ValueError, KeyError, TypeError):
                logger.warning("Skipping unreadable archive file %s.", name)
                continue
            with self._lock:
                self._archived[cid] = ids
                self._archived_resources.update(resources)
            found.append(cid)
        return found

    def archived_resources(self) -> Dict[int, str]:
        with self._lock:
            return dict(self._archived_resources)

    def to_dict(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "program": self.active_program.describe() if self.active_program else None,
                "clusters": {str(cid): list(m) for cid, m in self._clusters.items()},
                "archived": sorted(self._archived),
                "agents": len(self._agents),
                "stats": dict(self._stats),
            }
