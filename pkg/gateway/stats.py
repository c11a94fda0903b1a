"""
Run statistics and the evaluation toolkit.

RunStats collects the gateway's counters (connections per protocol, search
time per rank, dispatch outcomes, synthesis effort) and dumps them as JSON
with a fixed key order, so two runs with the same seed diff cleanly.

Also here: Spearman correlation (average ranks for ties), the pairwise
correlation table used for conversion benchmarks, the rank-cost model of
the protocol search and a UDP round-trip latency probe.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats as sps

from gateway.errors import DegenerateInput, Unreachable
from gateway.protocol_adapter import PROTOCOL_ORDER, ConnectResult, Endpoint

logger = logging.getLogger(__name__)

US_PER_S: int = 1_000_000
MEAN_FAILURE_S: float = 0.35
SIGNIFICANCE: float = 0.05


def to_us(seconds: float) -> int:
    return int(round(seconds * US_PER_S))


# -------------------------
# Counters
# -------------------------
@dataclass
class ProtocolCounters:
    trials: int = 0
    attempts: int = 0
    successes: int = 0
    failures: int = 0
    first_attempt_failures: int = 0
    complete_failures: int = 0
    elapsed_us: int = 0

    def record(self, result: ConnectResult) -> None:
        self.trials += 1
        self.attempts += len(result.outcomes)
        self.failures += sum(1 for o in result.outcomes if not o.ok)
        self.elapsed_us += result.elapsed_us
        if result.first_attempt_failed:
            self.first_attempt_failures += 1
        if result.ok:
            self.successes += 1
        else:
            self.complete_failures += 1

    @property
    def mean_elapsed(self) -> float:
        return self.elapsed_us / self.trials / US_PER_S if self.trials else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trials": self.trials,
            "attempts": self.attempts,
            "successes": self.successes,
            "failures": self.failures,
            "first_attempt_failures": self.first_attempt_failures,
            "complete_failures": self.complete_failures,
            "elapsed_us": self.elapsed_us,
            "mean_elapsed": self.mean_elapsed,
        }


DISPATCH_KEYS = ("delivered", "classification", "malformed")
SYNTHESIS_KEYS = ("runs", "successes", "not_found", "candidates_visited")


@dataclass
class RunStats:
    """Monotone counters; only `record_*` and `add_*` change them."""

    protocols: Dict[str, ProtocolCounters] = field(
        default_factory=lambda: {p.value: ProtocolCounters() for p in PROTOCOL_ORDER}
    )
    rank_elapsed_us: Dict[int, int] = field(default_factory=dict)
    dispatch: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(DISPATCH_KEYS, 0))
    synthesis: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(SYNTHESIS_KEYS, 0))
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record_connect(self, protocol: str, result: ConnectResult) -> None:
        with self._lock:
            self.protocols.setdefault(str(protocol), ProtocolCounters()).record(result)

    def record_rank(self, rank: int, elapsed_us: int) -> None:
        with self._lock:
            self.rank_elapsed_us[rank] = self.rank_elapsed_us.get(rank, 0) + int(elapsed_us)

    def add_dispatch(self, counts: Dict[str, int]) -> None:
        with self._lock:
            for key in DISPATCH_KEYS:
                self.dispatch[key] += int(counts.get(key, 0))

    def add_synthesis(self, counts: Dict[str, int]) -> None:
        with self._lock:
            for key in SYNTHESIS_KEYS:
                self.synthesis[key] += int(counts.get(key, 0))

    def copy(self) -> "RunStats":
        with self._lock:
            return RunStats(
                protocols={name: replace(c) for name, c in self.protocols.items()},
                rank_elapsed_us=dict(self.rank_elapsed_us),
                dispatch=dict(self.dispatch),
                synthesis=dict(self.synthesis),
            )

    def is_zero(self) -> bool:
        return (
            all(c.trials == 0 for c in self.protocols.values())
            and not self.rank_elapsed_us
            and not any(self.dispatch.values())
            and not any(self.synthesis.values())
        )

    def to_dict(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "protocols": {name: c.to_dict() for name, c in self.protocols.items()},
                "rank_elapsed_us": {str(k): v for k, v in sorted(self.rank_elapsed_us.items())},
                "dispatch": {k: self.dispatch[k] for k in DISPATCH_KEYS},
                "synthesis": {k: self.synthesis[k] for k in SYNTHESIS_KEYS},
            }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# -------------------------
# Correlation
# -------------------------
def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Spearman's rho: Pearson correlation of the rank vectors, ties averaged.

    Raises:
        ValueError: lengths differ or fewer than two pairs.
        DegenerateInput: one of the inputs is constant.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two sequences of equal length.")
    if len(x) < 2:
        raise ValueError("spearman needs at least two pairs.")
    rx = sps.rankdata(x)
    ry = sps.rankdata(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if denom == 0:
        raise DegenerateInput("Spearman correlation is undefined for a constant input.")
    return float(np.clip(np.sum(dx * dy) / denom, -1.0, 1.0))


def correlation_table(frame: pd.DataFrame, columns: Optional[List[str]] = None) -> Dict[str, pd.DataFrame]:
    """
    Pairwise Spearman coefficients with two-tailed p-values.

    Returns:
        {"rho": ..., "p": ..., "marked": ...}; "marked" shows rho to three
        decimals with '*' where p < SIGNIFICANCE.
    """
    columns = list(columns or frame.select_dtypes("number").columns)
    rho = pd.DataFrame(np.eye(len(columns)), index=columns, columns=columns)
    pvalues = pd.DataFrame(np.zeros((len(columns), len(columns))), index=columns, columns=columns)
    for i, a in enumerate(columns):
        for b in columns[i + 1:]:
            if frame[a].nunique() < 2 or frame[b].nunique() < 2:
                raise DegenerateInput(f"Spearman correlation of {a} and {b} is undefined for a constant column.")
            result = sps.spearmanr(frame[a], frame[b])
            rho.loc[a, b] = rho.loc[b, a] = float(result.statistic)
            pvalues.loc[a, b] = pvalues.loc[b, a] = float(result.pvalue)

    def mark(a: str, b: str) -> str:
        text = f"{rho.loc[a, b]:.3f}"
        return text + "*" if a != b and pvalues.loc[a, b] < SIGNIFICANCE else text

    marked = pd.DataFrame([[mark(a, b) for b in columns] for a in columns], index=columns, columns=columns)
    return {"rho": rho, "p": pvalues, "marked": marked}


# -------------------------
# Rank-cost model
# -------------------------
def rank_cost(rank: int, failure_cost: float = MEAN_FAILURE_S, success_time: float = MEAN_FAILURE_S) -> float:
    """Search time (s) to connect at `rank`: (rank - 1) * failure_cost + success_time."""
    if rank < 1:
        raise ValueError("rank starts at 1.")
    return ((rank - 1) * to_us(failure_cost) + to_us(success_time)) / US_PER_S


def rank_cost_report(max_rank: int = 10, failure_cost: float = MEAN_FAILURE_S,
                     success_time: float = MEAN_FAILURE_S) -> pd.DataFrame:
    ranks = list(range(1, max_rank + 1))
    return pd.DataFrame({"rank": ranks, "time": [rank_cost(k, failure_cost, success_time) for k in ranks]})


# -------------------------
# Latency probe
# -------------------------
def latency_probe(target: Endpoint, count: int = 30, timeout: float = 1.0) -> Dict[str, float]:
    """
    Round-trip times (s) of `count` UDP datagrams to an echo service.

    Raises:
        ValueError: count < 1.
        Unreachable: no probe came back.
    """
    if count < 1:
        raise ValueError("count must be >= 1.")
    rtts: List[float] = []
    family = socket.AF_INET6 if ":" in target.host else socket.AF_INET
    with socket.socket(family, socket.SOCK_DGRAM) as sock:
        sock.settimeout(timeout)
        for seq in range(count):
            probe = f"probe {seq}".encode("ascii")
            start = time.perf_counter()
            try:
                sock.sendto(probe, (target.host, target.port))
                while True:
                    data, _ = sock.recvfrom(1024)
                    if data == probe:
                        break
            except (socket.timeout, OSError):
                continue
            rtts.append(time.perf_counter() - start)
    if not rtts:
        raise Unreachable(f"{target} did not answer {count} probes.")
    arr = np.array(rtts)
    return {"count": len(rtts), "lost": count - len(rtts), "mean": float(arr.mean()), "std": float(arr.std())}
