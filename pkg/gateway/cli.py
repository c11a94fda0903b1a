"""
Command-line interface.

    gateway run [CONFIG]                      run the daemon (admin API included)
    gateway convert FILE xml|json             XML <-> JSON conversion
    gateway synth EXAMPLES REGISTRY           synthesize a program from examples
    gateway sim mqtt|coap --trials N ...      connection failure simulation
    gateway probe HOST:PORT --count N         UDP round-trip latency
    gateway rank-cost --max-rank N            search time by ranking position
    gateway benchmark FILE...                 conversion timings + Spearman table

Admin verbs talk to a running daemon's admin API:

    gateway stats | add-broker IP:PORT | recluster | dump-contexts
"""

from __future__ import annotations

import json
import logging
import sys
from typing import Any, Dict, Optional, Sequence

import click
import requests

from gateway import data_handler, stats
from gateway.config import load_config
from gateway.context_diversity import load_contexts, observation_from_json
from gateway.dsl_synthesis import IoExample, Synthesizer, load_examples, save_program, serialize_program
from gateway.errors import ConfigError, GatewayError, NotFound
from gateway.interoperability import MESSAGE_REGISTRY, tuplify
from gateway.protocol_adapter import RETRY_PROFILES, Endpoint, Protocol, RetryPolicy
from gateway.simulation import simulate_connections

logger = logging.getLogger(__name__)

DEFAULT_ADMIN = "http://127.0.0.1:5000"
TIMEOUT: int = 10


def _fail(message: str, code: int = 1) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str) -> None:
    """Edge gateway for MQTT and CoAP sensor networks."""
    logging.basicConfig(level=log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# -------------------------
# Daemon
# -------------------------
@cli.command()
@click.argument("config_path", required=False)
@click.option("--no-admin", is_flag=True, help="Do not serve the admin API.")
def run(config_path: Optional[str], no_admin: bool) -> None:
    """Run the gateway until SIGTERM."""
    from gateway.daemon import run as run_daemon

    try:
        config = load_config(config_path)
    except ConfigError as err:
        _fail(str(err), 2)
    try:
        code = run_daemon(config, serve_admin=not no_admin)
    except GatewayError as err:
        _fail(f"startup failed: {err}")
    sys.exit(code)


# -------------------------
# Offline tools
# -------------------------
@cli.command()
@click.argument("path")
@click.argument("target", type=click.Choice(data_handler.FORMATS))
def convert(path: str, target: str) -> None:
    """Convert PATH to TARGET (xml or json), written next to it."""
    try:
        out_path = data_handler.convert_file(path, target)
    except (OSError, GatewayError) as err:
        _fail(str(err))
    except ValueError as err:
        # already in the target format
        raise click.UsageError(str(err))
    click.echo(out_path)


def _context_examples(path: str, expect: Sequence[str]) -> list:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    contexts = load_contexts(path)
    sensor = observation_from_json(data["sensor"])
    unknown = set(expect) - {c.id for c in contexts}
    if unknown:
        raise click.UsageError(f"Unknown context ids {sorted(unknown)}.")
    expected = tuple(c.with_sensor(sensor) for c in contexts if c.id in expect)
    return [IoExample((tuple(contexts), sensor), expected)]


@cli.command()
@click.argument("examples_path")
@click.argument("registry")
@click.option("--max-len", default=4, show_default=True, type=click.IntRange(1))
@click.option("--expect", multiple=True, help="Registry C: ids of the contexts the sensor belongs to.")
@click.option("--out", "out_path", default=None, help="Write the program file here.")
def synth(examples_path: str, registry: str, max_len: int, expect: Sequence[str], out_path: Optional[str]) -> None:
    """Synthesize a program over REGISTRY consistent with EXAMPLES_PATH."""
    try:
        if registry == "C":
            if not expect:
                raise click.UsageError("Registry C needs at least one --expect context id.")
            examples = _context_examples(examples_path, expect)
        else:
            examples = load_examples(examples_path)
            if registry == MESSAGE_REGISTRY.registry_id:
                examples = [IoExample(tuplify(e.inputs), tuplify(e.output)) for e in examples]
        synthesizer = Synthesizer(max_len=max_len)
        program = synthesizer.synthesize(examples, registry)
    except (FileNotFoundError, KeyError) as err:
        _fail(f"cannot read examples: {err}")
    except NotFound as err:
        _fail(f"{err} ({err.visited} candidates visited)")
    except GatewayError as err:
        _fail(str(err))
    if out_path:
        save_program(program, out_path)
    click.echo(serialize_program(program), nl=False)
    click.echo(f"{program.describe()} after {synthesizer.stats['candidates_visited']} candidates")


@cli.command()
@click.argument("protocol", type=click.Choice([p.value for p in Protocol]))
@click.option("--trials", default=1000, show_default=True, type=click.IntRange(1))
@click.option("--rate", default=0.0, show_default=True, type=click.FloatRange(0.0, 1.0, max_open=True))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--profile", default="default", show_default=True, type=click.Choice(sorted(RETRY_PROFILES)))
@click.option("--timeout", default=None, type=click.FloatRange(0.0, min_open=True), help="Overrides the profile.")
@click.option("--attempts", default=None, type=click.IntRange(1), help="Overrides the profile.")
def sim(protocol: str, trials: int, rate: float, seed: int, profile: str,
        timeout: Optional[float], attempts: Optional[int]) -> None:
    """Connect TRIALS times to a simulated broker failing at RATE."""
    base = RETRY_PROFILES[profile][Protocol(protocol)]
    policy = RetryPolicy(timeout or base.timeout_s, attempts or base.attempts)
    result = simulate_connections(Protocol(protocol), trials, policy, rate, seed)
    click.echo(result.to_json())


@cli.command()
@click.argument("target")
@click.option("--count", default=30, show_default=True, type=int)
@click.option("--timeout", default=1.0, show_default=True, type=float)
def probe(target: str, count: int, timeout: float) -> None:
    """Measure UDP round trips to an echo service at TARGET."""
    if count < 1:
        raise click.UsageError("--count must be >= 1.")
    try:
        endpoint = Endpoint.parse(target, 7)
        result = stats.latency_probe(endpoint, count, timeout)
    except GatewayError as err:
        _fail(str(err))
    click.echo(json.dumps(result, indent=2))


@cli.command("rank-cost")
@click.option("--max-rank", default=10, show_default=True, type=click.IntRange(1))
@click.option("--failure-cost", default=stats.MEAN_FAILURE_S, show_default=True, type=float)
@click.option("--success-time", default=stats.MEAN_FAILURE_S, show_default=True, type=float)
def rank_cost(max_rank: int, failure_cost: float, success_time: float) -> None:
    """Connection search time by position in the protocol ranking."""
    click.echo(stats.rank_cost_report(max_rank, failure_cost, success_time).to_string(index=False))


@cli.command()
@click.argument("paths", nargs=-1, required=True)
@click.option("--repeat", default=5, show_default=True, type=click.IntRange(1))
def benchmark(paths: Sequence[str], repeat: int) -> None:
    """Time the conversion of PATHS and correlate time with document shape."""
    try:
        frame = data_handler.benchmark_conversion(paths, repeat)
    except (OSError, GatewayError) as err:
        _fail(str(err))
    click.echo(frame.to_string(index=False))
    if len(frame) > 2:
        try:
            table = stats.correlation_table(frame, ["depth", "lines", "objects", "time"])
        except GatewayError as err:
            _fail(str(err))
        click.echo()
        click.echo(table["marked"].to_string())


# -------------------------
# Admin verbs
# -------------------------
def _admin(method: str, path: str, admin: str, **kwargs: Any) -> Dict[str, Any]:
    try:
        response = requests.request(method, admin.rstrip("/") + path, timeout=TIMEOUT, **kwargs)
    except requests.RequestException as err:
        _fail(f"cannot reach the gateway at {admin}: {err}")
    body = response.json()
    if response.status_code >= 400 and response.status_code != 409:
        _fail(body.get("error", response.text))
    return body


admin_option = click.option("--admin", default=DEFAULT_ADMIN, show_default=True, envvar="GATEWAY_ADMIN",
                            help="Admin API of the running gateway.")


@cli.command("stats")
@admin_option
def stats_cmd(admin: str) -> None:
    """Dump the running gateway's RunStats."""
    click.echo(json.dumps(_admin("GET", "/api/sim/stats", admin), indent=2))


@cli.command("add-broker")
@click.argument("address")
@click.option("--protocol", default=None, type=click.Choice([p.value for p in Protocol]))
@admin_option
def add_broker(address: str, protocol: Optional[str], admin: str) -> None:
    """Add a broker at ADDRESS (ip:port) to the running gateway."""
    params = {"address": address}
    if protocol:
        params["protocol"] = protocol
    body = _admin("POST", "/api/broker/add", admin, params=params)
    click.echo(f"{address}: {'added' if body.get('added') else 'already known'}")


@cli.command()
@admin_option
def recluster(admin: str) -> None:
    """Re-evaluate every sensor agent with the active clustering program."""
    click.echo(json.dumps(_admin("POST", "/api/device/recluster", admin), indent=2))


@cli.command("dump-contexts")
@admin_option
def dump_contexts(admin: str) -> None:
    click.echo(json.dumps(_admin("GET", "/api/context/dump", admin), indent=2))


def main() -> None:
    cli(prog_name="gateway")


if __name__ == "__main__":
    main()
