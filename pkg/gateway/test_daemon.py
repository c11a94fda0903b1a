"""
End-to-end tests of the gateway supervisor against the simulated broker.
"""
import json
import os
import tempfile
import time
import unittest

from gateway import fixtures
from gateway.config import DslSection, GatewayConfig, GatewaySection
from gateway.daemon import Gateway, backoff_delays
from gateway.discovery import BrokerEntry
from gateway.errors import DegenerateTrace
from gateway.logic import Trace
from gateway.protocol_adapter import Protocol
from gateway.simulation import SIM_ADDRESS, SimulatedBroker

N_TOPICS = 100


def wait_for(condition, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if condition():
            return True
        time.sleep(0.05)
    return condition()


class GatewayTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        # cleanups run last-in first-out, so gateways stop before the directory goes
        self.addCleanup(self.tmp.cleanup)
        self.broker = SimulatedBroker()

    def make_config(self, brokers=(BrokerEntry(SIM_ADDRESS, Protocol.MQTT),), **dsl):
        section = GatewaySection(archive_dir=os.path.join(self.tmp.name, "archive"),
                                 program_dir=os.path.join(self.tmp.name, "programs"))
        return GatewayConfig(gateway=section, dsl=DslSection(**dsl), brokers=tuple(brokers))

    def start_gateway(self, **kwargs):
        gateway = Gateway(self.make_config(**kwargs), broker=self.broker).start()
        self.addCleanup(gateway.stop)
        return gateway


class TestBackoff(unittest.TestCase):

    def test_doubles_up_to_cap(self):
        delays = backoff_delays()
        self.assertEqual([next(delays) for _ in range(7)], [1, 2, 4, 8, 16, 30, 30])


class TestLifecycle(GatewayTestCase):

    def test_no_brokers_gives_zero_stats(self):
        gateway = self.start_gateway(brokers=())
        self.assertTrue(gateway.run_stats().is_zero())
        self.assertEqual(gateway.status()["brokers"], [])

    def test_config_broker_connects_at_start(self):
        gateway = self.start_gateway()
        self.assertIn(SIM_ADDRESS, gateway.adapters)
        stats = gateway.run_stats()
        self.assertEqual(stats.protocols["mqtt"].successes, 1)
        self.assertEqual(stats.rank_elapsed_us, {1: 300_000})

    def test_stop_without_start(self):
        self.assertEqual(Gateway(self.make_config()).stop(), [])

    def test_default_clustering_program(self):
        gateway = self.start_gateway()
        self.assertEqual(gateway.device_manager.to_dict()["program"], "(1 (HEAD))")

    def test_clustering_from_examples(self):
        gateway = self.start_gateway(clustering_examples=fixtures.CLUSTER_BY_ID)
        self.assertEqual(gateway.device_manager.to_dict()["program"], "(2 (REST), 1 (HEAD))")
        self.assertTrue(os.path.exists(os.path.join(gateway.program_dir, "clustering.prog")))


class TestEndToEnd(GatewayTestCase):

    def publish_novel_topics(self, gateway, n=N_TOPICS):
        for i in range(n):
            self.assertEqual(self.broker.publish(f"kista/temp/{i}", str(20 + i % 5).encode()), 1)
        gateway.requests.join()

    def test_novel_topics_become_agents_exactly_once(self):
        gateway = self.start_gateway()
        self.publish_novel_topics(gateway)

        adapter = gateway.adapters[SIM_ADDRESS]
        self.assertEqual(len(adapter.table), N_TOPICS)
        self.assertEqual(gateway.device_manager.to_dict()["agents"], N_TOPICS)
        self.assertEqual(sum(gateway.device_manager.partition_sizes().values()), N_TOPICS)
        self.assertEqual(gateway.discovery.counts["created"], N_TOPICS)

        # second round goes straight to the agents
        self.publish_novel_topics(gateway)
        dispatch = gateway.run_stats().dispatch
        self.assertEqual(dispatch, {"delivered": N_TOPICS, "classification": N_TOPICS, "malformed": 0})
        sa_id = gateway.discovery.sa_for("kista/temp/3")
        last_id, messages = gateway.device_manager.get_agent(sa_id).get_messages_since(0)
        self.assertEqual(last_id, 2)
        self.assertEqual([m["payload"] for m in messages], ["23", "23"])

    def test_stop_archives_and_restart_resumes(self):
        gateway = Gateway(self.make_config(), broker=self.broker).start()
        self.publish_novel_topics(gateway, 10)
        old_id = gateway.discovery.sa_for("kista/temp/5")
        self.assertEqual(gateway.stop(), [1])
        self.assertTrue(os.path.exists(os.path.join(gateway.archive_dir, "cluster_1.json")))
        self.assertEqual(self.broker.sessions, 0)

        restarted = self.start_gateway()
        self.broker.publish("kista/temp/5", b"30")
        self.broker.publish("kista/temp/new", b"30")
        restarted.requests.join()
        self.assertEqual(restarted.discovery.sa_for("kista/temp/5"), old_id)
        self.assertEqual(restarted.discovery.counts["resolved"], 1)
        self.assertEqual(restarted.discovery.sa_for("kista/temp/new"), 11)
        self.assertEqual(restarted.device_manager.get_agent(old_id).resource_id, "kista/temp/5")

    def test_lost_session_is_reconnected(self):
        gateway = self.start_gateway()
        self.broker.drop_sessions()
        self.assertEqual(gateway.check_sessions(), [SIM_ADDRESS])
        self.assertTrue(wait_for(lambda: SIM_ADDRESS in gateway.adapters))
        self.assertEqual(self.broker.publish("kista/temp/1", b"20"), 1)

    def test_runtime_broker(self):
        gateway = self.start_gateway(brokers=())
        self.assertTrue(gateway.add_broker(str(SIM_ADDRESS), "coap"))
        self.assertFalse(gateway.add_broker(str(SIM_ADDRESS)))
        self.assertEqual(gateway.status()["ranking"][0]["protocol"], "coap")
        self.assertEqual(self.broker.notify("/sensors/1", b"20"), 1)


class TestLearning(GatewayTestCase):

    def test_placement_follows_messages(self):
        gateway = self.start_gateway(contexts=fixtures.CONTEXTS)
        contexts, sensor = fixtures.context_fixture()
        expected = [c.with_sensor(sensor) for c in contexts if c.id == "c1"]
        program = gateway.learn_placement("location", sensor, expected)
        self.assertEqual(program.stages, (4, 5, 7))
        self.assertTrue(os.path.exists(os.path.join(gateway.program_dir, "placement_location.prog")))

        payload = json.dumps({"loc": "Kista", "time": "2018-05-20T10:00:00", "temp": 26.4}).encode()
        self.broker.publish("kista/env/77", payload)
        gateway.requests.join()
        members = gateway.contexts.snapshot()["c1"][2]
        self.assertEqual(members, ["sensor1", "kista/env/77"])

    def test_placement_programs_reload(self):
        gateway = self.start_gateway(contexts=fixtures.CONTEXTS)
        contexts, sensor = fixtures.context_fixture()
        gateway.learn_placement("time", sensor, [c.with_sensor(sensor) for c in contexts if c.id == "c3"])
        gateway.stop()

        restarted = self.start_gateway(contexts=fixtures.CONTEXTS)
        self.assertEqual(restarted.contexts.programs["time"].stages, (1, 5, 7))

    def test_rules_persist(self):
        gateway = self.start_gateway()
        trace, candidates = fixtures.rule_traces()["heater"]
        gateway.learn_rule(trace, candidates)
        gateway.stop()

        restarted = self.start_gateway()
        self.assertEqual(len(restarted.rules.all_rules()), 1)
        self.assertTrue(restarted.rules.evaluate({"phone.pos": 400, "living_room.temp": 19})["heater"])

    def test_degenerate_rule_is_rejected(self):
        gateway = self.start_gateway()
        with self.assertRaises(DegenerateTrace):
            gateway.learn_rule(Trace(0, 0, 17, 21), [1])
        self.assertEqual(gateway.rules.all_rules(), ())


if __name__ == "__main__":
    unittest.main()
