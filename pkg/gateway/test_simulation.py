"""
Unit tests for the simulated broker and connection failure trials.
"""
import unittest

from scipy import stats as sps

from gateway.protocol_adapter import RETRY_PROFILES, Endpoint, Protocol, RetryPolicy
from gateway.simulation import SIM_ADDRESS, SimulatedBroker, simulate_connections

TRIALS = 1000


def complete_failures(result, protocol):
    return result.protocols[protocol.value].complete_failures


class TestFailureTrials(unittest.TestCase):

    def assertWithinBinomial(self, count, rate, trials=TRIALS):
        low, high = sps.binom.interval(0.99, trials, rate)
        self.assertGreaterEqual(count, low)
        self.assertLessEqual(count, high)

    def test_coap_failure_rate(self):
        policy = RETRY_PROFILES["default"][Protocol.COAP]
        result = simulate_connections(Protocol.COAP, TRIALS, policy, 0.005, seed=0)
        self.assertWithinBinomial(complete_failures(result, Protocol.COAP), 0.005)

    def test_mqtt_failure_rate(self):
        policy = RETRY_PROFILES["default"][Protocol.MQTT]
        result = simulate_connections(Protocol.MQTT, TRIALS, policy, 0.025, seed=0)
        self.assertWithinBinomial(complete_failures(result, Protocol.MQTT), 0.025)

    def test_no_faults_no_failures(self):
        for protocol in Protocol:
            result = simulate_connections(protocol, 200, RETRY_PROFILES["default"][protocol], 0.0)
            self.assertEqual(complete_failures(result, protocol), 0)
            self.assertEqual(result.protocols[protocol.value].successes, 200)

    def test_second_attempt_never_hurts(self):
        policy = RETRY_PROFILES["aggressive"][Protocol.COAP]
        result = simulate_connections(Protocol.COAP, 100_000, policy, 0.2, seed=3)
        counters = result.protocols[Protocol.COAP.value]
        self.assertLessEqual(counters.complete_failures, counters.first_attempt_failures)
        self.assertGreater(counters.first_attempt_failures, 0)

    def test_same_seed_same_run(self):
        policy = RetryPolicy(0.5, 2)
        first = simulate_connections(Protocol.MQTT, 500, policy, 0.1, seed=11)
        second = simulate_connections(Protocol.MQTT, 500, policy, 0.1, seed=11)
        self.assertEqual(first.to_json(), second.to_json())

    def test_timeout_below_latency_always_fails(self):
        result = simulate_connections(Protocol.MQTT, 10, RetryPolicy(0.1, 1), 0.0)
        counters = result.protocols[Protocol.MQTT.value]
        self.assertEqual(counters.complete_failures, 10)
        self.assertEqual(counters.elapsed_us, 10 * 100_000)


class TestSimulatedBroker(unittest.TestCase):

    def test_handshake_timing(self):
        broker = SimulatedBroker()
        self.assertEqual(broker.handshake(Protocol.MQTT, SIM_ADDRESS, 0.8), (True, 300_000))
        self.assertEqual(broker.handshake(Protocol.COAP, SIM_ADDRESS, 0.5), (True, 50_000))
        self.assertEqual(broker.handshake(Protocol.COAP, Endpoint("10.0.0.9", 5683), 0.5), (False, 200_000))
        self.assertEqual(broker.now_us, 550_000)

    def test_rate_bounds(self):
        with self.assertRaises(ValueError):
            SimulatedBroker(failure_rate=1.0)

    def test_publish_reaches_matching_sessions(self):
        broker = SimulatedBroker()
        got = []
        broker.subscribe(Protocol.MQTT, "kista/+/1", lambda *args: got.append(args[:2]), owner=1)
        self.assertEqual(broker.publish("kista/temp/1", b"21"), 1)
        self.assertEqual(broker.publish("solna/temp/1", b"21"), 0)
        self.assertEqual(got, [("kista/temp/1", b"21")])
        self.assertEqual(broker.counts, {"handshakes": 0, "published": 2, "delivered": 1})

    def test_drop_and_reset(self):
        broker = SimulatedBroker()
        lost = []
        broker.subscribe(Protocol.COAP, "#", lambda *args: None, owner=1, on_lost=lambda: lost.append(1))
        self.assertEqual(broker.drop_sessions(), 1)
        self.assertEqual(lost, [1])
        self.assertEqual(broker.sessions, 0)
        broker.handshake(Protocol.MQTT, SIM_ADDRESS, 0.8)
        broker.reset()
        self.assertEqual(broker.now_us, 0)
        self.assertEqual(broker.counts["handshakes"], 0)


if __name__ == "__main__":
    unittest.main()
