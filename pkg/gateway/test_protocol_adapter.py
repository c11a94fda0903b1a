"""
Unit tests for endpoints, adapters, dispatch and the protocol ranking.
"""
import queue
import random
import unittest

from gateway.errors import ConnectFailure, InvalidAddress
from gateway.messages import ClassificationRequest, Delivered, InboundMessage
from gateway.protocol_adapter import (
    RETRY_PROFILES,
    CoapAdapter,
    Endpoint,
    MqttAdapter,
    Protocol,
    ProtocolRanking,
    RetryPolicy,
    connect_ranked,
)
from gateway.simulation import SIM_ADDRESS, SimulatedBroker


class TestEndpoint(unittest.TestCase):

    def test_parse(self):
        self.assertEqual(Endpoint.parse("192.168.1.5:1883"), Endpoint("192.168.1.5", 1883))
        self.assertEqual(Endpoint.parse("10.0.0.1", 5683), Endpoint("10.0.0.1", 5683))
        self.assertEqual(Endpoint.parse("broker.local:1883").host, "broker.local")

    def test_parse_ipv6(self):
        endpoint = Endpoint.parse("[::1]:5683")
        self.assertEqual(endpoint, Endpoint("::1", 5683))
        self.assertEqual(str(endpoint), "[::1]:5683")

    def test_invalid(self):
        for text in ("999.1.1.1:1883", "1.2.3.4:70000", "1.2.3.4:abc", ":1883", "1.2.3.4", "[zz::1]:1"):
            with self.subTest(text=text):
                with self.assertRaises(InvalidAddress):
                    Endpoint.parse(text)


class TestRetryPolicy(unittest.TestCase):

    def test_profiles(self):
        self.assertEqual(RETRY_PROFILES["default"][Protocol.MQTT], RetryPolicy(0.8, 1))
        self.assertEqual(RETRY_PROFILES["aggressive"][Protocol.COAP], RetryPolicy(0.1, 2))
        self.assertAlmostEqual(RETRY_PROFILES["aggressive"][Protocol.MQTT].budget_s, 1.0)

    def test_validation(self):
        with self.assertRaises(ValueError):
            RetryPolicy(0.0)
        with self.assertRaises(ValueError):
            RetryPolicy(0.5, 0)


class TestDispatch(unittest.TestCase):

    def setUp(self):
        self.requests = queue.Queue()
        self.delivered = []
        self.adapter = MqttAdapter(SIM_ADDRESS, RetryPolicy(0.8), request_queue=self.requests,
                                   deliver=lambda sa_id, msg: self.delivered.append((sa_id, msg.payload)),
                                   clock=lambda: 5.0)

    def test_registered_resource_is_delivered(self):
        self.adapter.register("kista/temp/1", 7)
        outcome = self.adapter.dispatch(InboundMessage("kista/temp/1", b"21.5"))
        self.assertEqual(outcome, Delivered(7, "kista/temp/1"))
        self.assertEqual(self.delivered, [(7, b"21.5")])
        self.assertTrue(self.requests.empty())

    def test_unknown_resource_is_queued(self):
        outcome = self.adapter.dispatch(InboundMessage("kista/temp/2", b"20"))
        self.assertIsInstance(outcome, ClassificationRequest)
        self.assertEqual(self.requests.get_nowait(), outcome)
        self.assertEqual(outcome.adapter_ref, self.adapter.adapter_id)
        self.assertEqual(outcome.received_at, 5.0)

    def test_malformed(self):
        self.assertIsNone(self.adapter.dispatch(InboundMessage(None, b"x")))
        self.assertIsNone(self.adapter.dispatch(InboundMessage("", b"x")))
        self.assertEqual(self.adapter.counts, {"delivered": 0, "classification": 0, "malformed": 2})

    def test_empty_resource_can_be_registered(self):
        self.adapter.register("", 3)
        self.assertEqual(self.adapter.dispatch(InboundMessage("", b"x")), Delivered(3, ""))

    def test_last_registration_wins(self):
        self.adapter.register("a/b", 1)
        self.adapter.register("a/b", 2)
        self.assertEqual(self.adapter.table.lookup("a/b"), 2)


class TestRanking(unittest.TestCase):

    def test_default_order_and_usage(self):
        ranking = ProtocolRanking.default()
        self.assertEqual([d.protocol for d in ranking.ordered()], [Protocol.MQTT, Protocol.COAP])
        ranking.record_use(Protocol.COAP)
        self.assertEqual([d.protocol for d in ranking.ordered()], [Protocol.COAP, Protocol.MQTT])

    def test_duplicate_descriptor(self):
        ranking = ProtocolRanking.default()
        with self.assertRaises(ValueError):
            ranking.add(ranking[Protocol.MQTT])

    def test_random_use_keeps_order(self):
        """After every step: usage count descending, ties MQTT before CoAP."""
        rng = random.Random(5)
        ranking = ProtocolRanking.default()
        counts = {Protocol.MQTT: 0, Protocol.COAP: 0}
        for step in range(200):
            if rng.random() < 0.5:
                protocol = rng.choice([Protocol.MQTT, Protocol.COAP])
                ranking.record_use(protocol)
            else:
                supported = rng.choice([(Protocol.MQTT,), (Protocol.COAP,), (Protocol.MQTT, Protocol.COAP)])
                first = [d.protocol for d in ranking.ordered() if d.protocol in supported][0]
                protocol, adapter = connect_ranked(SIM_ADDRESS, ranking, broker=SimulatedBroker(protocols=supported))
                adapter.close()
                self.assertEqual(protocol, first)
            counts[protocol] += 1
            with self.subTest(step=step):
                ordered = ranking.ordered()
                self.assertEqual([d.usage_count for d in ordered], [counts[d.protocol] for d in ordered])
                self.assertEqual(
                    [d.protocol for d in ordered],
                    sorted(counts, key=lambda p: (-counts[p], p is not Protocol.MQTT)),
                )


class TestConnectRanked(unittest.TestCase):

    def test_falls_through_to_coap(self):
        broker = SimulatedBroker(protocols=(Protocol.COAP,))
        ranking = ProtocolRanking.default()
        seen = []
        protocol, adapter = connect_ranked(SIM_ADDRESS, ranking, broker=broker,
                                           observer=lambda p, rank, result: seen.append((p, rank, result.ok)))
        self.assertEqual(protocol, Protocol.COAP)
        self.assertIsInstance(adapter, CoapAdapter)
        self.assertEqual(seen, [(Protocol.MQTT, 1, False), (Protocol.COAP, 2, True)])
        # failed MQTT handshake plus the CoAP one
        self.assertEqual(adapter.connect_elapsed_us, 500_000 + 50_000)
        self.assertEqual(ranking[Protocol.COAP].usage_count, 1)
        self.assertTrue(adapter.connected)
        self.assertEqual(broker.sessions, 1)

    def test_opened_adapter_receives(self):
        broker = SimulatedBroker()
        requests = queue.Queue()
        _, adapter = connect_ranked(SIM_ADDRESS, ProtocolRanking.default(), broker=broker, request_queue=requests)
        self.assertIsInstance(adapter, MqttAdapter)
        self.assertEqual(broker.publish("kista/temp/1", b"21"), 1)
        self.assertEqual(requests.get_nowait().resource_id, "kista/temp/1")
        self.assertEqual(broker.notify("/sensors/1", b"21"), 0)

    def test_protocol_hint(self):
        broker = SimulatedBroker()
        protocol, _ = connect_ranked(SIM_ADDRESS, ProtocolRanking.default(), protocols=[Protocol.COAP], broker=broker)
        self.assertEqual(protocol, Protocol.COAP)

    def test_all_fail(self):
        broker = SimulatedBroker()
        with self.assertRaises(ConnectFailure) as ctx:
            connect_ranked(Endpoint("10.9.9.9", 1883), ProtocolRanking.default(), broker=broker)
        self.assertEqual([a["rank"] for a in ctx.exception.attempts], [1, 2])
        self.assertEqual(ctx.exception.to_dict()["type"], "ConnectFailure")

    def test_lost_session(self):
        broker = SimulatedBroker()
        _, adapter = connect_ranked(SIM_ADDRESS, ProtocolRanking.default(), broker=broker)
        self.assertEqual(broker.drop_sessions(), 1)
        self.assertFalse(adapter.connected)
        self.assertEqual(broker.publish("kista/temp/1", b"21"), 0)


if __name__ == "__main__":
    unittest.main()
