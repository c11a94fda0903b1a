"""
Unit tests for discovery: agent creation, authentication and brokers.
"""
import queue
import threading
import unittest

from gateway.device_manager import DeviceManager
from gateway.discovery import Allowlist, BrokerEntry, Discovery, FeatureExtractor, location_of
from gateway.dsl_synthesis import DslProgram
from gateway.errors import AuthenticationFailed, MalformedMessage
from gateway.messages import ClassificationRequest, InboundMessage
from gateway.protocol_adapter import Endpoint, MqttAdapter, Protocol, RetryPolicy
from gateway.simulation import SIM_ADDRESS


class TestFeatures(unittest.TestCase):

    def test_location(self):
        self.assertEqual(location_of("kista/temp/7"), "kista/temp")
        self.assertEqual(location_of("/sensors/1"), "sensors")
        self.assertEqual(location_of("standalone"), "standalone")

    def test_extract(self):
        extractor = FeatureExtractor()
        self.assertEqual(extractor.extract("kista/temp/7", b"21.6 40"), [1, 7, 22, 40])
        self.assertEqual(extractor.extract("kista/hum/8", b"{}"), [2, 8])
        self.assertEqual(extractor.extract("solna/temp/9", b""), [1, 9])
        self.assertEqual(extractor.extract("kista/temp/x", b"")[0], 1)

    def test_allowlist(self):
        self.assertTrue(Allowlist().allows("anything"))
        allowlist = Allowlist(["kista/"])
        self.assertTrue(allowlist.allows("kista/temp/1"))
        self.assertFalse(allowlist.allows("solna/temp/1"))


class TestDiscovery(unittest.TestCase):

    def setUp(self):
        self.manager = DeviceManager()
        self.manager.set_program(DslProgram("L", (1,)))
        self.delivered = []
        self.discovery = Discovery(self.manager, Allowlist(["kista/"]),
                                   on_delivery=lambda agent, payload: self.delivered.append((agent.sa_id, payload)),
                                   clock=lambda: 1.0)
        self.requests = queue.Queue()
        self.adapter = MqttAdapter(SIM_ADDRESS, RetryPolicy(0.8), request_queue=self.requests)
        self.discovery.attach(self.adapter)

    def _request(self, resource_id, payload=b"21"):
        return ClassificationRequest(resource_id, payload, self.adapter.adapter_id, 1.0)

    def test_creates_agent_once(self):
        first = self.discovery.handle_unsubscribed(self._request("kista/temp/1"))
        self.assertTrue(first.created)
        self.assertEqual(first.cluster_id, 1)
        self.assertEqual(self.adapter.table.lookup("kista/temp/1"), first.sa_id)

        again = self.discovery.handle_unsubscribed(self._request("kista/temp/1", b"22"))
        self.assertFalse(again.created)
        self.assertEqual(again.sa_id, first.sa_id)
        self.assertEqual(self.delivered, [(first.sa_id, b"21"), (first.sa_id, b"22")])
        self.assertEqual(self.manager.get_agent(first.sa_id).location, "kista/temp")
        self.assertEqual(self.discovery.counts["created"], 1)

    def test_rejected_resource_creates_nothing(self):
        with self.assertRaises(AuthenticationFailed):
            self.discovery.handle_unsubscribed(self._request("solna/temp/1"))
        self.assertEqual(len(self.adapter.table), 0)
        self.assertEqual(self.manager.clusters(), {})
        self.assertEqual(self.discovery.counts["rejected"], 1)

    def test_rejection_is_audited(self):
        with self.assertLogs("gateway.audit", level="WARNING"):
            with self.assertRaises(AuthenticationFailed):
                self.discovery.handle_unsubscribed(self._request("solna/temp/1"))

    def test_detached_adapter(self):
        self.discovery.detach(self.adapter)
        with self.assertRaises(MalformedMessage):
            self.discovery.handle_unsubscribed(self._request("kista/temp/1"))

    def test_process_queue_until_sentinel(self):
        for i in range(5):
            self.adapter.dispatch(InboundMessage(f"kista/temp/{i}", b"20"))
        self.adapter.dispatch(InboundMessage("solna/temp/1", b"20"))
        self.requests.put(None)
        self.discovery.process(self.requests)
        self.assertEqual(len(self.adapter.table), 5)
        self.assertEqual(self.discovery.counts, {"created": 5, "resolved": 0, "rejected": 1, "failed": 1})

    def test_process_stops_on_event(self):
        stop = threading.Event()
        worker = threading.Thread(target=self.discovery.process, args=(self.requests, stop))
        worker.start()
        self.adapter.dispatch(InboundMessage("kista/temp/1", b"20"))
        self.requests.join()
        stop.set()
        worker.join(timeout=2)
        self.assertFalse(worker.is_alive())
        self.assertIsNotNone(self.discovery.sa_for("kista/temp/1"))

    def test_resume_avoids_id_reuse(self):
        self.discovery.resume({41: "kista/temp/old"})
        self.assertEqual(self.discovery.sa_for("kista/temp/old"), 41)
        created = self.discovery.handle_unsubscribed(self._request("kista/temp/new"))
        self.assertEqual(created.sa_id, 42)


class TestBrokers(unittest.TestCase):

    def test_add_broker_once(self):
        added = []
        discovery = Discovery(DeviceManager(), on_broker_added=added.append)
        entry = BrokerEntry(Endpoint("10.0.0.2", 1883), Protocol.MQTT, "runtime")
        self.assertTrue(discovery.add_broker(entry))
        self.assertFalse(discovery.add_broker(BrokerEntry(Endpoint("10.0.0.2", 1883))))
        self.assertEqual(added, [entry])
        self.assertEqual(discovery.broker_list()[0].to_dict(),
                         {"address": "10.0.0.2:1883", "protocol_hint": "mqtt", "added_by": "runtime"})

    def test_bad_origin(self):
        with self.assertRaises(ValueError):
            BrokerEntry(Endpoint("10.0.0.2", 1883), added_by="someone")


if __name__ == "__main__":
    unittest.main()
