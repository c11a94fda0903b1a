"""
Unit tests for the admin API middleware.

This module tests the API endpoints through the Flask test client, including:
- GET and POST request handling
- Broker list and runtime broker addition
- Sensor agent reads and clusters
- Simulated broker publish, drop and heartbeat
- Run statistics
- Context dump, placement and rule evaluation
"""
import os
import tempfile
import unittest

from gateway import fixtures
from gateway.app import create_app
from gateway.config import DslSection, GatewayConfig, GatewaySection
from gateway.daemon import Gateway
from gateway.discovery import BrokerEntry
from gateway.protocol_adapter import Protocol
from gateway.simulation import SIM_ADDRESS

URL: str = "/api"


class APITestCase(unittest.TestCase):
    """
    Starts a gateway on a simulated broker with one MQTT session and wraps it
    in the admin app.
    """

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        config = GatewayConfig(
            gateway=GatewaySection(archive_dir=os.path.join(tmp.name, "archive"),
                                   program_dir=os.path.join(tmp.name, "programs")),
            dsl=DslSection(contexts=fixtures.CONTEXTS),
            brokers=(BrokerEntry(SIM_ADDRESS, Protocol.MQTT),),
        )
        self.gateway = Gateway(config).start()
        self.addCleanup(self.gateway.stop)
        self.client = create_app(self.gateway).test_client()

    def get_request(self, query: str, params=None):
        """
        Sends a GET request with the given parameters.
        query: The GET request query; requires a / at the start.
        """
        return self.client.get(URL + query, query_string=params)

    def post_request(self, query: str, params=None, json=None):
        """
        Sends a POST request with the given parameters and optional JSON body.
        """
        return self.client.post(URL + query, query_string=params, json=json)

    def publish(self, topic: str, payload: str = "20"):
        response = self.post_request("/sim/publish", params={"topic": topic, "payload": payload})
        self.gateway.requests.join()
        return response


class TestAPIModule(APITestCase):

    def test_get_request(self):
        """
        This tests if a get request is possible by calling the Hello, World function from the middleware.
        """
        response = self.get_request("/hello")
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.get_json(), {"message": "Hello World"})

    def test_echo_string(self):
        response = self.get_request("/string/test")
        self.assertEqual(response.get_json(), {"received": "test"})

    def test_health(self):
        data = self.get_request("/health").get_json()
        self.assertEqual(data, {"sessions": {"127.0.0.1:1883": "mqtt"}, "pending": 0})

    def test_index_status(self):
        """The index returns the gateway overview."""
        data = self.client.get("/").get_json()
        for key in ("brokers", "adapters", "ranking", "discovery", "device_manager", "stats"):
            self.assertIn(key, data)
        self.assertEqual(data["adapters"][0]["protocol"], "mqtt")


class TestAPIModuleBroker(APITestCase):

    def test_broker_list(self):
        data = self.get_request("/broker/list").get_json()
        self.assertEqual(data["brokers"], [{"address": "127.0.0.1:1883", "protocol_hint": "mqtt", "added_by": "config"}])
        self.assertEqual(data["ranking"][0]["protocol"], "mqtt")
        self.assertEqual(data["ranking"][0]["usage_count"], 1)

    def test_add_broker(self):
        """
        Adding an unknown broker returns 200, a known one 409, a bad one 400.
        """
        test_cases: list = [
            ({"address": "127.0.0.1:5683", "protocol": "coap"}, 200),
            ({"address": "127.0.0.1:5683"}, 409),
            ({"address": "999.1.1.1:1883"}, 400),
            ({"address": "10.0.0.1:1883", "protocol": "amqp"}, 400),
            ({}, 400),
        ]
        for params, expected_status in test_cases:
            with self.subTest(params=params):
                response = self.post_request("/broker/add", params=params)
                self.assertEqual(response.status_code, expected_status)
                self.assertIsInstance(response.get_json(), dict)

    def test_invalid_address_reports_type(self):
        response = self.post_request("/broker/add", params={"address": "999.1.1.1:1883"})
        self.assertEqual(response.get_json()["type"], "InvalidAddress")


class TestAPIModuleDevice(APITestCase):

    def test_publish_creates_agent(self):
        response = self.publish("kista/temp/1", "21")
        self.assertEqual(response.get_json(), {"topic": "kista/temp/1", "sessions": 1})

        clusters = self.get_request("/device/clusters").get_json()
        self.assertEqual(clusters["agents"], 1)
        self.assertEqual(clusters["clusters"], {"1": [1]})

        cluster = self.get_request("/device/cluster/1").get_json()
        self.assertEqual(cluster["members"][0]["resource_id"], "kista/temp/1")
        self.assertEqual(cluster["members"][0]["location"], "kista/temp")

    def test_read_agent_messages(self):
        self.publish("kista/temp/1", "21")
        self.publish("kista/temp/1", "22")
        response = self.get_request("/device/read", params={"sa_id": 1, "since_message_id": 1})
        data = response.get_json()
        self.assertEqual(response.status_code, 200)
        self.assertEqual(data["last_message_id"], 2)
        self.assertEqual([m["payload"] for m in data["messages"]], ["22"])
        self.assertEqual(data["cluster_id"], 1)

    def test_read_errors(self):
        test_cases: list = [({}, 400), ({"sa_id": "abc"}, 400), ({"sa_id": 99}, 404)]
        for params, expected_status in test_cases:
            with self.subTest(params=params):
                self.assertEqual(self.get_request("/device/read", params=params).status_code, expected_status)

    def test_empty_cluster(self):
        self.assertEqual(self.get_request("/device/cluster/5").status_code, 404)

    def test_recluster(self):
        self.publish("kista/temp/1")
        data = self.post_request("/device/recluster").get_json()
        self.assertEqual(data["moved"], 0)
        self.assertEqual(data["clusters"], {"1": 1})


class TestAPIModuleSim(APITestCase):

    def test_heartbeat(self):
        """
        Tests heartbeat by checking if the response contains expected keys and types.
        """
        response = self.get_request("/sim/heartbeat")
        self.assertEqual(response.status_code, 200)
        data = response.get_json()
        expected = {
            "simulated": bool,
            "now_us": int,
            "counts": dict,
            "sessions": int,
        }
        for key, expected_type in expected.items():
            self.assertIn(key, data)
            self.assertIsInstance(data[key], expected_type)
        self.assertEqual(data["now_us"], 300_000)

    def test_publish_needs_topic(self):
        self.assertEqual(self.post_request("/sim/publish").status_code, 400)

    def test_stats(self):
        self.publish("kista/temp/1")
        self.publish("kista/temp/1")
        data = self.get_request("/sim/stats").get_json()
        self.assertEqual(set(data), {"protocols", "rank_elapsed_us", "dispatch", "synthesis"})
        self.assertEqual(data["dispatch"], {"delivered": 1, "classification": 1, "malformed": 0})
        self.assertEqual(data["rank_elapsed_us"], {"1": 300_000})

    def test_drop(self):
        data = self.post_request("/sim/drop").get_json()
        self.assertEqual(data, {"dropped": 1})
        self.assertEqual(self.gateway.check_sessions(), [SIM_ADDRESS])


class TestAPIModuleContext(APITestCase):

    def test_dump(self):
        data = self.get_request("/context/dump").get_json()
        self.assertEqual(sorted(data["contexts"]), ["c1", "c2", "c3", "c4"])
        self.assertEqual(data["programs"], {})

    def test_place(self):
        contexts, sensor = fixtures.context_fixture()
        self.gateway.learn_placement("time", sensor, [c.with_sensor(sensor) for c in contexts if c.id == "c3"])
        body = {"name": "sensor101", "values": {"loc": "Kista", "time": "2018-05-20T10:00:00", "temp": 26.4}}
        data = self.post_request("/context/place", json=body).get_json()
        self.assertEqual(data["changed"], ["c3"])
        self.assertIn("sensor101", data["contexts"]["c3"][2])

    def test_place_bad_body(self):
        self.assertEqual(self.post_request("/context/place", json=["x"]).status_code, 400)

    def test_rules(self):
        for trace, candidates in fixtures.rule_traces().values():
            self.gateway.learn_rule(trace, candidates)
        self.assertEqual(len(self.get_request("/context/rules").get_json()["rules"]), 2)
        for readings, expected in fixtures.rule_witnesses():
            with self.subTest(readings=readings):
                response = self.post_request("/context/rules/evaluate", json=readings)
                self.assertEqual(response.get_json(), expected)

    def test_missing_reading(self):
        trace, candidates = fixtures.rule_traces()["heater"]
        self.gateway.learn_rule(trace, candidates)
        response = self.post_request("/context/rules/evaluate", json={"phone.pos": 10})
        self.assertEqual(response.status_code, 400)
        self.assertEqual(response.get_json()["type"], "MissingReading")


if __name__ == "__main__":
    unittest.main()
