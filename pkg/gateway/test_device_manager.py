"""
Unit tests for sensor agents, clustering and the cluster archive.
"""
import os
import tempfile
import unittest

from gateway import fixtures
from gateway.device_manager import UNCLASSIFIED, DeviceManager, SensorAgent
from gateway.dsl_synthesis import DslProgram, IoExample, Synthesizer
from gateway.errors import ArchiveCorrupt, NoProgram, NotFound


class FakeClock:
    def __init__(self, now=1000.0):
        self.now = now

    def __call__(self):
        return self.now


class TestSensorAgent(unittest.TestCase):

    def test_message_log(self):
        agent = SensorAgent(1, [2, 7])
        self.assertEqual(agent.deliver(b"21.5", 10.0), 1)
        self.assertEqual(agent.deliver(b"21.7", 11.0), 2)
        last, messages = agent.get_messages_since(1)
        self.assertEqual(last, 2)
        self.assertEqual([m["payload"] for m in messages], ["21.7"])
        self.assertEqual(agent.last_active, 11.0)

    def test_needs_attributes(self):
        with self.assertRaises(ValueError):
            SensorAgent(1, [])


class TestClustering(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.clock = FakeClock()
        self.manager = DeviceManager(Synthesizer(), self.tmp.name, os.path.join(self.tmp.name, "archive"), self.clock)
        os.makedirs(self.manager.archive_dir)

    def tearDown(self):
        self.tmp.cleanup()

    def test_no_program(self):
        with self.assertRaises(NoProgram):
            self.manager.insert(SensorAgent(1, [1, 2]))

    def test_insert_by_type(self):
        self.manager.set_program(DslProgram("L", (1,)))
        self.assertEqual(self.manager.insert(SensorAgent(1, [3, 12, 20])), 3)
        self.assertEqual(self.manager.insert(SensorAgent(2, [3, 8])), 3)
        self.assertEqual(self.manager.insert(SensorAgent(3, [8, 9])), 8)
        self.assertEqual(self.manager.clusters(), {3: [1, 2], 8: [3]})
        self.assertEqual(sum(self.manager.partition_sizes().values()), 3)

    def test_unclassified(self):
        self.manager.set_program(DslProgram("L", (2, 1)))
        self.assertEqual(self.manager.insert(SensorAgent(1, [3])), UNCLASSIFIED)
        self.assertEqual(self.manager.stats["unclassified"], 1)
        self.assertEqual(self.manager.cluster_of(1), UNCLASSIFIED)

    def test_regenerate_and_recluster(self):
        self.manager.set_program(DslProgram("L", (1,)))
        for sa_id, attributes in enumerate([[3, 12, 20], [3, 8], [8, 12]], start=1):
            self.manager.insert(SensorAgent(sa_id, attributes))
        path = self.manager.regenerate(fixtures.clustering_examples("id"))
        self.assertEqual(path, os.path.join(self.tmp.name, "clustering.prog"))
        self.assertEqual(self.manager.active_program, DslProgram("L", (2, 1)))
        self.assertEqual(self.manager.recluster(), 3)
        self.assertEqual(self.manager.clusters(), {12: [1, 3], 8: [2]})

    def test_failed_regenerate_keeps_program(self):
        impossible =[IoExample(([1, 2],), 5), IoExample(([3, 4],), 11)]
        manager = DeviceManager(Synthesizer(max_len=1), self.tmp.name)
        manager.set_program(DslProgram("L", (1,)))
        with self.assertRaises(NotFound):
            manager.regenerate(impossible)
        self.assertEqual(manager.active_program, DslProgram("L", (1,)))
        self.assertFalse(os.path.exists(os.path.join(self.tmp.name, "clustering.prog")))

    def test_load_clustering_program(self):
        path = os.path.join(self.tmp.name, "clustering.prog")
        with open(path, "w", encoding="ascii") as f:
            f.write("L: 2 1\n")
        self.assertEqual(self.manager.load_clustering_program(path), DslProgram("L", (2, 1)))


class TestArchive(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.clock = FakeClock()
        self.manager = DeviceManager(archive_dir=self.tmp.name, clock=self.clock)
        self.manager.set_program(DslProgram("L", (1,)))

    def tearDown(self):
        self.tmp.cleanup()

    def test_evict_and_restore(self):
        self.manager.insert(SensorAgent(1, [3, 12], resource_id="kista/temp/1"))
        self.clock.now += 100
        self.manager.insert(SensorAgent(2, [8, 9], resource_id="kista/hum/2"))

        self.assertEqual(self.manager.evict_inactive(50), [3])
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, "cluster_3.json")))
        self.assertIsNone(self.manager.get_agent(1))
        self.assertEqual(self.manager.partition_sizes(), {8: 1, 3: 1})

        restored = self.manager.get_cluster(3)
        self.assertEqual([a.resource_id for a in restored], ["kista/temp/1"])
        self.assertEqual(restored[0].last_active, 1000.0)
        self.assertFalse(os.path.exists(os.path.join(self.tmp.name, "cluster_3.json")))

    def test_infinite_ttl_never_evicts(self):
        self.manager.insert(SensorAgent(1, [3]))
        self.clock.now += 10 ** 9
        self.assertEqual(self.manager.evict_inactive(float("inf")), [])
        with self.assertRaises(ValueError):
            self.manager.evict_inactive(0)

    def test_activate_restores_cluster(self):
        self.manager.insert(SensorAgent(1, [3]))
        self.manager.archive_all()
        self.assertIsNone(self.manager.get_agent(1))
        self.assertEqual(self.manager.activate(1).sa_id, 1)
        self.assertEqual(self.manager.cluster_of(1), 3)

    def test_insert_into_archived_cluster(self):
        self.manager.insert(SensorAgent(1, [3]))
        self.manager.archive_all()
        self.manager.insert(SensorAgent(2, [3, 4]))
        self.assertEqual(self.manager.clusters(), {3: [1, 2]})

    def test_archive_index_after_restart(self):
        self.manager.insert(SensorAgent(4, [3], resource_id="kista/temp/4"))
        self.manager.insert(SensorAgent(9, [8], resource_id="kista/hum/9"))
        self.manager.archive_all()

        restarted = DeviceManager(archive_dir=self.tmp.name, clock=self.clock)
        restarted.set_program(DslProgram("L", (1,)))
        self.assertEqual(restarted.load_archive_index(), [3, 8])
        self.assertEqual(restarted.archived_resources(), {4: "kista/temp/4", 9: "kista/hum/9"})
        self.assertEqual(restarted.partition_sizes(), {3: 1, 8: 1})
        self.assertEqual(restarted.activate(9).resource_id, "kista/hum/9")

    def test_corrupt_archive(self):
        self.manager.insert(SensorAgent(1, [3]))
        self.manager.archive_all()
        with open(os.path.join(self.tmp.name, "cluster_3.json"), "w", encoding="utf-8") as f:
            f.write("{not json")
        with self.assertRaises(ArchiveCorrupt):
            self.manager.restore(3)


if __name__ == "__main__":
    unittest.main()
