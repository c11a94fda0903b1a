"""
Unit tests for context placement.
"""
import datetime as dt
import math
import random
import unittest

import numpy as np

from gateway import fixtures
from gateway.context_diversity import (
    Context,
    ContextStore,
    SensorObservation,
    add_sensor,
    aggregate,
    exclude_outside_std,
    learn_placement,
    parse_value,
    place,
)
from gateway.dsl_synthesis import DslProgram, evaluate


def _by_id(contexts, *ids):
    return tuple(c for c in contexts if c.id in ids)


class TestAggregates(unittest.TestCase):

    def test_add_sensor_updates_numeric_aggregate(self):
        context = Context("c", "temp", ("s1",), {"temp": (20.3,)})
        sensor = SensorObservation("s2", {"temp": 26.4})
        (grown,) = add_sensor((context,), sensor)
        count, std, mean = grown.attributes["temp"].as_tuple()
        self.assertEqual(count, 2)
        self.assertAlmostEqual(std, 3.05, delta=1e-9)
        self.assertAlmostEqual(mean, 23.35, delta=1e-9)
        self.assertEqual(grown.members, ("s1", "s2"))

    def test_aggregate_matches_brute_force(self):
        """Numeric aggregates after random add_sensor chains match a direct recomputation."""
        rng = random.Random(7)
        for _ in range(1000):
            start = {"temp": rng.uniform(-50, 50), "hum": rng.uniform(0, 100)}
            context = Context("c", "temp", ("s0",), {k: (v,) for k, v in start.items()})
            expected = {k: [v] for k, v in start.items()}
            for step in range(rng.randint(1, 8)):
                keys = rng.sample(("temp", "hum", "loc"), rng.randint(1, 3))
                values = {k: ("Kista" if k == "loc" else rng.uniform(-50, 50)) for k in keys}
                (context,) = add_sensor((context,), SensorObservation(f"s{step + 1}", values))
                for key in expected:
                    if key in values:
                        expected[key].append(values[key])

                attributes = context.attributes
                self.assertNotIn("loc", attributes)
                for key, seen in expected.items():
                    count, std, mean = attributes[key].as_tuple()
                    direct_mean = math.fsum(seen) / len(seen)
                    direct_std = math.sqrt(math.fsum((v - direct_mean) ** 2 for v in seen) / len(seen))
                    self.assertEqual(count, len(seen))
                    self.assertAlmostEqual(mean, direct_mean, delta=1e-9)
                    self.assertAlmostEqual(std, direct_std, delta=1e-9)
                    self.assertAlmostEqual(std, float(np.std(context.member_values[key])), delta=1e-9)

    def test_string_aggregate(self):
        self.assertEqual(aggregate(["Kista", "Kista"]).as_tuple(), (2, 0.0, "Kista"))
        count, std, mode = aggregate(["Kista", "Solna"]).as_tuple()
        self.assertEqual((count, mode), (2, "Kista"))
        self.assertGreater(std, 0.0)

    def test_time_aggregate(self):
        early = dt.datetime(2018, 5, 20, 10, 0)
        late = dt.datetime(2018, 5, 20, 12, 0)
        count, std, mean = aggregate([early, late]).as_tuple()
        self.assertEqual(count, 2)
        self.assertAlmostEqual(std, 3600.0)
        self.assertEqual(mean, dt.datetime(2018, 5, 20, 11, 0))

    def test_unshared_attributes_untouched(self):
        context = Context("c", "loc", ("s1",), {"loc": ("Kista",), "hum": (40.0,)})
        (grown,) = add_sensor((context,), SensorObservation("s2", {"loc": "Kista"}))
        self.assertEqual(grown.member_values["hum"], (40.0,))
        self.assertEqual(grown.member_values["loc"], ("Kista", "Kista"))

    def test_parse_value(self):
        self.assertEqual(parse_value("2018-05-20T10:00:00"), dt.datetime(2018, 5, 20, 10, 0))
        self.assertEqual(parse_value("Kista"), "Kista")
        self.assertEqual(parse_value(21.5), 21.5)


class TestPlacement(unittest.TestCase):

    def setUp(self):
        self.contexts, self.sensor = fixtures.context_fixture()

    def test_within_std_filter(self):
        kept = exclude_outside_std(tuple(self.contexts), self.sensor)
        self.assertEqual([c.id for c in kept], ["c1", "c3"])

    def test_learn_location_placement(self):
        target = tuple(c.with_sensor(self.sensor) for c in _by_id(self.contexts, "c1"))
        program = learn_placement(self.sensor, self.contexts, target)
        self.assertEqual(program, DslProgram("C", (4, 5, 7)))
        self.assertEqual(evaluate(program, tuple(self.contexts), self.sensor), target)

    def test_learn_time_placement(self):
        target = tuple(c.with_sensor(self.sensor) for c in _by_id(self.contexts, "c3"))
        program = learn_placement(self.sensor, self.contexts, target)
        self.assertEqual(program, DslProgram("C", (1, 5, 7)))

    def test_place_keeps_excluded_contexts(self):
        placed = place(self.sensor, self.contexts, DslProgram("C", (4, 5, 7)))
        self.assertEqual([c.id for c in placed], ["c1", "c2", "c3", "c4"])
        self.assertIn("sensor101", placed[0].members)
        for before, after in zip(self.contexts[1:], placed[1:]):
            self.assertEqual(before, after)


class TestContextStore(unittest.TestCase):

    def test_place_observation_runs_every_program(self):
        contexts, sensor = fixtures.context_fixture()
        store = ContextStore(contexts)
        self.assertEqual(store.place_observation(sensor), ())

        store.add_program("location", DslProgram("C", (4, 5, 7)))
        store.add_program("time", DslProgram("C", (1, 5, 7)))
        changed = store.place_observation(sensor)
        self.assertEqual(sorted(c.id for c in changed), ["c1", "c3"])

        dump = store.snapshot()
        self.assertEqual(set(dump), {"c1", "c2", "c3", "c4"})
        key, aggregates, members = dump["c3"]
        self.assertEqual(key, "time")
        self.assertEqual(members, ["sensor1", "sensor2", "sensor101"])
        self.assertEqual(aggregates["temp"][0], 3)
        self.assertEqual(dump["c2"][2], ["sensor3"])


if __name__ == "__main__":
    unittest.main()
