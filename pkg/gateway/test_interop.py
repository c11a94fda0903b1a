"""
Unit tests for message dialect translation.
"""
import os
import tempfile
import unittest

from gateway import fixtures
from gateway.dsl_synthesis import DslProgram, Synthesizer, evaluate, load_program
from gateway.errors import KindMismatch, NoProgram
from gateway.interoperability import (
    DIALECT_G,
    DIALECT_P,
    DIALECT_STANDARD,
    Interoperability,
    MessageEnvelope,
    envelope_for,
    frame_length,
    label_packet,
    pack_properties,
)


class TestRegistryFunctions(unittest.TestCase):

    def test_frame_length(self):
        self.assertEqual(frame_length(7), 9)
        self.assertEqual(frame_length(127), 129)
        self.assertEqual(frame_length(128), 131)

    def test_pack_rejects_packed(self):
        _, message, _ = fixtures.translation_fixture(DIALECT_G, DIALECT_P)
        with self.assertRaises(KindMismatch):
            pack_properties(message)

    def test_label_rejects_raw(self):
        with self.assertRaises(KindMismatch):
            label_packet(("PUBLISH", False, 1))


class TestLearning(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.interop = Interoperability(Synthesizer(), self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_p_to_g(self):
        examples, _, _ = fixtures.translation_fixture(DIALECT_P, DIALECT_G)
        learned = self.interop.learn_translation(examples, DIALECT_P, DIALECT_G)
        self.assertEqual(learned.program, DslProgram("I", (2, 3)))
        self.assertEqual(learned.program.describe(), "(2 (extract_packet), 3 (pack_properties))")

    def test_g_to_p(self):
        examples, _, _ = fixtures.translation_fixture(DIALECT_G, DIALECT_P)
        learned = self.interop.learn_translation(examples, DIALECT_G, DIALECT_P)
        self.assertEqual(learned.program, DslProgram("I", (4,)))

    def test_learned_program_is_persisted_and_reloaded(self):
        examples, message, expected = fixtures.translation_fixture(DIALECT_P, DIALECT_G)
        self.interop.learn_translation(examples, DIALECT_P, DIALECT_G)
        path = os.path.join(self.tmp.name, "P-G.prog")
        self.assertEqual(load_program(path), DslProgram("I", (2, 3)))

        restarted = Interoperability(Synthesizer(), self.tmp.name)
        self.assertEqual(restarted.load_cache(), 1)
        self.assertEqual(restarted.translate(message, DIALECT_P, DIALECT_G), expected)


class TestTranslation(unittest.TestCase):

    def setUp(self):
        self.interop = Interoperability(Synthesizer())

    def test_paho_message_to_sequence(self):
        examples, message, expected = fixtures.translation_fixture(DIALECT_P, DIALECT_G)
        out = self.interop.translate_or_learn(message, DIALECT_P, DIALECT_G, examples)
        self.assertEqual(out, expected)
        self.assertEqual(
            out,
            ("PUBLISH", False, 1, False, 4, 11, "test/paho/1", 9012,
             (1, ("property1", "property2", "property3", "property4"), ("Payload part 1", "Payload part 2"))),
        )

    def test_gmqtt_message_to_record(self):
        examples, message, expected = fixtures.translation_fixture(DIALECT_G, DIALECT_P)
        out = self.interop.translate_or_learn(message, DIALECT_G, DIALECT_P, examples)
        self.assertEqual(out, expected)
        self.assertEqual(out["info"], (2, "property1", "property2"))
        self.assertEqual(out["packet"][-1], {"payload part 1": 123, "payload part 2": 456})
        self.assertEqual(out["to_process"], 9)

    def test_cache_hit_skips_synthesis(self):
        examples, message, _ = fixtures.translation_fixture(DIALECT_G, DIALECT_P)
        self.interop.translate_or_learn(message, DIALECT_G, DIALECT_P, examples)
        runs = self.interop.synthesizer.stats["runs"]
        self.interop.translate_or_learn(message, DIALECT_G, DIALECT_P, examples)
        self.assertEqual(self.interop.synthesizer.stats["runs"], runs)

    def test_missing_program(self):
        _, message, _ = fixtures.translation_fixture(DIALECT_P, DIALECT_G)
        with self.assertRaises(NoProgram):
            self.interop.translate(message, DIALECT_P, DIALECT_G)

    def test_same_dialect_is_identity(self):
        _, message, _ = fixtures.translation_fixture(DIALECT_P, DIALECT_G)
        self.assertIs(self.interop.translate(message, DIALECT_P, DIALECT_P), message)

    def test_standard_form_agrees_with_learned_program(self):
        examples, message, expected = fixtures.translation_fixture(DIALECT_G, DIALECT_P)
        learned = self.interop.learn_translation(examples, DIALECT_G, DIALECT_P)
        via_standard = self.interop.translate(message, DIALECT_G, DIALECT_STANDARD)
        self.assertIsInstance(via_standard, MessageEnvelope)
        self.assertEqual(self.interop.translate(via_standard, DIALECT_STANDARD, DIALECT_P),
                         evaluate(learned.program, message))

    def test_envelope_for_raw_publish(self):
        envelope = envelope_for("kista/temp/7", b"21.5", mid=3, qos=1)
        self.assertEqual(envelope.topic_len, 12)
        self.assertEqual(envelope.remaining_len, 2 + 12 + 2 + 4)
        self.assertEqual(envelope.to_packet()[:8], ("PUBLISH", False, 1, False, 20, 12, "kista/temp/7", 3))


class TestRoundTrips(unittest.TestCase):

    def setUp(self):
        self.interop = Interoperability(Synthesizer())
        p_examples, p_message, g_expected = fixtures.translation_fixture(DIALECT_P, DIALECT_G)
        g_examples, g_message, p_expected = fixtures.translation_fixture(DIALECT_G, DIALECT_P)
        self.interop.learn_translation(p_examples, DIALECT_P, DIALECT_G)
        self.interop.learn_translation(g_examples, DIALECT_G, DIALECT_P)
        self.records = [ex.inputs[0] for ex in p_examples] + [ex.output for ex in g_examples]
        self.records += [p_message, p_expected]
        self.packets = [ex.output for ex in p_examples] + [ex.inputs[0] for ex in g_examples]
        self.packets += [g_message, g_expected]

    def test_records_survive_p_g_p(self):
        for record in self.records:
            with self.subTest(mid=record["mid"]):
                there = self.interop.translate(record, DIALECT_P, DIALECT_G)
                self.assertEqual(self.interop.translate(there, DIALECT_G, DIALECT_P), record)

    def test_packets_survive_g_p_g(self):
        for packet in self.packets:
            with self.subTest(mid=packet[7]):
                there = self.interop.translate(packet, DIALECT_G, DIALECT_P)
                self.assertEqual(self.interop.translate(there, DIALECT_P, DIALECT_G), packet)

    def test_envelope_fields_survive_both_directions(self):
        for record in self.records:
            with self.subTest(mid=record["mid"]):
                envelope = MessageEnvelope.from_record(record)
                self.assertEqual(envelope.to_record(), record)
                packet = envelope.to_packet()
                self.assertEqual(packet, self.interop.translate(record, DIALECT_P, DIALECT_G))
                back = MessageEnvelope.from_packet(packet)
                self.assertEqual(back.header(), envelope.header())
                self.assertEqual(back.properties, envelope.properties)
                self.assertEqual(back.payload_parts, envelope.payload_parts)
                self.assertEqual(back.extras["flag"], envelope.extras["flag"])
                self.assertEqual(back.to_record(), record)
        for packet in self.packets:
            with self.subTest(mid=packet[7]):
                envelope = MessageEnvelope.from_packet(packet)
                self.assertEqual(envelope.to_packet(), packet)
                self.assertEqual(envelope.to_record(), self.interop.translate(packet, DIALECT_G, DIALECT_P))
                self.assertEqual(MessageEnvelope.from_record(envelope.to_record()).to_packet(), packet)


if __name__ == "__main__":
    unittest.main()
