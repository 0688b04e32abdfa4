"""
Tests for the diffusion sample generator.
"""

import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch

from dcls.corpus import CLS_ID, MASK_ID, PAD_ID, SEP_ID, SynthSpec, build_vocab, synth_corpus, tokenize
from dcls.encoder import EncoderConfig, init_model, save_checkpoint
from dcls.errors import ConfigError, DataError, ShapeError
from dcls.generator import (
    PROMPT_SHIFT,
    GeneratorModel,
    GeneratorTrainConfig,
    attention_weights,
    edit_distance,
    generate_for_sample,
    generate_many,
    label_prompt,
    load_generator,
    normalized_edit_distance,
    reverse_generate,
    reverse_generate_batch,
    save_generator,
    train_generator,
)
from dcls.schedule import NoiseSchedule, sample_trajectory, step_groups, weights_from_cls_row
from dcls.seeding import derive_seed

MAX_LEN = 16


def _fixture(n_each=8, seed=0):
    samples = synth_corpus(SynthSpec((("pos", n_each), ("neg", n_each)), seed=seed))
    vocab = build_vocab(samples)
    tokenized = [tokenize(vocab, s, max_len=MAX_LEN) for s in samples]
    return vocab, tokenized


def _encoder_config(vocab, prompted=True, seed=0):
    return EncoderConfig(vocab_size=len(vocab), num_classes=vocab.num_classes,
                         max_len=MAX_LEN + (2 if prompted else 0), model_dim=16, num_heads=2,
                         num_layers=1, ffn_dim=32, dropout=0.0, seed=seed)


def _uniform(sample):
    return weights_from_cls_row(np.ones(len(sample)), sample.maskable)


class GeneratorCase(unittest.TestCase):
    def setUp(self):
        self.vocab, self.samples = _fixture()
        self.schedule = NoiseSchedule(T=8, lam=0.5)
        self.gen = GeneratorModel(init_model(_encoder_config(self.vocab)), self.vocab, self.schedule)
        self.groups = step_groups(8, 4)
        self.weights = [_uniform(s) for s in self.samples]


class TestLabelPrompt(GeneratorCase):
    """Test the [CLS] <label> [SEP] prompt layout."""

    def test_layout(self):
        sample = self.samples[0]
        masked = list(sample.ids)
        masked[1] = MASK_ID
        prompted = label_prompt(sample, masked, self.vocab)
        lbl = self.vocab.label_token_id("pos")
        self.assertEqual(prompted.ids[:4], (CLS_ID, lbl, SEP_ID, MASK_ID))
        self.assertEqual(prompted.ids[4:], sample.ids[2:])
        self.assertEqual(prompted.ids[-1], SEP_ID)
        self.assertEqual(prompted.masked, (1 + PROMPT_SHIFT,))
        self.assertEqual(len(prompted.ids), len(sample) + 2)

    def test_without_label_uses_pad(self):
        sample = self.samples[-1]
        prompted = label_prompt(sample, sample.ids, self.vocab, use_label=False)
        self.assertEqual(prompted.ids[1], PAD_ID)
        self.assertEqual(prompted.masked, ())

    def test_misaligned(self):
        with self.assertRaises(ShapeError):
            label_prompt(self.samples[0], self.samples[0].ids[:-1], self.vocab)

    def test_too_long(self):
        sample = self.samples[0]
        with self.assertRaises(ShapeError):
            label_prompt(sample, sample.ids, self.vocab, max_len=len(sample))


class TestReverse(GeneratorCase):
    """Test the reverse process."""

    def _traj(self, i, seed):
        return sample_trajectory(self.samples[i], self.weights[i], self.schedule, np.random.default_rng(seed))

    def test_t_star_zero_is_identity(self):
        traj = self._traj(0, 1)
        out = reverse_generate_batch(self.gen, [traj], [0], [np.random.default_rng(0)])
        self.assertEqual(out[0], self.samples[0].ids)

    def test_full_regeneration_has_no_masks(self):
        traj = self._traj(1, 2)
        ids = reverse_generate_batch(self.gen, [traj], [self.schedule.T], [np.random.default_rng(0)])[0]
        self.assertNotIn(MASK_ID, ids)
        self.assertEqual(len(ids), len(self.samples[1]))

    def test_preserves_unmasked_and_label(self):
        content = set(self.vocab.content_ids().tolist())
        rng = np.random.default_rng(5)
        for k in range(200):
            i = k % len(self.samples)
            traj = self._traj(i, 1000 + k)
            t_star = int(rng.integers(0, self.schedule.T + 1))
            p = reverse_generate(self.gen, traj, t_star, None, np.random.default_rng(k), source_id=i)
            source = self.samples[i]
            masked = set(traj.masked_at(t_star).tolist())
            self.assertEqual(len(p.ids), len(source))
            self.assertEqual(p.ids[0], CLS_ID)
            self.assertEqual(p.ids[-1], SEP_ID)
            self.assertEqual(p.label, self.vocab.classes[source.label_id])
            for j in range(1, len(source) - 1):
                if j in masked:
                    self.assertIn(p.ids[j], content)
                else:
                    self.assertEqual(p.ids[j], source.ids[j])

    def test_label_mismatch(self):
        with self.assertRaises(DataError):
            reverse_generate(self.gen, self._traj(0, 0), 3, "neg", np.random.default_rng(0))

    def test_bad_temperature_and_step(self):
        traj = self._traj(0, 0)
        with self.assertRaises(ConfigError):
            reverse_generate_batch(self.gen, [traj], [2], [np.random.default_rng(0)], temperature=0.0)
        with self.assertRaises(ConfigError):
            reverse_generate_batch(self.gen, [traj], [9], [np.random.default_rng(0)])

    def test_misaligned_inputs(self):
        with self.assertRaises(ShapeError):
            reverse_generate_batch(self.gen, [self._traj(0, 0)], [1, 2], [np.random.default_rng(0)])


class TestGeneratePerSource(GeneratorCase):
    """Test seeded generation of B pseudo samples per source."""

    def test_count_group_and_seeds(self):
        out = generate_for_sample(self.gen, self.samples[0], self.weights[0], self.groups, 2, 3, seed=11, source_id=7)
        self.assertEqual(len(out), 3)
        for b, p in enumerate(out):
            self.assertEqual(p.group, 2)
            self.assertIn(p.t_star, self.groups.steps(2))
            self.assertEqual(p.source_id, 7)
            self.assertEqual(p.seed, derive_seed(11, 7, b))

    def test_deterministic(self):
        a = generate_for_sample(self.gen, self.samples[3], self.weights[3], self.groups, 3, 2, seed=4, source_id=3)
        b = generate_for_sample(self.gen, self.samples[3], self.weights[3], self.groups, 3, 2, seed=4, source_id=3)
        self.assertEqual([p.ids for p in a], [p.ids for p in b])

    def test_b_must_be_positive(self):
        with self.assertRaises(ConfigError):
            generate_for_sample(self.gen, self.samples[0], self.weights[0], self.groups, 1, 0, seed=0)

    def test_later_groups_edit_more(self):
        # lam = 0 keeps every group short of a fully masked sequence
        gen = GeneratorModel(self.gen.encoder, self.vocab, NoiseSchedule(T=8, lam=0.0))
        means = []
        for g in range(1, self.groups.num_groups + 1):
            dists = []
            for i, (s, w) in enumerate(zip(self.samples, self.weights)):
                for p in generate_for_sample(gen, s, w, self.groups, g, 3, seed=21, source_id=i):
                    dists.append(normalized_edit_distance(s.ids, p.ids))
            means.append(float(np.mean(dists)))
        self.assertEqual(means, sorted(means))
        self.assertGreater(means[-1], means[0] + 0.2)

    def test_masks_nest_across_groups(self):
        # same seed and source give the same trajectory; only t_star moves with the group
        sample, w = self.samples[2], self.weights[2]
        prev_t = 0
        for g in range(1, self.groups.num_groups + 1):
            p = generate_for_sample(self.gen, sample, w, self.groups, g, 1, seed=8, source_id=2)[0]
            self.assertGreater(p.t_star, prev_t)
            prev_t = p.t_star


class TestGenerateMany(GeneratorCase):
    """Test batched generation over many sources."""

    def test_order_and_ids(self):
        out = generate_many(self.gen, self.samples, self.weights, self.groups, 2, 2, seed=3,
                            source_ids=list(range(100, 100 + len(self.samples))))
        self.assertEqual(len(out), len(self.samples))
        for i, pseudo in enumerate(out):
            self.assertEqual(len(pseudo), 2)
            self.assertTrue(all(p.source_id == 100 + i for p in pseudo))
            self.assertTrue(all(p.label == self.vocab.classes[self.samples[i].label_id] for p in pseudo))

    def test_worker_count_does_not_change_output(self):
        one = generate_many(self.gen, self.samples, self.weights, self.groups, 3, 2, seed=5, workers=1, chunk_size=3)
        many = generate_many(self.gen, self.samples, self.weights, self.groups, 3, 2, seed=5, workers=4, chunk_size=3)
        self.assertEqual([[p.ids for p in ps] for ps in one], [[p.ids for p in ps] for ps in many])

    def test_per_source_counts(self):
        counts = [i % 3 for i in range(len(self.samples))]
        out = generate_many(self.gen, self.samples, self.weights, self.groups, 1, counts, seed=0)
        self.assertEqual([len(ps) for ps in out], counts)

    def test_seeds_match_per_source_generation(self):
        out = generate_many(self.gen, self.samples[:3], self.weights[:3], self.groups, 4, 2, seed=9)
        single = generate_for_sample(self.gen, self.samples[1], self.weights[1], self.groups, 4, 2, seed=9, source_id=1)
        self.assertEqual([p.seed for p in out[1]], [p.seed for p in single])
        self.assertEqual([p.t_star for p in out[1]], [p.t_star for p in single])

    def test_shared_seed_nests_groups(self):
        # one seed for every group: each replica keeps its trajectory and only t_star moves
        by_group = [generate_many(self.gen, self.samples, self.weights, self.groups, g, 2, seed=17)
                    for g in range(1, self.groups.num_groups + 1)]
        for i in range(len(self.samples)):
            for b in range(2):
                replicas = [out[i][b] for out in by_group]
                self.assertEqual(len({p.seed for p in replicas}), 1)
                t_stars = [p.t_star for p in replicas]
                self.assertEqual(t_stars, sorted(set(t_stars)))

    def test_misaligned(self):
        with self.assertRaises(ShapeError):
            generate_many(self.gen, self.samples, self.weights[:-1], self.groups, 1, 1, seed=0)
        with self.assertRaises(ShapeError):
            generate_many(self.gen, self.samples, self.weights, self.groups, 1, [1, 2], seed=0)


class TestEditDistance(unittest.TestCase):
    """Test token-level edit distance."""

    def test_values(self):
        self.assertEqual(edit_distance(list("kitten"), list("sitting")), 3)
        self.assertEqual(edit_distance([], [1, 2, 3]), 3)
        self.assertEqual(edit_distance([1, 2], [1, 2]), 0)
        self.assertEqual(edit_distance([1, 2, 3], [1, 3]), 1)

    def test_normalized(self):
        self.assertAlmostEqual(normalized_edit_distance([1, 2, 3, 4], [1, 9, 3, 4]), 0.25)
        self.assertEqual(normalized_edit_distance([], []), 0.0)


class TestTrainGenerator(unittest.TestCase):
    """Test generator training and checkpoints."""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.vocab, self.samples = _fixture(n_each=6)
        self.proxy = init_model(_encoder_config(self.vocab, prompted=False, seed=1))
        self.schedule = NoiseSchedule(T=8, lam=0.5)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def _train(self, epochs=2, seed=0):
        config = GeneratorTrainConfig(epochs=epochs, batch_size=4, lr=1e-3, seed=seed)
        return train_generator(self.samples, self.proxy, self.schedule, config, self.vocab, _encoder_config(self.vocab))

    def test_history_and_determinism(self):
        a = self._train()
        b = self._train()
        self.assertEqual([h["epoch"] for h in a.history], [1, 2])
        self.assertTrue(all(np.isfinite(h["loss"]) for h in a.history))
        for (name, p), (_, q) in zip(a.encoder.named_parameters(), b.encoder.named_parameters()):
            self.assertTrue(torch.equal(p, q), name)

    def test_loss_does_not_rise_early(self):
        samples = [tokenize(self.vocab, s, max_len=MAX_LEN)
                   for s in synth_corpus(SynthSpec((("pos", 12), ("neg", 8)), seed=0))]
        losses = []
        for seed in range(3):
            config = GeneratorTrainConfig(epochs=3, batch_size=8, lr=1e-3, seed=seed)
            gen = train_generator(samples, self.proxy, self.schedule, config, self.vocab,
                                  _encoder_config(self.vocab, seed=seed))
            losses.append([h["loss"] for h in gen.history])
        mean = np.mean(losses, axis=0)
        self.assertEqual(len(mean), 3)
        self.assertTrue(np.all(np.isfinite(mean)))
        self.assertLessEqual(mean[1], mean[0])
        self.assertLessEqual(mean[2], mean[1])

    def test_zero_epochs(self):
        gen = self._train(epochs=0)
        self.assertEqual(gen.history, [])

    def test_empty_dataset(self):
        with self.assertRaises(DataError):
            train_generator([], self.proxy, self.schedule, GeneratorTrainConfig(), self.vocab, _encoder_config(self.vocab))

    def test_attention_weights(self):
        weights = attention_weights(self.proxy, self.samples)
        self.assertEqual(len(weights), len(self.samples))
        for w, s in zip(weights, self.samples):
            self.assertEqual(len(w), len(s))
            self.assertAlmostEqual(float(w.normalized.max()), 1.0)
            self.assertEqual(float(w.normalized[0]), 0.0)
        self.assertEqual(attention_weights(self.proxy, []), [])

    def test_save_load(self):
        gen = self._train(epochs=1)
        path = save_generator(gen, Path(self.temp_dir) / "generator")
        loaded = load_generator(path, self.vocab)
        self.assertEqual(loaded.schedule, gen.schedule)
        self.assertTrue(loaded.use_label_prompt)
        self.assertEqual(loaded.history, gen.history)
        torch.testing.assert_close(loaded.encoder.embed.weight, gen.encoder.embed.weight, rtol=0, atol=0)

    def test_load_rejects_other_kind_and_classes(self):
        proxy_path = save_checkpoint(self.proxy, Path(self.temp_dir) / "proxy", {"kind": "proxy"})
        with self.assertRaises(DataError):
            load_generator(proxy_path, self.vocab)
        gen = self._train(epochs=0)
        path = save_generator(gen, Path(self.temp_dir) / "generator")
        other = build_vocab(synth_corpus(SynthSpec((("neg", 3), ("pos", 3)), seed=0)))
        with self.assertRaises(DataError):
            load_generator(path, other)
        self.assertEqual(load_generator(path, self.vocab).vocab, self.vocab)


if __name__ == "__main__":
    unittest.main()
