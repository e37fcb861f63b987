import numpy as np
import pytest

from openvein.collection import EmbeddingCollection
from openvein.core import normalize
from openvein.errors import NonFiniteLossError, TooFewClassesError
from openvein.synth import generate_raw_features, toy_training_config, SynthConfig
from openvein.training import SamplerConfig, ToyHead, pk_sample, train_toy_head


def make_dataset(rng, n_classes, per_class, dim=6):
    vectors, labels = [], []
    for c in range(n_classes):
        mean = normalize(rng.standard_normal(dim))
        for _ in range(per_class):
            vectors.append(normalize(mean + 0.1 * rng.standard_normal(dim)))
            labels.append(f"c{c:02d}")
    return EmbeddingCollection(vectors=np.array(vectors), labels=tuple(labels))


class TestPkSample:
    def test_default_batch_shape(self):
        rng = np.random.default_rng(30)
        dataset = make_dataset(rng, 20, 6)
        batches = pk_sample(dataset, SamplerConfig(P=16, K=4, seed=1))
        for batch in batches:
            assert len(batch) == 64
            counts: dict[str, int] = {}
            for label in batch.labels:
                counts[label] = counts.get(label, 0) + 1
            assert len(counts) == 16
            assert all(n == 4 for n in counts.values())

    def test_two_class_minimum(self):
        rng = np.random.default_rng(31)
        dataset = make_dataset(rng, 2, 3)
        batches = pk_sample(dataset, SamplerConfig(P=2, K=2, seed=0))
        assert len(batches) == 1
        assert len(batches[0]) == 4
        assert set(batches[0].labels) == {"c00", "c01"}

    def test_same_seed_identical_batches(self):
        rng = np.random.default_rng(32)
        dataset = make_dataset(rng, 7, 5)
        cfg = SamplerConfig(P=3, K=2, seed=9)
        a = pk_sample(dataset, cfg)
        b = pk_sample(dataset, cfg)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert x.labels == y.labels
            np.testing.assert_array_equal(x.vectors, y.vectors)

    def test_epoch_covers_every_class(self):
        rng = np.random.default_rng(33)
        dataset = make_dataset(rng, 11, 3)
        for seed in range(5):
            batches = pk_sample(dataset, SamplerConfig(P=4, K=2, seed=seed))
            seen = set()
            for batch in batches:
                seen.update(batch.labels)
            assert seen == set(dataset.labels)

    def test_small_class_sampled_with_replacement(self):
        rng = np.random.default_rng(34)
        vectors = [normalize(rng.standard_normal(4)) for _ in range(5)]
        dataset = EmbeddingCollection(
            vectors=np.array(vectors), labels=("a", "a", "a", "b", "b")
        )
        batches = pk_sample(dataset, SamplerConfig(P=2, K=4, seed=0))
        for batch in batches:
            counts: dict[str, int] = {}
            for label in batch.labels:
                counts[label] = counts.get(label, 0) + 1
            assert counts == {"a": 4, "b": 4}

    def test_too_few_classes(self):
        rng = np.random.default_rng(35)
        dataset = make_dataset(rng, 3, 3)
        with pytest.raises(TooFewClassesError):
            pk_sample(dataset, SamplerConfig(P=4, K=2, seed=0))

    def test_balance_exact_on_ragged_data(self):
        rng = np.random.default_rng(36)
        vectors, labels = [], []
        for c, per_class in enumerate([2, 3, 5, 7, 11]):
            mean = normalize(rng.standard_normal(4))
            for _ in range(per_class):
                vectors.append(normalize(mean + 0.05 * rng.standard_normal(4)))
                labels.append(f"c{c}")
        dataset = EmbeddingCollection(vectors=np.array(vectors), labels=tuple(labels))
        for batch in pk_sample(dataset, SamplerConfig(P=5, K=3, seed=2)):
            counts: dict[str, int] = {}
            for label in batch.labels:
                counts[label] = counts.get(label, 0) + 1
            assert len(counts) == 5 and all(n == 3 for n in counts.values())


class TestToyHead:
    def test_embed_rows_unit_norm(self):
        head = ToyHead.initialize(6, 4, learning_rate=0.1, epochs=10, seed=0)
        rng = np.random.default_rng(37)
        out = head.embed(rng.standard_normal((8, 6)))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, rtol=0, atol=1e-12)

    def test_zero_learning_rate_is_noop_with_flat_trace(self):
        rng = np.random.default_rng(38)
        dataset = make_dataset(rng, 4, 4)
        head = ToyHead.initialize(6, 4, learning_rate=0.0, epochs=12, seed=1)
        trained, trace = train_toy_head(
            dataset, head, loss="triplet", sampler=SamplerConfig(P=3, K=2, seed=0)
        )
        np.testing.assert_array_equal(trained.weight, head.weight)
        assert len(trace) == 12
        assert all(v == trace[0] for v in trace)

    def test_identity_head_on_separated_clusters_is_noop(self):
        # Clusters on distinct axes: batch-hard loss 0 at epoch 0, so plain
        # gradient descent never moves the identity weights.
        vectors, labels = [], []
        for axis, label in ((0, "a"), (1, "b"), (2, "c")):
            for delta in (0.01, -0.01):
                v = np.zeros(4)
                v[axis] = 1.0
                v[(axis + 1) % 4] = delta
                vectors.append(normalize(v))
                labels.append(label)
        dataset = EmbeddingCollection(vectors=np.array(vectors), labels=tuple(labels))
        head = ToyHead(weight=np.eye(4), learning_rate=0.5, epochs=5, seed=0)
        trained, trace = train_toy_head(
            dataset, head, loss="triplet", sampler=SamplerConfig(P=3, K=2, seed=1)
        )
        assert trace[0] == 0.0
        np.testing.assert_array_equal(trained.weight, np.eye(4))
        assert all(v == 0.0 for v in trace)

    def test_collapsed_head_raises_non_finite(self):
        rng = np.random.default_rng(39)
        dataset = make_dataset(rng, 4, 4)
        head = ToyHead(weight=np.zeros((4, 6)), learning_rate=0.1, epochs=5, seed=1)
        with pytest.raises(NonFiniteLossError):
            train_toy_head(
                dataset, head, loss="triplet", sampler=SamplerConfig(P=3, K=2, seed=0)
            )

    def test_non_finite_features_raise(self):
        rng = np.random.default_rng(40)
        dataset = make_dataset(rng, 4, 4)
        bad = dataset.vectors.copy()
        bad[0, 0] = np.nan
        broken = EmbeddingCollection.__new__(EmbeddingCollection)
        object.__setattr__(broken, "vectors", bad)
        object.__setattr__(broken, "labels", dataset.labels)
        object.__setattr__(broken, "subjects", None)
        object.__setattr__(broken, "sessions", None)
        object.__setattr__(broken, "normalized", False)
        head = ToyHead.initialize(6, 4, learning_rate=0.1, epochs=5, seed=1)
        with pytest.raises(NonFiniteLossError):
            train_toy_head(
                broken, head, loss="triplet", sampler=SamplerConfig(P=3, K=2, seed=0)
            )

    def test_convergence_on_toy_problem(self):
        cfg = toy_training_config()
        raw = generate_raw_features(cfg)
        head = ToyHead.initialize(raw.dimension, cfg.dim, learning_rate=0.5, epochs=200, seed=0)
        trained, trace = train_toy_head(
            raw, head, loss="triplet", sampler=SamplerConfig(P=16, K=4, seed=5)
        )
        assert trace[-1] < 0.05

    @pytest.mark.parametrize("loss", ["triplet", "triplet_center", "contrastive"])
    def test_all_losses_trainable(self, loss):
        cfg = SynthConfig(
            num_classes=8, dim=6, samples_per_class=6, noise_sigma=0.3,
            raw_feature_dim=12, seed=3,
        )
        raw = generate_raw_features(cfg)
        head = ToyHead.initialize(raw.dimension, cfg.dim, learning_rate=0.5, epochs=60, seed=0)
        trained, trace = train_toy_head(
            raw, head, loss=loss, sampler=SamplerConfig(P=4, K=3, seed=2)
        )
        assert np.isfinite(trace).all()
        assert trace[-1] <= trace[0]

    def test_smoothed_trace_non_increasing_on_separable_problem(self):
        cfg = toy_training_config()
        raw = generate_raw_features(cfg)
        head = ToyHead.initialize(raw.dimension, cfg.dim, learning_rate=0.5, epochs=100, seed=0)
        _, trace = train_toy_head(
            raw, head, loss="triplet", sampler=SamplerConfig(P=16, K=4, seed=5)
        )
        smoothed = np.convolve(trace, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(smoothed) <= 1e-9)

    def test_training_improves_batch_hard_loss_on_embeddings(self):
        cfg = toy_training_config()
        raw = generate_raw_features(cfg)
        sampler = SamplerConfig(P=16, K=4, seed=5)
        head = ToyHead.initialize(raw.dimension, cfg.dim, learning_rate=0.5, epochs=80, seed=0)
        trained, trace = train_toy_head(raw, head, loss="triplet", sampler=sampler)
        assert trace[-1] < trace[0]
