import numpy as np
import pytest

from kgmlc.consistency import ConsistencyMatrix
from kgmlc.dataset import (
    Dataset,
    DatasetError,
    SynthConfig,
    VideoInstance,
    generate_synthetic,
    load_dataset,
    planted_graph,
    save_dataset,
    split,
    weak_labels,
)
from kgmlc.metrics import evaluate
from kgmlc.model import pool_dataset

from conftest import write_lines


@pytest.fixture
def files(tmp_path):
    feats = write_lines(tmp_path / "f.tsv", ["v1\t2\t1 2 3 4 5 6 7 8", "v2\t1\t0.5 0.25 0 -1"])
    labels = write_lines(tmp_path / "l.tsv", ["v1\t0,2", "v2\t1"])
    vocab = write_lines(tmp_path / "vocab.txt", ["cat", "dog", "polar bear"])
    return feats, labels, vocab


def same(a: Dataset, b: Dataset):
    assert a.vocabulary == b.vocabulary and a.feature_dim == b.feature_dim
    assert [i.id for i in a.instances] == [i.id for i in b.instances]
    for x, y in zip(a.instances, b.instances):
        assert x.labels == y.labels
        assert np.array_equal(x.frames, y.frames)


class TestLoad:
    def test_basic(self, files):
        ds = load_dataset(*files)
        assert len(ds) == 2 and ds.feature_dim == 4 and ds.num_labels == 3
        assert ds.instances[0].frames.shape == (2, 4)
        assert ds.instances[0].labels == {0, 2}

    def test_label_out_of_range_names_instance(self, files, tmp_path):
        write_lines(files[1], ["v1\t0,3", "v2\t1"])
        with pytest.raises(DatasetError, match="v1"):
            load_dataset(*files)

    def test_dimension_mismatch(self, files):
        write_lines(files[0], ["v1\t2\t1 2 3 4 5 6 7 8", "v2\t1\t1 2 3"])
        with pytest.raises(DatasetError, match="v2"):
            load_dataset(*files)

    def test_duplicate_id(self, files):
        write_lines(files[0], ["v1\t1\t1 2 3 4", "v1\t1\t1 2 3 4"])
        with pytest.raises(DatasetError, match="duplicate"):
            load_dataset(*files)

    def test_ids_must_agree(self, files):
        write_lines(files[1], ["v1\t0", "v9\t1"])
        with pytest.raises(DatasetError):
            load_dataset(*files)

    def test_empty(self, files):
        write_lines(files[0], [])
        write_lines(files[1], [])
        ds = load_dataset(*files)
        assert len(ds) == 0 and ds.num_labels == 3

    def test_duplicate_vocabulary(self):
        with pytest.raises(DatasetError):
            Dataset(("Polar Bear", "polar_bear"), 2)

    def test_round_trip(self, tmp_path):
        data, _ = generate_synthetic(SynthConfig(num_labels=8, feature_dim=5, num_instances=30, seed=3))
        paths = [tmp_path / n for n in ("f.tsv", "l.tsv", "v.txt")]
        save_dataset(data, *paths)
        same(load_dataset(*paths), data)

    def test_unlabelled_instance_allowed(self, tmp_path):
        ds = Dataset(("a",), 2, (VideoInstance("x", np.zeros((1, 2))),))
        paths = [tmp_path / n for n in ("f.tsv", "l.tsv", "v.txt")]
        save_dataset(ds, *paths)
        assert load_dataset(*paths).instances[0].labels == frozenset()


class TestSplit:
    def test_sizes_and_union(self):
        data, _ = generate_synthetic(SynthConfig(num_labels=5, feature_dim=3, num_instances=10, seed=0))
        tr, te = split(data, 0.8, seed=1)
        assert (len(tr), len(te)) == (8, 2)
        ids = [i.id for i in tr.instances] + [i.id for i in te.instances]
        assert sorted(ids) == sorted(i.id for i in data.instances)

    def test_deterministic(self):
        data, _ = generate_synthetic(SynthConfig(num_labels=5, feature_dim=3, num_instances=20, seed=0))
        a, b = split(data, 0.5, 7), split(data, 0.5, 7)
        assert [i.id for i in a[0].instances] == [i.id for i in b[0].instances]

    def test_empty_side(self):
        data, _ = generate_synthetic(SynthConfig(num_labels=5, feature_dim=3, num_instances=3, seed=0))
        with pytest.raises(DatasetError):
            split(data, 0.1, 0)
        with pytest.raises(ValueError):
            split(data, 1.0, 0)


class TestSynthetic:
    def test_deterministic(self):
        cfg = SynthConfig(num_labels=10, feature_dim=4, num_instances=50, seed=11)
        (a, Sa), (b, Sb) = generate_synthetic(cfg), generate_synthetic(cfg)
        same(a, b)
        assert Sa == Sb

    def test_separable_without_noise(self):
        # one label per instance, no noise, no weak labels: nearest-prototype
        # linear scores w_i = mu_i, b_i = -|mu_i|^2 / 2 rank the truth first
        cfg = SynthConfig(num_labels=12, feature_dim=16, num_instances=300, avg_labels_per_instance=1.0,
                          feature_noise=0.0, weak_fraction=0.0, seed=5)
        data, _ = generate_synthetic(cfg)
        X = pool_dataset(data)
        protos = np.zeros((12, 16))
        for x, inst in zip(X, data.instances):
            (label,) = inst.labels
            protos[label] = x
        scores = X @ protos.T - 0.5 * np.sum(protos**2, axis=1)
        report = evaluate(1 / (1 + np.exp(-scores)), [i.labels for i in data.instances])
        assert report.map == 1.0

    def test_cooccurrence_follows_graph(self):
        L = 10
        W = np.zeros((L, L))
        W[0, 1] = W[1, 0] = 1.0
        W[2:, 2:] = 0.05
        np.fill_diagonal(W, 0)
        cfg = SynthConfig(num_labels=L, feature_dim=2, num_instances=10000, avg_labels_per_instance=2.0,
                          correlation_graph=ConsistencyMatrix.from_dense(W), seed=2)
        Y = generate_synthetic(cfg)[0].label_matrix()
        p1 = Y[:, 1].mean()
        p1_given_0 = Y[Y[:, 0] == 1, 1].mean()
        assert p1_given_0 > p1

    def test_label_marginal(self):
        cfg = SynthConfig(num_labels=50, feature_dim=2, num_instances=10000, avg_labels_per_instance=3.4, seed=9)
        Y = generate_synthetic(cfg)[0].label_matrix()
        assert abs(Y.sum(axis=1).mean() - 3.4) / 3.4 < 0.10

    def test_weak_labels_have_weak_signal(self):
        cfg = SynthConfig(num_labels=20, feature_dim=8, num_instances=400, avg_labels_per_instance=1.0,
                          feature_noise=0.0, seed=4)
        data, _ = generate_synthetic(cfg)
        weak = set(weak_labels(cfg).tolist())
        assert len(weak) == 6
        X = pool_dataset(data)
        norms = {next(iter(i.labels)): np.linalg.norm(x) for x, i in zip(X, data.instances)}
        assert max(norms[i] for i in weak if i in norms) < min(norms[i] for i in norms if i not in weak)

    def test_planted_graph_shape(self):
        S = planted_graph(20, cluster_size=5, seed=0)
        dense = S.to_dense()
        assert S.size == 20
        assert np.all(dense[:5, :5][np.triu_indices(5, 1)] > 0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(num_instances=0)
        with pytest.raises(ValueError):
            SynthConfig(feature_noise=-1)
        with pytest.raises(ValueError):
            SynthConfig(num_labels=5, correlation_graph=ConsistencyMatrix.empty(4))
