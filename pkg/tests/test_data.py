from pathlib import Path

import numpy as np
import pytest

from autopoly.data import (
    SbmParams,
    load_bundle,
    random_split,
    save_bundle,
    sbm_generate,
)
from autopoly.errors import InputError
from autopoly.graph import node_homophily

TOY = Path(__file__).parent / "fixtures" / "toy"


def write_bundle(root, edges="0\t1\n", features="1,0\n0,1\n", labels="0\n1\n", meta=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / "edges.tsv").write_text(edges)
    (root / "features.csv").write_text(features)
    (root / "labels.csv").write_text(labels)
    if meta is not None:
        (root / "meta.json").write_text(meta)
    return root


class TestLoadBundle:
    def test_toy_fixture(self):
        b = load_bundle(TOY)
        assert (b.n, b.num_features, b.num_classes) == (3, 2, 2)
        assert b.name == "toy"
        assert b.graph.edges.tolist() == [[0, 1], [1, 2]]

    def test_label_outside_declared_classes(self, tmp_path):
        root = write_bundle(tmp_path / "b", features="1\n2\n3\n", labels="0\n\n9\n1\n",
                            meta='{"num_classes": 5}', edges="")
        with pytest.raises(InputError, match=r"labels\.csv:3") as exc:
            load_bundle(root)
        assert exc.value.line == 3

    def test_ragged_features(self, tmp_path):
        root = write_bundle(tmp_path / "b", features="1,0\n0\n")
        with pytest.raises(InputError, match=r"features\.csv:2"):
            load_bundle(root)

    def test_missing_file(self, tmp_path):
        root = write_bundle(tmp_path / "b")
        (root / "edges.tsv").unlink()
        with pytest.raises(InputError, match="edges.tsv"):
            load_bundle(root)

    def test_edge_out_of_range(self, tmp_path):
        root = write_bundle(tmp_path / "b", edges="0 1\n1 7\n")
        with pytest.raises(InputError, match=r"edges\.tsv:2"):
            load_bundle(root)

    def test_crlf_and_inferred_classes(self, tmp_path):
        root = write_bundle(tmp_path / "b", edges="0 1\r\n", features="1,0\r\n0,1\r\n", labels="0\r\n2\r\n")
        b = load_bundle(root)
        assert b.num_classes == 3
        assert b.graph.num_edges == 1

    def test_round_trip(self, tmp_path):
        b = sbm_generate(SbmParams(20, 2, 0.5, 0.1, num_features=3, seed=4))
        again = load_bundle(save_bundle(b, tmp_path / "sbm"))
        np.testing.assert_array_equal(again.features, b.features)
        np.testing.assert_array_equal(again.labels, b.labels)
        np.testing.assert_array_equal(again.graph.edges, b.graph.edges)

    def test_row_normalized(self):
        b = load_bundle(TOY).row_normalized()
        np.testing.assert_allclose(np.abs(b.features).sum(axis=1), 1.0)


class TestRandomSplit:
    def test_semi_supervised_sizes(self):
        assert random_split(10, 0.1, 0.1, 0.8, seed=3).sizes() == (1, 1, 8)

    def test_supervised_sizes(self):
        assert random_split(100, 0.48, 0.32, 0.20, seed=0).sizes() == (48, 32, 20)

    def test_overfull_ratios_repaired(self):
        s = random_split(100, 0.48, 0.32, 0.32, seed=0)
        assert s.sizes() == (48, 32, 20)
        assert s.ratios[2] == pytest.approx(0.20)

    def test_deterministic(self):
        a = random_split(500, 0.1, 0.1, 0.8, seed=11)
        b = random_split(500, 0.1, 0.1, 0.8, seed=11)
        for x, y in zip((a.train_mask, a.val_mask, a.test_mask), (b.train_mask, b.val_mask, b.test_mask)):
            assert x.tobytes() == y.tobytes()

    def test_frozen_stream(self):
        # pins the Philox stream so a silent change of generator shows up
        s = random_split(10, 0.1, 0.1, 0.8, seed=0)
        assert np.flatnonzero(s.train_mask).tolist() == FROZEN_TRAIN
        assert np.flatnonzero(s.val_mask).tolist() == FROZEN_VAL

    @pytest.mark.parametrize("seed", range(5))
    def test_disjoint(self, seed):
        s = random_split(97, 0.2, 0.3, 0.4, seed=seed)
        total = s.train_mask.astype(int) + s.val_mask + s.test_mask
        assert total.max() == 1
        assert s.sizes() == (19, 29, 38)

    def test_zero_ratio_rejected(self):
        with pytest.raises(InputError):
            random_split(10, 0.0, 0.5, 0.5, seed=0)

    def test_missing_class_rejected(self):
        labels = np.array([0] * 99 + [1])
        bad = [s for s in range(20) if not random_split(100, 0.1, 0.1, 0.8, s).train_mask[99]]
        with pytest.raises(InputError, match="class"):
            random_split(100, 0.1, 0.1, 0.8, seed=bad[0], labels=labels)


class TestSbm:
    def test_pure_homophily(self):
        b = sbm_generate(SbmParams(100, 2, 0.5, 0.0, seed=1))
        assert node_homophily(b.graph, b.labels).ratio == 1.0

    def test_pure_heterophily(self):
        b = sbm_generate(SbmParams(100, 2, 0.0, 0.5, seed=1))
        assert node_homophily(b.graph, b.labels).ratio == 0.0

    def test_uniform_mixing(self):
        # independent Monte-Carlo check: mean over seeds of the homophily of an Erdos-Renyi graph
        bundles = (sbm_generate(SbmParams(2000, 2, 0.01, 0.01, seed=s)) for s in range(10))
        vals = [node_homophily(b.graph, b.labels).ratio for b in bundles]
        assert abs(np.mean(vals) - 0.5) <= 0.05
        assert all(abs(v - 0.5) <= 0.05 for v in vals)

    def test_deterministic(self):
        p = SbmParams(60, 3, 0.3, 0.05, num_features=4, feature_noise=0.5, seed=9)
        a, b = sbm_generate(p), sbm_generate(p)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.graph.edges.tobytes() == b.graph.edges.tobytes()

    def test_class_means_orthonormal(self):
        b = sbm_generate(SbmParams(30, 3, 0.3, 0.3, num_features=8, feature_noise=0.0, seed=2))
        means = np.stack([b.features[b.labels == c][0] for c in range(3)])
        np.testing.assert_allclose(means @ means.T, np.eye(3), atol=1e-12)

    def test_isolated_class_errors(self):
        with pytest.raises(InputError, match="attempts"):
            sbm_generate(SbmParams(20, 2, 0.0, 0.0, seed=0))

    @pytest.mark.parametrize("kwargs", [dict(n=10, num_classes=3), dict(p_in=1.5), dict(num_classes=1)])
    def test_invalid_params(self, kwargs):
        base = dict(n=12, num_classes=2, p_in=0.5, p_out=0.5)
        base.update(kwargs)
        with pytest.raises(InputError):
            SbmParams(**base)


FROZEN_TRAIN = [1]
FROZEN_VAL = [5]
