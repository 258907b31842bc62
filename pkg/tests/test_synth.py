import numpy as np
import pytest

from brainhgcn import graph as gr
from brainhgcn import synth as sy


def test_spec_defaults():
    s = sy.SynthSpec()
    assert (s.n_subjects, s.roi_count, s.time_points, s.coupling, s.seed) == (100, 32, 64, 0.5, 42)
    full = sy.SynthSpec.full_size()
    assert (full.roi_count, full.time_points) == (116, 150)


@pytest.mark.parametrize("kw", [{"roi_count": 3}, {"time_points": 7}, {"noise": -1.0},
                                {"rewire": 1.5}, {"branching": (2,)}])
def test_spec_validation(kw):
    with pytest.raises(sy.SynthError):
        sy.SynthSpec(**kw)


def test_coupling_too_large_suggests_smaller():
    with pytest.raises(sy.SynthError, match="smaller"):
        sy.generate_subject(sy.SynthSpec(coupling=1.2), 0, np.random.default_rng(0))


def test_class_tree():
    np.testing.assert_array_equal(sy.class_tree(7, 2), [-1, 0, 0, 1, 1, 2, 2])
    np.testing.assert_array_equal(sy.class_tree(5, 3), [-1, 0, 0, 0, 1])


def test_noise_washes_out_correlation():
    ts = sy.generate_subject(sy.SynthSpec(noise=100.0, time_points=512), 0, np.random.default_rng(0))
    C = gr.pearson_correlation(ts.series)
    off = C[~np.eye(len(C), dtype=bool)]
    assert np.mean(np.abs(off)) < 0.1


@pytest.mark.parametrize("label", [0, 1])
def test_tree_neighbours_correlate_more(label):
    spec = sy.SynthSpec(noise=0.0, time_points=4000, rewire=0.0)
    ts = sy.generate_subject(spec, label, np.random.default_rng(5))
    C = gr.pearson_correlation(ts.series)
    parent = sy.class_tree(spec.roi_count, spec.branching[label])
    A = np.zeros_like(C, dtype=bool)
    for i in range(1, len(parent)):
        A[i, parent[i]] = A[parent[i], i] = True
    off = ~np.eye(len(C), dtype=bool)
    assert C[A].mean() > C[off & ~A].mean()


def test_dataset_deterministic_and_balanced():
    spec = sy.SynthSpec(n_subjects=5)
    a = sy.generate_dataset(spec)
    b = sy.generate_dataset(spec)
    assert len(a) == 10 and sum(t.label for t in a) == 5
    for x, y in zip(a, b):
        assert np.array_equal(x.series, y.series) and x.label == y.label
    c = sy.generate_dataset(sy.SynthSpec(n_subjects=5, seed=43))
    assert not np.array_equal(a[0].series, c[0].series)


def test_write_dataset(tmp_path):
    manifest = sy.write_dataset(sy.SynthSpec(n_subjects=2, time_points=16), tmp_path)
    graphs = gr.load_dataset(manifest, k=3)
    assert [g.label for g in graphs] == [0, 1, 0, 1]
    assert graphs[0].features.shape == (32, 16)


def test_tree_helpers():
    e = sy.binary_tree(2)
    assert e.shape == (6, 2)
    D = sy.tree_distances(e)
    assert D[3, 6] == 4 and D[0, 5] == 2
    with pytest.raises(sy.SynthError, match="disconnected"):
        sy.tree_distances(np.array([[0, 1], [2, 3]]))


@pytest.mark.parametrize("geometry", ["hyperbolic", "euclidean"])
def test_two_nodes_embed_exactly(geometry):
    rep = sy.embed_tree_distortion(np.array([[0, 1]]), geometry, iters=500)
    assert rep.average < 1e-3


def test_path_embeds_in_the_plane():
    path = np.array([[i, i + 1] for i in range(5)])
    assert sy.embed_tree_distortion(path, "euclidean", iters=1500).average < 0.05


def test_distortion_relabel_invariance():
    e = sy.binary_tree(3)
    n = e.max() + 1
    perm = np.random.default_rng(0).permutation(n)
    a = sy.embed_tree_distortion(e, "hyperbolic", iters=800).average
    b = sy.embed_tree_distortion(perm[e], "hyperbolic", iters=800).average
    assert abs(a - b) < 0.05


def test_distortion_argument_errors():
    with pytest.raises(ValueError):
        sy.embed_tree_distortion(np.array([[0, 1]]), "spherical")
    with pytest.raises(ValueError):
        sy.embed_tree_distortion(np.array([[0, 1]]), dim=1)
