import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osplab.errors import DatasetError
from osplab.learner import (Dataset, MlpSpec, MlpTask, QuadraticTask, evaluate, finite_diff_grad, forward_backward,
                            init_params, load_csv, loss_value, lr_at_epoch, relative_error, save_csv, sgd_delta,
                            shuffle_epoch, synth_dataset)
from osplab.params import LayeredVector


def test_synth_balanced():
    ds = synth_dataset(1, 100, 2, 2, 4.0)
    assert ds.n == 100 and ds.d == 2
    counts = np.bincount(ds.labels, minlength=2)
    assert np.all(np.abs(counts - 50) <= 10)


def test_synth_deterministic():
    a, b = synth_dataset(3, 50, 4, 3, 2.0), synth_dataset(3, 50, 4, 3, 2.0)
    assert a.features.tobytes() == b.features.tobytes() and np.array_equal(a.labels, b.labels)


def test_synth_single_class():
    assert np.all(synth_dataset(0, 20, 3, 1, 1.0).labels == 0)


def test_load_csv_basic(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("0.1,0.2,0\n0.3,0.4,1\n")
    ds = load_csv(f)
    assert (ds.n, ds.d) == (2, 2)


def test_load_csv_bad_feature_names_line(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("abc,0.2,0\n0.3,0.4,1\n")
    with pytest.raises(DatasetError, match="line 1"):
        load_csv(f)


def test_load_csv_header_skipped(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x0,x1,label\n0.1,0.2,0\n")
    assert load_csv(f).n == 1


def test_csv_round_trip(tmp_path):
    ds = synth_dataset(5, 30, 3, 3, 2.0)
    save_csv(ds, tmp_path / "r.csv")
    back = load_csv(tmp_path / "r.csv")
    np.testing.assert_allclose(back.features, ds.features, rtol=1e-9)
    assert np.array_equal(back.labels, ds.labels)


def test_shuffle_examples():
    assert shuffle_epoch(1, 0, 0).tolist() == [0]
    assert not np.array_equal(shuffle_epoch(1000, 7, 1), shuffle_epoch(1000, 7, 2))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 300), seed=st.integers(0, 2 ** 31), epoch=st.integers(0, 50))
def test_shuffle_is_permutation(n, seed, epoch):
    assert sorted(shuffle_epoch(n, seed, epoch).tolist()) == list(range(n))


def test_init_params_layout():
    spec = MlpSpec((2, 3, 2))
    p = init_params(spec, 0)
    assert p.partition.counts == [6, 3, 6, 2]
    assert np.all(p.layer(1) == 0) and np.all(p.layer(3) == 0)
    assert p.values.tobytes() == init_params(spec, 0).values.tobytes()


def one_neuron():
    spec = MlpSpec((1, 1), loss="mse")
    p = LayeredVector(np.array([1.0, 0.0]), spec.partition())
    ds = Dataset(np.array([[2.0]]), np.array([0]), classes=1)
    return spec, p, ds


def test_one_neuron_hand_gradient():
    spec, p, ds = one_neuron()
    loss, g = forward_backward(spec, p, ds, [0])
    assert loss == 4.0
    assert g.values.tolist() == [8.0, 4.0]


def test_one_neuron_finite_difference():
    spec, p, ds = one_neuron()
    fd = finite_diff_grad(spec, p, ds, [0])
    assert abs(fd.values[0] - 8.0) < 1e-6


def test_zero_input_relu_first_layer_gradient():
    spec = MlpSpec((3, 4, 2))
    p = init_params(spec, 1)
    ds = Dataset(np.zeros((5, 3)), np.array([0, 1, 0, 1, 0]))
    _, g = forward_backward(spec, p, ds, np.arange(5))
    assert np.all(g.layer(0) == 0)


def test_dead_relu_gives_zero_gradient():
    spec = MlpSpec((2, 3, 2), loss="mse")
    p = init_params(spec, 2)
    p.values[p.partition.layer_slice(1)] = -100.0  # every hidden unit off
    ds = Dataset(np.random.default_rng(0).standard_normal((4, 2)), np.zeros(4, dtype=int), classes=2)
    fd = finite_diff_grad(spec, p, ds, np.arange(4))
    assert np.allclose(fd.values[:p.partition.layers[2].offset], 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    widths = tuple(int(w) for w in rng.integers(2, 6, size=int(rng.integers(2, 5))))
    spec = MlpSpec(widths, ("relu", "tanh")[seed % 2], ("softmax-cross-entropy", "mse")[(seed // 2) % 2])
    ds = synth_dataset(seed, 10, widths[0], max(2, widths[-1]) if spec.loss == "mse" else widths[-1], 2.0)
    p = LayeredVector(rng.standard_normal(spec.partition().total_count), spec.partition())
    _, g = forward_backward(spec, p, ds, np.arange(ds.n))
    # a smaller step than the default keeps random pre-activations from straddling a ReLU kink
    fd = finite_diff_grad(spec, p, ds, np.arange(ds.n), eps=1e-5)
    assert relative_error(g.values, fd.values) < 1e-4


def test_sgd_delta_and_schedule():
    g = LayeredVector(np.array([2.0, -4.0]), MlpSpec((1, 1)).partition())
    assert np.allclose(sgd_delta(g, 0.1).values, [-0.2, 0.4])
    assert np.all(sgd_delta(LayeredVector(np.zeros(2), g.partition), 0.1).values == 0)
    assert lr_at_epoch(0.8, 10) == 0.4 and lr_at_epoch(0.8, 20) == 0.2 and lr_at_epoch(0.8, 9) == 0.8


def test_loss_non_negative():
    spec = MlpSpec((4, 5, 3))
    ds = synth_dataset(0, 30, 4, 3, 2.0)
    assert loss_value(spec, init_params(spec, 0), ds, np.arange(30)) >= 0


def test_evaluate_single_sample():
    spec = MlpSpec((1, 2))
    p = LayeredVector(np.array([0.0, 0.0, 0.0, 1.0]), spec.partition())
    assert evaluate(spec, p, Dataset(np.array([[1.0]]), np.array([1]), classes=2)) == 1.0


def test_evaluate_random_params_near_chance():
    spec = MlpSpec((2, 8, 2))
    ds = synth_dataset(4, 2000, 2, 2, 0.5)
    accs = [evaluate(spec, init_params(spec, s), ds) for s in range(5)]
    assert abs(np.mean(accs) - 0.5) <= 0.1


def test_single_worker_training_separates_blobs():
    spec = MlpSpec((2, 8, 2))
    ds = synth_dataset(9, 400, 2, 2, 8.0)
    p = init_params(spec, 0)
    for epoch in range(30):
        for idx in np.array_split(shuffle_epoch(ds.n, 1, epoch), 25):
            _, g = forward_backward(spec, p, ds, idx)
            p.values += sgd_delta(g, lr_at_epoch(0.1, epoch)).values
    assert evaluate(spec, p, ds) >= 0.95


def test_tasks_expose_partition():
    spec = MlpSpec((2, 3, 2))
    t = MlpTask(spec, synth_dataset(0, 10, 2, 2, 2.0))
    assert t.partition == spec.partition() and t.evaluate(t.init_params(0)) is None
    q = QuadraticTask([3, 4], n_samples=8, bytes_per_element=100)
    loss, g = q.gradient(q.init_params(0), [0, 1])
    assert loss > 0 and g.partition.model_bytes == 700
