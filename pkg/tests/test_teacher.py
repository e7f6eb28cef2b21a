import numpy as np
import pytest

from stdistill import data as sd
from stdistill import teacher as te
from stdistill import trainer as tr
from stdistill.losses import bounded_kd_loss, predictive_loss
from stdistill.metrics import mae


@pytest.fixture(scope="module")
def small():
    graph, series = sd.synth_generate(sd.SynthConfig(nodes=6, days=6, steps_per_day=24, noise=0.0,
                                                     diffusion=0.5, seed=2))
    return tr.prepare(graph, series, 6, 3)


def test_round_trip(tmp_path, small):
    y = te.synth_teacher(small.windows.y, sigma=1.0, seed=3)
    path = tmp_path / "t.sttp"
    te.save_teacher(path, y)
    assert path.read_bytes()[:6] == b"STTP1\n"
    loaded = te.load_teacher(path, small.teacher_shape)
    assert loaded.tobytes() == y.tobytes()


def test_off_by_one_window_count(tmp_path, small):
    path = tmp_path / "t.sttp"
    te.save_teacher(path, small.windows.y[:-1])
    with pytest.raises(te.AlignmentError) as exc:
        te.load_teacher(path, small.teacher_shape)
    msg = str(exc.value)
    assert str(small.teacher_shape) in msg and str(len(small.windows) - 1) in msg


def test_truncated_payload(tmp_path, small):
    path = tmp_path / "t.sttp"
    te.save_teacher(path, small.windows.y)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(te.AlignmentError):
        te.read_teacher(path)


def test_synth_teacher_cases(small):
    y = small.windows.y
    assert np.array_equal(te.synth_teacher(y), y)
    assert np.array_equal(te.synth_teacher(y, bias=10.0), y + 10.0)
    a = te.synth_teacher(y, sigma=1.0, seed=4)
    assert a.tobytes() == te.synth_teacher(y, sigma=1.0, seed=4).tobytes()
    assert not np.array_equal(a, y)
    with pytest.raises(ValueError):
        te.synth_teacher(y, sigma=-1.0)


def test_perfect_teacher_makes_bounded_equal_predictive(small):
    y = small.windows.y
    y_hat = y + np.random.default_rng(0).normal(size=y.shape)
    y_t = te.synth_teacher(y)
    assert bounded_kd_loss(y_hat, y_t, y, 0.0).item() == predictive_loss(y_hat, y).item()


def test_ref_teacher_learns_and_is_deterministic(small):
    train, test = small.split("train"), small.split("test")
    norm = small.normalizer
    untrained = te.RefTeacher.init(np.random.default_rng(0), small.graph.adjacency, 6, 3, 1)
    before = mae(te.teacher_predictions(untrained, test, norm), test.y)
    model = te.train_ref_teacher(small.graph, train, norm, epochs=8, seed=1)
    preds = te.teacher_predictions(model, small.windows, norm)
    assert preds.shape == small.teacher_shape
    after = mae(preds[small.test_idx], test.y)
    assert after < before
    again = te.teacher_predictions(te.train_ref_teacher(small.graph, train, norm, epochs=8, seed=1),
                                   small.windows, norm)
    assert again.tobytes() == preds.tobytes()


def test_ref_teacher_mixing_is_row_normalized(small):
    model = te.RefTeacher.init(np.random.default_rng(0), small.graph.adjacency, 6, 3, 1)
    assert np.allclose(model.mix.sum(axis=1), 1.0, atol=1e-15)
