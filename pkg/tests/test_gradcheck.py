import numpy as np
import pytest

from semsim import tensor_autodiff as ad
from semsim.gradcheck import (TOLERANCE, check_gradients, random_pair, relative_error, run_gradcheck,
                              sample_coordinates, toy_setup)
from semsim.seq2seq_model import ModelConfig
from semsim.tensor_autodiff import Tensor

TOY_SHAPE = ModelConfig(encoder_layers=1, decoder_layers=1, d_model=8, heads=2, ffn_dim=16, max_positions=32)


def test_relative_error():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(3.0, 2.0) == 0.5
    assert relative_error(1e-3, 0.0) == pytest.approx(1e-3)


def test_check_gradients_on_quadratic(rng):
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True, name='w', dtype=np.float64)

    with ad.precision(64):
        report = check_gradients(lambda: ad.reduce_sum(ad.mul(w, w)), {'w': w}, samples_per_tensor=None)
    assert report.coordinates == 6
    assert report.passed(64), report


def test_check_gradients_detects_wrong_gradient(rng):
    w = Tensor(rng.normal(size=4) + 3.0, requires_grad=True, name='w', dtype=np.float64)

    # analytic d/dw is w while the true derivative is 2w
    with ad.precision(64):
        report = check_gradients(lambda: ad.reduce_sum(ad.mul(w, ad.detach(w))), {'w': w},
                                 samples_per_tensor=None)
    assert not report.passed(64)
    assert report.worst_param == 'w'


def test_check_gradients_restores_values(rng):
    w = Tensor(rng.normal(size=5), requires_grad=True, name='w', dtype=np.float32)
    before = w.values.copy()
    with ad.precision(32):
        check_gradients(lambda: ad.reduce_sum(ad.mul(w, w)), {'w': w})
    assert w.values.dtype == np.float32
    assert np.array_equal(w.values, before)


def test_random_pair_avoids_special_ids(rng):
    doc, ref = random_pair(50, rng, doc_len=6, ref_len=4)
    assert doc.ids[0] == 1 and doc.ids[-1] == 2 and len(doc) == 8
    assert min(ref.ids[1:-1]) >= 4 and len(ref) == 6


@pytest.mark.parametrize('precision', [64, 32])
def test_toy_model_gradients(precision):
    model, scorer = toy_setup(precision=precision, seed=0, vocab_size=24, base=TOY_SHAPE)
    reports = run_gradcheck(model, scorer, precision=precision, seed=0, samples_per_tensor=2)
    assert [r.loss for r in reports] == ['ml', 'composite']
    for report in reports:
        assert report.max_rel_error <= TOLERANCE[precision], report
        assert report.coordinates > 0
    assert 'decoder.positions' not in reports[0].zero_gradient


def test_composite_check_covers_frozen_scorer():
    model, scorer = toy_setup(precision=64, seed=1, vocab_size=24, base=TOY_SHAPE)
    composite = run_gradcheck(model, scorer, precision=64, seed=1, samples_per_tensor=1)[1]
    assert any(name.startswith('scorer.') for name in composite.per_param)
    assert 'scorer.head.W' in composite.per_param


def test_sampling_prefers_nonzero_gradients(rng):
    analytic = np.zeros(200)
    analytic[[12, 77]] = [0.5, -2.0]
    assert sample_coordinates(analytic, 2, rng).tolist() == [12, 77]
    picked = sample_coordinates(analytic, 5, rng)
    assert picked.size == 5 and {12, 77} <= set(picked.tolist())
    assert sample_coordinates(analytic, None, rng).size == 200
    assert sample_coordinates(np.zeros(3), 10, rng).tolist() == [0, 1, 2]


def test_sparse_embedding_rows_are_checked(rng):
    table = Tensor(rng.normal(size=(50, 4)), requires_grad=True, name='table', dtype=np.float64)
    ids = np.array([3, 7])
    with ad.precision(64):
        report = check_gradients(lambda: ad.reduce_sum(ad.mul(ad.embedding(table, ids), 2.0)), {'table': table},
                                 samples_per_tensor=2)
    assert report.zero_gradient == []
    assert report.coordinates == 2
    assert report.passed(64), report


def test_zero_gradient_tensors_are_listed(rng):
    used = Tensor(rng.normal(size=3), requires_grad=True, name='used', dtype=np.float64)
    unused = Tensor(rng.normal(size=3), requires_grad=True, name='unused', dtype=np.float64)
    with ad.precision(64):
        report = check_gradients(lambda: ad.add(ad.reduce_sum(ad.mul(used, used)), ad.reduce_sum(ad.mul(unused, 0.0))),
                                 {'used': used, 'unused': unused}, samples_per_tensor=2)
    assert report.zero_gradient == ['unused']
