import numpy as np
import pytest

from relex import autodiff as ad
from relex import scorer
from oracles import biaffine_reference, logsumexp_reference


def make_params(d=8, n_rel=4, n_ner=5, seed=0, dtype=np.float64):
    return scorer.init_scorer_params(d, n_rel, n_ner, np.random.default_rng(seed),
                                     dtype=dtype)


def test_mlp_identity_configuration_passes_through():
    params = make_params(d=4)
    for role in ("head", "tail"):
        params[f"score.{role}.w0"].data[:] = np.eye(4)
        params[f"score.{role}.w1"].data[:] = np.eye(4)
        params[f"score.{role}.b0"].data[:] = 0
        params[f"score.{role}.b1"].data[:] = 0
    states = ad.Tensor(np.abs(np.random.default_rng(1).normal(size=(3, 4))))
    e_head, e_tail = scorer.project_head_tail(states, params)
    np.testing.assert_array_equal(e_head.data, states.data)
    np.testing.assert_array_equal(e_tail.data, states.data)


def test_head_and_tail_projections_differ():
    params = make_params()
    states = ad.Tensor(np.random.default_rng(2).normal(size=(3, 8)))
    e_head, e_tail = scorer.project_head_tail(states, params)
    assert not np.allclose(e_head.data, e_tail.data)


def test_projection_grad_check():
    params = make_params()
    states = ad.Tensor(np.random.default_rng(3).normal(size=(3, 8)), requires_grad=True)
    w = np.random.default_rng(4).normal(size=(3, 8))

    def loss():
        e_head, e_tail = scorer.project_head_tail(states, params)
        return ad.add(ad.tsum(ad.mul(e_head, w)), ad.tsum(ad.mul(e_tail, w)))

    tensors = [t for n, t in params.items() if n.startswith(("score.head", "score.tail"))]
    err = ad.grad_check(loss, tensors + [states], max_coords=6,
                        rng=np.random.default_rng(5))
    assert err < 1e-4


def test_biaffine_identity_slice_is_dot_product():
    d, n = 4, 3
    rng = np.random.default_rng(6)
    e_head = ad.Tensor(rng.normal(size=(n, d)))
    e_tail = ad.Tensor(rng.normal(size=(n, d)))
    rel = np.zeros((d, 2, d))
    rel[:, 0, :] = np.eye(d)
    A = scorer.biaffine_scores(e_head, e_tail, ad.Tensor(rel))
    np.testing.assert_allclose(A.data[:, 0, :], e_head.data @ e_tail.data.T,
                               rtol=1e-12)
    np.testing.assert_allclose(A.data[:, 1, :], 0.0, atol=1e-12)


def test_biaffine_shape_n7_l13():
    rng = np.random.default_rng(7)
    A = scorer.biaffine_scores(ad.Tensor(rng.normal(size=(7, 16))),
                               ad.Tensor(rng.normal(size=(7, 16))),
                               ad.Tensor(rng.normal(size=(16, 13, 16)) * 0.1))
    assert A.shape == (7, 13, 7)


def test_biaffine_matches_triple_loop_oracle():
    rng = np.random.default_rng(8)
    for n, d, n_rel in [(2, 3, 2), (5, 4, 3), (10, 3, 5)]:
        e_head = rng.normal(size=(n, d))
        e_tail = rng.normal(size=(n, d))
        rel = rng.normal(size=(d, n_rel, d))
        A = scorer.biaffine_scores(ad.Tensor(e_head), ad.Tensor(e_tail),
                                   ad.Tensor(rel))
        np.testing.assert_allclose(A.data, biaffine_reference(e_head, e_tail, rel),
                                    atol=1e-5, rtol=1e-8)


def test_biaffine_width_mismatch_rejected():
    with pytest.raises(ValueError, match="width mismatch"):
        scorer.biaffine_scores(ad.Tensor(np.zeros((2, 4))),
                               ad.Tensor(np.zeros((2, 4))),
                               ad.Tensor(np.zeros((5, 3, 5))))


def test_pool_single_cell_is_identity():
    A = ad.Tensor(np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2))
    pooled = scorer.pool_entity_pair(A, [1], [0])
    np.testing.assert_allclose(pooled.data, A.data[1, :, 0])


def test_pool_two_cells_matches_direct_evaluation():
    rng = np.random.default_rng(9)
    A = ad.Tensor(rng.normal(size=(4, 3, 4)))
    pooled = scorer.pool_entity_pair(A, [0], [1, 3])
    for l in range(3):
        expected = logsumexp_reference([A.data[0, l, 1], A.data[0, l, 3]])
        assert pooled.data[l] == pytest.approx(expected, abs=1e-12)


def test_pool_mention_order_is_bit_stable():
    rng = np.random.default_rng(10)
    A = ad.Tensor(rng.normal(size=(6, 4, 6)))
    a = scorer.pool_entity_pair(A, [4, 0, 2], [5, 1]).data
    b = scorer.pool_entity_pair(A, [2, 4, 0], [1, 5]).data
    assert np.array_equal(a, b)


def test_pool_empty_mention_set_rejected():
    A = ad.Tensor(np.zeros((3, 2, 3)))
    with pytest.raises(ValueError, match="no mention tokens"):
        scorer.pool_entity_pair(A, [], [1])


def test_pool_bounds_property():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n, n_rel = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        A = rng.normal(size=(n, n_rel, n)) * 3
        heads = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        tails = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        pooled = scorer.pool_entity_pair(ad.Tensor(A), heads, tails).data
        cells = A[np.ix_(heads, range(n_rel), tails)]
        for l in range(n_rel):
            mx = cells[:, l, :].max()
            count = cells[:, l, :].size
            assert mx <= pooled[l] + 1e-12
            assert pooled[l] <= mx + np.log(count) + 1e-12


def test_pool_monotone_in_cells():
    rng = np.random.default_rng(12)
    A = rng.normal(size=(4, 2, 4))
    base = scorer.pool_entity_pair(ad.Tensor(A), [0, 1], [2, 3]).data.copy()
    A2 = A.copy()
    A2[1, 0, 3] += 0.5  # a contributing cell
    bumped = scorer.pool_entity_pair(ad.Tensor(A2), [0, 1], [2, 3]).data
    assert bumped[0] > base[0]
    assert bumped[1] == base[1]


def test_pool_gradient_is_softmax_over_cells():
    rng = np.random.default_rng(13)
    A = ad.Tensor(rng.normal(size=(5, 3, 5)), requires_grad=True)
    heads, tails = [0, 2], [1, 4]
    pooled = scorer.pool_entity_pair(A, heads, tails)
    ad.backward(ad.tsum(ad.mul(pooled, np.array([1.0, 0.0, 0.0]))))
    cells = A.data[np.ix_(heads, [0], tails)].reshape(-1)
    soft = np.exp(cells - cells.max())
    soft /= soft.sum()
    got = A.grad[np.ix_(heads, [0], tails)].reshape(-1)
    np.testing.assert_allclose(got, soft, rtol=1e-10)
    assert A.grad[:, 1:, :].sum() == 0.0  # other relations untouched


def test_ner_logits_zero_weights_uniform():
    params = make_params(d=6, n_ner=7)
    params["score.ner"].data[:] = 0
    states = ad.Tensor(np.random.default_rng(14).normal(size=(4, 6)))
    logits = scorer.ner_logits(states, params)
    np.testing.assert_array_equal(logits.data, np.zeros((4, 7)))
    probs = ad.softmax(logits, axis=1)
    np.testing.assert_allclose(probs.data, np.full((4, 7), 1 / 7))


def test_ner_logits_shape_bio_classes():
    # 2 entity types -> 2*2+1 BIO classes
    params = make_params(d=6, n_ner=5)
    states = ad.Tensor(np.random.default_rng(15).normal(size=(9, 6)))
    assert scorer.ner_logits(states, params).shape == (9, 5)


# ---------------------------------------------------------------------------
# prediction dump


def test_prediction_dump_round_trip(tmp_path):
    labels = ["NULL", "binds", "causes"]
    preds = [
        scorer.PairPrediction.from_scores("d1", "C1", "D1", labels,
                                          np.array([0.1, 2.0, -1.0])),
        scorer.PairPrediction.from_scores("d1", "C2", "D1", labels,
                                          np.array([1.5, 0.0, 0.5])),
    ]
    path = tmp_path / "preds.tsv"
    scorer.write_predictions(path, preds)
    loaded = scorer.read_predictions(path)
    assert {p.key for p in loaded} == {p.key for p in preds}
    by_key = {p.key: p for p in loaded}
    for p in preds:
        assert by_key[p.key].probs == pytest.approx(p.probs)
        assert by_key[p.key].scores == pytest.approx(p.scores)
    # probabilities normalize
    for p in preds:
        assert sum(p.probs.values()) == pytest.approx(1.0)
