"""Loss values against scalar oracles, plus gradient and invariance properties."""

import math

import mpmath as mp
import numpy as np
import pytest

from caco import autodiff as ad
from caco.autodiff import Tape, Tensor, backward, finite_diff_grad
from caco.dictionary import CategoricalDictionary
from caco.errors import ContractError, DimensionError, NotWarmError, ParameterError
from caco.labels import SOURCE, CategoryLabel
from caco.losses import (
    cat_nce,
    info_nce,
    key_temperature,
    prediction_entropy,
    supervised_loss,
)

from conftest import random_labels, random_warm_dictionary, unit_rows

mp.mp.dps = 40


def catnce_scalar_oracle(queries, label_indices, dictionary):
    """Independent double loop over slots and categories at 40-digit precision."""
    total = mp.mpf(0)
    for q, lab in zip(queries, label_indices):
        per_query = mp.mpf(0)
        for m in range(1, dictionary.capacity + 1):
            num = mp.mpf(0)
            den = mp.mpf(0)
            for c, key in enumerate(dictionary.group(m), start=1):
                dot = mp.fsum(mp.mpf(a) * mp.mpf(b) for a, b in zip(q, key.vector))
                e = mp.e ** (dot / mp.mpf(key.temperature))
                den += e
                if c == lab:
                    num += e
            per_query += -mp.log(num / den)
        total += per_query / dictionary.capacity
    return float(total / len(label_indices))


# ---------------------------------------------------------------------------
# supervised_loss
# ---------------------------------------------------------------------------


def test_supervised_loss_vanishes_with_huge_margin():
    logits = np.full((3, 4), -100.0)
    labels = [CategoryLabel.of(i + 1, 4) for i in range(3)]
    for i, lab in enumerate(labels):
        logits[i, lab.index - 1] = 100.0
    loss = supervised_loss(Tensor(logits), labels)
    assert loss.item() < 1e-12


def test_supervised_loss_uniform_logits():
    labels = [CategoryLabel.of(2, 4), CategoryLabel.of(4, 4)]
    loss = supervised_loss(Tensor(np.ones((2, 4)) * 0.3), labels)
    assert abs(loss.item() - math.log(4.0)) <= 1e-12


def test_supervised_loss_scalar_oracle():
    # two samples, two classes, loss = mean of -log softmax picked entries
    logits = np.array([[1.0, -0.5], [0.25, 2.0]])
    labels = [CategoryLabel.of(1, 2), CategoryLabel.of(2, 2)]
    expected = 0.0
    for row, lab in zip(logits, labels):
        den = mp.e ** mp.mpf(row[0]) + mp.e ** mp.mpf(row[1])
        expected += float(-mp.log(mp.e ** mp.mpf(row[lab.index - 1]) / den))
    expected /= 2.0
    loss = supervised_loss(Tensor(logits), labels)
    assert abs(loss.item() - expected) <= 1e-12
    assert loss.batch_size == 2


def test_supervised_loss_batch_mismatch():
    with pytest.raises(DimensionError):
        supervised_loss(Tensor(np.zeros((2, 3))), [CategoryLabel.of(1, 3)])


# ---------------------------------------------------------------------------
# info_nce
# ---------------------------------------------------------------------------


def test_info_nce_symmetric_pair_is_log2():
    q = Tensor([1.0, 0.0])
    keys = Tensor([[0.0, 1.0], [0.0, -1.0]])  # equal dot products with q
    loss = info_nce(q, keys, np.array([1, 0]), 0.07)
    assert abs(loss.item() - math.log(2.0)) <= 1e-12


def test_info_nce_all_positive_is_zero():
    rng = np.random.default_rng(0)
    keys = unit_rows(rng, 5, 3)
    q = unit_rows(rng, 1, 3)[0]
    loss = info_nce(Tensor(q), Tensor(keys), np.ones(5), 0.07)
    assert loss.item() == 0.0


def test_info_nce_frozen_scalar_value():
    # frozen from -log(exp(1/0.07) / (exp(1/0.07) + 1)) at 50-digit precision;
    # the tolerance covers absorption of the tiny loss into logits of size ~14
    q = Tensor([1.0, 0.0])
    keys = Tensor([[1.0, 0.0], [0.0, 1.0]])
    loss = info_nce(q, keys, np.array([1, 0]), 0.07)
    assert abs(loss.item() - 6.248747557120382e-07) <= 1e-12


def test_info_nce_rejects_empty_mask_and_bad_tau():
    q = Tensor([1.0, 0.0])
    keys = Tensor(np.eye(2))
    with pytest.raises(ContractError):
        info_nce(q, keys, np.zeros(2), 0.07)
    with pytest.raises(ParameterError):
        info_nce(q, keys, np.array([1, 0]), -1.0)


# ---------------------------------------------------------------------------
# prediction_entropy / key_temperature
# ---------------------------------------------------------------------------


def test_entropy_one_hot_is_zero():
    assert prediction_entropy(np.array([0.0, 1.0, 0.0])) == 0.0


def test_entropy_uniform_is_log_c():
    for c in (2, 3, 7):
        assert abs(prediction_entropy(np.full(c, 1.0 / c)) - math.log(c)) <= 1e-12


def test_entropy_direct_summation():
    # frozen from -(0.75 log 0.75 + 0.25 log 0.25) at 50-digit precision
    assert abs(prediction_entropy(np.array([0.75, 0.25])) - 0.5623351446188084) <= 1e-15


def test_entropy_off_simplex_rejected():
    with pytest.raises(ContractError):
        prediction_entropy(np.array([0.9, 0.2]))


def test_key_temperature_range():
    assert key_temperature(0.07, 0.0, 4) == 0.07
    assert abs(key_temperature(0.07, math.log(4.0), 4) - 0.14) <= 1e-15
    assert abs(key_temperature(0.07, 0.5 * math.log(4.0), 4) - 0.105) <= 1e-15
    rng = np.random.default_rng(1)
    for _ in range(50):
        c = int(rng.integers(2, 9))
        h = float(rng.uniform(0.0, math.log(c)))
        t = key_temperature(0.07, h, c)
        assert 0.07 <= t <= 0.14 + 1e-15


def test_key_temperature_validation():
    with pytest.raises(ParameterError):
        key_temperature(0.07, 1.0, 1)
    with pytest.raises(ParameterError):
        key_temperature(0.07, math.log(2.0) + 1e-3, 2)


# ---------------------------------------------------------------------------
# cat_nce
# ---------------------------------------------------------------------------


def test_cat_nce_single_category_is_zero():
    rng = np.random.default_rng(2)
    d = random_warm_dictionary(rng, 1, 3, 4)
    queries = Tensor(unit_rows(rng, 2, 4))
    labels = [CategoryLabel.of(1, 1), CategoryLabel.of(1, 1)]
    assert cat_nce(queries, labels, d).item() == 0.0


def test_cat_nce_two_way_symmetric_is_log2():
    d = CategoricalDictionary(2, 1)
    d.enqueue(np.array([0.0, 1.0]), 1, 0.07, SOURCE)
    d.enqueue(np.array([0.0, -1.0]), 2, 0.07, SOURCE)
    queries = Tensor(np.array([[1.0, 0.0]]))
    loss = cat_nce(queries, [CategoryLabel.of(1, 2)], d)
    assert abs(loss.item() - math.log(2.0)) <= 1e-12


def test_cat_nce_matches_scalar_double_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        d = random_warm_dictionary(rng, 3, 2, 5)
        queries = unit_rows(rng, 3, 5)
        labels = random_labels(rng, 3, 3)
        got = cat_nce(Tensor(queries), labels, d).item()
        want = catnce_scalar_oracle(queries, [lab.index for lab in labels], d)
        assert abs(got - want) <= 1e-10


def test_cat_nce_requires_warm_dictionary():
    d = CategoricalDictionary(2, 2)
    d.enqueue(np.array([1.0, 0.0]), 1, 0.07, SOURCE)
    with pytest.raises(NotWarmError):
        cat_nce(Tensor(np.eye(2)[:1]), [CategoryLabel.of(1, 2)], d)


def test_cat_nce_reduces_to_info_nce():
    # one instance per category, single slot, uniform temperature
    rng = np.random.default_rng(4)
    for _ in range(100):
        n_keys = int(rng.integers(2, 8))
        dim = int(rng.integers(2, 6))
        tau = float(rng.uniform(0.05, 0.5))
        keys = unit_rows(rng, n_keys, dim)
        q = unit_rows(rng, 1, dim)[0]
        pos = int(rng.integers(0, n_keys))

        d = CategoricalDictionary(n_keys, 1)
        for c in range(n_keys):
            d.enqueue(keys[c], c + 1, tau, SOURCE)
        catted = cat_nce(
            Tensor(q[None, :]), [CategoryLabel.of(pos + 1, n_keys)], d
        ).item()
        mask = np.zeros(n_keys)
        mask[pos] = 1.0
        instanced = info_nce(Tensor(q), Tensor(keys), mask, tau).item()
        assert abs(catted - instanced) <= 1e-10


def test_cat_nce_permutation_invariance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        C, M, dim, B = 3, 4, 5, 2
        groups = [
            [(unit_rows(rng, 1, dim)[0], float(rng.uniform(0.07, 0.14))) for _ in range(C)]
            for _ in range(M)
        ]
        queries = unit_rows(rng, B, dim)
        labels = random_labels(rng, B, C)

        def build(cat_perm, slot_order):
            # old category c is renamed cat_perm[c-1]; groups enqueue in any order
            d = CategoricalDictionary(C, M)
            for m in slot_order:
                for c in range(1, C + 1):
                    vec, tau = groups[m][c - 1]
                    d.enqueue(vec, int(cat_perm[c - 1]), tau, SOURCE)
            return d

        # relabel categories by a permutation and shuffle group insertion order;
        # queries' labels are renamed consistently
        perm = rng.permutation(C) + 1
        slot_order = list(rng.permutation(M))
        base = cat_nce(Tensor(queries), labels, build(list(range(1, C + 1)), list(range(M))))
        renamed = [CategoryLabel.of(int(perm[lab.index - 1]), C) for lab in labels]
        mixed = cat_nce(Tensor(queries), renamed, build(list(perm), slot_order))
        assert abs(base.item() - mixed.item()) <= 1e-12


def test_cat_nce_monotone_in_positive_similarity():
    # rotating the positive key toward the query raises its dot product and
    # must never raise the loss; all other dot products stay fixed
    rng = np.random.default_rng(6)
    for _ in range(20):
        C, M, dim = 4, 2, 6
        q = unit_rows(rng, 1, dim)[0]
        labels = [CategoryLabel.of(int(rng.integers(1, C + 1)), C)]
        entries = []
        for m in range(M):
            row = []
            for c in range(1, C + 1):
                vec = unit_rows(rng, 1, dim)[0]
                row.append([vec, float(rng.uniform(0.07, 0.14))])
            entries.append(row)

        def loss_for(entries):
            d = CategoricalDictionary(C, M)
            for row in entries:
                for c, (vec, tau) in enumerate(row, start=1):
                    d.enqueue(vec, c, tau, SOURCE)
            return cat_nce(Tensor(q[None, :]), labels, d).item()

        pos = labels[0].index - 1
        prev = loss_for(entries)
        for step in range(3):
            # move the slot-0 positive key along the geodesic toward q
            vec = entries[0][pos][0]
            moved = vec + 0.35 * (q - vec)
            moved /= np.linalg.norm(moved)
            if moved @ q <= vec @ q:
                break
            entries[0][pos][0] = moved
            curr = loss_for(entries)
            assert curr <= prev + 1e-12
            prev = curr


def test_cat_nce_gradients_reach_queries_only():
    rng = np.random.default_rng(7)
    d = random_warm_dictionary(rng, 3, 2, 4)
    queries = Tensor(unit_rows(rng, 2, 4), requires_grad=True)
    labels = random_labels(rng, 2, 3)
    with Tape() as tape:
        loss = cat_nce(queries, labels, d)
    grads = backward(loss.value, tape)
    assert set(grads) == {queries.id}


def test_cat_nce_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    for _ in range(50):
        C = int(rng.integers(2, 5))
        M = int(rng.integers(1, 4))
        dim = int(rng.integers(3, 7))
        B = int(rng.integers(1, 4))
        d = random_warm_dictionary(rng, C, M, dim)
        q0 = unit_rows(rng, B, dim)
        labels = random_labels(rng, B, C)

        queries = Tensor(q0, requires_grad=True)
        with Tape() as tape:
            loss = cat_nce(queries, labels, d)
        analytic = backward(loss.value, tape)[queries.id].data

        fd = finite_diff_grad(
            lambda flat: cat_nce(Tensor(flat.reshape(B, dim)), labels, d).item(),
            q0,
            1e-5,
        ).data
        denom = max(1.0, np.abs(analytic).max(), np.abs(fd).max())
        assert np.abs(analytic - fd).max() / denom <= 1e-4


def test_losses_finite_and_non_negative():
    rng = np.random.default_rng(10)
    for _ in range(30):
        batch, num_cat = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        logits = Tensor(rng.normal(scale=3.0, size=(batch, num_cat)))
        labels = random_labels(rng, batch, num_cat)
        sup = supervised_loss(logits, labels).item()
        assert np.isfinite(sup) and sup >= 0.0

        dim = int(rng.integers(2, 6))
        keys = unit_rows(rng, num_cat, dim)
        q = unit_rows(rng, 1, dim)[0]
        mask = np.zeros(num_cat)
        mask[rng.integers(0, num_cat)] = 1
        inst = info_nce(Tensor(q), Tensor(keys), mask, 0.07).item()
        assert np.isfinite(inst) and inst >= 0.0

        d = random_warm_dictionary(rng, num_cat, 2, dim)
        cat = cat_nce(Tensor(unit_rows(rng, batch, dim)), labels, d).item()
        assert np.isfinite(cat) and cat >= 0.0


def test_backward_cat_nce_small_instance_matches_finite_differences():
    # 2 categories, capacity 2: the loss example pinned for the tape itself
    rng = np.random.default_rng(9)
    d = random_warm_dictionary(rng, 2, 2, 3)
    q0 = unit_rows(rng, 1, 3)
    labels = random_labels(rng, 1, 2)
    queries = Tensor(q0, requires_grad=True)
    with Tape() as tape:
        loss = cat_nce(queries, labels, d)
    analytic = backward(loss.value, tape)[queries.id].data
    fd = finite_diff_grad(
        lambda flat: cat_nce(Tensor(flat.reshape(1, 3)), labels, d).item(), q0, 1e-5
    ).data
    denom = max(1.0, np.abs(analytic).max(), np.abs(fd).max())
    assert np.abs(analytic - fd).max() / denom <= 1e-4
