"""Embedding network: forward pass, triplet loss, backprop and checkpoints."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.exceptions import DegenerateLabelError, DimensionMismatchError, FormatError, NonFiniteError
from modules.embedding.models import DenseLayer, EmbeddingNet, TripletBatch
from modules.embedding.service import (
    SgdMomentum,
    backward,
    backward_apply,
    batch_loss,
    forward,
    forward_cached,
    init_network,
    select_triplets,
    triplet_batch_gradients,
    triplet_loss,
)
from modules.embedding.storage import (
    embed_with_checkpoint,
    load_checkpoint,
    network_from_bytes,
    network_to_bytes,
    save_checkpoint,
)


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


class TestForward:
    def test_identity_net(self, rng):
        net = EmbeddingNet([DenseLayer(np.eye(5), np.zeros(5), "identity")])
        x = rng.normal(size=(7, 5))
        assert_allclose(forward(net, x), x)

    def test_zero_relu_net(self, rng):
        net = EmbeddingNet([DenseLayer(np.zeros((3, 4)), np.zeros(4), "relu")])
        assert_array_equal(forward(net, rng.normal(size=(2, 3))), np.zeros((2, 4)))

    def test_two_layers_match_matrix_arithmetic(self, rng, tiny_net):
        x = rng.normal(size=(5, 6))
        l0, l1 = tiny_net.layers
        expected = np.maximum(x @ l0.weight + l0.bias, 0.0) @ l1.weight + l1.bias
        assert_allclose(forward(tiny_net, x), expected)

    def test_input_checks(self, tiny_net):
        with pytest.raises(DimensionMismatchError):
            forward(tiny_net, np.zeros((2, 5)))
        with pytest.raises(NonFiniteError):
            forward(tiny_net, np.full((1, 6), np.nan))

    def test_layers_must_chain(self):
        with pytest.raises(DimensionMismatchError):
            EmbeddingNet([DenseLayer(np.zeros((3, 4)), np.zeros(4)), DenseLayer(np.zeros((5, 2)), np.zeros(2))])


class TestTripletLoss:
    def test_inactive_hinge(self):
        a = np.array([0.0, 0.0])
        loss, ga, gp, gn = triplet_loss(a, a, np.array([3.0, 0.0]), margin=1.0)
        assert loss == 0.0
        for g in (ga, gp, gn):
            assert_array_equal(g, 0.0)

    def test_negative_on_anchor(self):
        a = np.array([1.0, 2.0])
        p = np.array([4.0, 6.0])
        loss, _, _, _ = triplet_loss(a, p, a, margin=0.5)
        assert loss == pytest.approx(0.5 + 5.0)

    def test_gradients_match_finite_differences(self, rng):
        h = 1e-3
        for _ in range(20):
            a, p, n = rng.normal(size=(3, 4))
            loss, ga, gp, gn = triplet_loss(a, p, n, margin=10.0)
            assert loss > 0
            for vec, grad in ((a, ga), (p, gp), (n, gn)):
                numeric = np.zeros(4)
                for j in range(4):
                    step = np.zeros(4)
                    step[j] = h
                    vec += step
                    up = triplet_loss(a, p, n, margin=10.0)[0]
                    vec -= 2 * step
                    down = triplet_loss(a, p, n, margin=10.0)[0]
                    vec += step
                    numeric[j] = (up - down) / (2 * h)
                assert relative_error(grad, numeric) < 1e-3

    def test_negative_margin(self):
        with pytest.raises(ValueError):
            triplet_loss(np.zeros(2), np.zeros(2), np.zeros(2), margin=-1.0)


class TestSelectTriplets:
    def test_two_by_two_subset_of_valid_triples(self, rng):
        y = rng.normal(size=(4, 3))
        labels = np.array([0, 0, 1, 1])
        batch = select_triplets(y, labels, per_anchor=3, strategy="random", seed=0)
        valid = {(a, p, n) for a in range(4) for p in range(4) for n in range(4)
                 if a != p and labels[a] == labels[p] and labels[a] != labels[n]}
        assert set(batch.as_tuples()) <= valid
        assert len(batch) == 4

    def test_random_is_reproducible(self, rng):
        y = rng.normal(size=(12, 3))
        labels = np.repeat([0, 1, 2], 4)
        a = select_triplets(y, labels, 2, "random", seed=9)
        b = select_triplets(y, labels, 2, "random", seed=9)
        assert_array_equal(a.triples, b.triples)

    def test_semi_hard_picks_in_window_negative(self):
        # anchor 0 at 0, positive 1 at 1; negatives at 0.5 (too hard), 1.5 (window), 5 (too easy)
        y = np.array([[0.0], [1.0], [0.5], [1.5], [5.0], [5.2]])
        labels = np.array([0, 0, 1, 1, 1, 1])
        batch = select_triplets(y, labels, per_anchor=1, strategy="semi_hard", seed=0, margin=1.0)
        assert batch.as_tuples()[0] == (0, 1, 3)

    def test_degenerate_labels(self, rng):
        with pytest.raises(DegenerateLabelError):
            select_triplets(rng.normal(size=(4, 2)), [0, 0, 0, 0])
        with pytest.raises(DegenerateLabelError):
            select_triplets(rng.normal(size=(3, 2)), [0, 0, 1])


def small_batch(rng, n_classes=3, per_class=3, in_dim=5):
    x = rng.normal(size=(n_classes * per_class, in_dim))
    labels = np.repeat(np.arange(n_classes), per_class)
    return x, labels


class TestBackwardApply:
    def test_parameter_gradients_match_finite_differences(self):
        """Analytic gradients of the batch loss on random nets, float64 central differences."""
        h = 1e-6
        for trial in range(50):
            rng = np.random.default_rng(100 + trial)
            net = init_network(5, (7,), 4, seed=trial)
            x, labels = small_batch(rng)
            batch = select_triplets(forward(net, x), labels, 2, "random", seed=trial, margin=10.0)

            y, cache = forward_cached(net, x)
            bundle = triplet_batch_gradients(y, batch)
            assert bundle.active == len(batch)
            analytic, _ = backward(net, cache, bundle.gradients)

            for param, grad in zip(net.parameters(), analytic):
                numeric = np.zeros_like(param)
                for idx in np.ndindex(param.shape):
                    old = param[idx]
                    param[idx] = old + h
                    up = batch_loss(net, x, batch)
                    param[idx] = old - h
                    down = batch_loss(net, x, batch)
                    param[idx] = old
                    numeric[idx] = (up - down) / (2 * h)
                # the output bias gradient is exactly zero: a common shift leaves every distance unchanged
                assert_allclose(grad, numeric, rtol=1e-6, atol=1e-7)

    def test_input_gradients_match_finite_differences(self, rng, tiny_net):
        x = rng.normal(size=(3, 6))
        w = rng.normal(size=(3, 4))
        _, cache = forward_cached(tiny_net, x)
        _, dx = backward(tiny_net, cache, w)
        h = 1e-6
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            step = np.zeros_like(x)
            step[idx] = h
            numeric[idx] = ((forward(tiny_net, x + step) * w).sum() - (forward(tiny_net, x - step) * w).sum()) / (2 * h)
        assert relative_error(dx, numeric) < 1e-6

    def test_zero_gradients_leave_parameters(self, rng, tiny_net):
        before = [p.copy() for p in tiny_net.parameters()]
        backward_apply(tiny_net, rng.normal(size=(4, 6)), np.zeros((4, 4)), lr=0.1)
        for b, p in zip(before, tiny_net.parameters()):
            assert_array_equal(b, p)

    def test_linear_layer_step_is_closed_form(self, rng):
        w0 = rng.normal(size=(3, 2))
        net = EmbeddingNet([DenseLayer(w0.copy(), np.zeros(2), "identity")])
        x = rng.normal(size=(4, 3))
        target = rng.normal(size=(4, 2))
        # E = 0.5 * ||xW - t||^2  ->  dE/dy = xW - t, dE/dW = x^T (xW - t)
        residual = x @ w0 - target
        backward_apply(net, x, residual, lr=0.05, momentum=0.0)
        assert_allclose(net.layers[0].weight, w0 - 0.05 * x.T @ residual)
        assert_allclose(net.layers[0].bias, -0.05 * residual.sum(axis=0))

    def test_momentum_accumulates(self, rng):
        net = EmbeddingNet([DenseLayer(np.zeros((1, 1)), np.zeros(1), "identity")])
        opt = SgdMomentum()
        for _ in range(2):
            backward_apply(net, np.ones((1, 1)), np.ones((1, 1)), lr=1.0, momentum=0.5, optimizer=opt)
        # v1 = -1, v2 = 0.5 * -1 - 1 = -1.5; w = -2.5
        assert_allclose(net.layers[0].weight, [[-2.5]])

    def test_non_finite_gradients(self, tiny_net):
        with pytest.raises(NonFiniteError):
            backward_apply(tiny_net, np.zeros((1, 6)), np.full((1, 4), np.inf), lr=0.1)

    def test_overflowing_step_leaves_network_untouched(self):
        net = EmbeddingNet([DenseLayer(np.full((1, 1), 1e308), np.zeros(1), "identity")])
        opt = SgdMomentum()
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            backward_apply(net, np.ones((1, 1)), np.full((1, 1), -1e308), lr=10.0, momentum=0.0, optimizer=opt)
        assert_array_equal(net.layers[0].weight, [[1e308]])
        assert_array_equal(net.layers[0].bias, [0.0])
        assert opt.velocities == []

    def test_argument_ranges(self, tiny_net):
        with pytest.raises(ValueError):
            backward_apply(tiny_net, np.zeros((1, 6)), np.zeros((1, 4)), lr=0.0)
        with pytest.raises(ValueError):
            backward_apply(tiny_net, np.zeros((1, 6)), np.zeros((1, 4)), lr=0.1, momentum=1.0)


class TestCheckpoint:
    def test_save_and_load(self, tmp_path, rng, tiny_net):
        path = save_checkpoint(tiny_net, tmp_path / "net.sqnn", {"seed": 3})
        net, meta = load_checkpoint(path)
        assert meta["seed"] == 3
        x = rng.normal(size=(4, 6))
        # parameters are stored as float32
        assert_allclose(forward(net, x), forward(tiny_net, x), rtol=1e-5, atol=1e-6)
        assert_array_equal(embed_with_checkpoint(x, path), forward(net, x).astype(np.float32))
        assert network_to_bytes(net) == network_to_bytes(tiny_net)

    def test_without_checkpoint_vectors_pass_through(self, rng):
        x = rng.normal(size=(3, 2)).astype(np.float32)
        assert_array_equal(embed_with_checkpoint(x, None), x)

    def test_truncated(self, tiny_net):
        with pytest.raises(FormatError):
            network_from_bytes(network_to_bytes(tiny_net)[:-5])

    def test_triplet_batch_margin(self):
        with pytest.raises(ValueError):
            TripletBatch(triples=[[0, 1, 2]], margin=-0.1)
