"""Reverse-mode engine: primitive values, graph rules and finite-difference agreement"""
import threading

import numpy as np
import pytest

from conftest import random_ball_points
from src.core.autodiff import (
    FAIL,
    KINK,
    OK,
    PRIMITIVES,
    Graph,
    Tensor,
    acosh_safe,
    backward,
    check_gradients,
    concat,
    dot,
    forward,
    is_grad_enabled,
    log_softmax,
    no_grad,
    relative_error,
    segment_max,
    softmax,
    stack_rows,
)
from src.core.hypgeo import dist, exp0, hnorm, log0, mobius_add, mobius_matvec, project_to_ball
from src.exceptions import GeometryDomainError, GraphError, ShapeError


class TestForward:

    def test_add(self):
        out = forward("add", [Tensor([1.0, 2.0]), Tensor([3.0, 4.0])])
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_max_over_axis(self):
        out = Tensor([[1.0, 5.0], [3.0, 2.0]]).max(axis=0)
        np.testing.assert_array_equal(out.data, [3.0, 5.0])
        rows = Tensor([[1.0, 5.0], [3.0, 2.0]]).max(axis=1)
        np.testing.assert_array_equal(rows.data, [5.0, 3.0])

    def test_tanh_at_zero(self):
        x = Tensor(0.0, requires_grad=True)
        y = x.tanh()
        assert y.item() == 0.0
        backward(y)
        assert x.grad == pytest.approx(1.0)

    def test_unknown_primitive(self):
        with pytest.raises(ValueError):
            forward("no_such_op", [Tensor(1.0)])

    def test_registry_has_core_primitives(self):
        for tag in ("add", "mul", "matmul", "tanh", "atanh", "acosh", "relu", "max", "sum", "softmax", "norm"):
            assert tag in PRIMITIVES

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones(3)) + Tensor(np.ones(4))
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_atanh_domain(self):
        with pytest.raises(GeometryDomainError):
            Tensor([1.0]).atanh()
        with pytest.raises(GeometryDomainError):
            Tensor([np.nan]).atanh()

    def test_acosh_floor(self):
        np.testing.assert_allclose(acosh_safe(Tensor([0.5, 1.0])).data, np.arccosh(1.0 + 1e-15))

    def test_softmax_rows(self, rng):
        logits = rng.normal(size=(4, 5))
        np.testing.assert_allclose(softmax(logits).data.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.exp(log_softmax(logits).data), softmax(logits).data, atol=1e-12)

    def test_concat_and_stack(self):
        out = stack_rows([Tensor([1.0, 2.0]), Tensor([3.0, 4.0])])
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(concat([Tensor([1.0]), Tensor([2.0, 3.0])]).data, [1.0, 2.0, 3.0])

    def test_item_needs_single_value(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_segment_max_per_block(self, rng):
        a = rng.normal(size=(9, 4))
        out = segment_max(a, [2, 3, 4])
        np.testing.assert_array_equal(out.data, np.stack([a[:2].max(0), a[2:5].max(0), a[5:].max(0)]))

    def test_segment_max_sizes_must_cover_rows(self):
        with pytest.raises(ShapeError):
            segment_max(np.ones((5, 2)), [2, 2])
        with pytest.raises(ShapeError):
            segment_max(np.ones((4, 2)), [4, 0])
        with pytest.raises(ShapeError):
            segment_max(np.ones(4), [4])


class TestBackward:

    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_dot_self(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(dot(x, x).sum())
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_broadcast_gradient_is_reduced(self):
        w = Tensor(np.ones((3, 2)), requires_grad=True)
        b = Tensor(np.zeros(2), requires_grad=True)
        backward((w + b).sum())
        np.testing.assert_array_equal(b.grad, [3.0, 3.0])

    def test_shared_subexpression_accumulates(self):
        x = Tensor(3.0, requires_grad=True)
        y = x * x
        backward(y + y)
        assert x.grad == pytest.approx(12.0)

    def test_max_routes_to_first_argmax(self):
        x = Tensor([[1.0, 2.0], [1.0, 0.0]], requires_grad=True)
        backward(x.max(axis=0).sum())
        np.testing.assert_array_equal(x.grad, [[1.0, 1.0], [0.0, 0.0]])

    def test_segment_max_routes_to_first_argmax_per_block(self):
        x = Tensor([[1.0, 2.0], [1.0, 0.0], [5.0, 3.0], [4.0, 3.0]], requires_grad=True)
        backward((segment_max(x, [2, 2]) * np.array([[1.0, 2.0], [3.0, 4.0]])).sum())
        np.testing.assert_array_equal(x.grad, [[1.0, 2.0], [0.0, 0.0], [3.0, 4.0], [0.0, 0.0]])

    def test_relu_kink_has_zero_gradient(self):
        x = Tensor([0.0, 1.0, -1.0], requires_grad=True)
        backward(x.relu().sum())
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            backward(x * 2.0)

    def test_consumed_graph(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        backward(loss)
        with pytest.raises(GraphError):
            backward(loss)

    def test_constant_loss(self):
        with pytest.raises(GraphError):
            backward(Tensor(1.0))

    def test_graph_order_and_free(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * 3.0).sum()
        graph = Graph.from_root(loss)
        assert graph.nodes[0] is x
        assert graph.nodes[-1] is loss
        graph.free()
        assert loss.is_leaf

    def test_index_gradient(self):
        x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        backward(x[1:].sum())
        np.testing.assert_array_equal(x.grad, [[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])


class TestNoGrad:

    def test_disables_recording(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y.is_leaf
        assert is_grad_enabled()

    def test_thread_local(self):
        seen = {}

        def worker():
            seen["enabled"] = is_grad_enabled()

        with no_grad():
            t = threading.Thread(target=worker)
            t.start()
            t.join()
        assert seen["enabled"] is True


class TestGradientCheck:

    def test_sum_of_squares(self, rng):
        report = check_gradients(lambda t: (t * t).sum(), rng.normal(size=(3, 4)))
        assert report.passed
        assert report.max_abs_error < 1e-7

    def test_hinge_corner_is_kink(self):
        report = check_gradients(lambda t: t.relu().sum(), np.array([0.0, 2.0]))
        assert report.status[0] == KINK
        assert report.status[1] == OK
        assert report.kinks == 1

    def test_wrong_gradient_fails(self):
        # value depends on t only through a detached copy, so the recorded gradient is zero
        report = check_gradients(lambda t: (t.detach() * t.detach()).sum() + t.sum() * 0.0, np.array([2.0]))
        assert report.status == [FAIL]
        assert not report.passed

    def test_clamp_passes_gradient_inside_bounds(self):
        report = check_gradients(lambda t: t.clamp(hi=1.0).sum(), np.array([1.0 - 1e-3]))
        assert report.passed

    def test_relative_error_stays_relative_for_small_gradients(self):
        np.testing.assert_allclose(relative_error(np.array([1e-6]), np.array([1.001e-6])), 1e-3 / 1.001)
        assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0

    def test_small_gradient_with_wrong_digits_fails(self):
        # true slope 1e-3, recorded slope 0.999e-3
        report = check_gradients(lambda t: t.sum() * 0.999e-3 + (t.detach() * 1e-6).sum(), np.array([0.3]), tol=1e-4)
        assert report.status == [FAIL]
        assert report.rel_errors[0] == pytest.approx(1e-3, rel=1e-3)

    def test_gradient_below_resolution_passes_on_absolute_error(self):
        report = check_gradients(lambda t: t.sum() * 0.0 + (t.detach() * 1e-10).sum(), np.array([0.3]))
        assert report.passed
        assert report.max_abs_error < report.atol

    def test_segment_max(self, rng):
        x = rng.normal(size=(7, 3))
        report = check_gradients(lambda t: (segment_max(t, [3, 4]) * np.array([[1.0, -2.0, 0.5]])).sum(), x)
        assert report.passed, report.rel_errors

    def test_hnorm_of_projection(self, rng):
        x = random_ball_points(rng, 1, 5, max_frac=0.8)[0]
        report = check_gradients(lambda t: hnorm(project_to_ball(t)), x)
        assert report.passed
        assert report.max_rel_error < 1e-5

    @pytest.mark.parametrize("seed", range(10))
    def test_geometry_primitives(self, seed):
        rng = np.random.default_rng(seed)
        y = random_ball_points(rng, 1, 4, max_frac=0.7)[0]
        m = rng.normal(size=(3, 4))
        checks = [
            lambda t: dist(t, y),
            lambda t: mobius_add(t, y).sum(),
            lambda t: mobius_matvec(m, t).sum(),
            lambda t: log0(t).sum(),
            lambda t: exp0(t * 2.0).sum(),
        ]
        x = random_ball_points(rng, 1, 4, max_frac=0.7)[0]
        for f in checks:
            report = check_gradients(f, x, tol=1e-5)
            assert report.passed, report.rel_errors

    @pytest.mark.parametrize("seed", range(5))
    def test_elementwise_primitives(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.1, 0.9, size=5)
        for f in (
            lambda t: t.exp().sum(),
            lambda t: t.log().sum(),
            lambda t: t.sqrt().sum(),
            lambda t: t.atanh().sum(),
            lambda t: (t / (t + 1.0)).sum(),
            lambda t: acosh_safe(t + 1.5).sum(),
            lambda t: (softmax(t) * np.arange(5.0)).sum(),
            lambda t: log_softmax(t)[2],
            lambda t: (t.reshape(1, 5) @ Tensor(np.ones((5, 2)))).sum(),
        ):
            report = check_gradients(f, x)
            assert report.passed, report.rel_errors
