"""Gradient engine tests: hand cases, finite-difference sweeps, determinism."""

import numpy as np
import pytest

from intentrec import autodiff as ad
from intentrec.errors import GraphUsageError, ShapeError, ValidationError


def fd_grad(loss_fn, tensor, h=1e-6):
    """Central finite differences of a scalar loss_fn() w.r.t. tensor.values."""
    flat = tensor.values.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn().item()
        flat[i] = orig - h
        down = loss_fn().item()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return out.reshape(tensor.values.shape)


class TestForwardOps:
    def test_matmul_identity(self):
        a = ad.constant(np.arange(12.0).reshape(3, 4))
        eye = ad.constant(np.eye(3))
        np.testing.assert_array_equal(ad.matmul(eye, a).values, a.values)

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(ad.constant([0.0])).values[0] == 0.5

    def test_masked_softmax(self):
        out = ad.softmax_last(ad.constant([0.0, 0.0, ad.MASK_NEG])).values
        np.testing.assert_array_equal(out, [0.5, 0.5, 0.0])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = ad.constant(rng.normal(size=(4, 7)))
        np.testing.assert_allclose(ad.softmax_last(x).values.sum(axis=-1), 1.0, atol=1e-15)

    def test_shape_mismatch_names_both_shapes(self):
        a = ad.constant(np.zeros((2, 3)))
        b = ad.constant(np.zeros((3, 2)))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
            ad.add(a, b)

    def test_matmul_shape_rule(self):
        with pytest.raises(ShapeError):
            ad.matmul(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros((2, 3))))

    def test_embedding_range_check(self):
        table = ad.constant(np.zeros((3, 2)))
        with pytest.raises(ValidationError, match="out of range"):
            ad.embedding(table, np.array([0, 3]))


class TestBackwardHandCases:
    def test_product_rule(self):
        x = ad.parameter(np.array([2.0]), "x")
        y = ad.parameter(np.array([3.0]), "y")
        grads = ad.backward(ad.mean_all(ad.mul(x, y)), {"x": x, "y": y})
        assert grads["x"][0] == 3.0
        assert grads["y"][0] == 2.0

    def test_sigmoid_derivative_at_zero(self):
        x = ad.parameter(np.array([0.0]), "x")
        grads = ad.backward(ad.mean_all(ad.sigmoid(x)), {"x": x})
        assert grads["x"][0] == 0.25

    def test_unreachable_parameter_gets_exact_zero(self):
        x = ad.parameter(np.array([1.0, 2.0]), "x")
        unused = ad.parameter(np.array([[5.0]]), "unused")
        grads = ad.backward(ad.mean_all(ad.mul(x, x)), {"x": x, "unused": unused})
        assert grads["unused"].shape == (1, 1)
        assert np.all(grads["unused"] == 0.0)

    def test_backward_without_forward_is_usage_error(self):
        with pytest.raises(GraphUsageError):
            ad.backward(ad.constant([1.0]), {})

    def test_backward_requires_scalar(self):
        x = ad.parameter(np.ones(3), "x")
        with pytest.raises(GraphUsageError):
            ad.backward(ad.mul(x, x), {"x": x})

    def test_linearity_of_backward(self):
        # disjoint graphs below the sum: equality is exact (addition commutes)
        x = ad.parameter(np.array([0.3, -1.2, 0.7]), "x")

        def l1():
            return ad.mean_all(ad.mul(x, x))

        def l2():
            return ad.mean_all(ad.sigmoid(x))

        g1 = ad.backward(l1(), {"x": x})["x"]
        g2 = ad.backward(l2(), {"x": x})["x"]
        g12 = ad.backward(ad.add(l1(), l2()), {"x": x})["x"]
        np.testing.assert_array_equal(g12, g1 + g2)

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(7)
        w = ad.parameter(rng.normal(size=(4, 4)), "w")
        x = ad.constant(rng.normal(size=(4, 4)))

        def run():
            loss = ad.mean_all(ad.sigmoid(ad.matmul(x, w)))
            return loss.item(), ad.backward(loss, {"w": w})["w"]

        v1, g1 = run()
        v2, g2 = run()
        assert v1 == v2
        np.testing.assert_array_equal(g1, g2)


def _random_inputs(rng, shapes, away_from_kinks=False):
    arrs = []
    for s in shapes:
        a = rng.normal(size=s)
        if away_from_kinks:
            a = a + 0.2 * np.sign(a) + (a == 0) * 0.2
        arrs.append(a)
    return arrs


# (op builder, input shape factory, kink-sensitive)
def _op_cases(rng):
    b, m, k, n = (int(rng.integers(1, 4)) for _ in range(4))
    d = int(rng.integers(2, 6))
    t = int(rng.integers(2, 5))
    return [
        (lambda a, c: ad.add(a, c), [(m, n), (m, n)], False),
        (lambda a, c: ad.sub(a, c), [(m, n), (m, n)], False),
        (lambda a, c: ad.mul(a, c), [(m, n), (m, n)], False),
        (lambda a: ad.scale(a, -1.7), [(m, n)], False),
        (lambda a, c: ad.matmul(a, c), [(m, k), (k, n)], False),
        (lambda a, c: ad.bmm(a, c), [(b, m, k), (b, k, n)], False),
        (lambda a: ad.transpose(a), [(m, n)], False),
        (lambda a: ad.swap_last(a), [(b, m, n)], False),
        (lambda a: ad.reshape(a, (n, m)), [(m, n)], False),
        (lambda a, c: ad.concat([a, c], axis=1), [(m, n), (m, n + 1)], False),
        (lambda a: ad.take(a, t - 1, 1), [(b, t, d)], False),
        (lambda a: ad.mean_axis(a, 1), [(b, t, d)], False),
        (lambda a: ad.sigmoid(a), [(m, n)], False),
        (lambda a: ad.relu(a), [(m, n)], True),
        (lambda a: ad.softmax_last(a), [(b, t, t)], False),
        (lambda a, g, c: ad.layer_norm(a, g, c), [(b, t, d), (d,), (d,)], False),
        (lambda a, c: ad.add_bias(a, c), [(m, n), (n,)], False),
        (lambda a: ad.clamp(a, -0.9, 0.9), [(m, n)], True),
    ]


def test_every_op_matches_finite_differences():
    """Property sweep: >=100 random (op, shape, seed) draws, rel err < 1e-6."""
    checked = 0
    for seed in range(8):
        rng = np.random.default_rng(seed)
        for build, shapes, kinky in _op_cases(rng):
            arrs = _random_inputs(rng, shapes, away_from_kinks=kinky)
            tensors = [ad.parameter(a.copy(), f"p{i}") for i, a in enumerate(arrs)]
            coeff = rng.normal(size=build(*tensors).shape)

            def loss_fn():
                return ad.mean_all(ad.mul(build(*tensors), ad.constant(coeff)))

            params = {t.name: t for t in tensors}
            analytic = ad.backward(loss_fn(), params)
            for t in tensors:
                num = fd_grad(loss_fn, t)
                err = ad.rel_error(analytic[t.name].reshape(-1), num.reshape(-1))
                assert err < 1e-6, f"seed={seed} op={build} param={t.name} err={err:.2e}"
                checked += 1
    assert checked >= 100


class TestLogAndEmbedding:
    def test_log_gradient(self):
        rng = np.random.default_rng(3)
        x = ad.parameter(rng.uniform(0.2, 2.0, size=(3, 4)), "x")
        coeff = rng.normal(size=(3, 4))

        def loss_fn():
            return ad.mean_all(ad.mul(ad.log(x), ad.constant(coeff)))

        analytic = ad.backward(loss_fn(), {"x": x})["x"]
        np.testing.assert_allclose(analytic, fd_grad(loss_fn, x), rtol=1e-6, atol=1e-9)

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValidationError):
            ad.log(ad.constant([0.0, 1.0]))

    def test_embedding_gradient_accumulates_repeats(self):
        rng = np.random.default_rng(4)
        table = ad.parameter(rng.normal(size=(5, 3)), "table")
        ids = np.array([[0, 2, 2], [4, 0, 2]])
        coeff = rng.normal(size=(2, 3, 3))

        def loss_fn():
            return ad.mean_all(ad.mul(ad.embedding(table, ids), ad.constant(coeff)))

        analytic = ad.backward(loss_fn(), {"table": table})["table"]
        np.testing.assert_allclose(analytic, fd_grad(loss_fn, table), rtol=1e-6, atol=1e-10)


class TestStopGradient:
    def test_blocks_flow_exactly(self):
        x = ad.parameter(np.array([1.5, -0.5]), "x")
        loss = ad.mean_all(ad.mul(ad.stop_gradient(x), x))
        grads = ad.backward(loss, {"x": x})
        # d/dx of const*x is const/n, not 2x/n
        np.testing.assert_array_equal(grads["x"], x.values / 2.0)

    def test_no_grad_mode_records_nothing(self):
        x = ad.parameter(np.ones(2), "x")
        with ad.no_grad():
            y = ad.mul(x, x)
        assert y.parents == () and y.backward_fn is None


class TestFiniteDiffChecker:
    def test_linear_model_quadratic_loss_is_exact(self):
        rng = np.random.default_rng(11)
        w = ad.parameter(rng.normal(size=(4, 1)), "w")
        x = ad.constant(rng.normal(size=(16, 4)))
        y = ad.constant(rng.normal(size=(16, 1)))

        def loss_fn():
            r = ad.sub(ad.matmul(x, w), y)
            return ad.mean_all(ad.mul(r, r))

        report = ad.finite_diff_check(loss_fn, {"w": w}, tolerance=1e-8)
        assert report.passed, report.format()
        assert report.max_rel_err < 1e-8

    def test_corrupted_gradient_is_caught(self):
        w = ad.parameter(np.array([0.3, 0.9]), "w")

        def loss_fn():
            return ad.mean_all(ad.mul(w, w))

        report = ad.finite_diff_check(loss_fn, {"w": w}, tolerance=1e-4, inject_error=0.1)
        assert not report.passed

    def test_report_lists_every_parameter(self):
        w = ad.parameter(np.ones(2), "w")
        b = ad.parameter(np.ones(1), "b")

        def loss_fn():
            return ad.mean_all(ad.concat([ad.mul(w, w), b], axis=0))

        report = ad.finite_diff_check(loss_fn, {"w": w, "b": b})
        assert {name for name, _ in report.entries} == {"w", "b"}
        assert "PASS" in report.format()

    def test_parameter_budget_enforced(self):
        w = ad.parameter(np.zeros(10_001), "w")
        with pytest.raises(ValidationError, match="10\\^4"):
            ad.finite_diff_check(lambda: ad.mean_all(ad.mul(w, w)), {"w": w})
