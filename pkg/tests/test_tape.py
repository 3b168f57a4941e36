import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import check_op_grad
from scenetree.errors import ContractError, NumericError, ShapeError
from scenetree.tape import Tape, check_finite, sgd_step


def conv2d_loop(x, kernel, stride=1, padding=0):
    """Naive quadruple-loop cross-correlation reference."""
    kh, kw, cin, cout = kernel.shape
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    h, w, _ = xp.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for oy in range(ho):
        for ox in range(wo):
            for oc in range(cout):
                acc = 0.0
                for dy in range(kh):
                    for dx in range(kw):
                        for c in range(cin):
                            acc += xp[oy * stride + dy, ox * stride + dx, c] \
                                * kernel[dy, dx, c, oc]
                out[oy, ox, oc] = acc
    return out


class TestConv2d:
    def test_scalar_product(self):
        tape = Tape()
        x = tape.leaf(np.full((1, 1, 1), 2.0))
        k = tape.leaf(np.full((1, 1, 1, 1), 3.0))
        out = tape.conv2d(x, k)
        assert out.data.reshape(()) == 6.0

    def test_zero_kernel_gives_zero(self):
        rng = np.random.default_rng(0)
        tape = Tape()
        x = tape.leaf(rng.normal(size=(6, 7, 3)))
        k = tape.leaf(np.zeros((3, 3, 3, 4)))
        out = tape.conv2d(x, k, stride=1, padding=1)
        assert np.all(out.data == 0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 5, 2))
        k = rng.normal(size=(3, 3, 2, 4))
        tape = Tape()
        out = tape.conv2d(tape.leaf(x), tape.leaf(k))
        ref = conv2d_loop(x, k)
        np.testing.assert_allclose(out.data, ref, atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_loop_oracle_strided(self, stride, padding):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(7, 6, 3))
        k = rng.normal(size=(3, 3, 3, 2))
        tape = Tape()
        out = tape.conv2d(tape.leaf(x), tape.leaf(k), stride=stride, padding=padding)
        ref = conv2d_loop(x, k, stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, ref, atol=1e-12)

    def test_shape_errors(self):
        tape = Tape()
        x = tape.leaf(np.zeros((5, 5, 2)))
        with pytest.raises(ShapeError, match="channels"):
            tape.conv2d(x, tape.leaf(np.zeros((3, 3, 3, 4))))
        with pytest.raises(ContractError, match="odd"):
            tape.conv2d(x, tape.leaf(np.zeros((2, 2, 2, 4))))

    def test_gradients(self):
        rng = np.random.default_rng(3)
        arrays = {
            "x": rng.normal(size=(5, 6, 2)),
            "k": rng.normal(size=(3, 3, 2, 3)),
            "b": rng.normal(size=3),
        }

        def build(tape, n):
            return tape.sum(tape.conv2d(n["x"], n["k"], n["b"], stride=2, padding=1))

        check_op_grad(build, arrays)


class TestAffine:
    def test_identity(self):
        tape = Tape()
        x = np.array([1.0, -2.0, 3.0])
        out = tape.affine(tape.leaf(x), tape.leaf(np.eye(3)), tape.leaf(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_input_gives_bias(self):
        tape = Tape()
        b = np.array([0.5, -1.5])
        out = tape.affine(tape.leaf(np.zeros(3)), tape.leaf(np.zeros((3, 2))),
                          tape.leaf(b))
        np.testing.assert_array_equal(out.data, b)

    def test_matches_hand_multiply(self):
        rng = np.random.default_rng(4)
        x, w, b = rng.normal(size=3), rng.normal(size=(3, 2)), rng.normal(size=2)
        tape = Tape()
        out = tape.affine(tape.leaf(x), tape.leaf(w), tape.leaf(b))
        ref = np.array([sum(x[i] * w[i, j] for i in range(3)) + b[j]
                        for j in range(2)])
        np.testing.assert_allclose(out.data, ref, atol=1e-12)

    def test_dimension_mismatch(self):
        tape = Tape()
        with pytest.raises(ShapeError):
            tape.affine(tape.leaf(np.zeros(3)), tape.leaf(np.zeros((4, 2))),
                        tape.leaf(np.zeros(2)))

    def test_gradients(self):
        rng = np.random.default_rng(5)
        arrays = {"x": rng.normal(size=4), "w": rng.normal(size=(4, 3)),
                  "b": rng.normal(size=3)}

        def build(tape, n):
            return tape.sum(tape.tanh(tape.affine(n["x"], n["w"], n["b"])))

        check_op_grad(build, arrays)


class TestSoftmax:
    def test_symmetry(self):
        tape = Tape()
        out = tape.softmax(tape.leaf(np.zeros(2)), axis=0)
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_no_overflow_on_large_inputs(self):
        tape = Tape()
        out = tape.softmax(tape.leaf(np.full(3, 1000.0)), axis=0)
        np.testing.assert_allclose(out.data, np.full(3, 1 / 3), atol=1e-15)

    def test_matches_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        tape = Tape()
        out = tape.softmax(tape.leaf(x), axis=0)
        ref = np.exp(x) / np.sum(np.exp(x))
        np.testing.assert_allclose(out.data, ref, atol=1e-12)

    @given(st.lists(st.floats(min_value=-300, max_value=300), min_size=1,
                    max_size=64))
    @settings(max_examples=100, deadline=None)
    def test_sums_to_one_and_shift_invariant(self, values):
        x = np.array(values)
        tape = Tape()
        out = tape.softmax(tape.leaf(x), axis=0)
        assert abs(out.data.sum() - 1.0) <= 1e-12
        assert np.all(out.data > 0)
        shifted = tape.softmax(tape.leaf(x + 17.25), axis=0)
        np.testing.assert_allclose(out.data, shifted.data, atol=1e-12)

    def test_long_input_normalization(self):
        rng = np.random.default_rng(6)
        x = rng.normal(scale=50, size=10_000)
        tape = Tape()
        out = tape.softmax(tape.leaf(x), axis=0)
        assert abs(out.data.sum() - 1.0) <= 1e-12

    def test_gradients(self):
        rng = np.random.default_rng(7)
        arrays = {"x": rng.normal(size=(4, 5))}
        coef = rng.normal(size=(4, 5))

        def build(tape, n):
            sm = tape.softmax(n["x"], axis=0)
            return tape.sum(tape.mul(sm, tape.leaf(coef)))

        check_op_grad(build, arrays)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        tape = Tape()
        theta = tape.leaf(np.arange(6, dtype=float).reshape(2, 3))
        grads = tape.backward(tape.sum(theta))
        np.testing.assert_array_equal(grads[theta.nid], np.ones((2, 3)))

    def test_zero_scaled_loss_gives_zero_gradient(self):
        tape = Tape()
        theta = tape.leaf(np.array([1.0, 2.0]))
        loss = tape.const_mul(tape.sum(theta), 0.0)
        grads = tape.backward(loss)
        np.testing.assert_array_equal(grads[theta.nid], np.zeros(2))

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        theta = tape.leaf(np.zeros(3))
        with pytest.raises(ContractError, match="scalar"):
            tape.backward(theta)

    def test_reuse_accumulates(self):
        tape = Tape()
        x = tape.leaf(np.array(3.0))
        loss = tape.add(tape.mul(x, x), x)  # x^2 + x -> 2x + 1
        grads = tape.backward(loss)
        assert grads[x.nid] == pytest.approx(7.0)

    def test_composed_network_gradients(self):
        rng = np.random.default_rng(8)
        arrays = {
            "x": rng.normal(size=(6, 6, 2)),
            "k": rng.normal(size=(3, 3, 2, 3)),
            "w": rng.normal(size=(3, 4)),
            "b": rng.normal(size=4),
            "logits": rng.normal(size=3),
        }
        labels = rng.integers(0, 4, size=(6, 6))

        def build(tape, n):
            conv = tape.relu(tape.conv2d(n["x"], n["k"], stride=1, padding=1))
            up = tape.upsample_bilinear(conv, (6, 6))
            pooled = tape.masked_lse(up, np.ones((6, 6), dtype=bool), pi=1.0)
            vec = tape.tanh(tape.affine(pooled, n["w"], n["b"]))
            probs = tape.softmax(vec, axis=0)
            alpha = tape.softmax(n["logits"], axis=0)
            scaled = tape.scale(tape.log(probs), tape.index(alpha, 1))
            vol = tape.reshape(tape.transpose(tape.conv2d(
                n["x"], n["k"], stride=1, padding=1), (2, 0, 1)), (3, 6, 6))
            picked = tape.gather_channel(tape.softmax(vol, axis=0),
                                         np.minimum(labels, 2))
            return tape.add(tape.mean(scaled), tape.mean(tape.log(picked)))

        check_op_grad(build, arrays)


class TestPrimitiveGradients:
    """Finite-difference checks for each remaining primitive."""

    def test_elementwise_and_reductions(self):
        rng = np.random.default_rng(9)
        arrays = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))}

        def build(tape, n):
            s = tape.add(tape.mul(n["a"], n["b"]), tape.sub(n["a"], n["b"]))
            s = tape.add(s, tape.square(n["a"]))
            s = tape.add(s, tape.relu(n["b"]))
            return tape.add(tape.mean(s), tape.sum(tape.sigmoid(n["a"])))

        check_op_grad(build, arrays)

    def test_concat_index_maximum(self):
        rng = np.random.default_rng(10)
        arrays = {"u": rng.normal(size=3), "v": rng.normal(size=2)}

        def build(tape, n):
            cat = tape.concat([n["u"], n["v"]])
            parts = [tape.index(cat, i) for i in range(5)]
            return tape.add(tape.maximum_of(parts), tape.index(cat, 0))

        check_op_grad(build, arrays)

    def test_upsample_matches_manual_interp(self):
        x = np.array([[0.0], [1.0]]).reshape(2, 1, 1)
        tape = Tape()
        out = tape.upsample_bilinear(tape.leaf(x), (5, 1))
        np.testing.assert_allclose(out.data.reshape(-1), [0, 0.25, 0.5, 0.75, 1.0],
                                   atol=1e-15)

    def test_masked_lse_singleton_identity(self):
        rng = np.random.default_rng(11)
        feats = rng.normal(size=(3, 3, 4))
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 2] = True
        tape = Tape()
        out = tape.masked_lse(tape.leaf(feats), mask, pi=2.5)
        np.testing.assert_allclose(out.data, feats[1, 2], atol=1e-15)

    def test_masked_lse_gradients(self):
        rng = np.random.default_rng(12)
        arrays = {"f": rng.normal(size=(4, 4, 3))}
        mask = rng.random((4, 4)) < 0.6
        mask[0, 0] = True

        def build(tape, n):
            return tape.sum(tape.masked_lse(n["f"], mask, pi=3.0))

        check_op_grad(build, arrays)


class TestSgdStep:
    def test_plain_step(self):
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([1.0])}
        vel = {}
        out = sgd_step(params, grads, vel, lr=0.1)
        assert out["w"][0] == pytest.approx(0.9)

    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([2.0, 3.0])}
        out = sgd_step(params, {"w": np.zeros(2)}, {}, lr=0.5, momentum=0.9)
        np.testing.assert_array_equal(out["w"], params["w"])

    def test_momentum_matches_hand_recurrence(self):
        lr, mom, g = 0.1, 0.9, 2.0
        params = {"w": np.array([1.0])}
        vel = {}
        params = sgd_step(params, {"w": np.array([g])}, vel, lr=lr, momentum=mom)
        params = sgd_step(params, {"w": np.array([g])}, vel, lr=lr, momentum=mom)
        # v1 = -lr*g; w1 = 1 + v1; v2 = mom*v1 - lr*g; w2 = w1 + v2
        v1 = -lr * g
        v2 = mom * v1 - lr * g
        assert params["w"][0] == pytest.approx(1.0 + v1 + v2, abs=1e-12)

    def test_weight_decay_and_filter(self):
        params = {"w": np.array([2.0]), "b": np.array([2.0])}
        grads = {"w": np.zeros(1), "b": np.zeros(1)}
        out = sgd_step(params, grads, {}, lr=1.0, weight_decay=0.1,
                       decay_filter=lambda n: n == "w")
        assert out["w"][0] == pytest.approx(1.8)
        assert out["b"][0] == pytest.approx(2.0)

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            sgd_step({}, {}, {}, lr=0.0)
        with pytest.raises(ContractError):
            sgd_step({}, {}, {}, lr=0.1, momentum=1.0)


class TestDeterminismAndFiniteness:
    def test_bit_identical_across_runs(self):
        def run():
            rng = np.random.default_rng(13)
            tape = Tape()
            x = tape.leaf(rng.normal(size=(8, 8, 3)))
            k = tape.leaf(rng.normal(size=(3, 3, 3, 4)))
            out = tape.softmax(tape.conv2d(x, k, padding=1), axis=2)
            grads = tape.backward(tape.mean(tape.log(out)))
            return out.data.copy(), grads[k.nid].copy()

        a_out, a_grad = run()
        b_out, b_grad = run()
        assert np.array_equal(a_out, b_out)
        assert np.array_equal(a_grad, b_grad)

    def test_check_finite_raises(self):
        with pytest.raises(NumericError, match="layer 2"):
            check_finite(np.array([1.0, np.nan]), "layer 2")
