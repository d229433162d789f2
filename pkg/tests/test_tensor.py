import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grad_check, leaf
from dualx import tensor as T
from dualx.errors import InvalidShapeError, NonFiniteError
from dualx.tensor import Rng, Tape, Tensor

SEEDS = range(20)


class TestConstruction:
    def test_default_dtype_is_float32(self):
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_precision_switch(self):
        with T.precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_zero_length_axis_rejected(self):
        with pytest.raises(InvalidShapeError):
            Tensor(np.zeros((0, 3)))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, bad])

    def test_non_finite_result_raises(self, f64):
        with pytest.raises(NonFiniteError):
            T.div(Tensor([1.0]), Tensor([0.0]))

    def test_create_inits(self):
        r = Rng(0)
        assert np.all(T.create((2, 3), "ones").data == 1)
        u = T.create((1000,), ("uniform", -1, 1), r).data
        assert u.min() >= -1 and u.max() < 1
        tn = T.create((1000,), ("trunc_normal", 0.02), r).data
        assert np.abs(tn).max() <= 0.04

    def test_create_bad_sigma(self):
        with pytest.raises(ValueError):
            T.create((2,), ("normal", 0.0, -1.0), Rng(0))


class TestRng:
    def test_replay(self):
        a, b = Rng(7), Rng(7)
        assert np.array_equal(a.normal((5,)), b.normal((5,)))
        assert np.array_equal(a.uniform((3,)), b.uniform((3,)))

    def test_draws_advance(self):
        r = Rng(7)
        assert not np.array_equal(r.normal((5,)), r.normal((5,)))

    def test_spawn_independent_of_parent_state(self):
        r = Rng(3)
        c1 = r.spawn(2).normal((4,))
        r.normal((10,))
        assert np.array_equal(c1, r.spawn(2).normal((4,)))
        assert not np.array_equal(c1, r.spawn(3).normal((4,)))


class TestForward:
    def test_broadcast_add(self, f64):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.arange(3.0))
        assert np.array_equal((a + b).data, np.ones((2, 3)) + np.arange(3.0))

    def test_broadcast_mismatch(self):
        with pytest.raises(InvalidShapeError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_matmul_inner_mismatch(self):
        with pytest.raises(InvalidShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_matmul_vectors(self, f64):
        assert T.matmul(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).item() == 11.0

    def test_reshape_infer(self):
        assert T.reshape(Tensor(np.zeros((2, 6))), (3, -1)).shape == (3, 4)

    def test_reshape_bad(self):
        with pytest.raises(InvalidShapeError):
            T.reshape(Tensor(np.zeros((2, 6))), (5, -1))

    def test_permute_bad(self):
        with pytest.raises(InvalidShapeError):
            T.permute(Tensor(np.zeros((2, 3))), (0, 0))

    def test_softmax_stable(self, f64):
        s = T.softmax(Tensor([1000.0, 1000.0, -1000.0])).data
        assert np.allclose(s, [0.5, 0.5, 0.0])

    def test_non_scalar_backward(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(InvalidShapeError):
            tape.backward(y)

    def test_no_tape_no_record(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        assert not y.requires_grad

    def test_unreached_param_gets_zero(self, f64):
        x, unused = leaf(np.ones(3)), leaf(np.ones(2))
        with Tape() as tape:
            loss = T.tsum(T.square(x))
        tape.backward(loss, [x, unused])
        assert np.array_equal(unused.grad, np.zeros(2))
        assert np.allclose(x.grad, 2.0)

    def test_fan_out_accumulates(self, f64):
        x = leaf([3.0])
        with Tape() as tape:
            loss = T.tsum(x * x + x)
        tape.backward(loss, [x])
        assert np.allclose(x.grad, [7.0])


def _unary(name):
    return {
        "neg": T.neg, "square": T.square, "exp": T.exp, "tanh": T.tanh,
        "sqrt": lambda a: T.sqrt(T.add(T.square(a), 1.0)),
        "softmax0": lambda a: T.softmax(a, axis=0), "softmax1": lambda a: T.softmax(a, axis=-1),
        "sum0": lambda a: T.tsum(a, 0), "mean1": lambda a: T.mean(a, 1, keepdims=True),
        "reshape": lambda a: T.reshape(a, (-1,)), "transpose": T.transpose,
        "permute": lambda a: T.permute(T.reshape(a, (3, 2, 2)), (2, 0, 1)),
    }[name]


UNARY = ["neg", "square", "exp", "tanh", "sqrt", "softmax0", "softmax1", "sum0", "mean1", "reshape",
         "transpose", "permute"]
BINARY = {
    "add": T.add, "sub": T.sub, "mul": T.mul,
    "div": lambda a, b: T.div(a, T.add(T.square(b), 0.5)),
    "matmul": lambda a, b: T.matmul(a, T.transpose(b)),
}


class TestGradients:
    """Central-difference checks in float64 on 20 random instances per primitive."""

    @pytest.mark.parametrize("name", UNARY)
    def test_unary(self, f64, name):
        fn = _unary(name)
        for seed in SEEDS:
            r = np.random.default_rng(seed)
            x = leaf(r.normal(size=(3, 4)))
            w = Tensor(r.normal(size=fn(Tensor(x.data)).shape))
            assert grad_check(lambda a: T.tsum(T.mul(fn(a), w)), [x]) < 1e-4, seed

    @pytest.mark.parametrize("name", sorted(BINARY))
    def test_binary(self, f64, name):
        fn = BINARY[name]
        for seed in SEEDS:
            r = np.random.default_rng(seed)
            a, b = leaf(r.normal(size=(3, 4))), leaf(r.normal(size=(3, 4)))
            w = Tensor(r.normal(size=fn(Tensor(a.data), Tensor(b.data)).shape))
            assert grad_check(lambda p, q: T.tsum(T.mul(fn(p, q), w)), [a, b]) < 1e-4, seed

    @pytest.mark.parametrize("name", ["add", "mul", "sub", "div"])
    def test_broadcast_gradient(self, f64, name):
        fn = BINARY[name]
        for seed in SEEDS:
            r = np.random.default_rng(seed)
            a, b = leaf(r.normal(size=(2, 3, 4))), leaf(r.normal(size=(3, 1)))
            assert grad_check(lambda p, q: T.tsum(T.square(fn(p, q))), [a, b]) < 1e-4

    def test_batched_matmul_broadcast(self, f64):
        for seed in SEEDS:
            r = np.random.default_rng(seed)
            a, b = leaf(r.normal(size=(2, 3, 4))), leaf(r.normal(size=(4, 5)))
            assert grad_check(lambda p, q: T.tsum(T.square(T.matmul(p, q))), [a, b]) < 1e-4

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_softmax_rows_sum_to_one(self, rows, cols, seed):
        x = np.random.default_rng(seed).normal(size=(rows, cols)) * 10
        with T.precision(np.float64):
            s = T.softmax(Tensor(x)).data
        assert np.allclose(s.sum(-1), 1.0, atol=1e-12)


class TestDump:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("shape", [(1,), (2, 3), (2, 1, 4, 3)])
    def test_round_trip_bit_exact(self, dtype, shape):
        arr = np.random.default_rng(0).normal(size=shape).astype(dtype)
        blob = T.dumps_tensor(arr)
        back, end = T.loads_tensor(blob)
        assert end == len(blob)
        assert back.dtype == arr.dtype and back.tobytes() == arr.tobytes()

    def test_header_text(self):
        blob = T.dumps_tensor(np.zeros((2, 3), np.float32))
        assert blob.startswith(b"DXTENSOR v1 float32 2 2 3\n")
        assert len(blob) == len(b"DXTENSOR v1 float32 2 2 3\n") + 24

    def test_concatenated(self):
        a, b = np.ones(3, np.float32), np.arange(4.0)
        buf = T.dumps_tensor(a) + T.dumps_tensor(b)
        x, off = T.loads_tensor(buf)
        y, end = T.loads_tensor(buf, off)
        assert np.array_equal(x, a) and np.array_equal(y, b) and end == len(buf)

    def test_truncated(self):
        blob = T.dumps_tensor(np.ones(4))
        with pytest.raises(InvalidShapeError):
            T.loads_tensor(blob[:-1])

    def test_bad_magic(self):
        with pytest.raises(InvalidShapeError):
            T.loads_tensor(b"NOPE v1 float32 1 1\n\0\0\0\0")
