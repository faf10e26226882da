import numpy as np
import pytest

from splitpit import autodiff as ad

RNG = np.random.default_rng


def fd_check(f, params, eps=1e-5, tol=1e-4):
    err = ad.grad_check(f, params, eps=eps)
    assert err < tol, f"finite-difference mismatch: {err}"


def test_softmax_symmetry():
    out = ad.softmax(ad.tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_matmul_identity():
    eye = ad.tensor(np.eye(2))
    m = ad.tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(eye, m).data, m.data)


def test_relu_definition():
    np.testing.assert_array_equal(
        ad.relu(ad.tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0]
    )


def test_backward_sum_of_squares():
    x = ad.tensor([3.0])
    with ad.Tape() as t:
        t.leaf(x)
        loss = ad.sum_all(ad.mul(x, x))
        t.backward(loss)
    np.testing.assert_allclose(t.grad(x), [6.0])


def test_backward_add_linearity():
    a, b = ad.tensor([2.0]), ad.tensor([5.0])
    with ad.Tape() as t:
        t.leaf(a)
        t.leaf(b)
        t.backward(ad.add(a, b))
    np.testing.assert_allclose(t.grad(a), [1.0])
    np.testing.assert_allclose(t.grad(b), [1.0])


def test_backward_rejects_nonscalar():
    x = ad.tensor([1.0, 2.0])
    with ad.Tape() as t:
        t.leaf(x)
        y = ad.mul(x, x)
        with pytest.raises(ad.ShapeError):
            t.backward(y)


def test_backward_distributes_over_add():
    rng = RNG(0)
    x = ad.tensor(rng.normal(size=4))

    def run(fn):
        with ad.Tape() as t:
            t.leaf(x)
            t.backward(fn())
            return t.grad(x).copy()

    ga = run(lambda: ad.sum_all(ad.mul(x, x)))
    gb = run(lambda: ad.sum_all(ad.tanh(x)))
    gsum = run(lambda: ad.add(ad.sum_all(ad.mul(x, x)), ad.sum_all(ad.tanh(x))))
    np.testing.assert_allclose(gsum, ga + gb)


def test_shared_input_gradient_doubles():
    x = ad.tensor([1.5, -2.0])
    with ad.Tape() as t:
        t.leaf(x)
        t.backward(ad.sum_all(ad.add(x, x)))
    np.testing.assert_allclose(t.grad(x), [2.0, 2.0])


def test_untracked_tensor_gets_no_gradient():
    x, c = ad.tensor([1.0]), ad.tensor([3.0])
    with ad.Tape() as t:
        t.leaf(x)
        t.backward(ad.mul(x, c))
    assert t.grad(c) is None


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(ad.tensor([[1.0, 2.0]]), ad.tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(ad.tensor([1.0, 2.0]), ad.tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ad.ShapeError, match="1-d-convolution"):
        ad.conv1d(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((4, 3, 3))), ad.tensor(np.zeros(4)))


def test_softmax_rows_sum_to_one():
    rng = RNG(1)
    x = ad.tensor(rng.normal(size=(5, 7)) * 3)
    s = ad.softmax(x)
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(5), atol=1e-12)
    ls = ad.log_softmax(x)
    np.testing.assert_allclose(ls.data, np.log(s.data), atol=1e-10)


def test_forward_backward_deterministic():
    def run():
        rng = RNG(42)
        x = ad.tensor(rng.normal(size=6))
        w = ad.tensor(rng.normal(size=(6, 6)))
        with ad.Tape() as t:
            t.leaf(x)
            t.leaf(w)
            loss = ad.sum_all(ad.tanh(ad.matmul(x, w)))
            t.backward(loss)
            return loss.data.copy(), t.grad(x).copy(), t.grad(w).copy()

    first, second = run(), run()
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_max_pool_tie_routes_to_first_row():
    x = ad.tensor([[1.0, 2.0], [1.0, 5.0], [1.0, 5.0]])
    with ad.Tape() as t:
        t.leaf(x)
        t.backward(ad.sum_all(ad.max_pool_time(x)))
    np.testing.assert_array_equal(t.grad(x), [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


def test_grad_check_quadratic_exact():
    rng = RNG(3)
    p = ad.tensor(rng.normal(size=5))
    err = ad.grad_check(lambda ps: ad.sum_all(ad.mul(ps[0], ps[0])), [p])
    assert err < 1e-8


@pytest.mark.parametrize(
    "name,builder",
    [
        ("matmul-2d", lambda ps: ad.sum_all(ad.matmul(ps[0], ps[1]))),
        ("matmul-vec-mat", lambda ps: ad.sum_all(ad.matmul(ad.sigmoid(ps[2]), ps[1]))),
        ("matmul-mat-vec", lambda ps: ad.sum_all(ad.matmul(ps[0], ad.tanh(ps[3])))),
        ("add", lambda ps: ad.sum_all(ad.add(ps[2], ps[3]))),
        ("add-scalar", lambda ps: ad.sum_all(ad.add(ps[2], ps[4]))),
        ("mul", lambda ps: ad.sum_all(ad.mul(ps[2], ps[3]))),
        ("mul-scalar", lambda ps: ad.sum_all(ad.mul(ps[2], ps[4]))),
        ("scalar-scale", lambda ps: ad.sum_all(ad.scalar_scale(ps[2], -2.5))),
        ("concat", lambda ps: ad.sum_all(ad.tanh(ad.concat([ps[2], ps[3]])))),
        ("stack-rows", lambda ps: ad.sum_all(ad.sigmoid(ad.stack_rows([ps[2], ps[3]])))),
        ("slice", lambda ps: ad.sum_all(ad.slice1d(ps[2], 1, 3))),
        ("sigmoid", lambda ps: ad.sum_all(ad.sigmoid(ps[2]))),
        ("tanh", lambda ps: ad.sum_all(ad.tanh(ps[2]))),
        ("relu", lambda ps: ad.sum_all(ad.relu(ps[2]))),
        ("log", lambda ps: ad.sum_all(ad.log(ad.add(ad.mul(ps[2], ps[2]), ps[5])))),
        ("softplus", lambda ps: ad.sum_all(ad.softplus(ps[2]))),
        ("softmax", lambda ps: ad.sum_all(ad.mul(ad.softmax(ps[2]), ps[3]))),
        ("log-softmax", lambda ps: ad.sum_all(ad.mul(ad.log_softmax(ps[2]), ps[3]))),
        ("sum", lambda ps: ad.sum_all(ps[0])),
        ("mean", lambda ps: ad.mean_all(ad.mul(ps[2], ps[2]))),
        ("embedding-lookup", lambda ps: ad.sum_all(ad.embedding_lookup(ps[0], [1, 0, 1]))),
        (
            "scatter-add",
            lambda ps: ad.sum_all(ad.mul(ad.scatter_add(ps[2], [3, 0, 3, 1], 5), ps[6])),
        ),
        (
            "max-pool-over-time",
            lambda ps: ad.sum_all(ad.max_pool_time(ad.stack_rows([ps[2], ps[3]]))),
        ),
        ("1-d-convolution", lambda ps: ad.sum_all(ad.conv1d(ps[7], ps[8], ps[9]))),
    ],
)
def test_op_gradients_match_finite_differences(name, builder):
    rng = RNG(11)
    params = [
        ad.tensor(rng.normal(size=(2, 4))),
        ad.tensor(rng.normal(size=(4, 3))),
        ad.tensor(rng.normal(size=4)),
        ad.tensor(rng.normal(size=4)),
        ad.tensor(rng.normal(size=1)),
        ad.tensor([5.0]),
        ad.tensor(rng.normal(size=5)),
        ad.tensor(rng.normal(size=(6, 3))),
        ad.tensor(rng.normal(size=(2, 3, 3))),
        ad.tensor(rng.normal(size=2)),
    ]
    fd_check(builder, params)
