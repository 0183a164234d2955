import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_grad, rel_err
from stfn.errors import ConfigError, ContextError
from stfn.res_inc import ResIncBlock, Stage, stack_blocks


def test_shape_preserved(rng):
    block = ResIncBlock(8, rng)
    assert block.forward(rng.normal(size=(2, 5, 8))).shape == (2, 5, 8)
    assert [b.conv.kernel_size for b in block.branches] == [2, 3, 4, 5]
    assert all(b.conv.out_dim == 2 for b in block.branches)
    assert block.skip.conv.kernel_size == 2 and block.skip.relu is None


def test_dim_must_divide_by_four():
    with pytest.raises(ConfigError):
        ResIncBlock(6)


def test_zero_weights_give_zero_output(rng):
    block = ResIncBlock(4, rng)
    for name, p in block.named_parameters():
        if name.endswith("conv.weight"):
            p[:] = 0
    assert not block.forward(rng.normal(size=(2, 3, 4))).any()


def test_matches_composition_by_hand(rng):
    block = ResIncBlock(8, rng)
    x = rng.normal(size=(2, 6, 8))
    parts = [np.maximum(b.bn.forward(b.conv.forward(x), "eval"), 0) for b in block.branches]
    skip = block.skip.bn.forward(block.skip.conv.forward(x), "eval")
    expected = np.maximum(np.concatenate(parts, axis=2) + skip, 0)
    assert np.allclose(block.forward(x, "eval"), expected)


def test_full_block_gradient(rng):
    block = ResIncBlock(4, rng)
    x = rng.uniform(-1, 1, (2, 3, 4))
    weights = rng.uniform(-1, 1, x.shape)
    objective = lambda: float((block.forward(x) * weights).sum())
    objective()
    gx = block.backward(weights)
    analytic = dict(block.named_grads())
    assert rel_err(gx, fd_grad(objective, x)) < 1e-4
    for name, p in block.named_parameters():
        assert rel_err(analytic[name], fd_grad(objective, p)) < 1e-4, name


def test_zero_grad_out(rng):
    block = ResIncBlock(4, rng)
    block.forward(rng.normal(size=(2, 3, 4)))
    assert not block.backward(np.zeros((2, 3, 4))).any()
    assert not any(g.any() for _, g in block.named_grads())


def test_disabled_branches_leave_skip_gradient(rng):
    block = ResIncBlock(4, rng)
    for b in block.branches:
        b.conv.params["weight"][:] = 0
    x = rng.normal(size=(2, 5, 4))
    g = rng.normal(size=x.shape)
    block.forward(x)
    gx = block.backward(g)
    skip = block.skip
    s = skip.forward(x)
    expected = skip.backward(g * (s > 0))
    assert np.allclose(gx, expected)


def test_backward_requires_forward(rng):
    with pytest.raises(ContextError):
        ResIncBlock(4, rng).backward(np.zeros((1, 2, 4)))


def test_gradient_highway(rng):
    block = ResIncBlock(8, rng)
    for _ in range(100):
        x = rng.normal(size=(2, 4, 8))
        block.forward(x)
        assert np.linalg.norm(block.backward(rng.normal(size=x.shape))) > 0


def test_stack_blocks(rng):
    x = rng.normal(size=(2, 4, 8))
    assert stack_blocks([], x) is x
    b1, b2 = ResIncBlock(8, rng), ResIncBlock(8, rng)
    out = stack_blocks([b1, b2], x, "eval")
    assert out.shape == x.shape
    assert np.array_equal(out, b2.forward(b1.forward(x, "eval"), "eval"))
    with pytest.raises(ConfigError):
        Stage([ResIncBlock(8), ResIncBlock(4)])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.sampled_from([4, 8, 16]), st.integers(0, 10**6))
def test_shape_and_nonnegativity(B, N, d, seed):
    rng = np.random.default_rng(seed)
    block = ResIncBlock(d, rng)
    mode = "train" if B * N >= 2 else "eval"
    y = block.forward(rng.normal(size=(B, N, d)), mode)
    assert y.shape == (B, N, d)
    assert (y >= 0).all()
