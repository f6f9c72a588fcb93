import numpy as np
import pytest

from bglstm import cells
from bglstm.cells import (
    CellState,
    CellVariant,
    cell_step,
    init_cell_weights,
    param_count,
    sequence_backward,
    sequence_forward,
)
from bglstm.errors import ConfigError, InvalidInputError, ShapeError
from bglstm.numerics import Rng, affine, sigmoid

from oracles import central_diff_grad, max_relative_error

ALL_VARIANTS = [
    cells.standard(),
    cells.standard("sigmoid"),
    cells.bi_gated(),
    cells.bi_gated(candidate_activation="tanh"),
    cells.bi_gated(ungated_candidate=True),
    cells.no_input_gate(),
    cells.no_input_gate("sigmoid"),
]


def zero_weights(variant, input_dim, hidden_dim):
    w = init_cell_weights(variant, input_dim, hidden_dim, Rng(0))
    for g in variant.gates:
        w.W[g][:] = 0.0
    return w


class TestVariantDefinition:
    def test_gate_sets(self):
        assert cells.standard().gates == ("f", "i", "c", "o")
        assert cells.bi_gated().gates == ("i", "c", "o")
        assert cells.no_input_gate().gates == ("f", "c", "o")

    def test_default_candidate_activations(self):
        assert cells.standard().candidate_activation == "tanh"
        assert cells.bi_gated().candidate_activation == "sigmoid"

    def test_ungated_candidate_restricted(self):
        with pytest.raises(ConfigError):
            CellVariant("standard", "tanh", ungated_candidate=True)

    def test_absent_gates_have_no_storage(self):
        w = init_cell_weights(cells.bi_gated(), 3, 4, Rng(1))
        assert set(w.W) == {"i", "c", "o"}
        assert set(w.b) == {"i", "c", "o"}


class TestCellStepHandValues:
    def test_standard_zero_fixed_point(self):
        w = zero_weights(cells.standard(), 2, 1)
        state, _ = cell_step(cells.standard(), w, CellState.zeros(1), np.array([0.3, -0.7]))
        assert state.h[0] == 0.0 and state.c[0] == 0.0

    def test_standard_halving_from_unit_cell(self):
        # f=i=0.5, cand=tanh(0)=0 -> c=0.5, h=0.5*tanh(0.5)
        w = zero_weights(cells.standard(), 2, 1)
        prev = CellState(np.zeros(1), np.ones(1))
        state, _ = cell_step(cells.standard(), w, prev, np.zeros(2))
        assert state.c[0] == pytest.approx(0.5, abs=1e-15)
        assert state.h[0] == pytest.approx(0.23105857863000487, abs=1e-12)

    def test_bi_gated_zero_weights(self):
        # i=0.5, cand=sigmoid(0)=0.5 -> c=0.25, h=0.5*tanh(0.25)
        w = zero_weights(cells.bi_gated(), 2, 1)
        state, _ = cell_step(cells.bi_gated(), w, CellState.zeros(1), np.zeros(2))
        assert state.c[0] == pytest.approx(0.25, abs=1e-15)
        assert state.h[0] == pytest.approx(0.12245933120185456, abs=1e-12)

    def test_bi_gated_ungated_candidate_zero_weights(self):
        # update drops the input gate: c = 0 + 0.5
        variant = cells.bi_gated(ungated_candidate=True)
        w = zero_weights(variant, 2, 1)
        state, _ = cell_step(variant, w, CellState.zeros(1), np.zeros(2))
        assert state.c[0] == pytest.approx(0.5, abs=1e-15)
        assert state.h[0] == pytest.approx(0.23105857863000487, abs=1e-12)

    def test_shape_error(self):
        w = zero_weights(cells.standard(), 2, 1)
        with pytest.raises(ShapeError):
            cell_step(cells.standard(), w, CellState.zeros(1), np.zeros(3))


class TestSequenceForward:
    def test_length_one_matches_single_step(self):
        variant = cells.bi_gated()
        w = init_cell_weights(variant, 3, 4, Rng(5))
        x = Rng(6).uniform((1, 3), -1, 1)
        hs, final, _ = sequence_forward(variant, w, CellState.zeros(4), x)
        step_state, _ = cell_step(variant, w, CellState.zeros(4), x[0])
        assert np.array_equal(hs[0], step_state.h)
        assert np.array_equal(final.c, step_state.c)

    def test_bi_gated_monotone_accumulation(self):
        w = zero_weights(cells.bi_gated(), 2, 1)
        _, final, cache = sequence_forward(
            cells.bi_gated(), w, CellState.zeros(1), np.zeros((3, 2))
        )
        cs = [s.c[0] for s in cache.steps]
        assert cs == pytest.approx([0.25, 0.50, 0.75], abs=1e-12)
        assert final.c[0] == pytest.approx(0.75, abs=1e-12)

    def test_standard_halving_sequence(self):
        w = zero_weights(cells.standard(), 2, 1)
        init = CellState(np.zeros(1), np.ones(1))
        _, _, cache = sequence_forward(cells.standard(), w, init, np.zeros((3, 2)))
        cs = [s.c[0] for s in cache.steps]
        assert cs == pytest.approx([0.5, 0.25, 0.125], abs=1e-12)

    def test_empty_sequence_rejected(self):
        w = zero_weights(cells.standard(), 2, 1)
        with pytest.raises(InvalidInputError):
            sequence_forward(cells.standard(), w, CellState.zeros(1), np.zeros((0, 2)))


class TestParamCount:
    def test_standard_16_8(self):
        assert param_count(cells.standard(), 16, 8) == 800

    def test_bi_gated_16_8(self):
        assert param_count(cells.bi_gated(), 16, 8) == 600

    def test_no_input_gate_16_8(self):
        assert param_count(cells.no_input_gate(), 16, 8) == 600

    def test_three_quarters_ratio(self):
        rng = Rng(99)
        for _ in range(20):
            d = int(rng.integers(64)) + 1
            h = int(rng.integers(64)) + 1
            assert param_count(cells.bi_gated(), d, h) * 4 == param_count(cells.standard(), d, h) * 3

    def test_matches_stored_arrays(self):
        for variant in ALL_VARIANTS:
            w = init_cell_weights(variant, 5, 3, Rng(2))
            stored = sum(a.size for a in w.W.values()) + sum(a.size for a in w.b.values())
            assert stored == param_count(variant, 5, 3)


def sequence_loss(variant, w, init, xs, grad_hs):
    hs, _, _ = sequence_forward(variant, w, init, xs)
    return float(np.sum(grad_hs * hs))


@pytest.mark.parametrize("variant", ALL_VARIANTS, ids=lambda v: v.describe())
class TestGradients:
    """Every backward-pass gradient is checked against central differences."""

    input_dim, hidden_dim, T = 3, 4, 5

    def setup_case(self, variant, seed=1234):
        rng = Rng(seed)
        w = init_cell_weights(variant, self.input_dim, self.hidden_dim, rng.split())
        xs = rng.uniform((self.T, self.input_dim), -1, 1)
        init = CellState(
            rng.uniform((self.hidden_dim,), -0.5, 0.5),
            rng.uniform((self.hidden_dim,), -0.5, 0.5),
        )
        grad_hs = rng.uniform((self.T, self.hidden_dim), -1, 1)
        return w, xs, init, grad_hs

    def test_zero_upstream_gives_zero_grads(self, variant):
        w, xs, init, _ = self.setup_case(variant)
        _, _, cache = sequence_forward(variant, w, init, xs)
        grads = sequence_backward(variant, w, cache, np.zeros((self.T, self.hidden_dim)))
        for g in variant.gates:
            assert not grads.dW[g].any()
            assert not grads.db[g].any()
        assert not grads.d_init.h.any()
        assert not grads.d_xs.any()

    def test_weight_and_bias_gradients(self, variant):
        w, xs, init, grad_hs = self.setup_case(variant)
        _, _, cache = sequence_forward(variant, w, init, xs)
        grads = sequence_backward(variant, w, cache, grad_hs)
        for g in variant.gates:
            num = central_diff_grad(
                lambda _, g=g: sequence_loss(variant, w, init, xs, grad_hs), w.W[g]
            )
            assert max_relative_error(grads.dW[g], num) < 1e-4
            num_b = central_diff_grad(
                lambda _, g=g: sequence_loss(variant, w, init, xs, grad_hs), w.b[g]
            )
            assert max_relative_error(grads.db[g], num_b) < 1e-4

    def test_state_and_input_gradients(self, variant):
        w, xs, init, grad_hs = self.setup_case(variant)
        _, _, cache = sequence_forward(variant, w, init, xs)
        grads = sequence_backward(variant, w, cache, grad_hs)
        num_h = central_diff_grad(lambda _: sequence_loss(variant, w, init, xs, grad_hs), init.h)
        num_c = central_diff_grad(lambda _: sequence_loss(variant, w, init, xs, grad_hs), init.c)
        num_x = central_diff_grad(lambda _: sequence_loss(variant, w, init, xs, grad_hs), xs)
        assert max_relative_error(grads.d_init.h, num_h) < 1e-4
        assert max_relative_error(grads.d_init.c, num_c) < 1e-4
        assert max_relative_error(grads.d_xs, num_x) < 1e-4

    def test_gate_ranges_and_bounded_h(self, variant):
        w, xs, init, _ = self.setup_case(variant, seed=77)
        hs, _, cache = sequence_forward(variant, w, init, xs)
        for step in cache.steps:
            for g, a in step.acts.items():
                if g == "c" and variant.candidate_activation == "tanh":
                    assert np.all(a > -1) and np.all(a < 1)
                else:
                    assert np.all(a > 0) and np.all(a < 1)
        assert np.all(np.abs(hs) < 1)


class TestForgetGateRemovalOracle:
    """The bi-gated step must equal a standard step with the forget gate
    pinned to ones and a sigmoid candidate, bitwise, on random inputs."""

    def manual_pinned_standard(self, w, prev, x):
        z = np.concatenate([prev.h, x])
        f = np.ones(w.hidden_dim)
        i = sigmoid(affine(w.W["i"], z, w.b["i"]))
        cand = sigmoid(affine(w.W["c"], z, w.b["c"]))
        o = sigmoid(affine(w.W["o"], z, w.b["o"]))
        c = f * prev.c + i * cand
        h = o * np.tanh(c)
        return h, c

    def test_bitwise_equivalence_1000_steps(self):
        variant = cells.bi_gated()
        rng = Rng(2024)
        w = init_cell_weights(variant, 6, 5, rng.split())
        state = CellState.zeros(5)
        for _ in range(1000):
            x = rng.uniform((6,), -2, 2)
            new_state, _ = cell_step(variant, w, state, x)
            h_ref, c_ref = self.manual_pinned_standard(w, state, x)
            assert np.array_equal(new_state.h, h_ref)
            assert np.array_equal(new_state.c, c_ref)
            state = new_state

    def test_bi_gated_cell_state_strictly_increases(self):
        variant = cells.bi_gated()
        rng = Rng(3)
        w = init_cell_weights(variant, 4, 3, rng.split())
        state = CellState.zeros(3)
        prev_c = state.c.copy()
        for _ in range(20):
            state, _ = cell_step(variant, w, state, rng.uniform((4,), -1, 1))
            assert np.all(state.c > prev_c)
            prev_c = state.c.copy()


class TestUnitJacobianCellPath:
    """With the recurrent columns of the i and candidate gates zeroed, the
    bi-gated cell state gradient flows back through T steps unattenuated."""

    def make_weights(self, variant, rng, zero_recurrent_input_paths):
        w = init_cell_weights(variant, 4, 3, rng)
        if zero_recurrent_input_paths:
            for g in ("i", "c"):
                if g in w.W:
                    w.W[g][:, :3] = 0.0
        return w

    def jacobian_row(self, variant, w, xs, k):
        _, _, cache = sequence_forward(variant, w, CellState.zeros(3), xs)
        seed = np.zeros(3)
        seed[k] = 1.0
        grads = sequence_backward(
            variant, w, cache, np.zeros((xs.shape[0], 3)),
            grad_final=CellState(np.zeros(3), seed),
        )
        return grads.d_init.c

    @pytest.mark.parametrize("T", [1, 5, 50])
    def test_identity_for_bi_gated(self, T):
        rng = Rng(10)
        variant = cells.bi_gated()
        w = self.make_weights(variant, rng.split(), zero_recurrent_input_paths=True)
        xs = rng.uniform((T, 4), -1, 1)
        for k in range(3):
            row = self.jacobian_row(variant, w, xs, k)
            expected = np.zeros(3)
            expected[k] = 1.0
            assert np.allclose(row, expected, atol=1e-12)

    def test_standard_attenuates(self):
        rng = Rng(10)
        variant = cells.standard()
        w = self.make_weights(variant, rng.split(), zero_recurrent_input_paths=True)
        w.W["f"][:] = 0.0  # f = 0.5 each step
        xs = np.zeros((10, 4))
        row = self.jacobian_row(variant, w, xs, 0)
        assert row[0] == pytest.approx(0.5**10, rel=1e-9)


class TestBackwardValidation:
    def test_length_mismatch(self):
        variant = cells.standard()
        w = init_cell_weights(variant, 2, 2, Rng(1))
        _, _, cache = sequence_forward(variant, w, CellState.zeros(2), np.zeros((3, 2)))
        with pytest.raises(InvalidInputError):
            sequence_backward(variant, w, cache, np.zeros((2, 2)))

    def test_variant_mismatch(self):
        variant = cells.standard()
        w = init_cell_weights(variant, 2, 2, Rng(1))
        _, _, cache = sequence_forward(variant, w, CellState.zeros(2), np.zeros((3, 2)))
        with pytest.raises(InvalidInputError):
            sequence_backward(cells.bi_gated(), w, cache, np.zeros((3, 2)))
