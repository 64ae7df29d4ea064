import numpy as np
import pytest

from mgil import ops
from mgil.gradcheck import (
    REGISTRY,
    STEP,
    TOLERANCE,
    check_gradients,
    run_suite,
)
from mgil.rng import derived_generator
from mgil.tensor import Tensor

RESULTS = {name: err for name, err in run_suite()}


@pytest.mark.parametrize("name", [entry[0] for entry in REGISTRY])
def test_registered_op_passes(name):
    assert RESULTS[name] < TOLERANCE, f"{name}: max rel err {RESULTS[name]:.3e}"


def test_registry_covers_composed_block():
    assert "mgil_forward" in RESULTS


def test_suite_is_deterministic():
    again = {name: err for name, err in run_suite()}
    assert again == RESULTS


def test_check_gradients_catches_wrong_backward():
    # an op whose recorded adjoint is off by 2x must fail the check
    rng = derived_generator(0, "fault")
    x = Tensor(rng.uniform(0.2, 1.0, size=(2, 3)))

    def broken_scale(tape):
        out = Tensor(x.data * 3.0)
        if tape is not None:
            tape.record(lambda: x.accumulate_grad(out.grad))  # claims slope 1
        return out

    err = check_gradients(broken_scale, [x], rng)
    assert err > TOLERANCE


def test_check_gradients_restores_inputs():
    rng = derived_generator(0, "restore")
    x = Tensor(rng.uniform(-1, 1, size=(2, 4)))
    before = x.data.copy()
    check_gradients(lambda tape: ops.relu(x, tape), [x], rng)
    assert np.array_equal(x.data, before)


def test_step_and_tolerance_constants():
    assert STEP == pytest.approx(1e-4)
    assert TOLERANCE == pytest.approx(1e-4)
