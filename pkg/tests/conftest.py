import numpy as np
import pytest

from dimignn.tensor import backward, clear_tape, finite_difference_grad, grad_rel_error


def grad_errors(loss_fn, params, h=1e-6):
    """Relative error between backprop and central differences, per parameter."""
    for p in params.values():
        p.grad = None
    clear_tape()
    backward(loss_fn())
    errs = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = finite_difference_grad(lambda _: loss_fn(), p, h).data
        errs[name] = grad_rel_error(analytic, numeric)
    return errs


def random_weights(rng, shape):
    return rng.standard_normal(shape)


@pytest.fixture(autouse=True)
def _fresh_tape():
    clear_tape()
    yield
    clear_tape()


def grad_error_total(loss_fn, params, h=1e-6):
    """Relative error of the whole gradient, all parameters concatenated."""
    for p in params.values():
        p.grad = None
    clear_tape()
    backward(loss_fn())
    analytic, numeric = [], []
    for p in params.values():
        analytic.append((p.grad if p.grad is not None else np.zeros_like(p.data)).ravel())
        numeric.append(finite_difference_grad(lambda _: loss_fn(), p, h).data.ravel())
    return grad_rel_error(np.concatenate(analytic), np.concatenate(numeric))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
