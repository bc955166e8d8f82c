import numpy as np
import pytest

from plasticity.nn import Cache, InitSpec, build_network

REL_FLOOR = 1e-3


def relu_pattern(cache):
    """Sign pattern of every pre-activation recorded in a (possibly nested) cache."""
    if cache is None:
        return []
    if isinstance(cache, Cache):
        return [z > 0 for z in cache.preacts]
    out = []
    for c in cache:
        out.extend(relu_pattern(c))
    return out


def finite_difference_check(model, x, h=1e-5, rng=None, keys=None):
    """Compare backward() against central differences of sum(c * model(x)).

    Returns (max relative error, number of checked entries). Entries whose
    perturbation flips any ReLU are skipped, as are entries where both the
    analytic and numeric derivative are exactly zero. The denominator is
    floored at ``REL_FLOOR``: below it, central differences carry roundoff of
    order eps * |f| / h, so tiny gradients are held to an absolute bound of
    ``REL_FLOOR`` times the tolerance instead.
    """
    rng = rng or np.random.default_rng(0)
    out, cache = model.forward(x)
    c = rng.standard_normal(out.shape)
    grads, _ = model.backward(cache, c)
    base_pattern = relu_pattern(cache)
    params = model.params(trainable_only=True)
    assert set(grads) == set(params)
    worst, checked = 0.0, 0
    for key in keys or sorted(params):
        p = params[key]
        for idx in np.ndindex(p.shape):
            vals = []
            flipped = False
            for sign in (1, -1):
                q = p.copy()
                q[idx] += sign * h
                model.set_params({key: q})
                o, cc = model.forward(x)
                flipped |= any(not np.array_equal(a, b) for a, b in zip(relu_pattern(cc), base_pattern))
                vals.append(np.sum(c * o))
            model.set_params({key: p})
            if flipped:
                continue
            num = (vals[0] - vals[1]) / (2 * h)
            ana = grads[key][idx]
            if num == 0.0 and ana == 0.0:
                continue
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), REL_FLOOR))
            checked += 1
    return worst, checked


def random_net(rng, widths=None, spectral=()):
    if widths is None:
        depth = int(rng.integers(2, 5))
        widths = [int(w) for w in rng.integers(1, 7, depth + 1)]
    net = build_network(widths, init=InitSpec(int(rng.integers(2**32))), spectral_norm_layers=spectral)
    # non-zero biases exercise more of the bias paths
    net.set_params({k: rng.normal(0, 0.3, p.shape) for k, p in net.params().items() if k.endswith(".b")})
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
