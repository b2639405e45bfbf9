import numpy as np
import pytest

from sparsets.models import Network, NetworkSpec

ACT = {"tanh": np.tanh, "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)), "relu": lambda x: np.maximum(x, 0.0)}


def unrolled_rnn(spec, params, mask, window):
    """Loop-level Elman recursion, written independently of the tape."""
    net = Network(spec)
    P = net.layout.split(np.asarray(params) * np.asarray(mask))
    H = spec.depth
    L = spec.layer_widths
    z = [np.zeros(L[h]) for h in range(1, H)]
    outs = []
    for x in np.asarray(window, dtype=float):
        a = x
        new = []
        for h in range(1, H):
            pre = np.zeros(L[h])
            for r in range(L[h]):
                s = P[f"b{h}"][r]
                for c in range(L[h - 1]):
                    s += P[f"w{h}"][r, c] * a[c]
                if spec.recurrent:
                    for c in range(L[h]):
                        s += P[f"v{h}"][r, c] * z[h - 1][c]
                pre[r] = s
            a = ACT[spec.activations[h - 1]](pre)
            new.append(a)
        z = new
        out = np.array([P[f"b{H}"][r] + sum(P[f"w{H}"][r, c] * a[c] for c in range(L[H - 1])) for r in range(L[H])])
        outs.append(out)
    return np.array(outs)


def random_rnn(rng, max_width=5, max_depth=2, density=0.6, scale=1.0):
    depth = int(rng.integers(1, max_depth + 1))
    widths = [int(rng.integers(1, max_width + 1)) for _ in range(depth + 2)]
    acts = [str(rng.choice(["tanh", "sigmoid"]))] + [str(rng.choice(["tanh", "sigmoid", "relu"])) for _ in range(depth - 1)]
    spec = NetworkSpec("rnn", tuple(widths), tuple(acts), warmup=int(rng.integers(0, 3)))
    net = Network(spec)
    params = rng.uniform(-scale, scale, size=net.n_params)
    mask = (rng.random(net.n_params) < density).astype(float)
    return spec, params, mask


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
