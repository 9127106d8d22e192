"""Central finite-difference gradient checking for the numpy layers (f64)."""

import numpy as np

from humanchess.nn import layers as L
from humanchess.nn.losses import mse_loss, softmax_cross_entropy

EPS = 1e-6
TOL = 1e-5


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def numeric(f, x, eps=EPS):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def check_module(module, x, rng):
    """Max relative error over the input gradient and every parameter gradient."""
    out = module.forward(x, training=True)
    r = rng.standard_normal(out.shape)

    def objective():
        return float((module.forward(x, training=True) * r).sum())

    module.forward(x, training=True)
    dx = module.backward(r)
    analytic = {name: g.copy() for name, g in module.named_gradients()}
    errors = {}
    if dx is not None:
        errors["input"] = rel_error(dx, numeric(objective, x))
    for name, p in module.named_parameters():
        errors[name] = rel_error(analytic[name], numeric(objective, p))
    return errors


def _away_from_kinks(x, margin=0.05):
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def layer_cases(seed):
    """(name, module, input) triples on small randomized shapes, all f64."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    c = int(rng.integers(1, 4))
    hw = int(rng.integers(2, 5))
    d = np.float64
    x4 = rng.standard_normal((n, c, hw, hw))
    yield "conv3", L.Conv2d(c, int(rng.integers(1, 4)), 3, rng=rng, dtype=d), x4.copy()
    yield "conv3_nobias", L.Conv2d(c, 2, 3, bias=False, rng=rng, dtype=d), x4.copy()
    yield "conv1", L.Conv2d(c, int(rng.integers(1, 4)), 1, rng=rng, dtype=d), x4.copy()
    bn = L.BatchNorm2d(c, dtype=d)
    bn.params["gamma"] = rng.standard_normal(c)
    bn.params["beta"] = rng.standard_normal(c)
    yield "batchnorm", bn, x4.copy()
    yield "relu", L.ReLU(), _away_from_kinks(x4)
    yield "tanh", L.Tanh(), x4.copy()
    yield "sigmoid", L.Sigmoid(), 3 * x4
    yield "softmax", L.Softmax(), rng.standard_normal((n, int(rng.integers(2, 7))))
    yield "flatten", L.Flatten(), x4.copy()
    f = c * hw * hw
    yield "linear", L.Linear(f, int(rng.integers(1, 5)), rng=rng, dtype=d), rng.standard_normal((n, f))
    yield "sequential", L.Sequential([L.Conv2d(c, 2, 3, rng=rng, dtype=d), L.Tanh(), L.Flatten(),
                                      L.Linear(2 * hw * hw, 3, rng=rng, dtype=d), L.Sigmoid()]), x4.copy()
    block = L.ResidualBlock(c, rng=rng, dtype=d)
    for _, mod in block.named_modules():
        if isinstance(mod, L.BatchNorm2d):
            mod.params["beta"] = 0.5 + 0.1 * rng.standard_normal(c)
    yield "residual", block, x4.copy()


def check_losses(seed):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(2, 6)), int(rng.integers(2, 9))
    logits = rng.standard_normal((n, k))
    targets = rng.integers(0, k, n)
    mask = rng.random((n, k)) < 0.6
    mask[np.arange(n), targets] = True
    errors = {}
    for name, m in (("cross_entropy", None), ("masked_cross_entropy", mask)):
        _, g = softmax_cross_entropy(logits, targets, m)
        num = numeric(lambda: softmax_cross_entropy(logits, targets, m)[0], logits)
        if m is not None:
            assert np.all(g[~m] == 0)
            g, num = g[m], num[m]
        errors[name] = rel_error(g, num)
    pred = rng.standard_normal((n, 1))
    target = rng.standard_normal(n)
    _, g = mse_loss(pred, target)
    errors["mse"] = rel_error(g, numeric(lambda: mse_loss(pred, target)[0], pred))
    return errors
