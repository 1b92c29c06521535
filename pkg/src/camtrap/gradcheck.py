"""Central finite-difference verification of every operator and model family.

Each check builds a scalar probe ``sum(w * f(inputs))`` with fixed random
weights ``w`` in float64, compares the analytic gradient of every input
against central differences, and reports the worst relative error

    |analytic - numeric| / max(|analytic|, |numeric|, FLOOR)

FLOOR keeps entries whose true gradient is zero from dividing rounding
noise by zero.
"""
import time

import numpy as np

from .autograd import RunningStats, Tensor, backward, ops
from .nets import ArchitectureSpec, BranchSpec, ParamView, build_architecture, inception_block, residual_block

EPS = 1e-5
TOL = 1e-4
FLOOR = 1e-6


def rel_error(analytic, numeric, floor=FLOOR):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(loss_fn, arr, eps=EPS):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def check(forward, tensors, seed=0, eps=EPS):
    """Worst relative error over all ``tensors`` for the probe built on ``forward()``."""
    rng = np.random.default_rng(seed)
    probe = {}

    def loss_tensor():
        out = forward()
        if "w" not in probe:
            probe["w"] = rng.standard_normal(out.shape)
        return ops.weighted_sum(out, probe["w"])

    for t in tensors:
        t.grad = None
    backward(loss_tensor())
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(lambda: float(loss_tensor().data), t.data, eps)
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def _t(rng, *shape, low=None):
    arr = rng.standard_normal(shape)
    if low is not None:
        # keep values away from kinks so differences never straddle one
        arr = np.sign(arr) * (np.abs(arr) + low)
    return Tensor(arr, requires_grad=True, dtype=np.float64)


def _op_cases():
    rng = np.random.default_rng(1234)
    cases = []

    x, w, b = _t(rng, 2, 3, 8, 8), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    cases.append(("conv2d", lambda: ops.conv2d(x, w, b, stride=2, pad=1), [x, w, b]))

    xm = Tensor(rng.permutation(72).reshape(1, 2, 6, 6) * 0.1, requires_grad=True, dtype=np.float64)
    cases.append(("pool2d[max]", lambda: ops.pool2d(xm, "max", k=2, stride=2), [xm]))
    cases.append(("pool2d[max,overlap]", lambda: ops.pool2d(xm, "max", k=3, stride=1, pad=1), [xm]))
    xa = _t(rng, 2, 2, 6, 6)
    cases.append(("pool2d[avg]", lambda: ops.pool2d(xa, "avg", k=3, stride=2, pad=1), [xa]))
    cases.append(("pool2d[global-avg]", lambda: ops.pool2d(xa, "global-avg"), [xa]))

    xf, wf, bf = _t(rng, 3, 5), _t(rng, 4, 5), _t(rng, 4)
    cases.append(("affine", lambda: ops.affine(xf, wf, bf), [xf, wf, bf]))

    xr = _t(rng, 2, 3, 4, 4, low=1e-2)
    cases.append(("relu", lambda: ops.relu(xr), [xr]))

    xb, gb, bb = _t(rng, 4, 3, 3, 3), _t(rng, 3), _t(rng, 3)
    stats = RunningStats(3, dtype=np.float64)
    cases.append(("batchnorm2d[train]", lambda: ops.batchnorm2d(xb, gb, bb, stats, "train"), [xb, gb, bb]))
    eval_stats = RunningStats(3, dtype=np.float64)
    eval_stats.mean[:] = rng.standard_normal(3)
    eval_stats.var[:] = rng.uniform(0.5, 2.0, 3)
    eval_stats.initialized = True
    cases.append(("batchnorm2d[eval]", lambda: ops.batchnorm2d(xb, gb, bb, eval_stats, "eval"), [xb, gb, bb]))

    xd = _t(rng, 3, 7)
    cases.append(
        ("dropout", lambda: ops.dropout(xd, 0.3, "train", np.random.default_rng(7)), [xd])
    )

    xs = _t(rng, 4, 26)
    labels = rng.integers(0, 26, size=4)

    def ce():
        return ops.softmax_cross_entropy(xs, labels)

    cases.append(("softmax_cross_entropy", ce, [xs]))

    xa1, xa2 = _t(rng, 2, 3, 2, 2), _t(rng, 2, 3, 2, 2)
    cases.append(("add", lambda: ops.add(xa1, xa2), [xa1, xa2]))
    xc1, xc2 = _t(rng, 2, 1, 3, 3), _t(rng, 2, 4, 3, 3)
    cases.append(("concat", lambda: ops.concat([xc1, xc2], axis=1), [xc1, xc2]))
    cases.append(("flatten", lambda: ops.flatten(xc2), [xc2]))

    cases.append(_residual_case(rng))
    cases.append(_inception_case(rng))
    return cases


def _param_store(rng, shapes):
    from .autograd import Parameter

    params = {}
    for name, shape in shapes:
        scale = 1.0 if name.endswith((".gamma", ".beta", ".bias")) else np.sqrt(2.0 / np.prod(shape[1:]))
        arr = rng.standard_normal(shape) * scale
        if name.endswith(".gamma"):
            arr = 1.0 + 0.1 * arr
        params[name] = Parameter(name, Tensor(arr, dtype=np.float64))
    return params


def _residual_case(rng):
    shapes = [
        ("conv1.weight", (4, 2, 3, 3)),
        ("bn1.gamma", (4,)),
        ("bn1.beta", (4,)),
        ("conv2.weight", (4, 4, 3, 3)),
        ("bn2.gamma", (4,)),
        ("bn2.beta", (4,)),
        ("proj.weight", (4, 2, 1, 1)),
        ("proj_bn.gamma", (4,)),
        ("proj_bn.beta", (4,)),
    ]
    params = _param_store(rng, shapes)
    stats = {n: RunningStats(4, dtype=np.float64) for n in ("bn1", "bn2", "proj_bn")}
    view = ParamView(params, stats)
    x = _t(rng, 2, 2, 6, 6)
    tensors = [x] + [p.tensor for p in params.values()]
    return (
        "residual_block",
        lambda: residual_block(x, view, stride=2, projection=True, mode="train"),
        tensors,
    )


def _inception_case(rng):
    from .nets import inception_param_shapes

    branches = (BranchSpec("1x1", 2), BranchSpec("3x3", 3, reduce_channels=2))
    params = _param_store(rng, inception_param_shapes(3, branches))
    view = ParamView(params, {})
    x = _t(rng, 2, 3, 5, 5)
    tensors = [x] + [p.tensor for p in params.values()]
    return "inception_block", lambda: inception_block(x, branches, view), tensors


MODEL_SPECS = {
    "plain-alexnet-style": dict(depth_units=3, width_base=2, dropout_p=0.3),
    "small-filter-vgg-style": dict(depth_units=3, width_base=2, dropout_p=0.3),
    "inception-style": dict(depth_units=2, width_base=4, dropout_p=0.3),
    "residual-style": dict(depth_units=2, width_base=3, dropout_p=0.0),
}


def model_case(family, seed=0):
    spec = ArchitectureSpec(family=family, input_side=8, input_channels=3, num_classes=3, **MODEL_SPECS[family])
    model = build_architecture(spec, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 99)
    # zero-initialized biases put whole channels exactly on a ReLU kink; check at a generic point
    for name, p in model.parameters.items():
        if name.endswith((".bias", ".beta")):
            p.tensor.data = p.data + 0.1 * rng.standard_normal(p.data.shape)
    x = Tensor(rng.random((3, 3, 8, 8)), dtype=np.float64)
    labels = rng.integers(0, 3, size=3)

    def forward():
        # fixed dropout stream so every evaluation draws the same mask
        logits = model.forward(x, mode="train", rng=np.random.default_rng(seed))
        return ops.softmax_cross_entropy(logits, labels)

    return f"model[{family}]", forward, [p.tensor for p in model.parameters.values()]


def run(families=None, include_ops=True):
    """Run the suite; returns [(name, worst relative error, seconds)]."""
    from .nets import FAMILIES

    families = FAMILIES if families is None else families
    cases = _op_cases() if include_ops else []
    cases += [model_case(f) for f in families]
    results = []
    for name, fwd, tensors in cases:
        t0 = time.perf_counter()
        results.append((name, check(fwd, tensors), time.perf_counter() - t0))
    return results
