"""Architecture specs, model construction, head surgery, and feature taps."""
import copy
from dataclasses import asdict, dataclass, fields
from functools import partial

import numpy as np

from ..autograd import Parameter, RunningStats, Tensor, no_grad, ops
from .blocks import BranchSpec, ParamView, bn, conv, inception_block, inception_param_shapes, residual_block

FAMILIES = (
    "plain-alexnet-style",
    "small-filter-vgg-style",
    "inception-style",
    "residual-style",
)
# published architecture label -> family used for the micro analogue
ARCH_ROSTER = {
    "A": "plain-alexnet-style",
    "B": "small-filter-vgg-style",
    "C": "inception-style",
    "D": "residual-style",
    "E": "residual-style",
    "F": "residual-style",
}
MAX_STAGES = 3
FEATURES = "features"


@dataclass
class ArchitectureSpec:
    family: str = "residual-style"
    depth_units: int = 3
    input_side: int = 32
    input_channels: int = 3
    num_classes: int = 26
    dropout_p: float = 0.5
    width_base: int = 8

    def validate(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.depth_units < 1:
            raise ValueError("depth_units must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.width_base < 1 or self.input_channels < 1 or self.input_side < 1:
            raise ValueError("width_base, input_channels and input_side must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**data)


def stage_plan(depth_units):
    """(stage index, stride) per unit: up to three stages, stride 2 entering each later stage."""
    n_stages = min(depth_units, MAX_STAGES)
    per = [depth_units // n_stages + (1 if s < depth_units % n_stages else 0) for s in range(n_stages)]
    plan = []
    for s, count in enumerate(per):
        for j in range(count):
            plan.append((s, 2 if s > 0 and j == 0 else 1))
    return plan


class _Builder:
    def __init__(self, spec, rng, dtype):
        self.spec = spec
        self.rng = rng
        self.dtype = dtype
        self.params = {}
        self.stats = {}
        self.stages = []
        self.side = spec.input_side

    def _add(self, name, arr):
        self.params[name] = Parameter(name, Tensor(arr.astype(self.dtype), dtype=self.dtype))

    def he(self, name, shape):
        fan_in = int(np.prod(shape[1:]))
        self._add(name, self.rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))

    def zeros(self, name, shape):
        self._add(name, np.zeros(shape))

    def conv(self, name, out_ch, in_ch, k, bias=True):
        self.he(name + ".weight", (out_ch, in_ch, k, k))
        if bias:
            self.zeros(name + ".bias", (out_ch,))

    def bn(self, name, ch):
        self._add(name + ".gamma", np.ones(ch))
        self.zeros(name + ".beta", (ch,))
        stats = RunningStats(ch, dtype=self.dtype)
        stats.reset()
        self.stats[name] = stats

    def fc(self, name, out_dim, in_dim):
        self.he(name + ".weight", (out_dim, in_dim))
        self.zeros(name + ".bias", (out_dim,))

    def stage(self, name, fn):
        self.stages.append((name, fn))

    def downsample(self, name, pool=True):
        if self.side < 2:
            raise ValueError(
                f"input_side {self.spec.input_side} too small: stage '{name}' would "
                f"downsample a {self.side}x{self.side} map"
            )
        # 2x2/2 max-pool floors; 3x3/2 padded conv rounds up
        self.side = self.side // 2 if pool else (self.side - 1) // 2 + 1


# stage functions: (x, p, mode, rng) -> x


def _conv_relu_pool(x, p, mode, rng, name, pad, pool):
    h = ops.relu(conv(p, name + ".conv", x, pad=pad))
    return ops.pool2d(h, "max", k=2, stride=2) if pool else h


def _conv_bn_relu(x, p, mode, rng, name):
    return ops.relu(bn(p, name + ".bn", conv(p, name + ".conv", x, pad=1), mode))


def _res_stage(x, p, mode, rng, name, stride, projection):
    return residual_block(x, p.sub(name + "."), stride=stride, projection=projection, mode=mode)


def _inception_stage(x, p, mode, rng, name, branches, pool_first):
    if pool_first:
        x = ops.pool2d(x, "max", k=2, stride=2)
    return inception_block(x, branches, p.sub(name + "."))


def _flatten(x, p, mode, rng):
    return ops.flatten(x)


def _global_pool(x, p, mode, rng):
    return ops.flatten(ops.pool2d(x, "global-avg"))


def _fc_relu_dropout(x, p, mode, rng, name, dropout_p):
    h = ops.relu(ops.affine(x, p[name + ".weight"], p[name + ".bias"]))
    return ops.dropout(h, dropout_p, mode=mode, rng=rng)


def _head(x, p, mode, rng, dropout_p):
    if dropout_p:
        x = ops.dropout(x, dropout_p, mode=mode, rng=rng)
    return ops.affine(x, p["head.weight"], p["head.bias"])


def _build_alexnet(b):
    s, w = b.spec, b.spec.width_base
    in_ch = s.input_channels
    for i in range(1, s.depth_units + 1):
        out_ch = w if i == 1 else (2 * w if i == 2 else 4 * w)
        k, pad = (5, 2) if i == 1 else (3, 1)
        name = f"conv{i}"
        pool = i <= 2 or i == s.depth_units
        b.conv(name + ".conv", out_ch, in_ch, k)
        if pool:
            b.downsample(name)
        b.stage(name, partial(_conv_relu_pool, name=name, pad=pad, pool=pool))
        in_ch = out_ch
    hidden = 8 * w
    b.stage("flatten", _flatten)
    b.fc("fc1", hidden, in_ch * b.side * b.side)
    b.stage("fc1", partial(_fc_relu_dropout, name="fc1", dropout_p=s.dropout_p))
    b.fc("head", s.num_classes, hidden)
    b.stage("head", partial(_head, dropout_p=0.0))


def _build_vgg(b):
    s, w = b.spec, b.spec.width_base
    plan = stage_plan(s.depth_units)
    in_ch = s.input_channels
    for i, (stage, _) in enumerate(plan, start=1):
        out_ch = w * 2**stage
        name = f"conv{i}"
        pool = i == len(plan) or plan[i][0] != stage
        b.conv(name + ".conv", out_ch, in_ch, 3)
        if pool:
            b.downsample(name)
        b.stage(name, partial(_conv_relu_pool, name=name, pad=1, pool=pool))
        in_ch = out_ch
    hidden = 8 * w
    b.stage("flatten", _flatten)
    b.fc("fc1", hidden, in_ch * b.side * b.side)
    b.stage("fc1", partial(_fc_relu_dropout, name="fc1", dropout_p=s.dropout_p))
    b.fc("head", s.num_classes, hidden)
    b.stage("head", partial(_head, dropout_p=0.0))


def inception_branches(width):
    """Default branch widths for a stage of nominal width ``width``."""
    half, quarter = max(1, width // 2), max(1, width // 4)
    return (
        BranchSpec("1x1", half),
        BranchSpec("3x3", half, reduce_channels=quarter),
        BranchSpec("5x5", quarter, reduce_channels=max(1, width // 8)),
        BranchSpec("pool-proj", quarter),
    )


def _build_inception(b):
    s, w = b.spec, b.spec.width_base
    b.conv("stem.conv", w, s.input_channels, 3)
    b.stage("stem", partial(_conv_relu_pool, name="stem", pad=1, pool=False))
    in_ch = w
    for i, (stage, stride) in enumerate(stage_plan(s.depth_units), start=1):
        name = f"block{i}"
        branches = inception_branches(w * 2**stage)
        if stride == 2:
            b.downsample(name)
        for pname, shape in inception_param_shapes(in_ch, branches):
            if pname.endswith(".bias"):
                b.zeros(f"{name}.{pname}", shape)
            else:
                b.he(f"{name}.{pname}", shape)
        b.stage(name, partial(_inception_stage, name=name, branches=branches, pool_first=stride == 2))
        in_ch = sum(br.out_channels for br in branches)
    b.stage("pool", _global_pool)
    b.fc("head", s.num_classes, in_ch)
    b.stage("head", partial(_head, dropout_p=s.dropout_p))


def _build_resnet(b):
    s, w = b.spec, b.spec.width_base
    b.conv("stem.conv", w, s.input_channels, 3, bias=False)
    b.bn("stem.bn", w)
    b.stage("stem", partial(_conv_bn_relu, name="stem"))
    in_ch = w
    for i, (stage, stride) in enumerate(stage_plan(s.depth_units), start=1):
        name = f"block{i}"
        out_ch = w * 2**stage
        projection = stride != 1 or out_ch != in_ch
        if stride == 2:
            b.downsample(name, pool=False)
        b.conv(f"{name}.conv1", out_ch, in_ch, 3, bias=False)
        b.bn(f"{name}.bn1", out_ch)
        b.conv(f"{name}.conv2", out_ch, out_ch, 3, bias=False)
        b.bn(f"{name}.bn2", out_ch)
        if projection:
            b.conv(f"{name}.proj", out_ch, in_ch, 1, bias=False)
            b.bn(f"{name}.proj_bn", out_ch)
        b.stage(name, partial(_res_stage, name=name, stride=stride, projection=projection))
        in_ch = out_ch
    b.stage("pool", _global_pool)
    b.fc("head", s.num_classes, in_ch)
    b.stage("head", partial(_head, dropout_p=0.0))


_BUILDERS = {
    "plain-alexnet-style": _build_alexnet,
    "small-filter-vgg-style": _build_vgg,
    "inception-style": _build_inception,
    "residual-style": _build_resnet,
}


class ModelState:
    """Parameters, batch-norm statistics, and the forward program of one network."""

    head_name = "head"

    def __init__(self, spec, parameters, running_stats, stages):
        self.spec = spec
        self.parameters = parameters
        self.running_stats = running_stats
        self.stages = stages

    def __call__(self, x, mode="eval", rng=None):
        return self.forward(x, mode=mode, rng=rng)

    def forward(self, x, mode="eval", rng=None, stop_at=None):
        """Run the network; with ``stop_at`` return the output of that stage
        (or the head input for ``"features"``) instead of the logits."""
        if stop_at is not None and stop_at not in self.tap_names():
            raise KeyError(f"unknown layer {stop_at!r}; valid names: {self.tap_names()}")
        p = ParamView(self.parameters, self.running_stats)
        x = x if isinstance(x, Tensor) else Tensor(x, dtype=self.dtype)
        frozen = self._frozen_groups() if mode == "train" else set()
        for name, fn in self.stages:
            if stop_at == FEATURES and name == self.head_name:
                return x
            # frozen stages run in inference mode: no BN statistic updates, no dropout
            x = fn(x, p, "eval" if name in frozen else mode, rng)
            if name == stop_at:
                return x
        return x

    @property
    def dtype(self):
        return next(iter(self.parameters.values())).data.dtype

    @property
    def groups(self):
        """Parameter-owning stages, first to last."""
        seen = []
        for name in self.parameters:
            g = name.split(".", 1)[0]
            if g not in seen:
                seen.append(g)
        order = [name for name, _ in self.stages]
        return sorted(seen, key=order.index)

    def _frozen_groups(self):
        status = {}
        for name, p in self.parameters.items():
            g = name.split(".", 1)[0]
            status[g] = status.get(g, False) or p.trainable
        return {g for g, any_trainable in status.items() if not any_trainable}

    def tap_names(self):
        return [name for name, _ in self.stages] + [FEATURES]

    def group_params(self, group):
        return [p for n, p in self.parameters.items() if n.split(".", 1)[0] == group]

    def set_trainable(self, groups):
        groups = set(groups)
        unknown = groups - set(self.groups)
        if unknown:
            raise KeyError(f"unknown parameter groups {sorted(unknown)}")
        for name, p in self.parameters.items():
            p.trainable = name.split(".", 1)[0] in groups

    def trainable_groups(self):
        return [g for g in self.groups if any(p.trainable for p in self.group_params(g))]

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters.values()))

    def copy(self):
        params = {}
        for name, p in self.parameters.items():
            t = Tensor(p.data.copy(), dtype=p.data.dtype)
            params[name] = Parameter(name, t, p.group_index, p.trainable)
        stats = {}
        for name, s in self.running_stats.items():
            stats[name] = copy.deepcopy(s)
        return ModelState(copy.deepcopy(self.spec), params, stats, list(self.stages))

    def load_arrays(self, other):
        """Copy parameter values and statistics from another model of the same layout."""
        for name, p in other.parameters.items():
            self.parameters[name].tensor.data = p.data.copy()
        for name, s in other.running_stats.items():
            self.running_stats[name] = copy.deepcopy(s)


def _finalize_groups(model):
    for idx, g in enumerate(ordered_param_groups(model)):
        for p in model.group_params(g):
            p.group_index = idx


def build_architecture(spec, seed=0, dtype=np.float32):
    """Construct and initialize a model; He-normal weights, zero biases, unit BN gains."""
    spec = copy.deepcopy(spec).validate()
    builder = _Builder(spec, np.random.default_rng(seed), np.dtype(dtype))
    _BUILDERS[spec.family](builder)
    model = ModelState(spec, builder.params, builder.stats, builder.stages)
    _finalize_groups(model)
    return model


def replace_classifier_head(model, new_num_classes, seed=0):
    """Return a copy of ``model`` whose classifier is freshly initialized for
    ``new_num_classes`` outputs; every other parameter is copied unchanged."""
    if new_num_classes < 2:
        raise ValueError("new_num_classes must be >= 2")
    out = model.copy()
    old_w = out.parameters["head.weight"]
    feat_dim = old_w.data.shape[1]
    rng = np.random.default_rng([seed, 0x4EAD])
    dtype = old_w.data.dtype
    w = (rng.standard_normal((new_num_classes, feat_dim)) * np.sqrt(2.0 / feat_dim)).astype(dtype)
    out.parameters["head.weight"] = Parameter("head.weight", Tensor(w, dtype=dtype), 0, True)
    out.parameters["head.bias"] = Parameter(
        "head.bias", Tensor(np.zeros(new_num_classes, dtype=dtype), dtype=dtype), 0, True
    )
    out.spec.num_classes = new_num_classes
    return out


def ordered_param_groups(model):
    """Group names from the classifier head back to the first layer."""
    return list(reversed(model.groups))


def extract_features(model, layer=FEATURES, batch=None):
    """Eval-mode activations at ``layer``, flattened to N x D (numpy)."""
    if layer not in model.tap_names():
        raise KeyError(f"unknown layer {layer!r}; valid names: {model.tap_names()}")
    with no_grad():
        out = model.forward(batch, mode="eval", stop_at=layer)
    return out.data.reshape(out.shape[0], -1)
