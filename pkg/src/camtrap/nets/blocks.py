"""Building blocks shared by the architecture families.

Blocks read their weights through a ``ParamView``: a mapping from
block-relative names (``"conv1.weight"``) to tensors, plus access to the
batch-norm running statistics under the same prefix.
"""
from dataclasses import dataclass

from ..autograd import ops


class ParamView:
    """Prefixed, read-only window onto a model's parameters and BN statistics."""

    def __init__(self, params, stats, prefix=""):
        self._params = params
        self._stats = stats
        self.prefix = prefix

    def __getitem__(self, name):
        return self._params[self.prefix + name].tensor

    def __contains__(self, name):
        return self.prefix + name in self._params

    def stats(self, name):
        return self._stats[self.prefix + name]

    def sub(self, prefix):
        return ParamView(self._params, self._stats, self.prefix + prefix)


def conv(p, name, x, stride=1, pad=0):
    bias = p[name + ".bias"] if name + ".bias" in p else None
    return ops.conv2d(x, p[name + ".weight"], bias, stride=stride, pad=pad)


def bn(p, name, x, mode, momentum=0.1, eps=1e-5):
    return ops.batchnorm2d(
        x, p[name + ".gamma"], p[name + ".beta"], p.stats(name), mode=mode, momentum=momentum, eps=eps
    )


def residual_block(x, p, stride=1, projection=False, mode="train"):
    """Basic two-convolution residual unit with post-sum ReLU.

    branch = conv3x3-bn-relu-conv3x3-bn; shortcut is identity, or a strided
    1x1 conv + bn when ``projection`` is set.
    """
    x = ops.as_tensor(x)
    out_ch = p["conv1.weight"].shape[0]
    if not projection and (stride != 1 or out_ch != x.shape[1]):
        raise ops.ShapeError(
            f"residual block changes shape (stride={stride}, {x.shape[1]}->{out_ch} channels) "
            "but has no projection shortcut"
        )
    h = ops.relu(bn(p, "bn1", conv(p, "conv1", x, stride=stride, pad=1), mode))
    h = bn(p, "bn2", conv(p, "conv2", h, stride=1, pad=1), mode)
    if projection:
        short = bn(p, "proj_bn", conv(p, "proj", x, stride=stride, pad=0), mode)
    else:
        short = x
    return ops.relu(ops.add(h, short))


@dataclass(frozen=True)
class BranchSpec:
    """One inception branch.

    kind is "1x1", "3x3" (1x1 reduce then 3x3), "5x5" (1x1 reduce then 5x5)
    or "pool-proj" (3x3 max-pool then 1x1).  ``pad`` overrides the
    size-preserving default.
    """

    kind: str
    out_channels: int
    reduce_channels: int = 0
    pad: int = -1

    @property
    def kernel(self):
        return {"1x1": 1, "3x3": 3, "5x5": 5, "pool-proj": 1}[self.kind]

    def padding(self):
        return self.kernel // 2 if self.pad < 0 else self.pad


def inception_param_shapes(in_ch, branches):
    """(name, shape) for every weight/bias of an inception block."""
    shapes = []
    for i, b in enumerate(branches):
        if b.kind in ("3x3", "5x5"):
            shapes += [
                (f"b{i}.reduce.weight", (b.reduce_channels, in_ch, 1, 1)),
                (f"b{i}.reduce.bias", (b.reduce_channels,)),
                (f"b{i}.conv.weight", (b.out_channels, b.reduce_channels, b.kernel, b.kernel)),
            ]
        elif b.kind in ("1x1", "pool-proj"):
            shapes.append((f"b{i}.conv.weight", (b.out_channels, in_ch, 1, 1)))
        else:
            raise ValueError(f"unknown inception branch kind {b.kind!r}")
        shapes.append((f"b{i}.conv.bias", (b.out_channels,)))
    return shapes


def inception_block(x, branches, p):
    """Run every branch on ``x`` and concatenate along channels.

    Each branch ends in a ReLU, so a 1x1 identity branch passes
    non-negative inputs through unchanged.
    """
    outs = []
    for i, b in enumerate(branches):
        h = x
        if b.kind in ("3x3", "5x5"):
            h = ops.relu(conv(p, f"b{i}.reduce", h))
        elif b.kind == "pool-proj":
            h = ops.pool2d(h, "max", k=3, stride=1, pad=1)
        h = ops.relu(conv(p, f"b{i}.conv", h, pad=b.padding() if b.kind != "pool-proj" else 0))
        if h.shape[2:] != x.shape[2:]:
            raise ops.ShapeError(
                f"inception branch {i} ({b.kind}) produces spatial size {h.shape[2:]}, "
                f"expected {x.shape[2:]}"
            )
        outs.append(h)
    return ops.concat(outs, axis=1)
