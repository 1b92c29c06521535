"""Named parameters and momentum SGD."""
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(eq=False)
class Parameter:
    name: str
    tensor: Tensor
    group_index: int = 0
    _trainable: bool = True

    def __post_init__(self):
        self.tensor.requires_grad = self._trainable

    @property
    def trainable(self):
        return self._trainable

    @trainable.setter
    def trainable(self, flag):
        self._trainable = bool(flag)
        self.tensor.requires_grad = self._trainable
        if not flag:
            self.tensor.grad = None

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay.

    v <- momentum * v + grad + weight_decay * w;  w <- w - lr * v.
    Velocity buffers persist across steps; frozen parameters are skipped.
    """

    def __init__(self, params, momentum=0.0, weight_decay=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def zero_grad(self):
        for p in self.params:
            p.tensor.grad = None

    def step(self, lr, lr_scale=None):
        """Apply one update; ``lr_scale`` maps parameter name -> lr multiplier."""
        for p in self.params:
            if not p.trainable:
                continue
            if p.grad is None:
                raise RuntimeError(f"trainable parameter {p.name!r} has no gradient")
            w = p.tensor.data
            d = p.grad
            if self.weight_decay:
                d = d + self.weight_decay * w
            v = self.velocity.get(p.name)
            if v is None or not self.momentum:
                v = np.array(d, dtype=w.dtype)
            else:
                v = self.momentum * v + d
            self.velocity[p.name] = v
            step_lr = lr if lr_scale is None else lr * lr_scale.get(p.name, 1.0)
            p.tensor.data = w - np.asarray(step_lr, dtype=w.dtype) * v


def sgd_step(params, lr, momentum=0.0, weight_decay=0.0, state=None):
    """Functional form of one SGD step; pass the returned optimizer back as ``state``."""
    opt = state if state is not None else SGD(params, momentum, weight_decay)
    opt.step(lr)
    return opt
