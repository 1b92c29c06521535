"""Minibatch SGD training and black-box feature-extraction fitting."""
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..autograd import SGD, Tensor, backward, ops
from ..evalkit import predict
from ..nets import FEATURES, extract_features
from ..seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    base_lr: float = 0.05
    pretrained_lr_scale: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    step_size: int = 10
    gamma: float = 0.1
    epochs_per_round: int = 5
    batch_size: int = 32
    seed: int = 0

    def validate(self):
        if self.base_lr < 0:
            raise ValueError("base_lr must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.epochs_per_round < 1:
            raise ValueError("epochs_per_round must be >= 1")
        if self.step_size < 1 or self.batch_size < 1:
            raise ValueError("step_size and batch_size must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)


def lr_at(config, epoch):
    """Step decay: base_lr * gamma ** floor(epoch / step_size)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.base_lr * config.gamma ** (epoch // config.step_size)


def shuffle_seed(config, epoch, tag=""):
    return derive_seed(config.seed, "shuffle", tag, epoch)


def _top1(model, data):
    return float(np.mean(predict(model, data).argmax(axis=1) == data.y))


def train(model, data, config, trainable_groups, eval_data=None, lr_scale=None, tag=""):
    """Run ``epochs_per_round`` epochs of SGD updating only ``trainable_groups``.

    ``lr_scale`` maps group name -> multiplier on the scheduled rate.
    Returns (model, history) where history holds one row per epoch.
    """
    config.validate()
    if not trainable_groups:
        raise ValueError("at least one trainable group is required")
    if data is None or len(data) == 0:
        raise ValueError("empty training data")
    model.set_trainable(trainable_groups)
    params = [p for p in model.parameters.values() if p.trainable]
    opt = SGD(params, config.momentum, config.weight_decay)
    scales = None
    if lr_scale:
        scales = {p.name: lr_scale.get(p.name.split(".", 1)[0], 1.0) for p in params}
    history = []
    for epoch in range(config.epochs_per_round):
        lr = lr_at(config, epoch)
        rng = np.random.default_rng(derive_seed(config.seed, "dropout", tag, epoch))
        total, count = 0.0, 0
        for x, y in data.batches(config.batch_size, shuffle_seed(config, epoch, tag)):
            opt.zero_grad()
            loss = ops.softmax_cross_entropy(model.forward(x, mode="train", rng=rng), y)
            backward(loss)
            opt.step(lr, scales)
            total += float(loss.data) * len(y)
            count += len(y)
        row = {"epoch": epoch, "lr": lr, "loss": total / count}
        row["eval_top1"] = _top1(model, eval_data) if eval_data is not None else None
        log.debug("%s epoch %d lr %.4g loss %.4f", tag or "train", epoch, lr, row["loss"])
        history.append(row)
    return model, history


def feature_extraction_fit(model, data, config, eval_data=None):
    """Fit only the classifier head on frozen head-input features.

    Equivalent to softmax regression on ``extract_features(model, FEATURES)``
    with the same schedule and batch order as ``train``.
    """
    config.validate()
    if len(data) == 0:
        raise ValueError("empty training data")
    moving = [g for g in model.trainable_groups() if g != model.head_name]
    if moving:
        raise ValueError(f"feature extraction requires a frozen body; trainable groups: {moving}")
    head = model.group_params(model.head_name)
    for p in head:
        p.trainable = True
    feats = np.concatenate(
        [extract_features(model, FEATURES, x) for x, _ in data.batches(config.batch_size)], axis=0
    )
    w, b = model.parameters["head.weight"], model.parameters["head.bias"]
    opt = SGD([w, b], config.momentum, config.weight_decay)
    history = []
    for epoch in range(config.epochs_per_round):
        lr = lr_at(config, epoch)
        order = np.random.default_rng(shuffle_seed(config, epoch)).permutation(len(data))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            logits = ops.affine(Tensor(feats[idx]), w.tensor, b.tensor)
            loss = ops.softmax_cross_entropy(logits, data.y[idx])
            backward(loss)
            opt.step(lr)
            total += float(loss.data) * len(idx)
        row = {"epoch": epoch, "lr": lr, "loss": total / len(order)}
        row["eval_top1"] = _top1(model, eval_data) if eval_data is not None else None
        history.append(row)
    return model, history


def history_text(history):
    """Per-epoch rows ``round,epoch,lr,loss,eval_top1`` (CSV with header)."""
    lines = ["round,epoch,lr,loss,eval_top1"]
    for row in history:
        top1 = "" if row.get("eval_top1") is None else repr(float(row["eval_top1"]))
        lines.append(f"{row.get('round', 0)},{row['epoch']},{row['lr']!r},{row['loss']!r},{top1}")
    return "\n".join(lines) + "\n"
