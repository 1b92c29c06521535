"""Progressive last-to-first unfreezing."""
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..evalkit import evaluate
from ..nets import ordered_param_groups
from .checkpoint import save_checkpoint
from .loop import train

log = logging.getLogger(__name__)


@dataclass
class FineTuneState:
    round: int = -1
    unfrozen_groups: list = field(default_factory=list)
    history: list = field(default_factory=list)
    best_round: int = -1
    best_checkpoint: object = None
    stop_reason: str = None
    schedule: list = field(default_factory=list)
    epochs: list = field(default_factory=list)


def progressive_finetune(
    model,
    data,
    config,
    patience=1,
    min_delta=0.0,
    eval_data=None,
    evaluator=None,
    checkpoint_dir=None,
    train_fn=train,
):
    """Unfreeze one more group per round (head first) until eval Top-1 stalls.

    Round r trains groups[:r+1]; the head runs at base_lr and earlier groups
    at base_lr * pretrained_lr_scale.  Stops after ``patience`` consecutive
    rounds without beating best + min_delta, or when groups run out.
    Returns (best model, FineTuneState).
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if evaluator is None:
        if eval_data is None:
            raise ValueError("pass eval_data or an evaluator")
        evaluator = lambda m: evaluate(m, eval_data, ks=(1,)).topk[1]  # noqa: E731
    if int(data.y.max()) >= model.spec.num_classes:
        raise ValueError(
            f"model head has {model.spec.num_classes} outputs but labels reach {int(data.y.max())}"
        )
    groups = ordered_param_groups(model)
    head = groups[0]
    state = FineTuneState()
    best, best_model, stale = float("-inf"), None, 0
    for r in range(len(groups)):
        unfrozen = groups[: r + 1]
        scales = {g: (1.0 if g == head else config.pretrained_lr_scale) for g in unfrozen}
        model, hist = train_fn(model, data, config, unfrozen, lr_scale=scales, tag=f"round{r}")
        for row in hist:
            state.epochs.append(dict(row, round=r))
        acc = float(evaluator(model))
        state.round = r
        state.unfrozen_groups = list(unfrozen)
        state.schedule.append(list(unfrozen))
        state.history.append(acc)
        log.info("round %d unfrozen=%s top1=%.4f", r, unfrozen, acc)
        if acc > best + min_delta:
            best, stale = acc, 0
            state.best_round = r
            best_model = model.copy()
            if checkpoint_dir is not None:
                path = Path(checkpoint_dir) / "best.ckpt"
                save_checkpoint(best_model, path)
                state.best_checkpoint = str(path)
            else:
                state.best_checkpoint = f"memory:round{r}"
        else:
            stale += 1
            if stale >= patience:
                state.stop_reason = "improvement-exhausted"
                break
    else:
        state.stop_reason = "groups-exhausted"
    return best_model, state
