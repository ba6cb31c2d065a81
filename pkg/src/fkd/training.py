"""Full-batch training loop with best-validation checkpointing."""
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import AdamState, adam_step, cross_entropy


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


@dataclass
class FitResult:
    params: object
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = float("nan")
    probs: np.ndarray = None  # predictions of the best parameters on every node


def accuracy(probs, y, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float(np.mean(np.argmax(probs[mask], axis=1) == np.asarray(y)[mask]))


def fit_params(params, objective, predict, y, masks, *, epochs, lr, weight_decay,
               stochastic=False, label="model"):
    """Minimize ``objective`` with Adam and keep the best-validation parameters.

    ``objective(variables)`` returns ``(loss_tensor, probs)`` and ``predict(params)``
    returns probabilities for frozen parameters. Epoch ``e`` in the history
    describes the parameters after ``e`` updates, so epoch 0 is the
    initialization. When ``stochastic`` is false the training forward doubles as
    the evaluation forward. Best = highest val accuracy, ties to lower val loss,
    then earlier epoch.
    """
    state = AdamState(lr=lr, weight_decay=weight_decay)
    result = FitResult(params.copy())
    best_key = None

    def record(epoch, train_loss, probs):
        nonlocal best_key
        if not np.all(np.isfinite(probs)):
            raise TrainingDivergedError(f"{label}: non-finite predictions at epoch {epoch}")
        val_loss = cross_entropy(probs, y, masks.val) if masks.val.any() else float("nan")
        rec = EpochRecord(epoch, float(train_loss), float(val_loss),
                          accuracy(probs, y, masks.train), accuracy(probs, y, masks.val))
        result.history.append(rec)
        key = (rec.val_acc, -rec.val_loss if np.isfinite(rec.val_loss) else -np.inf)
        if best_key is None or key > best_key:
            best_key = key
            result.params = params.copy()
            result.best_epoch = epoch
            result.best_val_acc = rec.val_acc
            result.probs = probs

    for epoch in range(epochs):
        names = list(params)
        V = {k: ad.variable(params[k]) for k in names}
        loss, probs = objective(V)
        lval = float(loss.value)
        if not np.isfinite(lval):
            raise TrainingDivergedError(f"{label}: non-finite loss {lval} at epoch {epoch} (lr={lr})")
        if stochastic:
            probs = predict(params)
        record(epoch, lval, probs)
        grads = ad.gradients(loss, [V[k] for k in names])
        adam_step(params, dict(zip(names, grads)), state)
        if not all(np.all(np.isfinite(p)) for p in params.values()):
            raise TrainingDivergedError(f"{label}: non-finite parameters after epoch {epoch} (lr={lr})")
    loss, probs = objective(params.as_constants())
    if stochastic:
        probs = predict(params)
    record(epochs, float(loss.value), probs)
    return result
