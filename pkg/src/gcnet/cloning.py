"""Behavioural cloning: fit a policy network to optimal state-action pairs.

The transfer loss is one minus the cosine similarity between the raw
direction head and the optimal unit direction; the landing loss adds the
squared throttle error.  Training uses Adam with a reduce-on-plateau
learning-rate schedule keyed to a trajectory-level validation split, and
returns the parameters with the best recorded validation loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset, extract_pairs, split_dataset
from .errors import ConfigError, TrainingDivergedError, ZeroNormPredictionError
from .policy import PolicyNetwork

logger = logging.getLogger(__name__)

PREDICTION_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    lr0: float = 5e-5
    scheduler_factor: float = 0.9
    scheduler_patience: int = 10
    batch_size: int = 4096
    seed: int = 0
    split_fraction: float = 0.8

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr0 <= 0.0:
            raise ConfigError("lr0 must be positive")
        if not 0.0 < self.scheduler_factor < 1.0:
            raise ConfigError("scheduler_factor must lie in (0, 1)")
        if self.scheduler_patience < 1:
            raise ConfigError("scheduler_patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie in (0, 1)")


@dataclass
class TrainingHistory:
    epochs: np.ndarray            # (n,) int
    train_loss: np.ndarray        # (n,)
    val_loss: np.ndarray          # (n,)
    lr: np.ndarray                # (n,) rate in effect during the epoch
    best_epoch: int = -1
    best_val_loss: float = np.inf

    def save(self, path) -> None:
        """One record per epoch: epoch, train loss, val loss, lr."""
        header = "epoch,train_loss,val_loss,lr"
        rows = np.column_stack([self.epochs, self.train_loss, self.val_loss,
                                self.lr])
        np.savetxt(path, rows, delimiter=",", header=header, comments="",
                   fmt=["%d", "%.12e", "%.12e", "%.12e"])


# ----------------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------------

def _row_cosines(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray,
                                                                 np.ndarray]:
    """(cosine, prediction norm) per row; targets are unit vectors."""
    norms = np.linalg.norm(pred, axis=1)
    if np.any(norms <= PREDICTION_NORM_FLOOR):
        raise ZeroNormPredictionError(
            f"direction prediction norm below {PREDICTION_NORM_FLOOR:g}")
    cos = np.einsum("ij,ij->i", pred, target) / norms
    return cos, norms


def loss_transfer(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of 1 - cosine_similarity over rows of raw direction heads."""
    pred = np.atleast_2d(np.asarray(pred, float))
    target = np.atleast_2d(np.asarray(target, float))
    cos, _ = _row_cosines(pred, target)
    return float(np.mean(1.0 - cos))


def loss_landing(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared throttle error plus mean 1 - cosine_similarity.

    Rows are [u, direction]; the throttle sits first, matching the head
    layout of landing networks.
    """
    pred = np.atleast_2d(np.asarray(pred, float))
    target = np.atleast_2d(np.asarray(target, float))
    cos, _ = _row_cosines(pred[:, 1:4], target[:, 1:4])
    mse = float(np.mean((pred[:, 0] - target[:, 0]) ** 2))
    return mse + float(np.mean(1.0 - cos))


def clone_loss(kind: str, pred: np.ndarray, target: np.ndarray) -> float:
    return (loss_transfer if kind == "transfer" else loss_landing)(pred, target)


def _loss_and_head_gradients(kind: str, pred: np.ndarray,
                             target: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss plus d loss / d heads, both averaged over the batch."""
    n = pred.shape[0]
    grad = np.zeros_like(pred)
    if kind == "transfer":
        p, t = pred, target
        cos, norms = _row_cosines(p, t)
        loss = float(np.mean(1.0 - cos))
        # d(1-cos)/dp = -(t - cos * p/|p|) / |p|
        grad[:] = -(t - (cos / norms)[:, None] * p) / norms[:, None] / n
        return loss, grad
    p, t = pred[:, 1:4], target[:, 1:4]
    cos, norms = _row_cosines(p, t)
    du = pred[:, 0] - target[:, 0]
    loss = float(np.mean(du**2) + np.mean(1.0 - cos))
    grad[:, 0] = 2.0 * du / n
    grad[:, 1:4] = -(t - (cos / norms)[:, None] * p) / norms[:, None] / n
    return loss, grad


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------

class _Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(net: PolicyNetwork, dataset: Dataset, cfg: TrainConfig
          ) -> tuple[PolicyNetwork, TrainingHistory]:
    """Clone the dataset's optimal controls into the network.

    The split is trajectory-level so near-duplicate states from one arc
    never straddle the train/validation boundary.  Returns the network at
    the parameters with the lowest validation loss, plus the epoch history.
    """
    kind = dataset.problem
    train_part, val_part = split_dataset(dataset, cfg.split_fraction, cfg.seed)
    x_train, c_train = extract_pairs(train_part)
    x_val, c_val = extract_pairs(val_part)
    logger.info("cloning %s: %d training pairs, %d validation pairs",
                kind, x_train.shape[0], x_val.shape[0])

    theta = net.theta.copy()
    best_theta = theta.copy()
    best_val = np.inf
    best_epoch = -1
    adam = _Adam(theta.size, cfg.lr0)
    rng = np.random.default_rng(cfg.seed)
    n = x_train.shape[0]
    stall = 0

    epochs, train_losses, val_losses, rates = [], [], [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        running, seen = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            model = net.with_theta(theta)
            pred, cache = model.forward_batch(x_train[idx], want_cache=True)
            loss, grad_heads = _loss_and_head_gradients(kind, pred,
                                                        c_train[idx])
            grad = model.backprop_batch(cache, grad_heads)
            theta = adam.step(theta, grad)
            running += loss * idx.size
            seen += idx.size
        train_loss = running / seen
        val_loss = clone_loss(kind, net.with_theta(theta).forward_batch(x_val),
                              c_val)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(
                f"non-finite loss (train={train_loss}, val={val_loss})",
                epoch=epoch)
        epochs.append(epoch)
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        rates.append(adam.lr)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_theta = theta.copy()
            stall = 0
        else:
            stall += 1
            if stall >= cfg.scheduler_patience:
                adam.lr *= cfg.scheduler_factor
                stall = 0
                logger.info("epoch %d: no improvement for %d epochs, "
                            "lr -> %.3e", epoch, cfg.scheduler_patience,
                            adam.lr)
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            logger.info("epoch %d: train %.3e val %.3e lr %.3e",
                        epoch, train_loss, val_loss, adam.lr)

    history = TrainingHistory(
        epochs=np.asarray(epochs, int),
        train_loss=np.asarray(train_losses),
        val_loss=np.asarray(val_losses),
        lr=np.asarray(rates),
        best_epoch=best_epoch,
        best_val_loss=float(best_val) if np.isfinite(best_val) else np.inf,
    )
    return net.with_theta(best_theta), history
