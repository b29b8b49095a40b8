"""From-scratch feedforward networks that map features to probability maps.

Hidden layers use ReLU, the first two hidden layers are batch normalized,
and the output layer is a softmax so every output row is a probability map
by construction. Training minimizes an element-wise binary cross entropy
against reference probability maps; a coordinate-regression variant with a
frozen grid read-out layer and a mean-distance fine-tuning step for the
fusion read-out are also provided. All arithmetic is float64 and every
random choice (initialization, shuffling) comes from an explicit seed, so
training runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import FusionWeights
from .grid import Grid

BN_EPS = 1e-5
CLIP = 1e-12


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    bn_momentum: float = 0.9
    loss: str = "bce"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0, batch_size and learning_rate positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise ValueError("bn_momentum must lie in [0, 1)")
        if self.loss not in ("bce", "mse_coords"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    run_mean: np.ndarray
    run_var: np.ndarray


@dataclass
class MlpPositioner:
    """Feedforward probability-map network.

    ``layer_sizes`` runs from the input width to the output width; there is
    one weight matrix per consecutive pair. ``bn`` holds batch-norm state for
    the (at most two) first hidden layers. ``mode`` selects whether batch or
    running statistics normalize activations.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn: dict[int, BatchNorm]
    mode: str = "infer"
    bn_eps: float = BN_EPS

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (weights, biases, BN affine)."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        for i in sorted(self.bn):
            params.extend([self.bn[i].gamma, self.bn[i].beta])
        return params

    def forward(self, x, mode: str | None = None) -> np.ndarray:
        """Probability-map batch for a (n, input) or (input,) feature array."""
        out, _ = _forward(self, np.atleast_2d(np.asarray(x, dtype=np.float64)),
                          mode or self.mode, update_running=False)
        return out


def init(layer_sizes, seed: int) -> MlpPositioner:
    """Glorot-uniform initialized network: weights drawn from
    U(+-sqrt(6/(fan_in+fan_out))), zero biases, identity batch norm."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output width")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    n_layers = len(weights)
    bn = {}
    for i in (0, 1):
        if i < n_layers - 1:
            width = sizes[i + 1]
            bn[i] = BatchNorm(np.ones(width), np.zeros(width),
                              np.zeros(width), np.ones(width))
    return MlpPositioner(sizes, weights, biases, bn, mode="infer")


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(model: MlpPositioner, x: np.ndarray, mode: str,
             update_running: bool, momentum: float = 0.9):
    """Forward pass returning the softmax output and the backprop cache."""
    if x.shape[1] != model.layer_sizes[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match model input {model.layer_sizes[0]}")
    a = x
    cache = []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        entry = {"a_in": a, "z": z}
        if i in model.bn:
            bnp = model.bn[i]
            if mode == "train":
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_running:
                    bnp.run_mean = momentum * bnp.run_mean + (1.0 - momentum) * mu
                    bnp.run_var = momentum * bnp.run_var + (1.0 - momentum) * var
            else:
                mu, var = bnp.run_mean, bnp.run_var
            istd = 1.0 / np.sqrt(var + model.bn_eps)
            zhat = (z - mu) * istd
            y = bnp.gamma * zhat + bnp.beta
            entry.update(zhat=zhat, istd=istd, bn_train=(mode == "train"))
        else:
            y = z
        if i < model.n_layers - 1:
            a = np.maximum(y, 0.0)
            entry["y"] = y
        else:
            a = _softmax(y)
        cache.append(entry)
    return a, cache


def _backward(model: MlpPositioner, cache, dz_last: np.ndarray):
    """Gradients for every parameter given d(loss)/d(pre-softmax logits)."""
    grads_w = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    grads_bn = {}
    d = dz_last
    for i in range(model.n_layers - 1, -1, -1):
        entry = cache[i]
        if i < model.n_layers - 1:
            d = d * (entry["y"] > 0.0)
        if i in model.bn:
            bnp = model.bn[i]
            zhat, istd = entry["zhat"], entry["istd"]
            grads_bn[i] = ((d * zhat).sum(axis=0), d.sum(axis=0))
            dzhat = d * bnp.gamma
            if entry["bn_train"]:
                n = d.shape[0]
                d = (istd / n) * (n * dzhat - dzhat.sum(axis=0)
                                  - zhat * (dzhat * zhat).sum(axis=0))
            else:
                d = dzhat * istd
        grads_w[i] = d.T @ entry["a_in"]
        grads_b[i] = d.sum(axis=0)
        if i > 0:
            d = d @ model.weights[i]
    flat = []
    for gw, gb in zip(grads_w, grads_b):
        flat.extend([gw, gb])
    for i in sorted(model.bn):
        flat.extend(list(grads_bn[i]))
    return flat


def _softmax_pullback(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    inner = (dp * p).sum(axis=1, keepdims=True)
    return p * (dp - inner)


def bce_loss_grad(p: np.ndarray, targets: np.ndarray):
    """Element-wise binary cross entropy (summed over outputs, averaged over
    the batch) and its gradient with respect to the softmax output."""
    n = p.shape[0]
    pc = np.clip(p, CLIP, 1.0 - CLIP)
    loss = float(-(targets * np.log(pc) + (1.0 - targets) * np.log1p(-pc)).sum() / n)
    inside = (p > CLIP) & (p < 1.0 - CLIP)
    dp = np.where(inside, (-(targets / pc) + (1.0 - targets) / (1.0 - pc)) / n, 0.0)
    return loss, dp


def mse_coords_loss_grad(p: np.ndarray, grid_pts: np.ndarray, positions: np.ndarray):
    """Mean squared distance between the grid read-out of the maps and the
    true positions, plus its gradient with respect to the maps."""
    n = p.shape[0]
    xhat = p @ grid_pts.T
    diff = xhat - positions
    loss = float((diff ** 2).sum() / n)
    dp = (2.0 / n) * diff @ grid_pts
    return loss, dp


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _make_optimizer(cfg: TrainConfig):
    return _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(cfg.learning_rate)


def _check_finite(model: MlpPositioner, where: str) -> None:
    for p in model.parameters():
        if not np.all(np.isfinite(p)):
            raise TrainingDivergedError(f"non-finite parameters after {where}")


def _run_training(model, x, targets, cfg, loss_grad):
    """Shared minibatch loop; ``loss_grad(p, batch_idx)`` returns (loss, dp)."""
    n = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    opt = _make_optimizer(cfg)
    params = model.parameters()
    losses = []
    model.mode = "train"
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            p, cache = _forward(model, x[idx], "train", update_running=True,
                                momentum=cfg.bn_momentum)
            loss, dp = loss_grad(p, idx)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}")
            grads = _backward(model, cache, _softmax_pullback(p, dp))
            opt.step(params, grads)
            total += loss * idx.size
        _check_finite(model, f"epoch {epoch}")
        losses.append(total / n)
    model.mode = "infer"
    return model, np.asarray(losses)


def train(model: MlpPositioner, features, labels, cfg: TrainConfig):
    """Fit the network to reference probability maps with the BCE loss.

    Returns the trained model (modified in place) and the per-epoch training
    loss curve.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValueError("feature and label counts differ")
    if y.shape[1] != model.layer_sizes[-1]:
        raise ValueError("label width does not match the model output")
    return _run_training(model, x, y, cfg,
                         lambda p, idx: bce_loss_grad(p, y[idx]))


def train_coords_baseline(model: MlpPositioner, grid: Grid, features, positions,
                          cfg: TrainConfig):
    """Fit the network to coordinates through a frozen grid read-out layer.

    The read-out multiplies the probability map by the grid matrix; its
    weights are the grid itself and are never updated.
    """
    x = np.asarray(features, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64)
    if x.shape[0] != pos.shape[0]:
        raise ValueError("feature and position counts differ")
    if grid.count != model.layer_sizes[-1]:
        raise ValueError("grid size does not match the model output")
    g_pts = grid.points
    return _run_training(model, x, pos, cfg,
                         lambda p, idx: mse_coords_loss_grad(p, g_pts, pos[idx]))


def mde_loss_grad(gbar: np.ndarray, stacked: np.ndarray, positions: np.ndarray):
    """Mean Euclidean distance between read-out positions and the truth, and
    its gradient with respect to the read-out matrix (zero at zero residual)."""
    n = stacked.shape[0]
    xhat = stacked @ gbar.T
    diff = xhat - positions
    norms = np.linalg.norm(diff, axis=1)
    loss = float(norms.mean())
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = np.where(norms[:, None] > 0.0, diff / safe[:, None], 0.0)
    grad = unit.T @ stacked / n
    return loss, grad


def fusion_finetune(models, features_per_link, positions, grid: Grid,
                    cfg: TrainConfig):
    """Learn the linear fusion read-out over stacked probability maps.

    The frozen base models produce one map per link; the read-out matrix is
    initialized to averaged grid blocks (so step zero reproduces unweighted
    averaging exactly) and is then trained to minimize the mean distance
    error. The parameters achieving the lowest full-set training error are
    returned, which keeps the result no worse than the initialization.
    Returns (weights, per-epoch error curve including the initial error).
    """
    if len(models) < 2:
        raise ValueError("fusion needs at least two link models")
    if len(features_per_link) != len(models):
        raise ValueError("one feature matrix per model is required")
    pos = np.asarray(positions, dtype=np.float64)
    maps = [m.forward(np.asarray(f, dtype=np.float64), mode="infer")
            for m, f in zip(models, features_per_link)]
    stacked = np.hstack(maps)
    n_links = len(models)
    k = grid.count
    if stacked.shape[1] != n_links * k:
        raise ValueError("model output width does not match the grid")
    gbar = FusionWeights.initial(grid, n_links).matrix.copy()

    best = gbar.copy()
    best_loss, _ = mde_loss_grad(gbar, stacked, pos)
    curve = [best_loss]
    rng = np.random.default_rng(cfg.seed)
    opt = _make_optimizer(cfg)
    n = stacked.shape[0]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grad = mde_loss_grad(gbar, stacked[idx], pos[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite fusion loss at epoch {epoch}, batch offset {start}")
            opt.step([gbar], [grad])
        full_loss, _ = mde_loss_grad(gbar, stacked, pos)
        curve.append(full_loss)
        if full_loss < best_loss:
            best_loss = full_loss
            best = gbar.copy()
    weights = FusionWeights(best, n_links, k, grid.grid_id)
    return weights, np.asarray(curve)
