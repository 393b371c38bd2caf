"""Training protocol: MSE objective, ADAM, plateau LR halving, early
stopping, volume-level validation split, and k-fold cross-validation with
best-fold selection.

The MSE objective regresses the network's pre-softmax class scores onto
one-hot targets. Regressing the softmax probabilities instead stalls: once
the dominant background class saturates, the softmax Jacobian vanishes and
thin interface bands never recover. Inference still reads the softmax head.

Datasets are lists of Sample tiles (256-wide slices of B-scans with their
label tiles) tagged by volume id; splits and folds always keep a volume's
tiles together. Validation loss drives both the plateau rule and early
stopping, and the returned model is the snapshot from the best validation
epoch, running statistics included.
"""

from dataclasses import dataclass, field

import numpy as np

from . import augment as aug
from .data import slice_width
from .network import Network, build_network
from .tensor import AdamState, TensorND, adam_step, mse_loss, no_grad, zero_grads


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 2
    plateau_patience: int = 5
    early_stop_patience: int = 10
    lr_decay_factor: float = 0.5
    validation_fraction: float = 0.10
    folds: int = 5
    max_epochs: int = 200
    seed: int = 0
    augment: bool = False
    improvement_tol: float = 1e-7

    def __post_init__(self):
        if not (0.0 < self.validation_fraction < 1.0):
            raise TrainingError("validation_fraction must be in (0, 1)")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise TrainingError("patience values must be at least 1")
        if not (0.0 < self.lr_decay_factor < 1.0):
            raise TrainingError("lr_decay_factor must be in (0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.folds < 1:
            raise TrainingError("learning_rate, batch_size, max_epochs and folds must be positive")

    def to_dict(self):
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Sample:
    volume_id: str
    image: np.ndarray  # (H, tile_w) uint8
    label: np.ndarray  # (H, tile_w) uint8


def tiles_from_arrays(volume_id, image, label, tile_w=256):
    slices = slice_width(image, tile_w)
    return [
        Sample(volume_id, np.ascontiguousarray(it), np.ascontiguousarray(lt))
        for it, lt in zip(slices.tiles_of(image), slices.tiles_of(label))
    ]


def tiles_from_volume(vol, tile_w=256):
    if vol.labels is None:
        raise TrainingError(f"volume {vol.name or '?'} has no labels; cannot train on it")
    samples = []
    for scan, lab in zip(vol.bscans, vol.labels):
        samples.extend(tiles_from_arrays(vol.name, scan, lab, tile_w))
    return samples


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stopping_epoch: int = 0
    best_val_loss: float = float("inf")
    best_epoch: int = 0

    def append(self, epoch, train_loss, val_loss, lr):
        self.epochs.append(epoch)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.lr.append(lr)

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("epoch,train_loss,val_loss,lr\n")
            for e, tl, vl, lr in zip(self.epochs, self.train_loss, self.val_loss, self.lr):
                f.write(f"{e},{tl:.8f},{vl:.8f},{lr:.8g}\n")


class LossScheduler:
    """Plateau LR halving and early stopping driven by one loss stream.

    An epoch improves when its loss is below the best seen minus the
    tolerance. Each run of ``plateau_patience`` consecutive non-improving
    epochs halves the rate; ``early_stop_patience`` consecutive non-improving
    epochs request a stop.
    """

    def __init__(self, lr, plateau_patience=5, early_stop_patience=10, factor=0.5, tol=1e-7):
        self.lr = lr
        self.plateau_patience = plateau_patience
        self.early_stop_patience = early_stop_patience
        self.factor = factor
        self.tol = tol
        self.best = float("inf")
        self.streak = 0
        self.should_stop = False

    def update(self, loss) -> bool:
        improved = loss < self.best - self.tol
        if improved:
            self.best = loss
            self.streak = 0
        else:
            self.streak += 1
            if self.streak >= self.early_stop_patience:
                self.should_stop = True
            elif self.streak % self.plateau_patience == 0:
                self.lr *= self.factor
        return improved


def one_hot_target(labels, num_classes, dtype):
    classes = np.arange(num_classes, dtype=labels.dtype).reshape(1, num_classes, 1, 1)
    return (labels[:, None, :, :] == classes).astype(dtype)


def _batch_tensors(samples, net, cfg, epoch, base_index):
    imgs = []
    labs = []
    for k, s in enumerate(samples):
        img, lab = s.image, s.label
        if cfg.augment:
            img, lab = aug.augment(img, lab, aug.sample_rng_seed(cfg.seed, base_index + k, epoch))
        imgs.append(img)
        labs.append(lab)
    x = (np.stack(imgs).astype(net.dtype) / 255.0)[:, None, :, :]
    t = one_hot_target(np.stack(labs), net.config.num_classes, net.dtype)
    return TensorND(x), TensorND(t)


def evaluate_loss(net: Network, dataset, batch_size=2) -> float:
    """Mean MSE over a dataset in eval mode."""
    if not dataset:
        raise TrainingError("cannot evaluate on an empty dataset")
    total = 0.0
    count = 0
    with no_grad():
        for i in range(0, len(dataset), batch_size):
            chunk = dataset[i : i + batch_size]
            x = (np.stack([s.image for s in chunk]).astype(net.dtype) / 255.0)[:, None, :, :]
            t = one_hot_target(np.stack([s.label for s in chunk]), net.config.num_classes, net.dtype)
            loss = mse_loss(net.forward_logits(TensorND(x), "eval"), TensorND(t))
            total += loss.item() * len(chunk)
            count += len(chunk)
    return total / count


def _snapshot(net):
    return (
        {k: v.values.copy() for k, v in net.named_parameters().items()},
        {k: v.copy() for k, v in net.buffers().items()},
    )


def _restore(net, snap):
    params, buffers = snap
    for k, v in net.named_parameters().items():
        v.values[...] = params[k]
    for k, v in net.buffers().items():
        v[...] = buffers[k]


def volume_ids(dataset):
    seen = []
    for s in dataset:
        if s.volume_id not in seen:
            seen.append(s.volume_id)
    return seen


def split_validation(dataset, fraction=0.10, seed=0):
    """Disjoint, exhaustive volume-level split; deterministic per seed."""
    vols = volume_ids(dataset)
    n = len(vols)
    if n < 2:
        raise TrainingError(f"need at least 2 volumes to split, got {n}")
    n_val = int(np.floor(n * fraction + 0.5))
    if n_val < 1 or n_val >= n:
        raise TrainingError(f"validation fraction {fraction} yields an empty split for {n} volumes")
    rng = np.random.default_rng(seed)
    order = [vols[i] for i in rng.permutation(n)]
    val_ids = set(order[:n_val])
    train_set = [s for s in dataset if s.volume_id not in val_ids]
    val_set = [s for s in dataset if s.volume_id in val_ids]
    return train_set, val_set


def train(net: Network, dataset, cfg: TrainConfig, val_set=None, log=None):
    """Train until early stopping or max_epochs; returns (net, history).

    The network is left holding the parameters of the best validation epoch,
    not the last one.
    """
    from ._runtime import tune_runtime

    tune_runtime()
    if not dataset:
        raise TrainingError("cannot train on an empty dataset")
    if val_set is None:
        dataset, val_set = split_validation(dataset, cfg.validation_fraction, cfg.seed)
    if not val_set:
        raise TrainingError("validation set is empty")
    params = net.parameters()
    state = AdamState.create(params, cfg.learning_rate)
    sched = LossScheduler(cfg.learning_rate, cfg.plateau_patience, cfg.early_stop_patience,
                          cfg.lr_decay_factor, cfg.improvement_tol)
    history = TrainHistory()
    best = _snapshot(net)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xC0FFEE)))
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(dataset))
        lr_this_epoch = sched.lr
        state.learning_rate = sched.lr
        total = 0.0
        seen = 0
        for i in range(0, len(order), cfg.batch_size):
            chunk = [dataset[j] for j in order[i : i + cfg.batch_size]]
            x, t = _batch_tensors(chunk, net, cfg, epoch, i)
            loss = mse_loss(net.forward_logits(x, "train"), t)
            zero_grads(params)
            loss.backward()
            adam_step(params, state)
            total += loss.item() * len(chunk)
            seen += len(chunk)
        train_loss = total / seen
        val_loss = evaluate_loss(net, val_set, cfg.batch_size)
        improved = sched.update(val_loss)
        history.append(epoch, train_loss, val_loss, lr_this_epoch)
        if improved:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best = _snapshot(net)
        if log:
            log(f"epoch {epoch:3d}  train {train_loss:.6f}  val {val_loss:.6f}  lr {lr_this_epoch:.2g}"
                + ("  *" if improved else ""))
        history.stopping_epoch = epoch
        if sched.should_stop:
            break
    _restore(net, best)
    return net, history


def make_folds(dataset, folds, seed=0):
    """Volume-level fold partition, sizes as balanced as possible."""
    vols = volume_ids(dataset)
    if len(vols) < folds:
        raise TrainingError(f"cannot make {folds} folds from {len(vols)} volumes")
    rng = np.random.default_rng(seed)
    order = [vols[i] for i in rng.permutation(len(vols))]
    return [set(part.tolist()) for part in np.array_split(np.array(order, dtype=object), folds)]


def cross_validate(dataset, cfg: TrainConfig, net_config, dtype=np.float32, log=None):
    """K-fold cross-validation; returns (best_net, histories, fold_nets).

    Each fold holds its volumes out as the validation set; the model from
    the fold with the lowest best validation loss is returned.
    """
    fold_sets = make_folds(dataset, cfg.folds, cfg.seed)
    histories = []
    nets = []
    for f, held_out in enumerate(fold_sets):
        train_samples = [s for s in dataset if s.volume_id not in held_out]
        val_samples = [s for s in dataset if s.volume_id in held_out]
        if not train_samples or not val_samples:
            raise TrainingError(f"fold {f} has an empty train or validation side")
        seed_f = int(np.random.SeedSequence((cfg.seed, f)).generate_state(1)[0] % (2**31))
        net = build_network(net_config, seed=seed_f, dtype=dtype)
        fold_cfg = TrainConfig(**{**cfg.to_dict(), "seed": seed_f})
        if log:
            log(f"fold {f}: {len(train_samples)} train tiles, {len(val_samples)} val tiles")
        _, hist = train(net, train_samples, fold_cfg, val_set=val_samples,
                        log=(lambda m, f=f: log(f"  fold {f} {m}")) if log else None)
        histories.append(hist)
        nets.append(net)
    best_idx = int(np.argmin([h.best_val_loss for h in histories]))
    return nets[best_idx], histories, nets
