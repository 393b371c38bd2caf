"""Dense encoder/decoder segmentation network.

The network has ``depth`` levels: encoder levels 0..depth-2, a bottom level
that keeps the deepest resolution, and decoder levels depth-2..0 mirrored
back up. Per-level output channels follow the configured growth sequence
(default is the capped Fibonacci sequence 32,64,96,160,256,416).

Each level block is: concat(feeds) -> 1x1 bottleneck -> parallel 3x3 dilated
convolutions -> concat -> 1x1 projection -> batch norm, plus a 1x1-projected
residual from the bottleneck output, then relu. Dense connections compress
every earlier same-branch level through a shared 1x1 bottleneck emitter and
resample it to the consumer's resolution (average pooling on the way down,
nearest-neighbour on the way up). The downsampled input image can be
concatenated into every encoder level (input pyramid). Encoder level i is
joined to decoder level i by skip concatenation, and the head is a 1x1
convolution to the class count followed by a channel softmax.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    BatchNormStats,
    ConvSpec,
    ShapeError,
    TensorND,
    avg_pool2,
    batch_norm,
    concat_channels,
    conv2d,
    conv_transpose2d,
    downsample,
    relu,
    residual_add,
    softmax_channels,
    unpool2,
    upsample_bilinear2,
    upsample_nearest2,
    DOWN_MODES,
    UP_MODES,
)

CHECKPOINT_MAGIC = b"CORNET01"

DEFAULT_GROWTH = (32, 64, 96, 160, 256, 416)


class ConfigError(ValueError):
    """Raised when a NetworkConfig violates its invariants."""


@dataclass
class NetworkConfig:
    """Declarative architecture description."""

    depth: int = 6
    growth: tuple = DEFAULT_GROWTH
    bottleneck_channels: int = 32
    down_mode: str = "max_pool2"
    up_mode: str = "nearest_conv3"
    num_classes: int = 4
    dilations: tuple = (1, 2, 4)
    input_pyramid: bool = True
    dense_connections: bool = True

    def __post_init__(self):
        self.growth = tuple(int(g) for g in self.growth)
        self.dilations = tuple(int(d) for d in self.dilations)
        self.validate()

    def validate(self):
        if self.depth < 2:
            raise ConfigError(f"depth must be at least 2, got {self.depth}")
        if len(self.growth) != self.depth:
            raise ConfigError(
                f"growth must list one channel count per level: got {len(self.growth)} for depth {self.depth}"
            )
        if any(g <= 0 for g in self.growth):
            raise ConfigError("growth entries must be positive")
        if self.bottleneck_channels <= 0:
            raise ConfigError("bottleneck_channels must be positive")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.down_mode not in DOWN_MODES:
            raise ConfigError(f"down_mode must be one of {DOWN_MODES}, got {self.down_mode!r}")
        if self.up_mode not in UP_MODES:
            raise ConfigError(f"up_mode must be one of {UP_MODES}, got {self.up_mode!r}")
        if not self.dilations or any(d <= 0 for d in self.dilations):
            raise ConfigError("dilations must be a non-empty list of positive ints")

    def to_dict(self):
        return {
            "depth": self.depth,
            "growth": list(self.growth),
            "bottleneck_channels": self.bottleneck_channels,
            "down_mode": self.down_mode,
            "up_mode": self.up_mode,
            "num_classes": self.num_classes,
            "dilations": list(self.dilations),
            "input_pyramid": self.input_pyramid,
            "dense_connections": self.dense_connections,
        }

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config fields: {sorted(unknown)}")
        return cls(**d)


class _Registry:
    def __init__(self):
        self.params = {}
        self.buffers = {}

    def param(self, name, tensor):
        self.params[name] = tensor
        return tensor

    def buffer(self, name, arr):
        self.buffers[name] = arr
        return arr


class _LevelBlock:
    """One encoder/bottom/decoder processing block."""

    def __init__(self, name, in_channels, out_channels, bottleneck, dilations, reg, rng, dtype):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.bottleneck = ConvSpec.he_init(in_channels, bottleneck, (1, 1), rng=rng, dtype=dtype)
        self.branches = [
            ConvSpec.he_init(bottleneck, bottleneck, (3, 3), dilation=(d, d), padding=(d, d), rng=rng, dtype=dtype)
            for d in dilations
        ]
        self.project = ConvSpec.he_init(bottleneck * len(dilations), out_channels, (1, 1), rng=rng, dtype=dtype)
        self.res_proj = ConvSpec.he_init(bottleneck, out_channels, (1, 1), rng=rng, dtype=dtype)
        self.gamma = TensorND(np.ones(out_channels, dtype=dtype), requires_grad=True)
        self.beta = TensorND(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        self.bn_stats = BatchNormStats.create(out_channels, dtype=dtype)
        for label, spec in [("bottleneck", self.bottleneck), ("project", self.project), ("res_proj", self.res_proj)] + [
            (f"branch{k}", s) for k, s in enumerate(self.branches)
        ]:
            reg.param(f"{name}.{label}.weights", spec.weights)
            reg.param(f"{name}.{label}.bias", spec.bias)
        reg.param(f"{name}.bn.gamma", self.gamma)
        reg.param(f"{name}.bn.beta", self.beta)
        reg.buffer(f"{name}.bn.running_mean", self.bn_stats.running_mean)
        reg.buffer(f"{name}.bn.running_var", self.bn_stats.running_var)

    def forward(self, x, mode):
        squeezed = conv2d(x, self.bottleneck)
        parts = [conv2d(squeezed, branch) for branch in self.branches]
        merged = conv2d(concat_channels(parts), self.project)
        normed = batch_norm(merged, self.gamma, self.beta, mode, self.bn_stats)
        return relu(residual_add(normed, conv2d(squeezed, self.res_proj)))


def input_pyramid(x: TensorND, depth: int):
    """Average-pooled copies of the input, one per level 1..depth-1."""
    _check_divisible(x, depth)
    levels = []
    cur = x
    for _ in range(depth - 1):
        cur = avg_pool2(cur)
        levels.append(cur)
    return levels


def _check_divisible(x, depth):
    h, w = x.shape[2], x.shape[3]
    f = 2 ** (depth - 1)
    if h % f or w % f:
        raise ShapeError(
            f"spatial dims {h}x{w} must be multiples of {f} for depth {depth}; pad the input first"
        )


class Network:
    """Instantiated parameterized compute graph. Build via build_network."""

    def __init__(self, config: NetworkConfig, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self._reg = _Registry()
        self.topology = []
        rng = np.random.default_rng(seed)
        cfg = config
        D = cfg.depth
        g = cfg.growth
        bc = cfg.bottleneck_channels
        reg = self._reg

        self.down_specs = [None] * (D - 1)
        if cfg.down_mode == "strided_conv2":
            for i in range(D - 1):
                self.down_specs[i] = ConvSpec.he_init(g[i], g[i], (3, 3), stride=(2, 2), padding=(1, 1),
                                                      rng=rng, dtype=self.dtype)
                reg.param(f"down{i}.weights", self.down_specs[i].weights)
                reg.param(f"down{i}.bias", self.down_specs[i].bias)

        # shared dense emitters: one 1x1 bottleneck per source level
        self.enc_emit = {}
        self.dec_emit = {}
        if cfg.dense_connections:
            for j in range(0, D - 2):
                self.enc_emit[j] = ConvSpec.he_init(g[j], bc, (1, 1), rng=rng, dtype=self.dtype)
                reg.param(f"enc_emit{j}.weights", self.enc_emit[j].weights)
                reg.param(f"enc_emit{j}.bias", self.enc_emit[j].bias)
            for j in range(2, D):
                src_ch = g[j]
                self.dec_emit[j] = ConvSpec.he_init(src_ch, bc, (1, 1), rng=rng, dtype=self.dtype)
                reg.param(f"dec_emit{j}.weights", self.dec_emit[j].weights)
                reg.param(f"dec_emit{j}.bias", self.dec_emit[j].bias)

        self.enc_blocks = []
        for i in range(D):
            feeders = []
            if i == 0:
                feeders.append(("input", 1))
            else:
                feeders.append((f"down(enc{i - 1})", g[i - 1]))
                if cfg.input_pyramid:
                    feeders.append((f"pyramid{i}", 1))
                if cfg.dense_connections:
                    for j in range(0, i - 1):
                        feeders.append((f"dense(enc{j})", bc))
            cin = sum(ch for _, ch in feeders)
            name = f"enc{i}" if i < D - 1 else "bottom"
            block = _LevelBlock(name, cin, g[i], bc, cfg.dilations, reg, rng, self.dtype)
            self.enc_blocks.append(block)
            self.topology.append({
                "name": name,
                "branch": "encoder" if i < D - 1 else "bottom",
                "level": i,
                "in_channels": cin,
                "out_channels": g[i],
                "feeders": feeders,
            })

        self.up_specs = [None] * (D - 1)
        self.dec_blocks = [None] * (D - 1)
        for i in range(D - 2, -1, -1):
            deep_ch = g[i + 1]
            if cfg.up_mode in ("nearest_conv3", "bilinear_conv3"):
                self.up_specs[i] = ConvSpec.he_init(deep_ch, g[i], (3, 3), padding=(1, 1), rng=rng, dtype=self.dtype)
                up_ch = g[i]
            elif cfg.up_mode == "frac_strided_conv":
                self.up_specs[i] = ConvSpec.he_init(deep_ch, g[i], (4, 4), stride=(2, 2), padding=(1, 1),
                                                    rng=rng, dtype=self.dtype)
                up_ch = g[i]
            elif cfg.up_mode == "unpool":
                # unpool reuses the encoder's switches, so channels must match them
                self.up_specs[i] = ConvSpec.he_init(deep_ch, g[i], (1, 1), rng=rng, dtype=self.dtype)
                up_ch = g[i]
            else:
                up_ch = deep_ch
            if self.up_specs[i] is not None:
                reg.param(f"up{i}.weights", self.up_specs[i].weights)
                reg.param(f"up{i}.bias", self.up_specs[i].bias)

            feeders = [(f"up({'bottom' if i == D - 2 else f'dec{i + 1}'})", up_ch), (f"skip(enc{i})", g[i])]
            if cfg.dense_connections:
                for j in range(i + 2, D):
                    src = "bottom" if j == D - 1 else f"dec{j}"
                    feeders.append((f"dense({src})", bc))
            cin = sum(ch for _, ch in feeders)
            block = _LevelBlock(f"dec{i}", cin, g[i], bc, cfg.dilations, reg, rng, self.dtype)
            self.dec_blocks[i] = block
            self.topology.append({
                "name": f"dec{i}",
                "branch": "decoder",
                "level": i,
                "in_channels": cin,
                "out_channels": g[i],
                "feeders": feeders,
            })

        self.head = ConvSpec.he_init(g[0], cfg.num_classes, (1, 1), rng=rng, dtype=self.dtype)
        # near-neutral initial class scores; zero would cut gradient flow
        self.head.weights.values *= 0.05
        reg.param("head.weights", self.head.weights)
        reg.param("head.bias", self.head.bias)

    # -- parameter access ---------------------------------------------------

    def parameters(self):
        return list(self._reg.params.values())

    def named_parameters(self):
        return dict(self._reg.params)

    def buffers(self):
        return dict(self._reg.buffers)

    def param_count(self) -> int:
        return int(sum(p.size for p in self._reg.params.values()))

    def level_channels(self):
        """Per-level output channels, encoder levels then bottom."""
        return [b.out_channels for b in self.enc_blocks]

    # -- forward ------------------------------------------------------------

    def forward(self, x: TensorND, mode="eval") -> TensorND:
        """Per-pixel class probabilities with the input's spatial dims."""
        return softmax_channels(self.forward_logits(x, mode))

    def forward_logits(self, x: TensorND, mode="eval") -> TensorND:
        """Pre-softmax class scores; the training objective regresses these."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"forward expects (batch, 1, height, width), got {x.shape}")
        cfg = self.config
        D = cfg.depth
        _check_divisible(x, D)

        pyr = input_pyramid(x, D) if cfg.input_pyramid else None

        enc_out = []
        switches = [None] * (D - 1)
        emit_cache = {}
        for i in range(D):
            if i == 0:
                feeds = [x]
            else:
                down_in = downsample(enc_out[i - 1], cfg.down_mode, self.down_specs[i - 1])
                if cfg.down_mode == "max_pool2":
                    switches[i - 1] = down_in.pool_switches
                feeds = [down_in]
                if cfg.input_pyramid:
                    feeds.append(pyr[i - 1])
                if cfg.dense_connections:
                    for j in range(0, i - 1):
                        feeds.append(self._dense_feed(emit_cache, "enc", self.enc_emit[j],
                                                      enc_out[j], j, i - j, avg_pool2))
            enc_out.append(self.enc_blocks[i].forward(concat_channels(feeds), mode))

        dec_out = {D - 1: enc_out[D - 1]}
        for i in range(D - 2, -1, -1):
            up = self._up_step(dec_out[i + 1], i, switches[i])
            feeds = [up, enc_out[i]]
            if cfg.dense_connections:
                for j in range(i + 2, D):
                    feeds.append(self._dense_feed(emit_cache, "dec", self.dec_emit[j],
                                                  dec_out[j], j, j - i, upsample_nearest2))
            dec_out[i] = self.dec_blocks[i].forward(concat_channels(feeds), mode)

        return conv2d(dec_out[0], self.head)

    @staticmethod
    def _dense_feed(cache, side, emit_spec, src, j, hops, resample):
        # one shared emitter per source level; resampled copies are reused
        # across consumers within a forward pass
        chain = cache.setdefault((side, j), [])
        if not chain:
            chain.append(conv2d(src, emit_spec))
        while len(chain) <= hops:
            chain.append(resample(chain[-1]))
        return chain[hops]

    def _up_step(self, deep, i, sw):
        mode = self.config.up_mode
        if mode == "nearest":
            return upsample_nearest2(deep)
        if mode == "bilinear":
            return upsample_bilinear2(deep)
        if mode == "nearest_conv3":
            return conv2d(upsample_nearest2(deep), self.up_specs[i])
        if mode == "bilinear_conv3":
            return conv2d(upsample_bilinear2(deep), self.up_specs[i])
        if mode == "frac_strided_conv":
            return conv_transpose2d(deep, self.up_specs[i])
        if mode == "unpool":
            if sw is None:
                raise ValueError("unpool up_mode requires max_pool2 switches; set down_mode='max_pool2'")
            return unpool2(conv2d(deep, self.up_specs[i]), sw)
        raise ValueError(f"unknown up_mode {mode!r}")


def build_network(config: NetworkConfig, seed=0, dtype=np.float32) -> Network:
    """Instantiate a network with He-initialized weights."""
    return Network(config, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# checkpoint format: magic, single-line JSON header, raw little-endian f32
# ---------------------------------------------------------------------------


def save_checkpoint(net: Network, path):
    """Write the network to ``path``; manifest order is registry order."""
    entries = []
    blobs = []
    offset = 0
    for kind, items in (("param", net._reg.params.items()), ("buffer", net._reg.buffers.items())):
        for name, item in items:
            arr = item.values if isinstance(item, TensorND) else item
            raw = np.ascontiguousarray(arr, dtype="<f4")
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
            blobs.append(raw.tobytes())
            offset += raw.nbytes
    header = {"config": net.config.to_dict(), "dtype": "float32", "manifest": entries}
    payload = json.dumps(header, separators=(",", ":")).encode() + b"\n"
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(payload)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> Network:
    """Rebuild a network from a checkpoint; bit-exact with what was saved."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt header: {e}") from e
        data = f.read()
    config = NetworkConfig.from_dict(header["config"])
    net = Network(config, seed=0, dtype=np.float32)
    reg = net._reg
    for entry in header["manifest"]:
        name, kind, shape, offset = entry["name"], entry["kind"], tuple(entry["shape"]), entry["offset"]
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        store = reg.params if kind == "param" else reg.buffers
        if name not in store:
            raise CheckpointError(f"{path}: manifest entry {name!r} not present in rebuilt network")
        target = store[name].values if kind == "param" else store[name]
        if target.shape != arr.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}: {arr.shape} vs {target.shape}")
        target[...] = arr
    return net
