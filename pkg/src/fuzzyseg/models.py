"""Encoder-decoder segmentation models: a plain U-shaped network and its
nested-skip variant with optional deep supervision.

Both are built from double conv3x3+batchnorm+relu blocks; the nested variant
adds dropout after each convolution and a lattice of intermediate decoder
nodes, where node (i, j) consumes every earlier node in its row plus an
upsampling of node (i+1, j-1).  Construction is deterministic given
``init_seed``; models serialize through the checkpoint container with their
structural settings in the metadata.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ConfigurationError
from .nn import ops
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import BatchNorm2d, Conv2d, ConvTranspose2x2, Dropout
from .nn.tensor import Tensor, no_grad


@dataclass
class UNetSpec:
    """Structural settings shared by both model families."""

    depth: int = 3
    base_channels: int = 8
    in_channels: int = 1
    num_classes: int = 4
    dropout_rate: float = 0.1

    def validate(self) -> None:
        if self.depth < 2:
            raise ConfigurationError(f"depth must be >= 2, got {self.depth}")
        if self.base_channels < 1 or self.in_channels < 1:
            raise ConfigurationError("base_channels and in_channels must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def channels(self, level: int) -> int:
        return self.base_channels * (2 ** level)


class ConvBlock:
    """Two rounds of conv3x3 -> batchnorm -> relu, optionally with dropout."""

    def __init__(self, in_ch, out_ch, *, rng, dtype, dropout_rate=0.0):
        self.conv1 = Conv2d(in_ch, out_ch, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        self.dropout_rate = dropout_rate
        if dropout_rate > 0.0:
            self.drop1 = Dropout(dropout_rate, seed=int(rng.integers(2 ** 31)))
            self.drop2 = Dropout(dropout_rate, seed=int(rng.integers(2 ** 31)))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        x = ops.relu(self.bn1(self.conv1(x), training))
        if self.dropout_rate > 0.0:
            x = self.drop1(x, training)
        x = ops.relu(self.bn2(self.conv2(x), training))
        if self.dropout_rate > 0.0:
            x = self.drop2(x, training)
        return x

    def sublayers(self):
        return [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]


class _ModelBase:
    """Shared bookkeeping: named parameters, buffers, mode, serialization."""

    kind = "?"

    def __init__(self, spec: UNetSpec):
        self.spec = spec
        self.training = True
        self._named_layers = []  # (prefix, layer-with-parameters/buffers)

    def _register(self, prefix, layer):
        if isinstance(layer, ConvBlock):
            for sub_name, sub in layer.sublayers():
                self._named_layers.append((f"{prefix}.{sub_name}", sub))
        else:
            self._named_layers.append((prefix, layer))

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def parameters(self):
        out = []
        for prefix, layer in self._named_layers:
            for name, tensor in layer.parameters():
                out.append((f"{prefix}.{name}", tensor))
        return out

    def buffers(self):
        out = []
        for prefix, layer in self._named_layers:
            for name, array in layer.buffers():
                out.append((f"{prefix}.{name}", array))
        return out

    def state_entries(self):
        return [(n, t.data) for n, t in self.parameters()] + self.buffers()

    def load_state(self, entries) -> None:
        current = dict(self.state_entries())
        loaded = dict(entries)
        for name in current:
            if name not in loaded:
                raise CheckpointError(f"checkpoint is missing tensor {name!r}")
            if loaded[name].shape != current[name].shape:
                raise CheckpointError(
                    f"tensor {name!r} shape mismatch: checkpoint has "
                    f"{loaded[name].shape}, model expects {current[name].shape}"
                )
        for name in loaded:
            if name not in current:
                raise CheckpointError(f"checkpoint has unexpected tensor {name!r}")
        for name, target in current.items():
            target[...] = loaded[name].astype(target.dtype, copy=False)

    def check_input(self, x: Tensor) -> None:
        if x.data.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ConfigurationError(
                f"expected input of shape (B, {self.spec.in_channels}, H, W), got {x.shape}"
            )
        factor = 2 ** (self.spec.depth - 1)
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ConfigurationError(
                f"spatial dims {x.shape[2]}x{x.shape[3]} must be divisible by {factor}"
            )

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "depth": str(self.spec.depth),
            "base_channels": str(self.spec.base_channels),
            "in_channels": str(self.spec.in_channels),
            "num_classes": str(self.spec.num_classes),
            "dropout_rate": repr(self.spec.dropout_rate),
        }


class UNet(_ModelBase):
    kind = "unet"

    def __init__(self, spec: UNetSpec, init_seed=0, dtype=np.float32):
        spec.validate()
        super().__init__(spec)
        rng = np.random.default_rng(init_seed)
        levels = spec.depth
        self.encoders = []
        for i in range(levels):
            in_ch = spec.in_channels if i == 0 else spec.channels(i - 1)
            block = ConvBlock(in_ch, spec.channels(i), rng=rng, dtype=dtype)
            self.encoders.append(block)
            self._register(f"enc{i}", block)
        self.ups = []
        self.decoders = []
        for i in range(levels - 2, -1, -1):
            up = ConvTranspose2x2(spec.channels(i + 1), spec.channels(i), rng=rng, dtype=dtype)
            dec = ConvBlock(2 * spec.channels(i), spec.channels(i), rng=rng, dtype=dtype)
            self.ups.append(up)
            self.decoders.append(dec)
            self._register(f"up{i}", up)
            self._register(f"dec{i}", dec)
        self.head = Conv2d(spec.channels(0), spec.num_classes, kernel=1, rng=rng, dtype=dtype)
        self._register("head", self.head)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        skips = []
        for i, block in enumerate(self.encoders):
            x = block(x, self.training)
            if i < self.spec.depth - 1:
                skips.append(x)
                x = ops.maxpool2(x)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = dec(ops.concat_channels(skip, up(x)), self.training)
        return self.head(x)

    def forward_heads(self, x: Tensor):
        return [self.forward(x)]


class UNetPP(_ModelBase):
    kind = "unetpp"

    def __init__(self, spec: UNetSpec, deep_supervision=False, init_seed=0, dtype=np.float32):
        spec.validate()
        super().__init__(spec)
        self.deep_supervision = deep_supervision
        rng = np.random.default_rng(init_seed)
        levels = spec.depth
        self.nodes = {}
        self.node_ups = {}
        for j in range(levels):
            for i in range(levels - j):
                ch = spec.channels(i)
                if j == 0:
                    in_ch = spec.in_channels if i == 0 else spec.channels(i - 1)
                else:
                    in_ch = (j + 1) * ch
                    up = ConvTranspose2x2(spec.channels(i + 1), ch, rng=rng, dtype=dtype)
                    self.node_ups[(i, j)] = up
                    self._register(f"up{i}_{j}", up)
                block = ConvBlock(
                    in_ch, ch, rng=rng, dtype=dtype, dropout_rate=spec.dropout_rate
                )
                self.nodes[(i, j)] = block
                self._register(f"node{i}_{j}", block)
        head_cols = range(1, levels) if deep_supervision else [levels - 1]
        self.heads = {}
        for j in head_cols:
            head = Conv2d(spec.channels(0), spec.num_classes, kernel=1, rng=rng, dtype=dtype)
            self.heads[j] = head
            self._register(f"head{j}", head)

    def wiring(self):
        """Edge list per node: who feeds node (i, j).

        Sources are ``("input",)`` for the entry node, ``("pool", (i-1, 0))``
        down the backbone, and for dense nodes every same-row predecessor
        ``("node", (i, k))`` plus ``("up", (i+1, j-1))``.
        """
        edges = {}
        for (i, j) in self.nodes:
            if j == 0:
                edges[(i, j)] = [("input",)] if i == 0 else [("pool", (i - 1, 0))]
            else:
                edges[(i, j)] = [("node", (i, k)) for k in range(j)] + [("up", (i + 1, j - 1))]
        return edges

    def forward_grid(self, x: Tensor):
        """Compute every lattice node; returns {(i, j): activation}."""
        self.check_input(x)
        levels = self.spec.depth
        grid = {}
        for i in range(levels):
            inp = x if i == 0 else ops.maxpool2(grid[(i - 1, 0)])
            grid[(i, 0)] = self.nodes[(i, 0)](inp, self.training)
        for j in range(1, levels):
            for i in range(levels - j):
                upsampled = self.node_ups[(i, j)](grid[(i + 1, j - 1)])
                parts = [grid[(i, k)] for k in range(j)] + [upsampled]
                grid[(i, j)] = self.nodes[(i, j)](ops.concat_channels(*parts), self.training)
        return grid

    def forward(self, x: Tensor) -> Tensor:
        grid = self.forward_grid(x)
        final = self.spec.depth - 1
        return self.heads[final](grid[(0, final)])

    def forward_heads(self, x: Tensor):
        """Logits from every supervised head, shallowest column first."""
        grid = self.forward_grid(x)
        return [self.heads[j](grid[(0, j)]) for j in sorted(self.heads)]

    def meta(self) -> dict:
        meta = super().meta()
        meta["deep_supervision"] = "1" if self.deep_supervision else "0"
        return meta


def build_unet(spec: UNetSpec, init_seed=0, dtype=np.float32) -> UNet:
    return UNet(spec, init_seed=init_seed, dtype=dtype)


def build_unetpp(spec: UNetSpec, deep_supervision=False, init_seed=0, dtype=np.float32) -> UNetPP:
    return UNetPP(spec, deep_supervision=deep_supervision, init_seed=init_seed, dtype=dtype)


def forward_segment(model, batch: np.ndarray) -> np.ndarray:
    """Eval-mode class probabilities for an (B, in_ch, H, W) array.

    Dropout is off and batchnorm uses its running statistics; the result is a
    (B, num_classes, H, W) array whose channel slices sum to one per pixel.
    """
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            logits = model.forward(Tensor(np.ascontiguousarray(batch)))
    finally:
        model.training = was_training
    return ops.softmax_channels(logits.data)


def save_model(path, model) -> None:
    save_checkpoint(path, model.state_entries(), meta=model.meta())


def load_model(path):
    """Rebuild a model from a checkpoint written by :func:`save_model`."""
    entries, meta = load_checkpoint(path)
    try:
        spec = UNetSpec(
            depth=int(meta["depth"]),
            base_channels=int(meta["base_channels"]),
            in_channels=int(meta["in_channels"]),
            num_classes=int(meta["num_classes"]),
            dropout_rate=float(meta["dropout_rate"]),
        )
        kind = meta["kind"]
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing model metadata {exc}") from exc
    if kind == "unet":
        model = UNet(spec)
    elif kind == "unetpp":
        model = UNetPP(spec, deep_supervision=meta.get("deep_supervision") == "1")
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    model.load_state(entries)
    return model
