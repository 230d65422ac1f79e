"""Mini encoder-decoder segmentation network and its parameter store."""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, ShapeMismatch
from . import ops
from .tensor import Tensor, constant, grad, leaf


@dataclass(frozen=True)
class NetConfig:
    depth: int = 2
    base_channels: int = 8
    in_channels: int = 1
    out_channels: int = 2

    def __post_init__(self):
        if self.depth < 0 or self.base_channels < 1:
            raise ConfigError(f"invalid network config {self}")
        if self.in_channels != 1 or self.out_channels != 2:
            raise ConfigError("network maps 1 input channel to 2 class channels")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def layers(self) -> list[tuple[str, tuple[int, ...]]]:
        """``(name, weight shape)`` of every layer in forward order."""
        out = []
        cin = self.in_channels
        for lvl in range(self.depth + 1):
            c = self.channels(lvl)
            out += [(f"enc{lvl}.c1", (c, cin, 3, 3)), (f"enc{lvl}.c2", (c, c, 3, 3))]
            cin = c
        for lvl in range(self.depth - 1, -1, -1):
            c = self.channels(lvl)
            out += [(f"dec{lvl}.c1", (c, cin + c, 3, 3)), (f"dec{lvl}.c2", (c, c, 3, 3))]
            cin = c
        out.append(("head", (self.out_channels, cin)))
        return out

    def to_dict(self) -> dict:
        return asdict(self)


class ParamStore:
    """Named weights plus SGD momentum buffers for one network."""

    def __init__(self, cfg: NetConfig, values: dict[str, np.ndarray]):
        self.cfg = cfg
        self.values = dict(values)
        self.momentum = {k: np.zeros_like(v) for k, v in self.values.items()}
        self._leaves: dict[str, Tensor] | None = None

    @property
    def names(self) -> list[str]:
        return list(self.values)

    @property
    def dtype(self):
        return next(iter(self.values.values())).dtype

    def num_params(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def bind(self, requires_grad: bool = True) -> dict[str, Tensor]:
        """Wrap the current values as graph leaves for one forward pass."""
        if requires_grad:
            self._leaves = {k: leaf(v, name=k) for k, v in self.values.items()}
            return self._leaves
        return {k: constant(v) for k, v in self.values.items()}

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(self.cfg, {k: v.astype(dtype) for k, v in self.values.items()})
        out.momentum = {k: v.astype(dtype) for k, v in self.momentum.items()}
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore(self.cfg, {k: v.copy() for k, v in self.values.items()})
        out.momentum = {k: v.copy() for k, v in self.momentum.items()}
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values.values()])


def param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])))


def init_params(cfg: NetConfig, seed: int, dtype=np.float32, tag: str = "") -> ParamStore:
    """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases, one PRNG stream per tensor.

    ``tag`` separates the streams of several networks built from one seed.
    """
    values = {}
    for name, shape in cfg.layers():
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        key = f"{tag}/{name}.w" if tag else f"{name}.w"
        values[f"{name}.w"] = param_rng(seed, key).uniform(-bound, bound, size=shape).astype(dtype)
        values[f"{name}.b"] = np.zeros(shape[0], dtype=dtype)
    return ParamStore(cfg, values)


def _block(x: Tensor, p: dict[str, Tensor], name: str) -> Tensor:
    x = ops.relu(ops.conv3x3(x, p[f"{name}.c1.w"], p[f"{name}.c1.b"]))
    return ops.relu(ops.conv3x3(x, p[f"{name}.c2.w"], p[f"{name}.c2.b"]))


def forward(params: ParamStore | dict[str, Tensor], batch, cfg: NetConfig | None = None,
            requires_grad: bool = True) -> Tensor:
    """Class probabilities ``(N, 2, H, W)`` for a batch ``(N, 1, H, W)``."""
    if isinstance(params, ParamStore):
        cfg = params.cfg
        p = params.bind(requires_grad)
    else:
        p = params
        if cfg is None:
            raise ConfigError("forward with raw tensors needs a NetConfig")
    x = batch if isinstance(batch, Tensor) else constant(batch)
    if x.data.ndim != 4 or x.data.shape[1] != cfg.in_channels:
        raise ShapeMismatch(f"expected batch (N, {cfg.in_channels}, H, W), got {x.data.shape}")
    k = 2 ** cfg.depth
    if x.data.shape[2] % k or x.data.shape[3] % k:
        raise ShapeMismatch(f"spatial size {x.data.shape[2:]} must be divisible by {k}")
    x = constant(x.data.astype(p["head.w"].data.dtype, copy=False)) if not x.requires_grad else x
    skips = []
    for lvl in range(cfg.depth):
        x = _block(x, p, f"enc{lvl}")
        skips.append(x)
        x = ops.maxpool2(x)
    x = _block(x, p, f"enc{cfg.depth}")
    for lvl in range(cfg.depth - 1, -1, -1):
        x = ops.concat([ops.upsample2(x), skips[lvl]])
        x = _block(x, p, f"dec{lvl}")
    return ops.softmax(ops.conv1x1(x, p["head.w"], p["head.b"]))


def backward(loss: Tensor, *stores: ParamStore, scale: float = 1.0) -> list[dict[str, np.ndarray]] | dict[str, np.ndarray]:
    """Reverse-mode gradients of ``loss`` for each store's most recent bound forward.

    Returns one ``name -> gradient`` dict per store (a bare dict for a single store).
    Parameters the loss does not depend on get exact zeros.
    """
    leaves, spans = [], []
    for st in stores:
        if st._leaves is None:
            bound = {k: leaf(v, name=k) for k, v in st.values.items()}
        else:
            bound = st._leaves
        spans.append((st, list(bound)))
        leaves.extend(bound.values())
    gs = grad(loss, leaves, scale=scale)
    out, i = [], 0
    for st, names in spans:
        out.append({n: gs[i + j] for j, n in enumerate(names)})
        i += len(names)
    return out[0] if len(out) == 1 else out
