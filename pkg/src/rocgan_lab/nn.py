"""Layer stacks, the parameter registry, and hard weight sharing.

Parameters live in a ParameterStore keyed by hierarchical names; layers only
hold names and resolve them at forward time. Sharing a group of names makes
them aliases of one storage tensor, so a gradient step through any alias is
a step through all of them, and gradients arriving via several aliases
accumulate on the single underlying buffer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .data import tensor_read, tensor_write
from .rng import SplitMix64, derive_seed
from .tensor import Tensor

KINDS = ("conv", "conv_transpose", "dense")
ACTIVATIONS = ("leaky_relu", "relu", "sigmoid", "tanh", "none")
LEAKY_SLOPE = 0.2
INIT_STD = 0.02


class StackBuildError(ValueError):
    """Layer geometry incompatible with the incoming shape."""


@dataclass(frozen=True)
class LayerSpec:
    """One declarative layer: a conv/transpose/dense unit plus its block.

    ``filter`` is (kh, kw, out_channels) for conv kinds or (out_features,)
    for dense. The forward block applies the unit, then the activation, then
    batch normalization when enabled. ``padding`` overrides the builder's
    exact-division padding rule (conv only).
    """

    kind: str
    filter: tuple[int, ...]
    stride: int = 1
    batch_norm: bool = False
    activation: str = "leaky_relu"
    padding: int | tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        expected = 1 if self.kind == "dense" else 3
        if len(self.filter) != expected:
            raise ValueError(f"{self.kind} filter must have {expected} entries, got {self.filter}")
        if self.filter[-1] < 1:
            raise ValueError("output channels/features must be >= 1")


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers plus lateral links and a channel-width multiplier.

    ``skip_links`` are (from_index, to_index) pairs over ``layers``; the
    output of layer ``from`` is channel-concatenated onto the input of layer
    ``to``. ``channel_scale`` rescales every conv channel count (rounded,
    floor 1) so table-scale architectures shrink to desk scale.
    """

    layers: tuple[LayerSpec, ...]
    skip_links: tuple[tuple[int, int], ...] = ()
    channel_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "skip_links", tuple(tuple(p) for p in self.skip_links))
        if self.channel_scale <= 0:
            raise ValueError("channel_scale must be positive")
        n = len(self.layers)
        for src, dst in self.skip_links:
            if not (0 <= src < dst < n):
                raise ValueError(f"invalid skip link ({src}, {dst}) for {n} layers")

    def scaled(self, count: int) -> int:
        return max(1, round(count * self.channel_scale))


def layer(kind: str, *filter_dims: int, stride: int = 1, batch_norm: bool = False,
          activation: str = "leaky_relu", padding=None) -> LayerSpec:
    return LayerSpec(kind=kind, filter=tuple(filter_dims), stride=stride,
                     batch_norm=batch_norm, activation=activation, padding=padding)


# -- parameter registry ------------------------------------------------------------


class ParameterStore:
    """Named tensors with alias groups for hard weight sharing."""

    def __init__(self):
        self._storage: dict[str, Tensor] = {}
        self._canonical: dict[str, str] = {}
        self._trainable: set[str] = set()

    def register(self, name: str, array: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._canonical:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(array, requires_grad=trainable)
        self._storage[name] = t
        self._canonical[name] = name
        if trainable:
            self._trainable.add(name)
        return t

    def resolve(self, name: str) -> str:
        try:
            return self._canonical[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def has(self, name: str) -> bool:
        return name in self._canonical

    def get(self, name: str) -> Tensor:
        return self._storage[self.resolve(name)]

    def set_data(self, name: str, array: np.ndarray) -> None:
        t = self.get(name)
        if t.data.shape != np.asarray(array).shape:
            raise T.ShapeError(f"shape mismatch writing {name!r}")
        t.data[...] = array

    def share(self, group: Sequence[str]) -> None:
        """Alias every name in ``group`` to one storage tensor (the first's).

        All names must exist with identical shapes. After sharing, reads and
        writes through any alias hit the same buffer and gradient
        contributions from every alias accumulate together.
        """
        names = list(group)
        if len(names) < 2:
            return
        canon = self.resolve(names[0])
        base = self._storage[canon]
        for name in names[1:]:
            old = self.resolve(name)
            if self._storage[old].data.shape != base.data.shape:
                raise T.ShapeError(
                    f"cannot share {name!r}: shape {self._storage[old].data.shape} "
                    f"!= {base.data.shape}")
            if old == canon:
                continue
            for alias, target in list(self._canonical.items()):
                if target == old:
                    self._canonical[alias] = canon
            del self._storage[old]
            self._trainable.discard(old)

    def sharing_groups(self) -> list[list[str]]:
        groups: dict[str, list[str]] = {}
        for alias, canon in self._canonical.items():
            groups.setdefault(canon, []).append(alias)
        return sorted([sorted(g) for g in groups.values() if len(g) > 1])

    def names(self) -> list[str]:
        return sorted(self._canonical)

    def canonical_items(self, trainable_only: bool = False) -> list[tuple[str, Tensor]]:
        items = sorted(self._storage.items())
        if trainable_only:
            items = [(n, t) for n, t in items if n in self._trainable]
        return items

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.canonical_items(trainable_only=True)]

    def zero_grad(self) -> None:
        for t in self._storage.values():
            t.zero_grad()

    def total_parameter_count(self, prefix: str | None = None) -> int:
        return sum(t.size for n, t in self.canonical_items(trainable_only=True)
                   if prefix is None or n.startswith(prefix))


def share_parameters(store: ParameterStore, group: Sequence[str]) -> None:
    store.share(group)


# -- checkpoints --------------------------------------------------------------------


def save_checkpoint(store: ParameterStore, directory: str | Path) -> None:
    """One tensor container per canonical parameter plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for i, (name, t) in enumerate(store.canonical_items()):
        fname = f"p{i:04d}.tnsr"
        tensor_write(directory / fname, t.data)
        entries[name] = {"file": fname, "shape": list(t.data.shape),
                         "trainable": name in store._trainable}
    manifest = {"parameters": entries, "sharing_groups": store.sharing_groups()}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(store: ParameterStore, directory: str | Path) -> None:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    for name, entry in manifest["parameters"].items():
        store.set_data(name, tensor_read(directory / entry["file"]))


# -- stacks -------------------------------------------------------------------------


def _auto_conv_padding(kernel: int, stride: int) -> tuple[int, int]:
    # chosen so the spatial size divides exactly by the stride
    if kernel <= stride:
        return 0, 0
    total = kernel - stride
    return total // 2, total - total // 2


@dataclass
class _BuiltLayer:
    spec: LayerSpec
    index: int
    prefix: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    padding: tuple[int, int] | int
    output_size: int | None = None
    skip_sources: tuple[int, ...] = ()

    def pname(self, leaf: str) -> str:
        return f"{self.prefix}.{self.index}.{leaf}"

    def forward(self, store: ParameterStore, x: Tensor, train: bool) -> Tensor:
        spec = self.spec
        if spec.kind == "conv":
            out = T.conv2d(x, store.get(self.pname("w")), stride=spec.stride,
                           padding=self.padding)
        elif spec.kind == "conv_transpose":
            out = T.conv_transpose2d(x, store.get(self.pname("w")), stride=spec.stride,
                                     padding=self.padding, output_size=self.output_size)
        else:
            out = T.add_bias(T.matmul(x, store.get(self.pname("w"))),
                             store.get(self.pname("b")))
        if spec.activation == "leaky_relu":
            out = T.leaky_relu(out, LEAKY_SLOPE)
        elif spec.activation == "relu":
            out = T.relu(out)
        elif spec.activation == "sigmoid":
            out = T.sigmoid(out)
        elif spec.activation == "tanh":
            out = T.tanh(out)
        if spec.batch_norm:
            out = T.batch_norm(out, store.get(self.pname("gamma")), store.get(self.pname("beta")),
                               store.get(self.pname("running_mean")).data,
                               store.get(self.pname("running_var")).data,
                               train=train)
        return out


class Stack:
    """A forward-callable chain of built layers with named taps.

    ``forward_with_skips`` returns the output plus every layer's activation
    under keys "layer<i>", with "bottleneck" aliasing the last layer.
    """

    def __init__(self, spec: NetworkSpec, store: ParameterStore, prefix: str,
                 layers: list[_BuiltLayer], input_shape: tuple[int, ...],
                 output_shape: tuple[int, ...]):
        self.spec = spec
        self.store = store
        self.prefix = prefix
        self.layers = layers
        self.input_shape = input_shape
        self.output_shape = output_shape

    def forward_with_skips(self, x: Tensor, train: bool = True,
                           injected: dict[int, Tensor] | None = None
                           ) -> tuple[Tensor, dict[str, Tensor]]:
        """Run the stack; ``injected`` supplies lateral tensors concatenated
        onto the declared layers' inputs (laterals from another stack)."""
        if tuple(x.shape[1:]) != tuple(self.input_shape):
            raise StackBuildError(
                f"{self.prefix}: input shape {tuple(x.shape[1:])} != expected {self.input_shape}")
        injected = injected or {}
        taps: dict[str, Tensor] = {}
        outputs: list[Tensor] = []
        out = x
        for built in self.layers:
            extra = [injected[built.index]] if built.index in injected else []
            if built.skip_sources or extra:
                parts = [out] + [outputs[s] for s in built.skip_sources] + extra
                out = T.concat(parts, axis=1)
            if tuple(out.shape[1:]) != tuple(built.in_shape):
                raise StackBuildError(
                    f"{self.prefix} layer {built.index}: assembled input shape "
                    f"{tuple(out.shape[1:])} != built geometry {built.in_shape}")
            out = built.forward(self.store, out, train)
            outputs.append(out)
            taps[f"layer{built.index}"] = out
        taps["bottleneck"] = outputs[-1] if self.layers else out
        return out, taps

    def __call__(self, x: Tensor, train: bool = True) -> Tensor:
        return self.forward_with_skips(x, train)[0]


def forward_with_skips(network: Stack, x: Tensor, train: bool = True):
    return network.forward_with_skips(x, train)


def _register_layer_params(store: ParameterStore, built: _BuiltLayer, seed: int,
                           w_shape: tuple[int, ...], bn_channels: int | None,
                           dense_bias: int | None) -> None:
    name = built.pname("w")
    rng = SplitMix64(derive_seed(seed, name))
    store.register(name, rng.normal(w_shape, 0.0, INIT_STD))
    if dense_bias is not None:
        store.register(built.pname("b"), np.zeros(dense_bias))
    if bn_channels is not None:
        store.register(built.pname("gamma"), np.ones(bn_channels))
        store.register(built.pname("beta"), np.zeros(bn_channels))
        store.register(built.pname("running_mean"), np.zeros(bn_channels), trainable=False)
        store.register(built.pname("running_var"), np.ones(bn_channels), trainable=False)


def build_stack(spec: NetworkSpec, input_shape: Sequence[int], store: ParameterStore,
                prefix: str, seed: int, register: bool = True,
                inject_channels: dict[int, int] | None = None) -> Stack:
    """Construct a stack and register its parameters.

    ``input_shape`` excludes the batch axis: (C, H, W) for conv stacks or
    (features,) for dense stacks. Initialization is normal(0, 0.02) for
    weights, identity for batch-norm affine terms, keyed by (seed, name) so
    identical seeds give bitwise-identical parameters. ``inject_channels``
    widens the named layers' inputs for laterals delivered at forward time.
    With ``register`` False the parameters are expected to exist already
    (rebuilding a stack over shared storage).
    """
    input_shape = tuple(int(d) for d in input_shape)
    inject_channels = inject_channels or {}
    skip_by_target: dict[int, list[int]] = {}
    for src, dst in spec.skip_links:
        skip_by_target.setdefault(dst, []).append(src)

    built_layers: list[_BuiltLayer] = []
    shapes: list[tuple[int, ...]] = []
    shape = input_shape
    for i, lspec in enumerate(spec.layers):
        in_shape = shape
        sources = tuple(skip_by_target.get(i, ()))
        if sources or i in inject_channels:
            if len(in_shape) != 3:
                raise StackBuildError(f"{prefix} layer {i}: skip target must be convolutional")
            for s in sources:
                if shapes[s][1:] != in_shape[1:]:
                    raise StackBuildError(
                        f"{prefix} layer {i}: skip from layer {s} has spatial shape "
                        f"{shapes[s][1:]}, expected {in_shape[1:]}")
            extra = sum(shapes[s][0] for s in sources) + inject_channels.get(i, 0)
            in_shape = (in_shape[0] + extra,) + in_shape[1:]

        if lspec.kind == "dense":
            if len(in_shape) != 1:
                raise StackBuildError(
                    f"{prefix} layer {i}: dense layer needs flat input, got {in_shape}")
            out_features = lspec.filter[0]
            out_shape = (out_features,)
            built = _BuiltLayer(lspec, i, prefix, in_shape, out_shape, padding=0,
                                skip_sources=sources)
            if register:
                _register_layer_params(store, built, seed, (in_shape[0], out_features),
                                       out_features if lspec.batch_norm else None, out_features)
        else:
            if len(in_shape) != 3:
                raise StackBuildError(
                    f"{prefix} layer {i}: {lspec.kind} needs (C, H, W) input, got {in_shape}")
            kh, kw, out_channels = lspec.filter
            out_channels = spec.scaled(out_channels)
            c, h, w = in_shape
            if lspec.kind == "conv":
                pad = lspec.padding if lspec.padding is not None else _auto_conv_padding(kh, lspec.stride)
                plo, phi = (pad, pad) if isinstance(pad, int) else pad
                ho = (h + plo + phi - kh) // lspec.stride + 1
                wo = (w + plo + phi - kw) // lspec.stride + 1
                if ho < 1 or wo < 1:
                    raise StackBuildError(
                        f"{prefix} layer {i}: conv collapses {in_shape} to empty output")
                out_shape = (out_channels, ho, wo)
                built = _BuiltLayer(lspec, i, prefix, in_shape, out_shape, padding=(plo, phi),
                                    skip_sources=sources)
                if register:
                    _register_layer_params(store, built, seed, (out_channels, c, kh, kw),
                                           out_channels if lspec.batch_norm else None, None)
            else:
                target = (h * lspec.stride, w * lspec.stride)
                pad = lspec.padding
                if pad is None:
                    pad = (kh - lspec.stride) // 2 if kh >= lspec.stride and (kh - lspec.stride) % 2 == 0 else 0
                if not isinstance(pad, int):
                    raise StackBuildError(f"{prefix} layer {i}: transpose padding must be symmetric")
                span = target[0] + 2 * pad - kh
                if span < 0 or span // lspec.stride + 1 != h:
                    raise StackBuildError(
                        f"{prefix} layer {i}: transpose of {in_shape} cannot reach {target} "
                        f"with kernel {kh}, stride {lspec.stride}, padding {pad}")
                out_shape = (out_channels,) + target
                built = _BuiltLayer(lspec, i, prefix, in_shape, out_shape, padding=pad,
                                    output_size=target, skip_sources=sources)
                if register:
                    _register_layer_params(store, built, seed, (c, out_channels, kh, kw),
                                           out_channels if lspec.batch_norm else None, None)

        built_layers.append(built)
        shapes.append(built.out_shape)
        shape = built.out_shape

    return Stack(spec, store, prefix, built_layers, input_shape, shape)
