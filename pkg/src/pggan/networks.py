"""Generator and discriminator assembly, initialisation and forward passes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import blocks as B
from .ops import ShapeError
from .tensor import ROUTING_GROUPS, Parameter, Tensor, no_grad

DISC_BACKBONE_DEPTH = 3


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable layer graph.

    A generator is a single chain in ``trunk``. A discriminator runs
    ``trunk`` once and then every entry of ``heads`` on the trunk output.
    Blocks are ``(name, BlockSpec)`` pairs; parameter names are
    ``<block name>.<layer name>.<role>``.
    """

    role: str  # generator | discriminator
    in_channels: int
    trunk: tuple
    heads: tuple = ()
    variant: str = ""
    image_size: Optional[int] = None
    shared_depth: int = 0

    @property
    def kind(self) -> str:
        if self.role == "generator":
            return self.variant
        names = tuple(name for name, _ in self.heads)
        return {("global",): "global", ("patch",): "patch"}.get(names, "pggan")

    @property
    def downsamples(self) -> int:
        return sum(1 for _, b in self.trunk if b.kind == "downsample")

    @property
    def upsamples(self) -> int:
        return sum(1 for _, b in self.trunk if b.kind.startswith("upsample"))

    def named_blocks(self):
        yield from self.trunk
        for _, head in self.heads:
            yield from head

    def param_shapes(self) -> dict:
        shapes = {}
        for name, block in self.named_blocks():
            for key, shape in block.param_shapes().items():
                full = f"{name}.{key}"
                if full in shapes:
                    raise ValueError(f"duplicate parameter name {full}")
                shapes[full] = shape
        return shapes

    def head(self, name: str) -> tuple:
        for head_name, blocks in self.heads:
            if head_name == name:
                return blocks
        raise KeyError(name)

    def without_head(self, name: str) -> "NetworkSpec":
        return NetworkSpec(self.role, self.in_channels, self.trunk,
                           tuple(h for h in self.heads if h[0] != name),
                           self.variant, self.image_size, self.shared_depth)


@dataclass
class DiscriminatorOutput:
    global_score: Optional[Tensor]
    patch_score: Optional[Tensor]
    patch_map: Optional[Tensor] = None


@dataclass
class Network:
    spec: NetworkSpec
    params: dict = field(default_factory=dict)

    def parameters(self, group: Optional[str] = None) -> list:
        return [p for p in self.params.values() if group is None or p.group == group]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def __call__(self, x, track_grads: bool = True):
        return forward(self, x, track_grads)


# ----------------------------------------------------------------------------
# builders

def build_generator(variant: str = "dres", in_channels: int = 3, base_channels: int = 16,
                    num_residual: int = 4, upsample: str = "iconv", residual_kind: Optional[str] = None,
                    encoder_norm: bool = False) -> NetworkSpec:
    """Generative ResNet.

    Instance normalisation always sits inside the residual branches. The
    stem, downsampling and upsampling convolutions are normalised only when
    ``encoder_norm`` is set; left off, per-image colour statistics survive
    to the output.

    ``res``: 3 downsampling blocks and type-a residual blocks.
    ``dres``: 2 downsampling blocks and type-b residual blocks whose
    dilation doubles from one.
    """
    if variant not in ("res", "dres"):
        raise ValueError(f"generator variant must be 'res' or 'dres', got {variant!r}")
    if in_channels < 1 or num_residual < 1 or base_channels < 1:
        raise ValueError("in_channels, base_channels and num_residual must be >= 1")
    if upsample not in ("iconv", "tconv"):
        raise ValueError(f"upsample must be 'iconv' or 'tconv', got {upsample!r}")
    n_down = 3 if variant == "res" else 2
    if variant == "res":
        kind = residual_kind or "a"
        dilations = [1] * num_residual
    else:
        kind = residual_kind or "b"
        dilations = B.dilation_schedule(num_residual)

    blocks = [("gen.stem", B.build_conv_block(in_channels, base_channels, 7, 1, 3, norm=encoder_norm, act="relu"))]
    ch = base_channels
    for i in range(n_down):
        blocks.append((f"gen.down{i + 1}", B.build_downsample(ch, ch * 2, norm=encoder_norm)))
        ch *= 2
    for i, d in enumerate(dilations):
        blocks.append((f"gen.res{i + 1}", B.build_residual_block(kind, ch, d)))
    for i in range(n_down):
        if upsample == "iconv":
            block = B.build_upsample_iconv(ch, ch // 2, norm=encoder_norm)
        else:
            block = B.build_upsample_tconv(ch, ch // 2, kernel=4, stride=2, norm=encoder_norm)
        blocks.append((f"gen.up{i + 1}", block))
        ch //= 2
    blocks.append(("gen.out", B.build_conv_block(ch, in_channels, 7, 1, 3, norm=False, act="tanh")))
    return NetworkSpec("generator", in_channels, tuple(blocks), variant=variant)


def _disc_backbone(prefix: str, in_channels: int, base: int, indices) -> list:
    out = []
    for i in indices:
        cin = in_channels if i == 0 else base * 2 ** (i - 1)
        cout = base * 2**i
        out.append((f"{prefix}.conv{i + 1}", B.build_conv_block(cin, cout, 4, 2, 1, act="leaky_relu")))
    return out


def build_discriminator(kind: str = "pggan", in_channels: int = 3, base_channels: int = 16,
                        shared_depth: int = DISC_BACKBONE_DEPTH, image_size: int = 32,
                        patch_hidden: int = 16) -> NetworkSpec:
    """Global, patch, or shared-trunk two-head discriminator.

    The backbone is ``DISC_BACKBONE_DEPTH`` stride-2 conv blocks. For
    ``pggan`` the first ``shared_depth`` of them form the shared trunk and
    the remainder is duplicated into each head. The global head adds two
    stride-2 convs and a dense layer; the patch head adds a stride-2 conv to
    a one-channel patch map followed by two dense layers. Both end in a
    sigmoid.
    """
    if kind not in ("global", "patch", "pggan"):
        raise ValueError(f"discriminator kind must be global, patch or pggan, got {kind!r}")
    if kind == "pggan":
        if not 0 <= shared_depth <= DISC_BACKBONE_DEPTH:
            raise ValueError(f"shared_depth must be in [0, {DISC_BACKBONE_DEPTH}], got {shared_depth}")
    else:
        shared_depth = DISC_BACKBONE_DEPTH
    if image_size % 32:
        raise ValueError(f"discriminator image_size must be a multiple of 32, got {image_size}")

    trunk = _disc_backbone("trunk", in_channels, base_channels, range(shared_depth))
    rest = range(shared_depth, DISC_BACKBONE_DEPTH)
    ch = base_channels * 2 ** (DISC_BACKBONE_DEPTH - 1)
    size = image_size // 2**DISC_BACKBONE_DEPTH

    heads = []
    if kind in ("global", "pggan"):
        g = _disc_backbone("global", in_channels, base_channels, rest)
        g.append(("global.conv4", B.build_conv_block(ch, ch * 2, 4, 2, 1, act="leaky_relu")))
        g.append(("global.conv5", B.build_conv_block(ch * 2, ch * 2, 4, 2, 1, act="leaky_relu")))
        g.append(("global.fc", B.build_dense_block(ch * 2 * (size // 4) ** 2, 1, act="sigmoid")))
        heads.append(("global", tuple(g)))
    if kind in ("patch", "pggan"):
        p = _disc_backbone("patch", in_channels, base_channels, rest)
        p.append(("patch.map", B.build_conv_block(ch, 1, 4, 2, 1, act=None)))
        p.append(("patch.fc1", B.build_dense_block((size // 2) ** 2, patch_hidden, act="leaky_relu")))
        p.append(("patch.fc2", B.build_dense_block(patch_hidden, 1, act="sigmoid")))
        heads.append(("patch", tuple(p)))
    return NetworkSpec("discriminator", in_channels, tuple(trunk), tuple(heads),
                       image_size=image_size, shared_depth=shared_depth)


# ----------------------------------------------------------------------------
# parameters

def init_network(spec: NetworkSpec, rng, dtype=np.float32) -> Network:
    """He-style uniform initialisation (fan-in scaled) for conv/dense weights."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    params = {}
    for name, shape in spec.param_shapes().items():
        role = name.rsplit(".", 1)[1]
        if role == "weight":
            if name.endswith(".tconv.weight"):
                fan_in = shape[0] * shape[2] * shape[3]
            else:
                fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif role == "gain":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Parameter(data.astype(dtype), name)
    return Network(spec, params)


def group_partition(net: Network) -> dict:
    """Parameter names per routing group."""
    out = {g: [] for g in ROUTING_GROUPS}
    for name, p in net.params.items():
        out[p.group].append(name)
    return out


def head_dependencies(spec: NetworkSpec, head: str) -> set:
    """Parameter names a head's score depends on (trunk included)."""
    names = set()
    for name, block in list(spec.trunk) + list(spec.head(head)):
        names.update(f"{name}.{k}" for k in block.param_shapes())
    return names


# ----------------------------------------------------------------------------
# forward

def _run_chain(chain, params, x, offset=0):
    h = x
    taps = {}
    for i, (name, block) in enumerate(chain):
        try:
            h = B.run_block(block, params, name, h)
        except ShapeError as exc:
            raise ContractError(f"block {offset + i} ({name}): {exc}") from exc
        taps[name] = h
    return h, taps


def check_input(spec: NetworkSpec, x: Tensor) -> None:
    if x.data.ndim != 4:
        raise ContractError(f"block 0 ({spec.trunk[0][0]}): input must be rank-4, got shape {list(x.shape)}")
    _, c, h, w = x.shape
    first = spec.trunk[0][0] if spec.trunk else spec.heads[0][1][0][0]
    if c != spec.in_channels:
        raise ContractError(f"block 0 ({first}): expected {spec.in_channels} input channels, got {c}")
    if spec.role == "generator":
        mult = 2**spec.downsamples
        if h % mult or w % mult or h < mult:
            raise ContractError(
                f"block 0 ({first}): spatial size {h}x{w} must be a positive multiple of {mult}")
    elif h != spec.image_size or w != spec.image_size:
        raise ContractError(
            f"block 0 ({first}): discriminator built for {spec.image_size}x{spec.image_size}, got {h}x{w}")


def forward(net: Network, x, track_grads: bool = True):
    """Run a network; returns a Tensor (generator) or DiscriminatorOutput.

    With ``track_grads`` operations record on the active tape, if any.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    spec = net.spec
    check_input(spec, x)
    if not track_grads:
        with no_grad():
            return forward(net, x, True)
    h, _ = _run_chain(spec.trunk, net.params, x)
    if spec.role == "generator":
        return h
    scores = {}
    patch_map = None
    offset = len(spec.trunk)
    for head_name, chain in spec.heads:
        scores[head_name], taps = _run_chain(chain, net.params, h, offset)
        offset += len(chain)
        if head_name == "patch":
            patch_map = taps["patch.map"]
    return DiscriminatorOutput(scores.get("global"), scores.get("patch"), patch_map)


# ----------------------------------------------------------------------------
# inspection

def _trace_shapes(spec: NetworkSpec, size: int) -> list:
    """(block name, kind, output shape) rows via a zero forward pass."""
    params = {k: Tensor(np.zeros(s)) for k, s in spec.param_shapes().items()}
    x = Tensor(np.zeros((1, spec.in_channels, size, size)))
    rows = []
    with no_grad():
        h, taps = _run_chain(spec.trunk, params, x)
        rows += [(n, b.kind, taps[n].shape) for n, b in spec.trunk]
        for _, chain in spec.heads:
            _, taps = _run_chain(chain, params, h)
            rows += [(n, b.kind, taps[n].shape) for n, b in chain]
    return rows


def path_receptive_fields(spec: NetworkSpec) -> dict:
    """Receptive field per path, counting convolutions up to the last spatial layer.

    Generator: stem, downsampling and residual layers (the encoder side).
    Discriminator: trunk plus each head's convolutional layers.
    """
    out = {}
    if spec.role == "generator":
        layers = []
        for _, block in spec.trunk:
            if block.kind.startswith("upsample"):
                break
            layers += B.block_rf_layers(block)
        out["encoder"] = B.receptive_field(layers)
        res = [l for _, b in spec.trunk if b.kind.startswith("residual") for l in B.block_rf_layers(b)]
        if res:
            out["residual_stack"] = B.receptive_field(res)
        return out
    trunk = [l for _, b in spec.trunk for l in B.block_rf_layers(b)]
    for head_name, chain in spec.heads:
        layers = trunk + [l for _, b in chain for l in B.block_rf_layers(b)]
        out[head_name] = B.receptive_field(layers)
    return out


def summary(net_or_spec, size: Optional[int] = None) -> str:
    """Human-readable table of blocks, shapes, parameter counts and groups."""
    spec = net_or_spec.spec if isinstance(net_or_spec, Network) else net_or_spec
    size = size or spec.image_size or 32
    shapes = spec.param_shapes()
    title = f"{spec.role} ({spec.kind})"
    lines = [title, "=" * len(title),
             f"{'block':<16}{'kind':<16}{'output':<20}{'params':>9}  group"]
    total = 0
    for name, kind, shape in _trace_shapes(spec, size):
        count = sum(int(np.prod(s)) for k, s in shapes.items() if k.startswith(name + "."))
        total += count
        group = Parameter(np.zeros(1), name + ".x").group
        lines.append(f"{name:<16}{kind:<16}{str(list(shape)):<20}{count:>9}  {group}")
    lines.append(f"total parameters: {total}")
    if spec.role == "generator":
        dil = [b.dilation for _, b in spec.trunk if b.kind.startswith("residual")]
        lines.append(f"downsample blocks: {spec.downsamples}  upsample blocks: {spec.upsamples}")
        lines.append(f"dilation schedule: {dil}")
    else:
        lines.append(f"shared depth: {spec.shared_depth}")
    for path, trace in path_receptive_fields(spec).items():
        lines.append(f"receptive field [{path}]: {trace.rf} px  (rf, jump) per layer: "
                     + " ".join(f"({r},{j})" for r, j in trace.steps))
    return "\n".join(lines)
