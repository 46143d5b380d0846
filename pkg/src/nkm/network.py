"""Neural-kernel blocks and networks.

A block maps ``h -> rff(pool(V_1 h + b_1, ..., V_m h + b_m))`` where the
pooling is one of

- ``identity``: ``m == 1``, the pooled value is the single transform
- ``maxout``: coordinatewise maximum over the ``m`` transforms
- ``average``: coordinatewise mean
- ``conv``: ``sum_k d_k a_k``, a 1x1 convolution with one filter across the
  ``m`` transform channels (the product ``P diag(d) 1_m``)

A network stacks blocks and ends with an affine scoring layer ``W h + b``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .features import RFFMap, rff_from_projection, rff_new, rff_project

POOLINGS = ("identity", "maxout", "average", "conv")
_ALIASES = {"hybrid": "identity"}


def canonical_pooling(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in POOLINGS:
        raise ValueError(f"unknown pooling {name!r}; expected one of {POOLINGS + tuple(_ALIASES)}")
    return name


@dataclass
class BlockSpec:
    """Architecture of one block: ``m`` transforms to ``d_out``, then an RFF map with ``D`` frequencies."""

    d_out: int
    D: int
    m: int = 4
    pooling: str = "maxout"
    sigma: float = 1.0
    freeze: bool = False

    def __post_init__(self):
        self.pooling = canonical_pooling(self.pooling)
        if self.d_out < 1 or self.D < 1 or self.m < 1:
            raise ValueError(f"block dims must be positive: {self}")
        if (self.pooling == "identity") != (self.m == 1):
            raise ValueError("identity pooling requires m == 1 and m == 1 requires identity pooling")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def out_dim(self) -> int:
        return 2 * self.D


@dataclass
class LinearTransform:
    V: np.ndarray
    b: np.ndarray


@dataclass(eq=False)
class Block:
    """Trainable block parameters plus its frozen RFF map.

    ``V`` is ``(m, d_out, d_in)`` and ``b`` is ``(m, d_out)``; transform ``k``
    is ``(V[k], b[k])``.
    """

    V: np.ndarray
    b: np.ndarray
    pooling: str
    rff: RFFMap
    conv_filter: np.ndarray | None = None
    freeze: bool = False

    def __post_init__(self):
        self.pooling = canonical_pooling(self.pooling)
        m, d_out, _ = self.V.shape
        if self.b.shape != (m, d_out):
            raise ValueError(f"bias shape {self.b.shape} does not match V {self.V.shape}")
        if (self.pooling == "identity") != (m == 1):
            raise ValueError("identity pooling requires exactly one transform")
        if self.pooling == "conv":
            if self.conv_filter is None or self.conv_filter.shape != (m,):
                raise ValueError(f"conv pooling needs a filter of length m={m}")
        elif self.conv_filter is not None:
            raise ValueError("conv_filter is only allowed with conv pooling")
        if self.rff.d != d_out:
            raise ValueError(f"RFF map expects d={self.rff.d}, block produces {d_out}")

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def d_in(self) -> int:
        return self.V.shape[2]

    @property
    def d_out(self) -> int:
        return self.V.shape[1]

    @property
    def out_dim(self) -> int:
        return self.rff.out_dim

    @property
    def transforms(self) -> list[LinearTransform]:
        return [LinearTransform(self.V[k], self.b[k]) for k in range(self.m)]

    def spec(self) -> BlockSpec:
        return BlockSpec(self.d_out, self.rff.D, self.m, self.pooling, self.rff.sigma, self.freeze)


@dataclass(eq=False)
class Network:
    blocks: list[Block]
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("a network needs at least one block")
        for i in range(1, len(self.blocks)):
            prev, cur = self.blocks[i - 1], self.blocks[i]
            if cur.d_in != prev.out_dim:
                raise ValueError(
                    f"block {i + 1} expects input dim {cur.d_in}, block {i} outputs {prev.out_dim}"
                )
        if self.W.shape != (self.b.shape[0], self.blocks[-1].out_dim):
            raise ValueError(f"scoring layer W {self.W.shape} does not fit last block / bias")

    @property
    def Q(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.blocks[0].d_in

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def parameters(self, trainable_only: bool = True) -> dict[str, np.ndarray]:
        """Named parameter arrays (live references, not copies)."""
        params = {}
        for i, blk in enumerate(self.blocks):
            if trainable_only and blk.freeze:
                continue
            params[f"blocks.{i}.V"] = blk.V
            params[f"blocks.{i}.b"] = blk.b
            if blk.conv_filter is not None:
                params[f"blocks.{i}.filter"] = blk.conv_filter
        params["W"] = self.W
        params["b"] = self.b
        return params

    def param_count(self, trainable_only: bool = False) -> int:
        return sum(p.size for p in self.parameters(trainable_only).values())


@dataclass
class BlockCache:
    """Intermediate values of one block forward pass, kept for backprop."""

    h_in: np.ndarray
    pre: np.ndarray  # (m, n, d_out) transform outputs
    pooled: np.ndarray
    proj: np.ndarray  # zeta projections of pooled
    out: np.ndarray
    argmax: np.ndarray | None = None


@dataclass
class ForwardCache:
    blocks: list[BlockCache] = field(default_factory=list)
    h_last: np.ndarray | None = None


def _pool(block: Block, A: np.ndarray):
    if block.pooling == "maxout":
        # np.argmax returns the first maximizer: lowest k wins ties
        idx = np.argmax(A, axis=0)
        return np.take_along_axis(A, idx[None], axis=0)[0], idx
    if block.pooling == "average":
        return A.sum(axis=0) * (1.0 / block.m), None
    if block.pooling == "conv":
        return np.tensordot(block.conv_filter, A, axes=(0, 0)), None
    return A[0].copy(), None


def block_forward(block: Block, h):
    """Forward one block. Accepts ``(d_in,)`` or ``(n, d_in)``; returns ``(out, cache)``."""
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    H = h[None, :] if single else h
    if H.ndim != 2 or H.shape[1] != block.d_in:
        raise ValueError(f"dimension mismatch: block expects d_in={block.d_in}, got {h.shape}")
    A = H @ block.V.transpose(0, 2, 1) + block.b[:, None, :]
    P, idx = _pool(block, A)
    Z = rff_project(block.rff, P)
    out = rff_from_projection(Z)
    cache = BlockCache(H, A, P, Z, out, idx)
    return (out[0] if single else out), cache


def network_forward(net: Network, x):
    """Scores for ``x`` (``(d,)`` or ``(n, d)``) and the per-block caches."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.d:
        raise ValueError(f"dimension mismatch: network expects d={net.d}, got input shape {x.shape}")
    cache = ForwardCache()
    for blk in net.blocks:
        h, bc = block_forward(blk, h)
        cache.blocks.append(bc)
    cache.h_last = h
    S = h @ net.W.T + net.b
    return (S[0] if single else S), cache


def scores(net: Network, X) -> np.ndarray:
    return network_forward(net, X)[0]


def predict(net: Network, x):
    """Class index with the largest score; the smallest index wins ties."""
    S = scores(net, x)
    return int(np.argmax(S)) if S.ndim == 1 else np.argmax(S, axis=1)


@dataclass
class ArchSpec:
    d: int
    Q: int
    blocks: list[BlockSpec]

    def __post_init__(self):
        if self.d < 1 or self.Q < 2 or not self.blocks:
            raise ValueError(f"invalid architecture: d={self.d}, Q={self.Q}, {len(self.blocks)} blocks")


def default_blocks(d_out=64, D=64, sigma=4.0, pooling="maxout", m=4, n_blocks=2) -> list[BlockSpec]:
    return [BlockSpec(d_out, D, m, pooling, sigma) for _ in range(n_blocks)]


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def block_seeds(seed: int, index: int):
    """Deterministic ``(weight rng, map seed)`` for block ``index`` under ``seed``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    rng = np.random.default_rng([seed, index, 0])
    map_seed = int(np.random.SeedSequence([seed, index, 1]).generate_state(1)[0])
    return rng, map_seed


def init_block(bs: BlockSpec, d_in: int, seed: int, index: int) -> Block:
    rng, map_seed = block_seeds(seed, index)
    V = glorot_uniform(rng, (bs.m, bs.d_out, d_in), d_in, bs.d_out)
    b = np.zeros((bs.m, bs.d_out))
    filt = np.full(bs.m, 1.0 / bs.m) if bs.pooling == "conv" else None
    rff = rff_new(bs.d_out, bs.D, bs.sigma, map_seed)
    return Block(V, b, bs.pooling, rff, filt, bs.freeze)


def init_head(in_dim: int, Q: int, seed: int, index: int):
    rng, _ = block_seeds(seed, index)
    return glorot_uniform(rng, (Q, in_dim), in_dim, Q), np.zeros(Q)


def build_network(spec: ArchSpec, seed: int) -> Network:
    """Initialize a network: uniform fan-based weights, zero biases, conv filters at ``1/m``."""
    blocks = []
    d_in = spec.d
    for i, bs in enumerate(spec.blocks):
        blk = init_block(bs, d_in, seed, i)
        blocks.append(blk)
        d_in = blk.out_dim
    W, b = init_head(d_in, spec.Q, seed, len(spec.blocks))
    return Network(blocks, W, b)


def arch_of(net: Network) -> ArchSpec:
    return ArchSpec(net.d, net.Q, [blk.spec() for blk in net.blocks])
