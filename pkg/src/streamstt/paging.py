"""Paged KV-cache pool with block tables for temporally heterogeneous caches.

One pool serves both cache kinds through a single free list.  Decoder-kind
tables advance one position per step; encoder-kind tables are stretched by
the pooling factor p: their physical block size is ``block_size_tokens * p``
positions and every decoder step contributes p new encoder positions, so the
same block-count arithmetic covers both rates.  Slot ids at decoder rate
expand to contiguous ranges of p native slots (`expand_slot`).

`paged_attention` gathers a logical window out of the block storage into a
contiguous buffer and runs the exact same per-query kernel as contiguous
attention, so paged and contiguous results are bitwise identical.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import torch

from .nn import attention_one_query


class PoolExhaustedError(RuntimeError):
    def __init__(self, owner: str):
        super().__init__(f"KV pool exhausted while allocating for session {owner!r}")
        self.owner = owner


def expand_slot(slot_id: int, pooling: int) -> range:
    """Map a decoder-rate slot id to its contiguous range of native slots."""
    if pooling < 1:
        raise ValueError("pooling must be >= 1")
    return range(slot_id * pooling, slot_id * pooling + pooling)


@dataclass(frozen=True)
class KindSpec:
    n_layers: int
    n_kv_heads: int
    head_dim: int
    pooling: int  # native positions per decoder step (4 encoder / 1 decoder)


@dataclass(frozen=True)
class AttnMetadata:
    """Indexing metadata for one attention call over a block table.

    Lengths and offsets are stored at decoder rate and scaled by the table's
    pooling factor for native-rate indexing, mirroring how the encoder-side
    metadata is stretched alongside the block size.
    """

    kind: str
    pooling: int
    steps: int  # decoder-rate length

    @property
    def seq_len_native(self) -> int:
        return self.steps * self.pooling

    @property
    def query_offset_native(self) -> int:
        return (self.steps - 1) * self.pooling if self.steps > 0 else 0


class PagedKvPool:
    """Fixed-capacity block store shared by every session and cache kind."""

    def __init__(
        self,
        num_blocks: int,
        block_size_tokens: int,
        kinds: dict[str, KindSpec],
        poison_freed: bool = True,
        dtype: torch.dtype = torch.float32,
    ):
        self.num_blocks = num_blocks
        self.block_size_tokens = block_size_tokens
        self.kinds = dict(kinds)
        self.poison_freed = poison_freed
        self._free = list(range(num_blocks - 1, -1, -1))
        self._lock = threading.Lock()
        self._storage: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
        for name, spec in self.kinds.items():
            ppb = block_size_tokens * spec.pooling
            shape = (spec.n_layers, num_blocks, ppb, spec.n_kv_heads, spec.head_dim)
            self._storage[name] = (torch.zeros(shape, dtype=dtype), torch.zeros(shape, dtype=dtype))

    @property
    def free_blocks(self) -> int:
        with self._lock:
            return len(self._free)

    def positions_per_block(self, kind: str) -> int:
        return self.block_size_tokens * self.kinds[kind].pooling

    def storage(self, kind: str) -> tuple[torch.Tensor, torch.Tensor]:
        return self._storage[kind]

    def alloc(self, owner: str) -> int:
        with self._lock:
            if not self._free:
                raise PoolExhaustedError(owner)
            return self._free.pop()

    def free(self, block_ids: list[int]) -> None:
        with self._lock:
            for bid in block_ids:
                if self.poison_freed:
                    for k_store, v_store in self._storage.values():
                        k_store[:, bid] = float("nan")
                        v_store[:, bid] = float("nan")
                self._free.append(bid)


class BlockTable:
    """Per-(session, cache-kind) view into the pool.

    Logical positions are native-rate (encoder frames or decoder tokens).
    Block b of the stream covers positions [b*ppb, (b+1)*ppb); only live
    blocks are kept in ``block_ids``, the leading ones are freed once the
    sliding window has moved fully past them.
    """

    def __init__(self, pool: PagedKvPool, kind: str, owner: str):
        self.pool = pool
        self.kind = kind
        self.owner = owner
        self.spec = pool.kinds[kind]
        self.pooling = self.spec.pooling
        self.block_ids: list[int] = []
        self.first_block = 0  # stream index of block_ids[0]
        self.length = 0  # native positions appended

    # -- growth ------------------------------------------------------------

    def advance(self, n: int = 1) -> int:
        """Reserve the next n native positions, allocating blocks on demand.

        Returns the first reserved position.
        """
        ppb = self.pool.positions_per_block(self.kind)
        first = self.length
        last_needed = (self.length + n - 1) // ppb
        have = self.first_block + len(self.block_ids) - 1
        for _ in range(have, last_needed):
            self.block_ids.append(self.pool.alloc(self.owner))
        self.length += n
        return first

    def write(self, layer: int, pos: int, k: torch.Tensor, v: torch.Tensor) -> None:
        ppb = self.pool.positions_per_block(self.kind)
        block, off = divmod(pos, ppb)
        bid = self.block_ids[block - self.first_block]
        k_store, v_store = self.pool.storage(self.kind)
        k_store[layer, bid, off] = k
        v_store[layer, bid, off] = v

    def append(self, layer_ks: torch.Tensor, layer_vs: torch.Tensor) -> None:
        """Append entries for all layers at once: [n_layers, n, KVH, dh]."""
        n = layer_ks.shape[1]
        first = self.advance(n)
        for layer in range(self.spec.n_layers):
            for i in range(n):
                self.write(layer, first + i, layer_ks[layer, i], layer_vs[layer, i])

    # -- reads -------------------------------------------------------------

    def gather(self, layer: int, lo: int, hi: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Contiguous copy of positions lo..hi inclusive: ([L, KVH, dh], same)."""
        if lo < self.first_live_position() or hi >= self.length:
            raise IndexError(f"gather [{lo}, {hi}] outside live range of {self.kind} table")
        ppb = self.pool.positions_per_block(self.kind)
        k_store, v_store = self.pool.storage(self.kind)
        ks, vs = [], []
        for block in range(lo // ppb, hi // ppb + 1):
            bid = self.block_ids[block - self.first_block]
            a = max(lo, block * ppb) - block * ppb
            b = min(hi, (block + 1) * ppb - 1) - block * ppb
            ks.append(k_store[layer, bid, a : b + 1])
            vs.append(v_store[layer, bid, a : b + 1])
        return torch.cat(ks), torch.cat(vs)

    def first_live_position(self) -> int:
        return self.first_block * self.pool.positions_per_block(self.kind)

    def metadata(self) -> AttnMetadata:
        steps = self.length if self.pooling == 1 else self.length // self.pooling
        return AttnMetadata(kind=self.kind, pooling=self.pooling, steps=steps)

    # -- shrinkage ----------------------------------------------------------

    def evict_before(self, lo: int) -> None:
        """Free blocks whose every position is < lo; partial blocks stay."""
        ppb = self.pool.positions_per_block(self.kind)
        dead_until = min(lo // ppb, (self.length + ppb - 1) // ppb)
        n_dead = dead_until - self.first_block
        if n_dead > 0:
            self.pool.free(self.block_ids[:n_dead])
            self.block_ids = self.block_ids[n_dead:]
            self.first_block = dead_until

    def free_all(self) -> None:
        self.pool.free(self.block_ids)
        self.block_ids = []
        self.first_block = 0
        self.length = 0


class ContiguousCache:
    """Plain in-order KV store with the same surface as BlockTable.

    Used by the offline reference pass; gathering yields tensors with values
    and layout identical to the paged gather for the same entries.
    """

    def __init__(self, n_layers: int):
        self._k: list[list[torch.Tensor]] = [[] for _ in range(n_layers)]
        self._v: list[list[torch.Tensor]] = [[] for _ in range(n_layers)]
        self._base = 0
        self.length = 0

    def advance(self, n: int = 1) -> int:
        first = self.length
        self.length += n
        return first

    def write(self, layer: int, pos: int, k: torch.Tensor, v: torch.Tensor) -> None:
        idx = pos - self._base
        store_k, store_v = self._k[layer], self._v[layer]
        while len(store_k) <= idx:
            store_k.append(None)  # type: ignore[arg-type]
            store_v.append(None)  # type: ignore[arg-type]
        store_k[idx] = k
        store_v[idx] = v

    def gather(self, layer: int, lo: int, hi: int) -> tuple[torch.Tensor, torch.Tensor]:
        a, b = lo - self._base, hi - self._base
        return torch.stack(self._k[layer][a : b + 1]), torch.stack(self._v[layer][a : b + 1])

    def first_live_position(self) -> int:
        return self._base

    def evict_before(self, lo: int) -> None:
        drop = lo - self._base
        if drop > 0:
            for layer in range(len(self._k)):
                del self._k[layer][:drop]
                del self._v[layer][:drop]
            self._base = lo

    def free_all(self) -> None:
        for layer in range(len(self._k)):
            self._k[layer].clear()
            self._v[layer].clear()


def paged_attention(
    query: torch.Tensor,
    table: BlockTable,
    layer: int,
    window: int,
    query_pos: int | None = None,
) -> torch.Tensor:
    """Windowed attention of one query over a block table's logical sequence.

    query: [n_heads, head_dim], rope already applied.  Equals contiguous
    attention over the same logical KV bitwise (identical gather + kernel).
    """
    pos = table.length - 1 if query_pos is None else query_pos
    lo = max(0, pos - window + 1)
    k, v = table.gather(layer, lo, pos)
    return attention_one_query(query, k, v)
