"""Flash device state: geometry, latency table, blocks, and page mechanics.

This layer is pure mechanism. It knows how to program/read/erase pages and
convert block modes while keeping the LPN->PPN mapping honest; every policy
decision (where to place, what to collect) lives in the FTL layer above.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import AuditError, GeometryError, PageStateError

# page-state encoding inside BlockState.pages: a valid page stores its lpn
PAGE_FREE = -1
PAGE_INVALID = -2

# QLC cells hold four bits per cell, so a block gains 4x pages in QLC mode
QLC_PAGE_FACTOR = 4


class Mode(enum.Enum):
    SLC = "slc"
    QLC = "qlc"


@dataclass(frozen=True)
class FlashGeometry:
    channels: int = 32
    blocks_per_channel: int = 512
    pages_per_block_slc: int = 256
    page_size: int = 16384           # bytes
    op_ratio: float = 0.125          # over-provisioned fraction of raw space

    def __post_init__(self):
        if self.channels < 1 or self.blocks_per_channel < 1:
            raise GeometryError("channels and blocks_per_channel must be >= 1")
        if self.pages_per_block_slc < 1:
            raise GeometryError("pages_per_block_slc must be >= 1")
        if self.page_size < 1:
            raise GeometryError("page_size must be >= 1")
        if not (0.0 <= self.op_ratio < 1.0):
            raise GeometryError("op_ratio must be in [0, 1)")

    @property
    def pages_per_block_qlc(self) -> int:
        return self.pages_per_block_slc * QLC_PAGE_FACTOR

    @property
    def total_blocks(self) -> int:
        return self.channels * self.blocks_per_channel

    def pages_per_block(self, mode: Mode) -> int:
        if mode is Mode.SLC:
            return self.pages_per_block_slc
        return self.pages_per_block_qlc

    def channel_of(self, block_id: int) -> int:
        # consecutive block ids round-robin across channels
        return block_id % self.channels


@dataclass(frozen=True)
class LatencyModel:
    """Per-operation flash costs in microseconds."""

    read_slc: float = 20.0
    read_qlc: float = 140.0
    write_slc: float = 200.0
    write_qlc: float = 2000.0
    erase_slc: float = 3000.0
    erase_qlc: float = 3500.0

    def __post_init__(self):
        vals = (self.read_slc, self.read_qlc, self.write_slc,
                self.write_qlc, self.erase_slc, self.erase_qlc)
        if any(v <= 0 for v in vals):
            raise GeometryError("latency values must be positive")
        if self.write_qlc <= self.write_slc or self.read_qlc <= self.read_slc:
            raise GeometryError("QLC read/write must cost more than SLC")

    def read_us(self, mode: Mode) -> float:
        return self.read_slc if mode is Mode.SLC else self.read_qlc

    def write_us(self, mode: Mode) -> float:
        return self.write_slc if mode is Mode.SLC else self.write_qlc

    def erase_us(self, mode: Mode) -> float:
        return self.erase_slc if mode is Mode.SLC else self.erase_qlc


class BlockState:
    """One erase block: mode, page array, append-only write pointer."""

    __slots__ = ("mode", "pages", "write_pointer", "erase_count",
                 "valid_count", "invalid_count", "tags")

    def __init__(self, mode: Mode, pages_per_block: int):
        self.mode = mode
        self.pages = [PAGE_FREE] * pages_per_block
        self.write_pointer = 0
        self.erase_count = 0
        self.valid_count = 0
        self.invalid_count = 0
        self.tags: dict[int, object] | None = None  # test payloads, lazy

    @property
    def page_count(self) -> int:
        return len(self.pages)

    @property
    def free_count(self) -> int:
        return len(self.pages) - self.write_pointer

    @property
    def is_fully_free(self) -> bool:
        return self.write_pointer == 0

    @property
    def is_full(self) -> bool:
        return self.write_pointer == len(self.pages)


class SsdState:
    """Blocks plus the LPN->PPN mapping and raw operation counters.

    A PPN is a (block_id, page_idx) pair; block ids already encode the
    channel (block_id % channels).
    """

    def __init__(self, geometry: FlashGeometry, latency: LatencyModel,
                 initial_mode_split: float = 0.25):
        if not (0.0 <= initial_mode_split <= 1.0):
            raise GeometryError("initial_mode_split must be in [0, 1]")
        self.geometry = geometry
        self.latency = latency
        total = geometry.total_blocks
        n_slc = int(initial_mode_split * total + 0.5)
        # lowest ids become SLC; ids round-robin channels, so the split is
        # channel-balanced by construction
        self.blocks = [
            BlockState(Mode.SLC if i < n_slc else Mode.QLC,
                       geometry.pages_per_block(
                           Mode.SLC if i < n_slc else Mode.QLC))
            for i in range(total)
        ]
        raw_pages = sum(b.page_count for b in self.blocks)
        # exported size is frozen here; later mode conversions change raw
        # capacity but never what the host can address
        self.logical_capacity_pages = int(raw_pages * (1.0 - geometry.op_ratio))
        self.mapping: dict[int, tuple[int, int]] = {}
        self.device_pages_written = 0
        self.erase_ops = 0

    # --- capacity and occupancy ---------------------------------------------

    @property
    def raw_capacity_pages(self) -> int:
        return sum(b.page_count for b in self.blocks)

    def block_count(self, mode: Mode) -> int:
        return sum(1 for b in self.blocks if b.mode is mode)

    def valid_pages(self, mode: Mode | None = None) -> int:
        return sum(b.valid_count for b in self.blocks
                   if mode is None or b.mode is mode)

    # --- page operations ------------------------------------------------------

    def program_page(self, block_id: int, page_idx: int, lpn: int,
                     tag=None) -> float:
        """Append one page to a block. Returns the program latency in us."""
        block = self.blocks[block_id]
        if page_idx != block.write_pointer:
            raise PageStateError(
                f"block {block_id}: program at {page_idx} but write pointer "
                f"is {block.write_pointer} (append-only)")
        if block.pages[page_idx] != PAGE_FREE:
            raise PageStateError(f"block {block_id} page {page_idx} not free")
        if lpn in self.mapping:
            raise PageStateError(
                f"lpn {lpn} still mapped; invalidate before reprogramming")
        block.pages[page_idx] = lpn
        block.write_pointer += 1
        block.valid_count += 1
        if tag is not None:
            if block.tags is None:
                block.tags = {}
            block.tags[page_idx] = tag
        self.mapping[lpn] = (block_id, page_idx)
        self.device_pages_written += 1
        return self.latency.write_us(block.mode)

    def read_page(self, block_id: int, page_idx: int) -> float:
        """Read one valid page. Returns the read latency in us."""
        block = self.blocks[block_id]
        lpn = block.pages[page_idx]
        if lpn < 0:
            state = "free" if lpn == PAGE_FREE else "invalid"
            raise PageStateError(
                f"read of {state} page {block_id}/{page_idx}: mapping corrupt")
        return self.latency.read_us(block.mode)

    def invalidate_page(self, block_id: int, page_idx: int) -> None:
        """Drop a valid page from the mapping (data became stale)."""
        block = self.blocks[block_id]
        lpn = block.pages[page_idx]
        if lpn < 0:
            raise PageStateError(
                f"invalidate of non-valid page {block_id}/{page_idx}")
        block.pages[page_idx] = PAGE_INVALID
        block.valid_count -= 1
        block.invalid_count += 1
        if block.tags is not None:
            block.tags.pop(page_idx, None)
        del self.mapping[lpn]

    def erase_block(self, block_id: int) -> float:
        """Erase a block holding no valid data. Returns erase latency in us."""
        block = self.blocks[block_id]
        if block.valid_count != 0:
            raise PageStateError(
                f"erase of block {block_id} with {block.valid_count} valid pages")
        for i in range(block.write_pointer):
            block.pages[i] = PAGE_FREE
        block.write_pointer = 0
        block.invalid_count = 0
        block.erase_count += 1
        block.tags = None
        self.erase_ops += 1
        return self.latency.erase_us(block.mode)

    def convert_block_mode(self, block_id: int, new_mode: Mode) -> None:
        """Switch a fully-free block between SLC and QLC page counts.

        Metadata-only: the erase that freed the block already paid the cost,
        so conversion itself charges no latency and no endurance.
        """
        block = self.blocks[block_id]
        if not block.is_fully_free or block.invalid_count:
            raise PageStateError(
                f"convert of non-empty block {block_id} (erase it first)")
        if block.mode is new_mode:
            return
        block.mode = new_mode
        block.pages = [PAGE_FREE] * self.geometry.pages_per_block(new_mode)

    def payload_of(self, lpn: int):
        """Tag stored by the most recent write to lpn (None if untagged)."""
        ppn = self.mapping.get(lpn)
        if ppn is None:
            return None
        block = self.blocks[ppn[0]]
        return None if block.tags is None else block.tags.get(ppn[1])

    # --- consistency audit -----------------------------------------------------

    def audit(self) -> None:
        """Cross-check mapping against page states; raises AuditError.

        The mapping must be a bijection onto exactly the valid pages, and
        every cached counter must agree with a recount.
        """
        for lpn, (block_id, page_idx) in self.mapping.items():
            stored = self.blocks[block_id].pages[page_idx]
            if stored != lpn:
                raise AuditError(
                    f"mapping says lpn {lpn} -> {block_id}/{page_idx}, "
                    f"page stores {stored}")
        total_valid = 0
        for block_id, block in enumerate(self.blocks):
            valid = sum(1 for p in block.pages if p >= 0)
            invalid = sum(1 for p in block.pages if p == PAGE_INVALID)
            written = sum(1 for p in block.pages if p != PAGE_FREE)
            if valid != block.valid_count or invalid != block.invalid_count:
                raise AuditError(f"block {block_id}: counter drift")
            if written != block.write_pointer:
                raise AuditError(f"block {block_id}: write pointer drift")
            for idx in range(block.write_pointer, block.page_count):
                if block.pages[idx] != PAGE_FREE:
                    raise AuditError(
                        f"block {block_id}: page {idx} written past pointer")
            total_valid += valid
        if total_valid != len(self.mapping):
            raise AuditError(
                f"{total_valid} valid pages vs {len(self.mapping)} mapped lpns")


def new_ssd(geometry: FlashGeometry, latency: LatencyModel | None = None,
            initial_mode_split: float = 0.25) -> SsdState:
    return SsdState(geometry, latency or LatencyModel(), initial_mode_split)


def desk_geometry(channels: int = 1, blocks_per_channel: int = 8,
                  pages_per_block_slc: int = 8, page_size: int = 16384,
                  op_ratio: float = 0.125) -> FlashGeometry:
    """Hand-traceable geometry for tests and experiments."""
    return FlashGeometry(channels=channels,
                         blocks_per_channel=blocks_per_channel,
                         pages_per_block_slc=pages_per_block_slc,
                         page_size=page_size,
                         op_ratio=op_ratio)
