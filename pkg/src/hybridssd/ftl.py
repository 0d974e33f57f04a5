"""Flash translation layer: placement, space-management actions, WA counters.

Timing model: pages of one host request stripe round-robin across per-channel
active blocks and overlap (request cost = max over per-channel sums), while
GC work is a read->program dependency chain and charges a plain serial sum.
Foreground GC triggered by a request is billed to that request.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .config import ConfigProfile, PlacementStrategy
from .errors import CapacityError, NoData
from .ssd import Mode, SsdState

# one request may trigger at most this many space-management actions before
# the engine gives up and raises a capacity-pressure warning counter instead
SAFETY_BOUND = 64


class ActionKind(enum.Enum):
    SLC_INTERNAL_GC = "slc_internal_gc"
    QLC_INTERNAL_GC = "qlc_internal_gc"
    SLC_TO_QLC_GC = "slc_to_qlc_gc"
    SLC_TO_QLC_MC = "slc_to_qlc_mc"
    IDLE = "idle"


# fixed enumeration order; argmax tie-breaks and fuzz tables rely on it
ACTION_ORDER = (
    ActionKind.SLC_INTERNAL_GC,
    ActionKind.QLC_INTERNAL_GC,
    ActionKind.SLC_TO_QLC_GC,
    ActionKind.SLC_TO_QLC_MC,
    ActionKind.IDLE,
)


@dataclass(frozen=True)
class SpaceAction:
    kind: ActionKind
    granularity: int = 1


@dataclass
class ActionOutcome:
    pages_migrated: int = 0
    blocks_reclaimed: int = 0    # equals erases performed during the action
    blocks_converted: int = 0
    latency_us: float = 0.0

    @property
    def effective(self) -> bool:
        return bool(self.pages_migrated or self.blocks_reclaimed
                    or self.blocks_converted)


@dataclass
class WaCounters:
    host_pages_written: int = 0
    device_pages_written: int = 0


class FtlEngine:
    """Address translation plus the five space-management actions.

    `action_source` is any callable(ftl) -> SpaceAction; the replay harness
    wires the RL agent in through it, tests pass scripted pickers. Without
    one, the engine falls back to a fixed greedy order.
    """

    def __init__(self, ssd: SsdState, config: ConfigProfile,
                 action_source=None, record_ops: bool = False):
        self.ssd = ssd
        self.config = config
        self.action_source = action_source
        self.record_ops = record_ops
        self.op_log: list[dict] = []
        self.wa = WaCounters()
        self.rejected_requests = 0
        self.unmapped_reads = 0
        self.capacity_pressure_warnings = 0
        self.ineffective_actions = 0
        self.action_counts = {kind: 0 for kind in ActionKind}
        channels = ssd.geometry.channels
        # active = block currently taking appends, per mode per channel;
        # full blocks are retired from here immediately after programming
        self.active: dict[Mode, list[int | None]] = {
            Mode.SLC: [None] * channels, Mode.QLC: [None] * channels}
        self.free: dict[Mode, list[set[int]]] = {
            Mode.SLC: [set() for _ in range(channels)],
            Mode.QLC: [set() for _ in range(channels)]}
        for block_id, block in enumerate(ssd.blocks):
            ch = ssd.geometry.channel_of(block_id)
            self.free[block.mode][ch].add(block_id)
        self.stripe_cursor = {Mode.SLC: 0, Mode.QLC: 0}

    # --- occupancy ---------------------------------------------------------

    def free_block_count(self, mode: Mode) -> int:
        return sum(len(s) for s in self.free[mode])

    def free_fraction(self, mode: Mode) -> float:
        total = self.ssd.block_count(mode)
        if total == 0:
            return 0.0
        return self.free_block_count(mode) / total

    def _free_pages(self, mode: Mode) -> int:
        pages = self.free_block_count(mode) * self.ssd.geometry.pages_per_block(mode)
        for block_id in self.active[mode]:
            if block_id is not None:
                pages += self.ssd.blocks[block_id].free_count
        return pages

    def _has_space(self, mode: Mode) -> bool:
        if any(b is not None for b in self.active[mode]):
            return True
        return self.free_block_count(mode) > 0

    @property
    def wa_coefficient(self) -> float:
        if self.wa.host_pages_written == 0:
            raise NoData("write amplification undefined before any host write")
        return self.wa.device_pages_written / self.wa.host_pages_written

    def summary(self) -> dict:
        return {
            "slc_free_fraction": self.free_fraction(Mode.SLC),
            "qlc_free_fraction": self.free_fraction(Mode.QLC),
            "slc_blocks": self.ssd.block_count(Mode.SLC),
            "qlc_blocks": self.ssd.block_count(Mode.QLC),
            "wa": (self.wa.device_pages_written / self.wa.host_pages_written
                   if self.wa.host_pages_written else 1.0),
        }

    # --- allocation ----------------------------------------------------------

    def _pop_free(self, mode: Mode, channel: int) -> int | None:
        pool = self.free[mode][channel]
        if not pool:
            return None
        block_id = min(pool, key=lambda b: (self.ssd.blocks[b].erase_count, b))
        pool.remove(block_id)
        return block_id

    def _allocate_page(self, mode: Mode) -> tuple[int, int] | None:
        """Next append slot in `mode`, rotating the channel cursor."""
        channels = self.ssd.geometry.channels
        start = self.stripe_cursor[mode]
        for i in range(channels):
            ch = (start + i) % channels
            block_id = self.active[mode][ch]
            if block_id is None:
                block_id = self._pop_free(mode, ch)
                self.active[mode][ch] = block_id
            if block_id is not None:
                self.stripe_cursor[mode] = (ch + 1) % channels
                return block_id, self.ssd.blocks[block_id].write_pointer
        return None

    def _program(self, placed: tuple[int, int], lpn: int, tag) -> tuple[float, int, Mode]:
        block_id, page_idx = placed
        us = self.ssd.program_page(block_id, page_idx, lpn, tag)
        self.wa.device_pages_written += 1
        block = self.ssd.blocks[block_id]
        if block.is_full:
            ch = self.ssd.geometry.channel_of(block_id)
            if self.active[block.mode][ch] == block_id:
                self.active[block.mode][ch] = None
        return us, self.ssd.geometry.channel_of(block_id), block.mode

    def _preferred_mode(self, hot: bool | None) -> Mode:
        if self.config.placement_strategy is PlacementStrategy.SLC_FIRST:
            return Mode.SLC
        return Mode.SLC if hot else Mode.QLC

    # --- host requests ---------------------------------------------------------

    def handle_write(self, lpn: int, n_pages: int = 1, hot: bool | None = None,
                     tag=None) -> float:
        """Service a host write; returns its latency including foreground GC."""
        if lpn < 0 or n_pages < 1 or lpn + n_pages > self.ssd.logical_capacity_pages:
            self.rejected_requests += 1
            self._log_request([], [])
            return 0.0
        per_channel: dict[int, float] = {}
        parallel: list = []
        serial: list = []
        gc_us = 0.0
        for i in range(lpn, lpn + n_pages):
            old = self.ssd.mapping.get(i)
            if old is not None:
                self.ssd.invalidate_page(*old)
            mode = self._preferred_mode(hot)
            placed = self._allocate_page(mode)
            if placed is None:
                other = Mode.QLC if mode is Mode.SLC else Mode.SLC
                placed = self._allocate_page(other)
            if placed is None:
                # both regions exhausted mid-request: force space management
                gc_us += self._space_management(serial, forced=True)
                placed = (self._allocate_page(mode)
                          or self._allocate_page(Mode.QLC)
                          or self._allocate_page(Mode.SLC))
                if placed is None:
                    raise CapacityError("device full even after space management")
            us, ch, placed_mode = self._program(placed, i, tag)
            per_channel[ch] = per_channel.get(ch, 0.0) + us
            if self.record_ops:
                parallel.append(("program", placed_mode.value, ch))
        self.wa.host_pages_written += n_pages
        gc_us += self._space_management(serial)
        self._log_request(parallel, serial)
        base = max(per_channel.values()) if per_channel else 0.0
        return base + gc_us

    def handle_read(self, lpn: int, n_pages: int = 1) -> float:
        """Service a host read; unmapped pages cost nothing but are counted."""
        if lpn < 0 or n_pages < 1 or lpn + n_pages > self.ssd.logical_capacity_pages:
            self.rejected_requests += 1
            self._log_request([], [])
            return 0.0
        per_channel: dict[int, float] = {}
        parallel: list = []
        for i in range(lpn, lpn + n_pages):
            ppn = self.ssd.mapping.get(i)
            if ppn is None:
                self.unmapped_reads += 1
                continue
            us = self.ssd.read_page(*ppn)
            ch = self.ssd.geometry.channel_of(ppn[0])
            per_channel[ch] = per_channel.get(ch, 0.0) + us
            if self.record_ops:
                parallel.append(("read", self.ssd.blocks[ppn[0]].mode.value, ch))
        self._log_request(parallel, [])
        return max(per_channel.values()) if per_channel else 0.0

    def _log_request(self, parallel: list, serial: list) -> None:
        if self.record_ops:
            self.op_log.append({"parallel": parallel, "serial": serial})

    # --- space management ---------------------------------------------------------

    def _regions_below_threshold(self) -> bool:
        th = self.config.gc_trigger_threshold / 100.0
        for mode in (Mode.SLC, Mode.QLC):
            if self.ssd.block_count(mode) == 0:
                continue
            if self.free_fraction(mode) < th:
                return True
        return False

    def mc_eligible(self) -> bool:
        if self.ssd.block_count(Mode.SLC) == 0:
            return False
        return self.free_fraction(Mode.SLC) < self.config.conversion_trigger_threshold / 100.0

    def _next_action(self) -> SpaceAction:
        if self.action_source is not None:
            return self.action_source(self)
        return self._fallback_action()

    def _fallback_action(self) -> SpaceAction:
        # fixed greedy order keeps the engine usable without an agent; only
        # actions that can actually execute right now are considered
        for kind in ACTION_ORDER:
            if kind is ActionKind.IDLE:
                break
            if kind is ActionKind.SLC_TO_QLC_MC:
                if self.mc_eligible() and self.free_block_count(Mode.SLC) > 0:
                    return SpaceAction(kind, self.config.conversion_granularity)
                continue
            src = Mode.QLC if kind is ActionKind.QLC_INTERNAL_GC else Mode.SLC
            dst = Mode.SLC if kind is ActionKind.SLC_INTERNAL_GC else Mode.QLC
            victim = self.select_victim(src)
            if victim is None:
                continue
            if self.ssd.blocks[victim].valid_count <= self._free_pages(dst):
                return SpaceAction(kind, self.config.gc_granularity)
        return SpaceAction(ActionKind.IDLE)

    def maybe_trigger_space_mgmt(self) -> float:
        """Run the GC loop if a region dropped below the trigger threshold."""
        serial: list = []
        us = self._space_management(serial)
        self._log_request([], serial)
        return us

    def _space_management(self, serial_sink: list, forced: bool = False) -> float:
        total = 0.0
        rounds = 0
        while rounds < SAFETY_BOUND:
            if forced:
                if self._has_space(Mode.SLC) or self._has_space(Mode.QLC):
                    break
            elif not self._regions_below_threshold():
                break
            # a full device is a survival situation, not a policy decision:
            # the forced path always uses the deterministic fallback
            action = self._fallback_action() if forced else self._next_action()
            self.action_counts[action.kind] += 1
            if action.kind is ActionKind.IDLE:
                break
            if (action.kind is ActionKind.SLC_TO_QLC_MC
                    and not self.mc_eligible()):
                # conversion not eligible yet: the attempt is a zero outcome
                self.ineffective_actions += 1
                rounds += 1
                continue
            outcome = self.execute_action(action, serial_sink)
            if not outcome.effective:
                self.ineffective_actions += 1
            total += outcome.latency_us
            rounds += 1
        if rounds >= SAFETY_BOUND:
            self.capacity_pressure_warnings += 1
        return total

    def select_victim(self, mode: Mode) -> int | None:
        """Non-active block in `mode` with >=1 invalid page; fewest valid
        pages wins, ties broken by lowest erase count, then lowest id."""
        active_ids = {b for slots in self.active.values() for b in slots
                      if b is not None}
        best = None
        best_key = None
        for block_id, block in enumerate(self.ssd.blocks):
            if block.mode is not mode or block.invalid_count == 0:
                continue
            if block_id in active_ids:
                continue
            key = (block.valid_count, block.erase_count, block_id)
            if best_key is None or key < best_key:
                best, best_key = block_id, key
        return best

    def execute_action(self, action: SpaceAction,
                       serial_sink: list | None = None) -> ActionOutcome:
        """Apply one space-management action; never fatal on unmet
        preconditions, just a zero outcome (the agent may pick bad actions)."""
        out = ActionOutcome()
        sink = serial_sink if serial_sink is not None else []
        for _ in range(max(action.granularity, 0)):
            if action.kind is ActionKind.IDLE:
                break
            if action.kind is ActionKind.SLC_TO_QLC_MC:
                if not self._convert_once(out):
                    break
            else:
                src = (Mode.QLC if action.kind is ActionKind.QLC_INTERNAL_GC
                       else Mode.SLC)
                dst = (Mode.QLC if action.kind is ActionKind.SLC_TO_QLC_GC
                       or action.kind is ActionKind.QLC_INTERNAL_GC
                       else Mode.SLC)
                if not self._gc_once(src, dst, out, sink):
                    break
        return out

    def _gc_once(self, src: Mode, dst: Mode, out: ActionOutcome,
                 sink: list) -> bool:
        victim = self.select_victim(src)
        if victim is None:
            return False
        vblock = self.ssd.blocks[victim]
        if vblock.valid_count > self._free_pages(dst):
            return False
        for idx in range(vblock.write_pointer):
            lpn = vblock.pages[idx]
            if lpn < 0:
                continue
            tag = vblock.tags.get(idx) if vblock.tags else None
            out.latency_us += self.ssd.read_page(victim, idx)
            if self.record_ops:
                sink.append(("read", vblock.mode.value,
                             self.ssd.geometry.channel_of(victim)))
            self.ssd.invalidate_page(victim, idx)
            placed = self._allocate_page(dst)
            us, ch, placed_mode = self._program(placed, lpn, tag)
            out.latency_us += us
            out.pages_migrated += 1
            if self.record_ops:
                sink.append(("program", placed_mode.value, ch))
        out.latency_us += self.ssd.erase_block(victim)
        if self.record_ops:
            sink.append(("erase", vblock.mode.value,
                         self.ssd.geometry.channel_of(victim)))
        out.blocks_reclaimed += 1
        self.free[src][self.ssd.geometry.channel_of(victim)].add(victim)
        return True

    def _convert_once(self, out: ActionOutcome) -> bool:
        # cheapest free SLC block by the allocation key; conversion is a
        # metadata flip, so no latency and no erase here
        candidates = [b for pool in self.free[Mode.SLC] for b in pool]
        if not candidates:
            return False
        block_id = min(candidates,
                       key=lambda b: (self.ssd.blocks[b].erase_count, b))
        ch = self.ssd.geometry.channel_of(block_id)
        self.free[Mode.SLC][ch].remove(block_id)
        self.ssd.convert_block_mode(block_id, Mode.QLC)
        self.free[Mode.QLC][ch].add(block_id)
        out.blocks_converted += 1
        return True
