"""Independent reference implementations used to check the simulator.

Everything here is written flat and dumb on purpose: plain lists, no shared
code with the package beyond the latency table values, so an agreement
between the two is evidence rather than tautology.
"""

INVALID = "X"


def recompute_request_latency(entry, lat):
    """Latency of one logged request from its (op, mode, channel) records.

    Parallel ops overlap across channels (cost = slowest channel); serial
    ops are a dependency chain (cost = plain sum).
    """
    def op_cost(op, mode):
        if op == "read":
            return lat.read_slc if mode == "slc" else lat.read_qlc
        if op == "program":
            return lat.write_slc if mode == "slc" else lat.write_qlc
        if op == "erase":
            return lat.erase_slc if mode == "slc" else lat.erase_qlc
        raise AssertionError(f"unknown op {op!r}")

    per_channel = {}
    for op, mode, ch in entry["parallel"]:
        per_channel[ch] = per_channel.get(ch, 0.0) + op_cost(op, mode)
    total = max(per_channel.values()) if per_channel else 0.0
    for op, mode, ch in entry["serial"]:
        total += op_cost(op, mode)
    return total


def recompute_total_latency(op_log, lat):
    return sum(recompute_request_latency(e, lat) for e in op_log)


class MiniSlcFtl:
    """Single-channel, all-SLC page-mapped FTL with the same policy choices
    as the engine: append-only active block, cheapest-free-block allocation,
    min-(valid, erase, id) victim, GC below a free-fraction threshold,
    forced GC when allocation fails, 64-round safety bound."""

    def __init__(self, n_blocks, pages_per_block, logical_pages,
                 gc_trigger_pct):
        self.n = n_blocks
        self.ppb = pages_per_block
        self.logical = logical_pages
        self.th = gc_trigger_pct / 100.0
        self.pages = [[None] * pages_per_block for _ in range(n_blocks)]
        self.wp = [0] * n_blocks
        self.erase_count = [0] * n_blocks
        self.free_pool = set(range(n_blocks))
        self.active = None
        self.map = {}
        self.host = 0
        self.device = 0
        self.erases = 0
        self.warnings = 0

    # helpers ------------------------------------------------------------

    def _valid(self, b):
        return sum(1 for p in self.pages[b][:self.wp[b]]
                   if p is not None and p != INVALID)

    def _invalid(self, b):
        return sum(1 for p in self.pages[b][:self.wp[b]] if p == INVALID)

    def _free_fraction(self):
        return len(self.free_pool) / self.n

    def _has_space(self):
        return self.active is not None or bool(self.free_pool)

    def _free_pages(self):
        pages = len(self.free_pool) * self.ppb
        if self.active is not None:
            pages += self.ppb - self.wp[self.active]
        return pages

    def _take_active(self):
        if self.active is None:
            if not self.free_pool:
                return None
            self.active = min(self.free_pool,
                              key=lambda b: (self.erase_count[b], b))
            self.free_pool.remove(self.active)
        return self.active

    def _program(self, lpn):
        b = self._take_active()
        if b is None:
            return False
        idx = self.wp[b]
        self.pages[b][idx] = lpn
        self.wp[b] += 1
        self.map[lpn] = (b, idx)
        self.device += 1
        if self.wp[b] == self.ppb:
            self.active = None
        return True

    def _victim(self):
        best, key = None, None
        for b in range(self.n):
            if b == self.active or self._invalid(b) == 0:
                continue
            k = (self._valid(b), self.erase_count[b], b)
            if key is None or k < key:
                best, key = b, k
        return best

    def _gc_once(self):
        v = self._victim()
        if v is None:
            return False
        if self._valid(v) > self._free_pages():
            return False
        for idx in range(self.wp[v]):
            lpn = self.pages[v][idx]
            if lpn is None or lpn == INVALID:
                continue
            self.pages[v][idx] = INVALID
            del self.map[lpn]
            self._program(lpn)
        self.pages[v] = [None] * self.ppb
        self.wp[v] = 0
        self.erase_count[v] += 1
        self.erases += 1
        self.free_pool.add(v)
        return True

    def _gc_loop(self, forced):
        rounds = 0
        while rounds < 64:
            if forced:
                if self._has_space():
                    break
            elif self._free_fraction() >= self.th:
                break
            if not self._gc_once():
                break           # fallback policy idles when nothing fits
            rounds += 1
        if rounds >= 64:
            self.warnings += 1

    # host interface -------------------------------------------------------

    def write(self, lpn, n_pages=1):
        if lpn < 0 or n_pages < 1 or lpn + n_pages > self.logical:
            return
        for i in range(lpn, lpn + n_pages):
            old = self.map.get(i)
            if old is not None:
                b, idx = old
                self.pages[b][idx] = INVALID
                del self.map[i]
            if not self._has_space():
                self._gc_loop(forced=True)
            if not self._program(i):
                raise AssertionError("oracle device full")
        self.host += n_pages
        self._gc_loop(forced=False)

    @property
    def wa(self):
        return self.device / self.host


def kmeans_two_point(points, max_iterations=10):
    """Plain 1-D-friendly 2-means on normalized points; returns labels.

    Seeds at the two extreme points along the first axis (ties broken by the
    second), assigns by squared distance with lower-index preference, recomputes
    means until stable. Used to sanity-check cluster membership.
    """
    if len(points) < 2:
        return [0] * len(points)
    order = sorted(range(len(points)), key=lambda i: points[i])
    c = [list(points[order[0]]), list(points[order[-1]])]
    labels = [0] * len(points)
    for _ in range(max_iterations):
        changed = False
        for i, p in enumerate(points):
            d = [sum((a - b) ** 2 for a, b in zip(p, cj)) for cj in c]
            j = 0 if d[0] <= d[1] else 1
            if labels[i] != j:
                labels[i] = j
                changed = True
        for j in (0, 1):
            members = [points[i] for i in range(len(points)) if labels[i] == j]
            if members:
                c[j] = [sum(col) / len(members) for col in zip(*members)]
        if not changed:
            break
    return labels


def q_update(q, alpha, gamma, r, max_next):
    """One Bellman backup, spelled out."""
    return q + alpha * (r + gamma * max_next - q)
