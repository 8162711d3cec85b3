"""Numba kernels behind the particle filters.

Particle event histories are stored per interval as CSR blocks: ``offsets``
(``int64[N + 1]``) delimits each particle's events inside ``times``
(``float32`` offsets in days from the interval start).  Storing offsets
rather than absolute times halves memory and keeps ~4e-7 day resolution.
Rows are left in generation order.

Every particle draws from its own counter-based SplitMix64 stream keyed by
``(key, particle index)``, so results do not depend on how particles are
split across worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit
from numba.typed import List

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def stream_init(key, index):
    return _mix64(key ^ _mix64(np.uint64(index) + _GOLDEN))


@njit(cache=True, inline="always")
def next_uniform(state):
    """Return ``(u, new_state)`` with ``u`` uniform on (0, 1)."""
    state = state + _GOLDEN
    z = _mix64(state)
    return (float(z >> _S11) + 0.5) * _INV53, state


@njit(cache=True, inline="always")
def poisson_draw(state, lam):
    """Poisson variate as ``(k, new_state)``: inversion below 30, Hormann's PTRS above."""
    if lam <= 0.0:
        return 0, state
    if lam < 30.0:
        p = math.exp(-lam)
        cum = p
        u, state = next_uniform(state)
        k = 0
        while u > cum and k < 1000:
            k += 1
            p *= lam / k
            cum += p
        return k, state
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u, state = next_uniform(state)
        v, state = next_uniform(state)
        u -= 0.5
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return int(k), state
        if k < 0 or (us < 0.013 and v > us):
            continue
        if math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b) <= -lam + k * loglam - math.lgamma(k + 1.0):
            return int(k), state


# --- tabulated kernel ------------------------------------------------------
# ``tab`` is node-major; columns: 0 cdf, 1 sf, 2 pdf, 3 cdf guide, 4 sf guide.


@njit(cache=True, inline="always")
def _hermite(tab, row, sign, step, x):
    i = int(x / step)
    if i >= tab.shape[0] - 1:
        i = tab.shape[0] - 2
    s = x / step - i
    s2 = s * s
    s3 = s2 * s
    return (
        (2.0 * s3 - 3.0 * s2 + 1.0) * tab[i, row]
        + (s3 - 2.0 * s2 + s) * step * sign * tab[i, 2]
        + (-2.0 * s3 + 3.0 * s2) * tab[i + 1, row]
        + (s3 - s2) * step * sign * tab[i + 1, 2]
    )


@njit(cache=True, inline="always")
def _hermite_slope(tab, row, sign, step, x):
    i = int(x / step)
    if i >= tab.shape[0] - 1:
        i = tab.shape[0] - 2
    s = x / step - i
    s2 = s * s
    return (
        (6.0 * s2 - 6.0 * s) * tab[i, row] / step
        + (3.0 * s2 - 4.0 * s + 1.0) * sign * tab[i, 2]
        + (-6.0 * s2 + 6.0 * s) * tab[i + 1, row] / step
        + (3.0 * s2 - 2.0 * s) * sign * tab[i + 1, 2]
    )


@njit(cache=True, inline="always")
def table_cdf(tab, step, x_max, x):
    if x <= 0.0:
        return 0.0
    if x >= x_max:
        return 1.0
    return _hermite(tab, 0, 1.0, step, x)


@njit(cache=True, inline="always")
def table_sf(tab, step, x_max, x):
    if x <= 0.0:
        return 1.0
    if x >= x_max:
        return 0.0
    return _hermite(tab, 1, -1.0, step, x)


@njit(cache=True, inline="always")
def table_mass(tab, step, x_max, split, a, b):
    """Kernel mass on the elapsed-time window ``[a, b)``."""
    if a < 0.0:
        a = 0.0
    if b <= a:
        return 0.0
    if a >= split:
        m = table_sf(tab, step, x_max, a) - table_sf(tab, step, x_max, b)
    else:
        m = table_cdf(tab, step, x_max, b) - table_cdf(tab, step, x_max, a)
    return m if m > 0.0 else 0.0


@njit(cache=True, inline="always")
def kernel_pdf(shape, rate, log_norm, x):
    if x <= 0.0:
        return 0.0
    return math.exp(log_norm + (shape - 1.0) * math.log(x) - rate * x)


@njit(cache=True)
def _invert(tab, row, sign, step, target):
    # Solve interp(x) == target.  The guide row brackets the node cell for
    # the probability level (cdf level, or 1 - sf level), bisection narrows
    # it, then safeguarded Newton runs on the Hermite interpolant.
    n = tab.shape[0]
    level = target if sign > 0.0 else 1.0 - target
    q = int(level * (n - 1))
    if q > n - 2:
        q = n - 2
    if q < 0:
        q = 0
    lo_i = int(tab[q, 3 + row])
    hi_i = int(tab[q + 1, 3 + row]) + 1
    if hi_i > n - 1:
        hi_i = n - 1
    if lo_i >= hi_i:
        lo_i = hi_i - 1
    # Rounding in ``1 - target`` can misplace the bracket by a node.
    while lo_i > 0 and (tab[lo_i, row] - target) * sign > 0.0:
        lo_i -= 1
    while hi_i < n - 1 and (tab[hi_i, row] - target) * sign <= 0.0:
        hi_i += 1
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) >> 1
        if (tab[mid, row] - target) * sign <= 0.0:
            lo_i = mid
        else:
            hi_i = mid
    left = lo_i * step
    right = hi_i * step
    gap = (tab[hi_i, row] - tab[lo_i, row]) * sign
    frac = (target - tab[lo_i, row]) * sign / gap if gap > 0.0 else 0.5
    x = left + min(max(frac, 0.0), 1.0) * step
    for _ in range(40):
        f = (_hermite(tab, row, sign, step, x) - target) * sign
        if f > 0.0:
            right = x
        else:
            left = x
        d = _hermite_slope(tab, row, sign, step, x) * sign
        nx = x - f / d if d > 0.0 else 0.5 * (left + right)
        if not (left <= nx <= right):
            nx = 0.5 * (left + right)
        if abs(nx - x) <= 1e-11 * (1.0 + nx):
            return nx
        x = nx
    return x


@njit(cache=True, inline="always")
def table_sample(tab, step, x_max, split, a, b, u):
    """Elapsed time from the kernel truncated to ``[a, b)`` via inverse CDF."""
    if a < 0.0:
        a = 0.0
    if a >= split:
        sa = table_sf(tab, step, x_max, a)
        sb = table_sf(tab, step, x_max, b)
        x = _invert(tab, 1, -1.0, step, sa - u * (sa - sb))
    else:
        ca = table_cdf(tab, step, x_max, a)
        cb = table_cdf(tab, step, x_max, b)
        x = _invert(tab, 0, 1.0, step, ca + u * (cb - ca))
    if x < a:
        x = a
    if x >= b:
        x = np.nextafter(b, -np.inf)
    return x


@njit(cache=True)
def table_mass_many(tab, step, x_max, split, origins, lo, hi):
    out = np.empty(origins.size)
    for i in range(origins.size):
        t = origins[i]
        a = lo - t if lo > t else 0.0
        out[i] = table_mass(tab, step, x_max, split, a, hi - t)
    return out


# --- batched cluster sampling ------------------------------------------------


@njit(cache=True)
def _place(state, t, k, lo, hi, width, tab, step, x_max, split, buf, pos):
    # writes k truncated-kernel children of the parent at t
    a = lo - t if lo > t else 0.0
    b = hi - t
    wmax = np.nextafter(np.float32(width), np.float32(0.0))
    for _ in range(k):
        u, state = next_uniform(state)
        e = table_sample(tab, step, x_max, split, a, b, u)
        off = np.float32((t + e) - lo)
        if off > wmax:
            off = wmax
        if off < 0.0:
            off = np.float32(0.0)
        buf[pos] = off
        pos += 1
    return pos, state


@njit(cache=True)
def _sample_particle(
    j, block_offsets, block_rows, block_times, block_starts, seeds, seed_mass, rj, lo, hi, key,
    tab, step, x_max, split, buf, start,
):
    # one particle's cluster sample written to buf[start:]; -1 on overflow
    state = stream_init(key, j)
    width = hi - lo
    cap = buf.size
    pos = start
    if rj <= 0.0:
        return pos
    for si in range(seeds.size):
        if seed_mass[si] > 0.0:
            k, state = poisson_draw(state, rj * seed_mass[si])
            if k > 0:
                if pos + k > cap:
                    return -1
                pos, state = _place(state, seeds[si], k, lo, hi, width, tab, step, x_max, split, buf, pos)
    for bi in range(len(block_times)):
        bo = block_offsets[bi]
        bt = block_times[bi]
        base = block_starts[bi]
        row = block_rows[bi][j]
        for e in range(bo[row], bo[row + 1]):
            t = base + bt[e]
            m = table_mass(tab, step, x_max, split, lo - t if lo > t else 0.0, hi - t)
            if m > 0.0:
                k, state = poisson_draw(state, rj * m)
                if k > 0:
                    if pos + k > cap:
                        return -1
                    pos, state = _place(state, t, k, lo, hi, width, tab, step, x_max, split, buf, pos)
    gen_start = start
    while gen_start < pos:
        gen_end = pos
        for e in range(gen_start, gen_end):
            t = lo + buf[e]
            m = table_mass(tab, step, x_max, split, 0.0, hi - t)
            if m > 0.0:
                k, state = poisson_draw(state, rj * m)
                if k > 0:
                    if pos + k > cap:
                        return -1
                    pos, state = _place(state, t, k, lo, hi, width, tab, step, x_max, split, buf, pos)
        gen_start = gen_end
    return pos


@njit(cache=True, nogil=True)
def sample_interval_batch(
    block_offsets, block_rows, block_times, block_starts,
    seeds, seed_mass, r, lo, hi, key, p0, p1,
    tab, step, x_max, split,
):
    """Cluster-sample the events of ``[lo, hi)`` for particles ``p0..p1-1``.

    Parents of the first generation are the shared seeds (``seed_mass`` holds
    their precomputed masses) followed by each particle's events in the
    window blocks; later generations are the children just drawn.  Returns
    ``(offsets, times)`` for the chunk, times as float32 offsets from ``lo``.
    """
    n = p1 - p0
    offsets = np.zeros(n + 1, dtype=np.int64)
    buf = np.empty(max(1024, 64 * n), dtype=np.float32)
    pos = 0
    for j in range(p0, p1):
        end = -1
        while end < 0:
            end = _sample_particle(j, block_offsets, block_rows, block_times, block_starts, seeds, seed_mass, r[j],
                                   lo, hi, key, tab, step, x_max, split, buf, pos)
            if end < 0:
                bigger = np.empty(2 * buf.size, dtype=np.float32)
                bigger[:pos] = buf[:pos]
                buf = bigger
        pos = end
        offsets[j - p0 + 1] = pos
    return offsets, buf[:pos].copy()


@njit(cache=True, nogil=True)
def expected_counts_batch(
    block_offsets, block_rows, block_times, block_starts, seed_term, lo, hi, eta_days, beta, p0, p1,
    tab, step, x_max, split,
):
    """``mu`` for particles ``p0..p1-1``; ``seed_term`` is the shared seed contribution."""
    out = np.empty(p1 - p0)
    nblocks = len(block_times)
    for j in range(p0, p1):
        acc = 0.0
        for bi in range(nblocks):
            bo = block_offsets[bi]
            bt = block_times[bi]
            base = block_starts[bi]
            row = block_rows[bi][j]
            for e in range(bo[row], bo[row + 1]):
                t = base + bt[e]
                if t < hi and lo - t <= eta_days:
                    acc += table_mass(tab, step, x_max, split, lo - t if lo > t else 0.0, hi - t)
        out[j - p0] = beta * acc + seed_term
    return out


@njit(cache=True, inline="always")
def table_pdf(tab, step, x_max, shape, rate, log_norm, x):
    """Density by cubic Hermite interpolation; exact in the first cell, zero past ``x_max``."""
    if x < step:
        return kernel_pdf(shape, rate, log_norm, x)
    if x >= x_max:
        return 0.0
    u = x / step
    i = int(u)
    t = u - i
    t2 = t * t
    t3 = t2 * t
    return ((2.0 * t3 - 3.0 * t2 + 1.0) * tab[i, 2] + (t3 - 2.0 * t2 + t) * step * tab[i, 5]
            + (-2.0 * t3 + 3.0 * t2) * tab[i + 1, 2] + (t3 - t2) * step * tab[i + 1, 5])


@njit(cache=True, nogil=True)
def intensity_batch(
    block_offsets, block_rows, block_times, block_starts, seeds, particles, scale, xs, eta_days,
    tab, step, x_max, shape, rate, log_norm,
):
    """``scale[i] * sum_t pdf(x - t)`` over events in ``[x - eta, x)`` for each particle/point.

    ``xs`` must be sorted; each particle's events are merged and sorted once
    and a sliding window picks the contributing events for every point.
    """
    out = np.zeros((particles.size, xs.size))
    nblocks = len(block_times)
    for i in range(particles.size):
        j = particles[i]
        total = seeds.size
        for bi in range(nblocks):
            row = block_rows[bi][j]
            total += block_offsets[bi][row + 1] - block_offsets[bi][row]
        times = np.empty(total)
        times[: seeds.size] = seeds
        pos = seeds.size
        for bi in range(nblocks):
            bo = block_offsets[bi]
            bt = block_times[bi]
            base = block_starts[bi]
            row = block_rows[bi][j]
            for e in range(bo[row], bo[row + 1]):
                times[pos] = base + bt[e]
                pos += 1
        times.sort()
        lo = 0
        hi = 0
        for q in range(xs.size):
            x = xs[q]
            while hi < total and times[hi] < x:
                hi += 1
            while lo < hi and x - times[lo] > eta_days:
                lo += 1
            acc = 0.0
            for e in range(lo, hi):
                acc += table_pdf(tab, step, x_max, shape, rate, log_norm, x - times[e])
            out[i, q] = scale[i] * acc
    return out


@njit(cache=True)
def gather_block(offsets, times, idx):
    """Reindex a CSR block so that row ``j`` becomes the old row ``idx[j]``."""
    n = idx.size
    new_off = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        new_off[j + 1] = new_off[j] + offsets[idx[j] + 1] - offsets[idx[j]]
    out = np.empty(new_off[n], dtype=times.dtype)
    for j in range(n):
        s = offsets[idx[j]]
        c = offsets[idx[j] + 1] - s
        out[new_off[j] : new_off[j] + c] = times[s : s + c]
    return new_off, out


# --- python-side containers --------------------------------------------------


class Block:
    """Events of every particle in one interval."""

    __slots__ = ("start", "offsets", "times")

    def __init__(self, start: float, offsets: np.ndarray, times: np.ndarray):
        self.start = float(start)
        self.offsets = offsets
        self.times = times

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def particle_times(self, j: int) -> np.ndarray:
        # rows are kept in generation order; sort on the way out
        return self.start + np.sort(self.times[self.offsets[j] : self.offsets[j + 1]]).astype(np.float64)

    def gather(self, idx: np.ndarray) -> "Block":
        off, t = gather_block(self.offsets, self.times, np.ascontiguousarray(idx, dtype=np.int64))
        return Block(self.start, off, t)

    @classmethod
    def from_lists(cls, start: float, per_particle) -> "Block":
        counts = np.array([len(p) for p in per_particle], dtype=np.int64)
        off = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        times = (
            np.concatenate([np.asarray(p, dtype=np.float64) - start for p in per_particle]).astype(np.float32)
            if counts.sum()
            else np.empty(0, dtype=np.float32)
        )
        return cls(start, off, times)


class Window:
    """Retained interval blocks and, per block, the row each live particle reads.

    Resampling never copies events: it composes every block's row map with
    the ancestor indices.  Blocks older than ``capacity`` intervals are
    dropped as new ones arrive.
    """

    def __init__(self, n_particles: int, capacity: int):
        self.n_particles = n_particles
        self.capacity = max(1, capacity)
        self.blocks = []
        self.rows = []

    def push(self, block: Block, rows=None) -> None:
        self.blocks.append(block)
        self.rows.append(np.arange(self.n_particles, dtype=np.int64) if rows is None else rows)
        if len(self.blocks) > self.capacity:
            del self.blocks[0], self.rows[0]

    def reindex(self, idx: np.ndarray) -> None:
        self.rows = [r[idx] for r in self.rows]

    def latest(self, count: int):
        """The last ``count`` blocks as ``(blocks, rows)`` lists."""
        if count <= 0:
            return [], []
        return self.blocks[-count:], self.rows[-count:]

    def copy(self) -> "Window":
        out = Window(self.n_particles, self.capacity)
        out.blocks = list(self.blocks)
        out.rows = [r.copy() for r in self.rows]
        return out

    def particle_events(self, j: int, back: int = 0) -> np.ndarray:
        """Sorted event times of particle ``j`` in the block ``back`` steps before the newest."""
        return self.blocks[-1 - back].particle_times(int(self.rows[-1 - back][j]))


def _typed(blocks, rows, n_particles: int):
    offs = List()
    row_maps = List()
    times = List()
    for b, r in zip(blocks, rows):
        offs.append(b.offsets)
        row_maps.append(r)
        times.append(b.times)
    if not blocks:
        offs.append(np.zeros(n_particles + 1, dtype=np.int64))
        row_maps.append(np.arange(n_particles, dtype=np.int64))
        times.append(np.empty(0, dtype=np.float32))
    starts = np.array([b.start for b in blocks] or [0.0])
    return offs, row_maps, times, starts


def _chunks(n: int, workers: int):
    workers = max(1, min(workers, n)) if n else 1
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _run_chunks(fn, n: int, workers: int):
    chunks = _chunks(n, workers)
    if len(chunks) == 1:
        return [fn(*chunks[0])]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        return list(pool.map(lambda c: fn(*c), chunks))


class Engine:
    """Binds kernel tables, seeds and the grid for the batched routines."""

    def __init__(self, table_h, table_g, seeds, grid, beta: float, eta_days: float, workers: int = 1):
        self.table_h = table_h
        self.table_g = table_g
        self.th = table_h.as_tuple()
        self.tg = table_g.as_tuple()
        self.seeds = np.sort(np.asarray(seeds, dtype=np.float64))
        self.grid = grid
        self.beta = float(beta)
        self.eta_days = float(eta_days)
        self.eta_intervals = grid.eta_intervals(eta_days)
        self.workers = workers
        self._seed_mass = {}
        self._seed_mu = {}

    def _bounds(self, n: int):
        return self.grid.lower(n), self.grid.upper(n)

    def seed_mass(self, n: int) -> np.ndarray:
        if n not in self._seed_mass:
            lo, hi = self._bounds(n)
            tab, step, x_max, split = self.th[:4]
            self._seed_mass[n] = table_mass_many(tab, step, x_max, split, self.seeds, lo, hi)
        return self._seed_mass[n]

    def seed_mu(self, n: int) -> float:
        if n not in self._seed_mu:
            lo, hi = self._bounds(n)
            tab, step, x_max, split = self.tg[:4]
            keep = self.seeds[lo - self.seeds <= self.eta_days]
            self._seed_mu[n] = self.beta * float(table_mass_many(tab, step, x_max, split, keep, lo, hi).sum())
        return self._seed_mu[n]

    def sample(self, blocks, rows, n: int, r: np.ndarray, key: int) -> Block:
        """Cluster-sample interval ``n`` for every particle given its window blocks."""
        lo, hi = self._bounds(n)
        r = np.ascontiguousarray(r, dtype=np.float64)
        offs, row_maps, times, starts = _typed(blocks, rows, r.size)
        tab, step, x_max, split = self.th[:4]
        sm = self.seed_mass(n)
        key = np.uint64(key)

        def run(p0, p1):
            return sample_interval_batch(offs, row_maps, times, starts, self.seeds, sm, r, lo, hi, key, p0, p1,
                                         tab, step, x_max, split)

        parts = _run_chunks(run, r.size, self.workers)
        if len(parts) == 1:
            off, t = parts[0]
        else:
            t = np.concatenate([pt for _, pt in parts])
            counts = np.concatenate([np.diff(po) for po, _ in parts])
            off = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return Block(lo, off, t)

    def expected(self, blocks, rows, new_block: Block, n: int) -> np.ndarray:
        """``mu_n`` per particle from its window blocks plus the interval's own events."""
        lo, hi = self._bounds(n)
        n_part = new_block.offsets.size - 1
        offs, row_maps, times, starts = _typed(
            list(blocks) + [new_block], list(rows) + [np.arange(n_part, dtype=np.int64)], n_part
        )
        tab, step, x_max, split = self.tg[:4]
        seed_term = self.seed_mu(n)

        def run(p0, p1):
            return expected_counts_batch(offs, row_maps, times, starts, seed_term, lo, hi, self.eta_days, self.beta,
                                         p0, p1, tab, step, x_max, split)

        return np.concatenate(_run_chunks(run, n_part, self.workers))

    def intensities(self, blocks, rows, particles, scale, xs, kernel: str) -> np.ndarray:
        """Latent (``kernel='h'``) or reporting (``'g'``) intensity for selected particles.

        ``particles`` index the live population (through ``rows``); ``scale``
        multiplies each particle's kernel sum (``R`` for the latent intensity,
        ``beta`` for the reporting one).
        """
        particles = np.ascontiguousarray(particles, dtype=np.int64)
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        n_part = rows[0].size if rows else int(particles.max(initial=-1)) + 1
        offs, row_maps, times, starts = _typed(blocks, rows, n_part)
        tab, step, x_max, _, shape, rate, log_norm = self.th if kernel == "h" else self.tg
        order = np.argsort(xs, kind="stable")
        sorted_xs = np.ascontiguousarray(xs[order])
        seeds = self.seeds[self.seeds >= sorted_xs[0] - self.eta_days] if xs.size else self.seeds
        vals = intensity_batch(offs, row_maps, times, starts, seeds, particles,
                               np.ascontiguousarray(scale, dtype=np.float64), sorted_xs, self.eta_days,
                               tab, step, x_max, shape, rate, log_norm)
        out = np.empty_like(vals)
        out[:, order] = vals
        return out
