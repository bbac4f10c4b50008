"""Classical QUBO minimizers: single-flip simulated annealing and brute force.

Both return a :class:`SampleSet` ordered best-first; any object with a
``sample(model) -> SampleSet`` method can stand in for them in the pipelines.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .qubo import QuboModel, energies

EXHAUSTIVE_MAX_VARS = 26


class SamplerSizeError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    num_reads: int = 200
    sweeps_per_read: int = 2000
    beta_schedule: tuple[float, float] | None = None
    seed: int = 0
    workers: int | None = None  # threads over reads; None: one per CPU

    def __post_init__(self):
        if self.num_reads < 1 or self.sweeps_per_read < 1:
            raise ValueError("num_reads and sweeps_per_read must be >= 1")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.beta_schedule is not None:
            lo, hi = self.beta_schedule
            if not 0 < lo < hi:
                raise ValueError("beta schedule needs 0 < beta_min < beta_max")


@dataclass
class SampleSet:
    states: np.ndarray  # (k, num_vars) uint8, unique rows
    energies: np.ndarray
    counts: np.ndarray
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.energies)

    def __iter__(self):
        for k in range(len(self)):
            yield self.states[k], float(self.energies[k]), int(self.counts[k])

    @property
    def best(self) -> tuple[np.ndarray, float]:
        return self.states[0], float(self.energies[0])

    @classmethod
    def from_states(cls, model: QuboModel, states: np.ndarray, **info) -> "SampleSet":
        """Deduplicate, re-evaluate every energy and sort by (energy, bits)."""
        states = np.asarray(states, dtype=np.uint8).reshape(len(states), model.num_vars)
        uniq, counts = np.unique(states, axis=0, return_counts=True)
        e = energies(model, uniq) if len(uniq) else np.zeros(0)
        # np.unique already sorts rows lexicographically; a stable sort on
        # energy gives the (energy, bits) order.
        order = np.argsort(e, kind="stable")
        return cls(uniq[order], e[order], counts[order], dict(info))


def _csr(model: QuboModel):
    h, rows, cols, vals = model.arrays()
    n = model.num_vars
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    v = np.concatenate([vals, vals])
    order = np.lexsort((c, r))
    r, c, v = r[order], c[order], v[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, r + 1, 1)
    indptr = np.cumsum(indptr)
    return h, indptr, c.astype(np.int64), v


def default_beta_range(model: QuboModel) -> tuple[float, float]:
    """(1 / largest single-flip |dE| bound, 1 / smallest nonzero |coefficient|)."""
    h, indptr, _, v = _csr(model)
    if model.num_vars == 0:
        return 0.1, 1.0
    absv = np.abs(v)
    row_abs = np.add.reduceat(absv, indptr[:-1]) if absv.size else np.zeros(model.num_vars)
    row_abs = np.where(np.diff(indptr) > 0, row_abs, 0.0)
    de_max = float(np.max(np.abs(h) + row_abs))
    nonzero = np.concatenate([np.abs(h[h != 0]), absv[absv != 0]])
    if de_max == 0 or nonzero.size == 0:
        return 0.1, 1.0
    de_min = float(np.min(nonzero))
    lo, hi = 1.0 / de_max, 1.0 / de_min
    if not lo < hi:
        hi = lo * 10.0
    return lo, hi


@njit(cache=True, inline="always")
def _next_uniform(state):
    # xorshift64*: returns (new_state, uniform in [0, 1))
    state ^= state >> np.uint64(12)
    state ^= state << np.uint64(25)
    state ^= state >> np.uint64(27)
    out = state * np.uint64(2685821657736338717)
    return state, (out >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def _anneal_kernel(h, indptr, indices, data, betas, seeds, init):
    n = h.shape[0]
    reads = seeds.shape[0]
    out = np.empty((reads, n), dtype=np.uint8)
    field = np.empty(n)
    x = np.empty(n, dtype=np.uint8)
    for r in range(reads):
        rng = np.uint64(seeds[r]) * np.uint64(0x9E3779B97F4A7C15) | np.uint64(1)
        if init.shape[0] > 0:
            for i in range(n):
                x[i] = init[r % init.shape[0], i]
        else:
            for i in range(n):
                rng, u = _next_uniform(rng)
                x[i] = 1 if u < 0.5 else 0
        for i in range(n):
            f = h[i]
            for p in range(indptr[i], indptr[i + 1]):
                if x[indices[p]]:
                    f += data[p]
            field[i] = f
        for s in range(betas.shape[0]):
            beta = betas[s]
            for i in range(n):
                # flipping 0->1 adds field[i]; 1->0 removes it
                de = field[i] if x[i] == 0 else -field[i]
                if de > 0.0:
                    a = beta * de
                    if a > 40.0:
                        continue
                    rng, u = _next_uniform(rng)
                    if u >= np.exp(-a):
                        continue
                delta = 1.0 if x[i] == 0 else -1.0
                x[i] = 1 - x[i]
                for p in range(indptr[i], indptr[i + 1]):
                    field[indices[p]] += delta * data[p]
        out[r] = x
    return out


def read_seeds(seed: int, num_reads: int) -> np.ndarray:
    """Independent per-read generator seeds derived from (seed, read index)."""
    ss = np.random.SeedSequence(seed)
    return np.array([c.generate_state(1, dtype=np.uint32)[0] for c in ss.spawn(num_reads)], dtype=np.int64)


def anneal(model: QuboModel, config: SamplerConfig = SamplerConfig(), initial_states=None) -> SampleSet:
    """Metropolis single-flip sweeps over a geometric beta schedule.

    ``initial_states`` (optional, rows cycled across reads) replaces the
    uniform random start.
    """
    n = model.num_vars
    lo, hi = config.beta_schedule or default_beta_range(model)
    seeds = read_seeds(config.seed, config.num_reads)
    if n == 0:
        return SampleSet.from_states(model, np.zeros((config.num_reads, 0), dtype=np.uint8))
    h, indptr, indices, data = _csr(model)
    betas = np.geomspace(lo, hi, config.sweeps_per_read)
    if initial_states is None:
        init = np.zeros((0, n), dtype=np.uint8)
    else:
        init = np.ascontiguousarray(np.atleast_2d(initial_states), dtype=np.uint8)
        if init.shape[1] != n:
            raise ValueError("initial states have the wrong width")
    workers = max(1, min(config.workers or os.cpu_count() or 1, config.num_reads))
    if workers == 1:
        states = _anneal_kernel(h, indptr, indices, data, betas, seeds, init)
    else:
        # reads own their seeds, so chunking across threads cannot change results
        chunks = np.array_split(np.arange(config.num_reads), workers)

        def run(ix):
            sub = init if init.shape[0] == 0 else init[ix % init.shape[0]]
            return _anneal_kernel(h, indptr, indices, data, betas, seeds[ix], sub)

        with ThreadPoolExecutor(workers) as pool:
            states = np.vstack(list(pool.map(run, chunks)))
    return SampleSet.from_states(model, states, beta_range=(lo, hi), seed=config.seed)


def exhaustive(model: QuboModel, chunk_bits: int = 16) -> SampleSet:
    """Evaluate all ``2**num_vars`` states; exact minimum first."""
    n = model.num_vars
    if n > EXHAUSTIVE_MAX_VARS:
        raise SamplerSizeError(f"{n} variables exceeds the exhaustive cap of {EXHAUSTIVE_MAX_VARS}")
    if n == 0:
        return SampleSet.from_states(model, np.zeros((1, 0), dtype=np.uint8))
    low = min(n, chunk_bits)
    low_states = ((np.arange(1 << low)[:, None] >> np.arange(low)) & 1).astype(np.uint8)
    h, rows, cols, vals = model.arrays()
    all_e = np.empty(1 << n)
    for hi_val in range(1 << (n - low)):
        hi_bits = ((hi_val >> np.arange(n - low)) & 1).astype(np.uint8)
        block = np.hstack([low_states, np.broadcast_to(hi_bits, (len(low_states), n - low))])
        x = block.astype(float)
        e = model.offset + x @ h + (x[:, rows] * x[:, cols]) @ vals
        all_e[hi_val << low : (hi_val + 1) << low] = e
    order = np.argsort(all_e, kind="stable")
    states = ((order[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    # exact re-evaluation keeps the energy invariant independent of the chunked path
    return SampleSet(states, energies(model, states), np.ones(len(order), dtype=np.int64))


def exhaustive_minimum(model: QuboModel) -> tuple[np.ndarray, float]:
    """Ground state only, without materializing the full sorted state list."""
    n = model.num_vars
    if n > EXHAUSTIVE_MAX_VARS:
        raise SamplerSizeError(f"{n} variables exceeds the exhaustive cap of {EXHAUSTIVE_MAX_VARS}")
    if n == 0:
        return np.zeros(0, dtype=np.uint8), float(model.offset)
    h, indptr, indices, data = _csr(model)
    best_state, best = _gray_code_min(h, indptr, indices, data)
    return best_state, float(best + model.offset)


@njit(cache=True)
def _gray_code_min(h, indptr, indices, data):
    n = h.shape[0]
    x = np.zeros(n, dtype=np.uint8)
    field = h.copy()
    e = 0.0
    best = 0.0
    best_state = x.copy()
    for k in range(1, 1 << n):
        # bit that changes between gray(k-1) and gray(k)
        i = 0
        while not (k >> i) & 1:
            i += 1
        if x[i] == 0:
            e += field[i]
            delta = 1.0
        else:
            e -= field[i]
            delta = -1.0
        x[i] = 1 - x[i]
        for p in range(indptr[i], indptr[i + 1]):
            field[indices[p]] += delta * data[p]
        if e < best:
            best = e
            best_state[:] = x
    return best_state, best


class SimulatedAnnealingSampler:
    def __init__(self, config: SamplerConfig = SamplerConfig()):
        self.config = config

    def sample(self, model: QuboModel, initial_states=None) -> SampleSet:
        return anneal(model, self.config, initial_states)


class ExhaustiveSampler:
    def sample(self, model: QuboModel, initial_states=None) -> SampleSet:
        return exhaustive(model)


# -- exact minimization over sums of squares ----------------------------------


@njit(cache=True)
def _group_lb(fix, pos, neg, tvals, t0, t1, w):
    if pos == 0.0 and neg == 0.0:
        best = np.inf
        for k in range(t0, t1):
            r = fix + tvals[k]
            if r * r < best:
                best = r * r
        return w * best
    lo = fix + neg + tvals[t0]
    hi = fix + pos + tvals[t1 - 1]
    if lo > 0.0:
        return w * lo * lo
    if hi < 0.0:
        return w * hi * hi
    return 0.0


@njit(cache=True)
def _branch_and_bound(order, obj, vg_ptr, vg_grp, vg_coef, g_const, g_w, t_ptr, t_vals, incumbent, node_limit):
    nb = order.shape[0]
    ng = g_const.shape[0]
    fix = g_const.copy()
    pos = np.zeros(ng)
    neg = np.zeros(ng)
    for d in range(nb):
        v = order[d]
        for p in range(vg_ptr[v], vg_ptr[v + 1]):
            c = vg_coef[p]
            if c > 0:
                pos[vg_grp[p]] += c
            else:
                neg[vg_grp[p]] += c
    lbg = np.empty(ng)
    total = 0.0
    for v in order:
        if obj[v] < 0:
            total += obj[v]
    for g in range(ng):
        lbg[g] = _group_lb(fix[g], pos[g], neg[g], t_vals, t_ptr[g], t_ptr[g + 1], g_w[g])
        total += lbg[g]

    best = incumbent
    best_x = np.full(nb, -1, dtype=np.int8)
    x = np.full(nb, -1, dtype=np.int8)
    tried = np.zeros(nb, dtype=np.int8)
    nodes = 0
    d = 0
    while d >= 0:
        if d == nb:
            if total < best:
                best = total
                best_x[:] = x
            d -= 1
            continue
        v = order[d]
        if tried[d] == 0:
            # smaller bound first
            b1 = _apply(v, -1, 1, obj, vg_ptr, vg_grp, vg_coef, fix, pos, neg, lbg, g_w, t_ptr, t_vals, total)
            b0 = _apply(v, 1, 0, obj, vg_ptr, vg_grp, vg_coef, fix, pos, neg, lbg, g_w, t_ptr, t_vals, b1)
            if b1 < b0:
                total = _apply(v, 0, 1, obj, vg_ptr, vg_grp, vg_coef, fix, pos, neg, lbg, g_w, t_ptr, t_vals, b0)
                x[d] = 1
            else:
                total = b0
                x[d] = 0
            tried[d] = 1
        elif tried[d] == 1:
            val = 1 - x[d]
            total = _apply(v, x[d], val, obj, vg_ptr, vg_grp, vg_coef, fix, pos, neg, lbg, g_w, t_ptr, t_vals, total)
            x[d] = val
            tried[d] = 2
        else:
            total = _apply(v, x[d], -1, obj, vg_ptr, vg_grp, vg_coef, fix, pos, neg, lbg, g_w, t_ptr, t_vals, total)
            x[d] = -1
            tried[d] = 0
            d -= 1
            continue
        nodes += 1
        if nodes >= node_limit:
            return best_x, best, nodes, False
        if total < best - 1e-9 * max(1.0, abs(best)) or best == np.inf:
            d += 1
    return best_x, best, nodes, True


@njit(cache=True)
def _apply(v, old, new, obj, vg_ptr, vg_grp, vg_coef, fix, pos, neg, lbg, g_w, t_ptr, t_vals, total):
    """Move variable ``v`` from state ``old`` to ``new`` (-1 free, 0, 1); returns the new bound."""
    o = obj[v]
    if old == -1:
        if o < 0:
            total -= o
    elif old == 1:
        total -= o
    if new == -1:
        if o < 0:
            total += o
    elif new == 1:
        total += o
    for p in range(vg_ptr[v], vg_ptr[v + 1]):
        g = vg_grp[p]
        c = vg_coef[p]
        if old == -1:
            if c > 0:
                pos[g] -= c
            else:
                neg[g] -= c
        elif old == 1:
            fix[g] -= c
        if new == -1:
            if c > 0:
                pos[g] += c
            else:
                neg[g] += c
        elif new == 1:
            fix[g] += c
        lb = _group_lb(fix[g], pos[g], neg[g], t_vals, t_ptr[g], t_ptr[g + 1], g_w[g])
        total += lb - lbg[g]
        lbg[g] = lb
    return total


@dataclass
class ExactResult:
    state: np.ndarray
    energy: float
    nodes: int
    proven: bool


def exact_minimum(model: QuboModel, incumbent: float | None = None, node_limit: int = 2_000_000_000) -> ExactResult:
    """Global minimum of a model built from an objective plus squared penalties.

    Depth-first branch and bound over all bitstrings: every squared group is
    bounded below by its squared distance from zero over the interval its
    expression can still reach. Variables owned by a single group (slack
    bits) are not branched on; the group minimizes over their subset sums
    exactly. ``incumbent`` is an optional known upper bound.
    """
    if not model.structured:
        if model.num_vars <= EXHAUSTIVE_MAX_VARS:
            state, e = exhaustive_minimum(model)
            return ExactResult(state, e, 1 << model.num_vars, True)
        raise SamplerSizeError("unstructured model too large for exact minimization")
    n = model.num_vars
    groups = model.squares
    uses = np.zeros(n, dtype=np.int64)
    for sq in groups:
        for v, _ in sq.terms:
            uses[v] += 1
    in_obj = np.zeros(n, dtype=bool)
    for v in model.objective:
        in_obj[v] = True
    exclusive = (uses == 1) & ~in_obj

    vg: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    t_ptr, t_vals, excl_choice = [0], [], []
    for g, sq in enumerate(groups):
        ex = [(v, c) for v, c in sq.terms if exclusive[v]]
        for v, c in sq.terms:
            if not exclusive[v]:
                vg[v].append((g, c))
        sums: dict[float, int] = {}
        for mask in range(1 << len(ex)):
            s = sum(c for k, (_, c) in enumerate(ex) if mask >> k & 1)
            sums.setdefault(s, mask)
        vals = sorted(sums)
        t_vals += vals
        t_ptr.append(len(t_vals))
        excl_choice.append((ex, sums))
    order = np.array([v for v in range(n) if not exclusive[v] and (vg[v] or in_obj[v])], dtype=np.int64)
    vg_ptr = np.zeros(n + 1, dtype=np.int64)
    vg_ptr[1:] = np.cumsum([len(a) for a in vg])
    vg_grp = np.array([g for a in vg for g, _ in a], dtype=np.int64)
    vg_coef = np.array([c for a in vg for _, c in a], dtype=float)
    obj = np.zeros(n)
    for v, c in model.objective.items():
        obj[v] = c
    g_const = np.array([sq.constant for sq in groups], dtype=float)
    g_w = np.array([sq.weight for sq in groups], dtype=float)
    base = float(model.offset - sum(sq.weight * sq.constant**2 for sq in groups))
    inc = np.inf if incumbent is None else float(incumbent) - base + 1e-9 * max(1.0, abs(incumbent))
    bx, best, nodes, proven = _branch_and_bound(
        order, obj, vg_ptr, vg_grp, vg_coef, g_const, g_w,
        np.array(t_ptr, dtype=np.int64), np.array(t_vals, dtype=float), inc, node_limit,
    )
    if best == np.inf:
        raise RuntimeError("no state below the incumbent; it was not a valid upper bound")
    state = np.zeros(n, dtype=np.uint8)
    state[order] = bx
    # fill exclusive bits with the best subset sum for each group
    x = state.astype(float)
    for sq, (ex, sums) in zip(groups, excl_choice):
        if not ex:
            continue
        rest = sq.constant + sum(c * x[v] for v, c in sq.terms if not exclusive[v])
        t = min(sums, key=lambda s: ((rest + s) ** 2, s))
        for k, (v, _) in enumerate(ex):
            state[v] = sums[t] >> k & 1
    from .qubo import energy as _energy

    return ExactResult(state, _energy(model, state), int(nodes), bool(proven))
