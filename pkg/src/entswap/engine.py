"""Pulse-level simulation: emission sampling, click generation and exact conditionals.

Post-emission physics has two independent implementations:

* the trajectory route unravels arm losses into Kraus trajectories
  (:func:`~entswap.fock.sample_loss`), evolves each trajectory through the
  circuit in Fock space, samples a photon-number outcome and then samples
  threshold clicks;
* the exact route evaluates no-click probabilities of every detector subset
  as the normally ordered expectation
  ``<psi| :exp(-a† M a): |psi> = <psi| Gamma(1 - M) |psi>`` where ``M``
  folds arm transmission, circuit and detector POVM into one
  single-particle matrix.

Pulses are grouped by their canonical emission key so each distinct pair
configuration is evolved only once per setting.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from math import sqrt
from typing import Optional

import numpy as np

from .detection import DetectorBinding, apply_dead_time, click_probability, photon_efficiencies
from .errors import ValidationError
from .fock import (
    ModeKey,
    ModeRegistry,
    SparseState,
    apply_linear_two_mode,
    apply_single_particle,
    measurement_distribution,
    sample_loss_batch,
)
from .optics import Circuit, rotation, run_circuit, transfer_matrix
from .spdc import SOURCE_ARMS, Pair, SourceParams, thermal_pmf

log = logging.getLogger(__name__)

CHUNK_PULSES = 1 << 20
FRESH_LABEL = 10_000

EmissionKey = tuple  # canonical tuple of Pair


@dataclass(frozen=True)
class Bench:
    """Everything needed to turn emitted pairs into detector clicks."""

    circuit: Circuit
    sources: tuple  # ((name, SourceParams), ...) with filters already folded in
    detectors: tuple  # DetectorParams aligned with circuit.detectors
    transmissions: dict = field(default_factory=dict)  # input port -> transmission
    retention: float = 1.0
    pair_mode: str = "thermal"  # or "single": exactly one pair per source
    photon_cap: int = 8
    max_pairs_per_source: Optional[int] = None

    def __post_init__(self):
        if len(self.detectors) != len(self.circuit.detectors):
            raise ValidationError("need one DetectorParams per detector slot")
        if self.pair_mode not in ("thermal", "single"):
            raise ValidationError(f"unknown pair mode {self.pair_mode!r}")
        if not 0.0 <= self.retention <= 1.0:
            raise ValidationError("label retention must lie in [0, 1]")

    @property
    def n_detectors(self) -> int:
        return len(self.detectors)

    @property
    def delay_source(self) -> Optional[str]:
        port = self.circuit.delay_port
        if port is None:
            return None
        for name, arms in SOURCE_ARMS.items():
            if port in arms:
                return name
        return None

    def emission_signature(self) -> tuple:
        """Everything the emission sampler depends on."""
        return (
            self.sources,
            self.retention if self.delay_source else 1.0,
            self.circuit.delay_port,
            self.pair_mode,
            self.photon_cap,
            self.max_pairs_per_source,
        )


def pair_sort_key(p: Pair):
    return (p.port_a, p.port_b, p.label_a, p.label_b, p.bell, p.pols or ())


def canonical_key(pairs) -> EmissionKey:
    """Relabel spectral labels by first appearance so equivalent pulses share a key."""
    pairs = sorted(pairs, key=pair_sort_key)
    mapping: dict[int, int] = {}

    def lab(x):
        if x not in mapping:
            mapping[x] = len(mapping)
        return mapping[x]

    out = [p._replace(label_a=lab(p.label_a), label_b=lab(p.label_b)) for p in pairs]
    return tuple(sorted(out, key=pair_sort_key))


def key_order(key: EmissionKey):
    return [pair_sort_key(p) for p in key]


def key_labels(key: EmissionKey) -> list[int]:
    return sorted({p.label_a for p in key} | {p.label_b for p in key})


def key_photons(key: EmissionKey) -> int:
    return 2 * len(key)


# -- emission sampling -----------------------------------------------------------


def _bernoulli_positions(n: int, p: float, rng) -> np.ndarray:
    """Indices in [0, n) of successes of n Bernoulli(p) trials, via geometric gaps."""
    if p <= 0.0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(n, dtype=np.int64)
    out = []
    pos = -1
    while True:
        remaining = n - 1 - pos
        size = int(remaining * p + 6 * sqrt(remaining * p) + 16)
        cs = pos + np.cumsum(rng.geometric(p, size))
        out.append(cs[cs < n])
        if cs[-1] >= n:
            break
        pos = int(cs[-1])
    return np.concatenate(out)


@dataclass
class PulseBatch:
    """Emission keys of a block of pulses.

    ``groups`` maps each non-vacuum key to the sorted indices (within the
    batch) of pulses that emitted it.
    """

    n_pulses: int
    groups: dict
    offset: int = 0
    rejected: int = 0

    def counts(self) -> dict:
        return {k: len(v) for k, v in self.groups.items()}

    @property
    def vacuum_count(self) -> int:
        return self.n_pulses - sum(len(v) for v in self.groups.values())


def _sample_events(sources, n: int, rng, pair_mode: str):
    """Rows (pulse, source index, label, pairs) for ``n`` pulses."""
    pulses, srcs, labels, counts = [], [], [], []
    for si, (_, params) in enumerate(sources):
        lam = params.weights
        if pair_mode == "single":
            pulses.append(np.arange(n, dtype=np.int64))
            labels.append(rng.choice(len(lam), size=n, p=lam).astype(np.int64))
            counts.append(np.ones(n, dtype=np.int64))
            srcs.append(np.full(n, si, dtype=np.int64))
            continue
        for k, weight in enumerate(lam):
            m = params.mu * weight
            if m <= 0.0:
                continue
            q = m / (1.0 + m)
            pos = _bernoulli_positions(n, q, rng)
            pulses.append(pos)
            labels.append(np.full(len(pos), k, dtype=np.int64))
            # thermal distribution conditioned on at least one pair
            counts.append(rng.geometric(1.0 - q, len(pos)).astype(np.int64))
            srcs.append(np.full(len(pos), si, dtype=np.int64))
    if not pulses:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty, empty
    return tuple(np.concatenate(a) for a in (pulses, srcs, labels, counts))


def _bad_pulses(pulses, srcs, counts, n_sources, photon_cap, max_per_source):
    if len(pulses) == 0:
        return np.empty(0, dtype=np.int64)
    bad = []
    total = np.bincount(pulses, weights=counts)
    bad.append(np.flatnonzero(2 * total > photon_cap))
    if max_per_source is not None:
        for si in range(n_sources):
            sel = srcs == si
            per = np.bincount(pulses[sel], weights=counts[sel])
            bad.append(np.flatnonzero(per > max_per_source))
    return np.unique(np.concatenate(bad))


def sample_batch(bench: Bench, n: int, rng, offset: int = 0) -> PulseBatch:
    """Sample emission keys for ``n`` pulses; over-cap pulses are redrawn."""
    sources = bench.sources
    rows = _sample_events(sources, n, rng, bench.pair_mode)
    rejected = 0
    bad = _bad_pulses(rows[0], rows[1], rows[3], len(sources), bench.photon_cap, bench.max_pairs_per_source)
    while len(bad):
        rejected += len(bad)
        keep = ~np.isin(rows[0], bad)
        rows = tuple(r[keep] for r in rows)
        new = _sample_events(sources, len(bad), rng, bench.pair_mode)
        new = (bad[new[0]],) + new[1:]
        nb = _bad_pulses(new[0], new[1], new[3], len(sources), bench.photon_cap, bench.max_pairs_per_source)
        if len(nb):
            keepn = ~np.isin(new[0], nb)
            new = tuple(r[keepn] for r in new)
        rows = tuple(np.concatenate([a, b]) for a, b in zip(rows, new))
        bad = nb
    if rejected:
        log.info("redrew %d over-cap pulses", rejected)

    pulses, srcs, labels, counts = rows
    order = np.lexsort((labels, srcs, pulses))
    pulses, srcs, labels, counts = pulses[order], srcs[order], labels[order], counts[order]

    # delay relabelling: one draw per (pulse, label) on the delayed source
    relabel = np.zeros(len(pulses), dtype=bool)
    delay_src = bench.delay_source
    names = [name for name, _ in sources]
    if delay_src in names and bench.retention < 1.0:
        sel = np.flatnonzero(srcs == names.index(delay_src))
        relabel[sel] = rng.random(len(sel)) >= bench.retention

    # per-pair depolarization
    pair_rows = np.repeat(np.arange(len(pulses)), counts)
    werner_p = np.array([p.werner for _, p in sources])
    depol_pols = None
    if np.any(werner_p > 0):
        depol = rng.random(len(pair_rows)) < werner_p[srcs[pair_rows]]
        depol_pols = np.where(depol[:, None], rng.integers(0, 2, size=(len(pair_rows), 2)), -1)

    groups: dict = defaultdict(list)
    if bench.pair_mode == "single" and depol_pols is None:
        return PulseBatch(n, _single_groups(bench, n, srcs, labels, relabel), offset, rejected)
    uniq, start, npp = np.unique(pulses, return_index=True, return_counts=True)

    # fast path: one row holding one Bell pair
    simple = npp == 1
    if depol_pols is not None:
        first_pair = np.searchsorted(pair_rows, start)
        simple &= depol_pols[first_pair, 0] < 0
    simple &= counts[start] == 1
    simple_rows = start[simple]
    for si, (name, params) in enumerate(sources):
        for flag in (False, True):
            mask = (srcs[simple_rows] == si) & (relabel[simple_rows] == flag)
            if not mask.any():
                continue
            a, b = SOURCE_ARMS[name]
            lb = 1 if flag else 0
            key = (Pair(a, b, 0, lb, params.bell, None),)
            if bench.pair_mode == "single":
                # labels matter once the other source is present
                continue
            groups[key].append(uniq[simple][mask])

    pair_start = np.concatenate([[0], np.cumsum(counts)])
    todo = np.flatnonzero(~simple) if bench.pair_mode == "thermal" else np.arange(len(uniq))
    by_key: dict = defaultdict(list)
    for u in todo.tolist():
        r0 = int(start[u])
        pairs = []
        for r in range(r0, r0 + int(npp[u])):
            name, params = sources[int(srcs[r])]
            a, b = SOURCE_ARMS[name]
            la = lb = int(labels[r])
            if relabel[r]:
                fresh = FRESH_LABEL + la
                if bench.circuit.delay_port == a:
                    la = fresh
                else:
                    lb = fresh
            for pr in range(int(pair_start[r]), int(pair_start[r + 1])):
                pols = None
                if depol_pols is not None and depol_pols[pr, 0] >= 0:
                    pols = ("HV"[depol_pols[pr, 0]], "HV"[depol_pols[pr, 1]])
                pairs.append(Pair(a, b, la, lb, params.bell, pols))
        by_key[canonical_key(pairs)].append(int(uniq[u]))
    for key, idx in by_key.items():
        groups[key].append(np.asarray(idx, dtype=np.int64))

    final = {k: np.sort(np.concatenate(v)) for k, v in groups.items()}
    return PulseBatch(n, final, offset, rejected)


def _single_groups(bench: Bench, n: int, srcs, labels, relabel) -> dict:
    """Vectorized keys when every pulse holds exactly one pair per source."""
    n_src = len(bench.sources)
    lab = labels.reshape(n, n_src)
    flags = relabel.reshape(n, n_src)
    # code: equality pattern between source labels plus relabel flags
    eq = [lab[:, i] == lab[:, j] for i in range(n_src) for j in range(i + 1, n_src)]
    code = np.zeros(n, dtype=np.int64)
    for col in eq + [flags[:, i] for i in range(n_src)]:
        code = 2 * code + col
    out = {}
    for c in np.unique(code):
        idx = np.flatnonzero(code == c)
        row = int(idx[0])
        pairs = []
        for si, (name, params) in enumerate(bench.sources):
            a, b = SOURCE_ARMS[name]
            la = lb = int(lab[row, si])
            if flags[row, si]:
                if bench.circuit.delay_port == a:
                    la = FRESH_LABEL + la
                else:
                    lb = FRESH_LABEL + lb
            pairs.append(Pair(a, b, la, lb, params.bell, None))
        out[canonical_key(pairs)] = idx
    return out


def chunk_rng(seed: int, chunk: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one chunk of pulses."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chunk, stream])))


def chunk_sizes(n_pulses: int, chunk: int = CHUNK_PULSES):
    full, rest = divmod(n_pulses, chunk)
    return [chunk] * full + ([rest] if rest else [])


def _batch_job(args):
    bench, size, seed, index, offset = args
    return sample_batch(bench, size, chunk_rng(seed, index), offset)


def sample_batches(bench: Bench, n_pulses: int, seed: int, workers: int = 1) -> list[PulseBatch]:
    """Emission keys for ``n_pulses`` split into fixed chunks (independent of ``workers``)."""
    jobs = []
    offset = 0
    for i, size in enumerate(chunk_sizes(n_pulses)):
        jobs.append((bench, size, seed, i, offset))
        offset += size
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_batch_job, jobs))
    return [_batch_job(j) for j in jobs]


def merge_counts(batches) -> dict:
    total: dict = defaultdict(int)
    for b in batches:
        for k, v in b.groups.items():
            total[k] += len(v)
    return dict(total)


# -- exact route ------------------------------------------------------------------


def input_basis(circuit: Circuit) -> list[tuple[str, str]]:
    return [(p, pol) for p in circuit.input_ports for pol in "HV"]


class ExactModel:
    """No-click probabilities of every detector subset for a given emission key."""

    def __init__(self, bench: Bench):
        self.bench = bench
        circuit = bench.circuit
        u, basis = transfer_matrix(circuit)
        self.in_basis = input_basis(circuit)
        cols = [basis.index(b) for b in self.in_basis]
        trans = np.array([sqrt(bench.transmissions.get(p, 1.0)) for p, _ in self.in_basis])
        self.single = []
        for slot, det in zip(circuit.detectors, bench.detectors):
            rows = [basis.index((slot.port, "H")), basis.index((slot.port, "V"))]
            a = u[np.ix_(rows, cols)] * trans[None, :]
            self.single.append(a.conj().T @ det.efficiency_matrix() @ a)
        self.dark = np.array([d.dark_prob for d in bench.detectors])
        n_det = len(self.single)
        n_in = len(self.in_basis)
        self.subsets = list(range(1 << n_det))
        self.gammas = []
        for s in self.subsets:
            m = np.zeros((n_in, n_in), dtype=complex)
            for j in range(n_det):
                if s >> j & 1:
                    m += self.single[j]
            self.gammas.append(np.eye(n_in) - m)
        coupling = np.zeros((n_in, n_in), dtype=bool)
        for m in self.single:
            coupling |= np.abs(m) > 1e-15
        self.blocks = _components(coupling)
        # per subset: the non-trivial diagonal blocks of 1 - M_S
        self.actions = []
        for gamma in self.gammas:
            acts = []
            for block in self.blocks:
                sub = gamma[np.ix_(block, block)]
                if not np.allclose(sub, np.eye(len(block))):
                    acts.append((block, sub))
            self.actions.append(acts)
        self._cache: dict = {}

    def no_click(self, key: EmissionKey) -> np.ndarray:
        """``Q[S]`` = probability that no detector in bitmask ``S`` clicks."""
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        labels = key_labels(key)
        reg = ModeRegistry(ModeKey(p, pol, lab) for lab in labels for p, pol in self.in_basis)
        from .spdc import pairs_state

        psi = pairs_state(key, reg) if key else SparseState.vacuum(reg)
        n_in = len(self.in_basis)
        q = np.empty(len(self.subsets))
        for s, acts in zip(self.subsets, self.actions):
            phi = psi
            for block, sub in acts:
                for li, _ in enumerate(labels):
                    modes = [li * n_in + b for b in block]
                    phi = apply_single_particle(phi, modes, sub)
            val = psi.inner(phi).real
            dark = np.prod([1.0 - self.dark[j] for j in range(len(self.dark)) if s >> j & 1])
            q[s] = val * dark
        self._cache[key] = q
        return q


def _components(adj: np.ndarray) -> list[list[int]]:
    n = len(adj)
    seen = [False] * n
    out = []
    for i in range(n):
        if seen[i] or not adj[i].any():
            continue
        stack, comp = [i], []
        seen[i] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in np.flatnonzero(adj[v] | adj[:, v]):
                if not seen[w]:
                    seen[w] = True
                    stack.append(int(w))
        out.append(sorted(comp))
    return out


def all_click_prob(q: np.ndarray, mask: int) -> float:
    """Probability that every detector in bitmask ``mask`` clicks."""
    total = 0.0
    s = mask
    while True:
        total += (-1) ** bin(s).count("1") * q[s]
        if s == 0:
            break
        s = (s - 1) & mask
    return total


def subset_mask(subset) -> int:
    m = 0
    for j in subset:
        m |= 1 << j
    return m


def expected_tallies(model: ExactModel, counts: dict, n_pulses: int, subsets):
    """Conditional-expectation estimates of coincidence counts.

    Returns ``{subset: (expected_count, standard_error)}``; the error is the
    sampling error of the emission configurations.
    """
    vac = n_pulses - sum(counts.values())
    items = sorted(counts.items(), key=lambda kv: key_order(kv[0]))
    probs = []
    weights = []
    q_vac = model.no_click(())
    for key, c in items:
        probs.append(model.no_click(key))
        weights.append(c)
    out = {}
    for subset in subsets:
        mask = subset_mask(subset)
        f = np.array([all_click_prob(q, mask) for q in probs] + [all_click_prob(q_vac, mask)])
        w = np.array(weights + [vac], dtype=float)
        mean = float(np.dot(w, f) / n_pulses)
        second = float(np.dot(w, f * f) / n_pulses)
        var = max(second - mean * mean, 0.0)
        out[tuple(subset)] = (mean * n_pulses, sqrt(var * n_pulses))
    return out


# -- trajectory route --------------------------------------------------------------


class TrajectoryModel:
    """Samples detector clicks pulse by pulse (batched over identical states)."""

    def __init__(self, bench: Bench):
        self.bench = bench
        self.bindings = []
        self.frames = []
        for slot, det in zip(bench.circuit.detectors, bench.detectors):
            frame = 0.0 if det.polarization_free else det.axis % 180.0
            self.frames.append((slot.port, frame))
            self.bindings.append(DetectorBinding(slot.port, det, frame))
        self._leaf_cache: dict = {}

    def _registry(self, key):
        return self.bench.circuit.registry_for(key_labels(key) or [0])

    def _evolve(self, state: SparseState) -> SparseState:
        state = run_circuit(state, self.bench.circuit)
        reg = state.registry
        for port, frame in self.frames:
            if frame == 0.0:
                continue
            u = rotation(-frame)
            for m in list(reg):
                if m.port == port and m.pol == "H":
                    iv = reg.index(ModeKey(port, "V", m.label))
                    state = apply_linear_two_mode(state, reg.index(m), iv, u)
        return state

    def photon_clicks(self, key, indices: np.ndarray, rng) -> list[np.ndarray]:
        """Per-detector indices (subset of ``indices``) where photons caused a click."""
        from .spdc import pairs_state

        reg = self._registry(key)
        state = pairs_state(key, reg)
        lossy = []
        for port in self.bench.circuit.input_ports:
            t = self.bench.transmissions.get(port, 1.0)
            if t < 1.0:
                support = state.support()
                lossy.extend(m for m in reg if m.port == port and reg.index(m) in support)

        leaves = [((), state, indices)]
        for mode in lossy:
            t = self.bench.transmissions[mode.port]
            nxt = []
            for outcome, st, idx in leaves:
                lost, branches = sample_loss_batch(st, mode, t, rng, len(idx))
                for ell in sorted(branches):
                    sel = idx[lost == ell]
                    if len(sel):
                        nxt.append((outcome + (ell,), branches[ell], sel))
            leaves = nxt

        hits = [[] for _ in self.bindings]
        for outcome, st, idx in leaves:
            cache_key = (key, outcome)
            leaf = self._leaf_cache.get(cache_key)
            if leaf is None:
                out = self._evolve(st)
                dist = measurement_distribution(out)
                patterns = list(dist)
                p = np.array([dist[x] for x in patterns])
                click_p = np.array(
                    [
                        [click_probability(etas) for etas in photon_efficiencies(x, out.registry, self.bindings)]
                        for x in patterns
                    ]
                )
                leaf = self._leaf_cache[cache_key] = (p / p.sum(), click_p)
            p, click_p = leaf
            which = rng.choice(len(p), size=len(idx), p=p) if len(p) > 1 else np.zeros(len(idx), dtype=int)
            u = rng.random((len(idx), len(self.bindings)))
            clicked = u < click_p[which]
            for d in range(len(self.bindings)):
                hits[d].append(idx[clicked[:, d]])
        return [np.concatenate(h) if h else np.empty(0, dtype=np.int64) for h in hits]

    def batch_clicks(self, batch: PulseBatch, rng) -> list[np.ndarray]:
        """Per-detector sorted click indices (global pulse numbers), darks included."""
        per_det = [[] for _ in self.bindings]
        for key in sorted(batch.groups, key=key_order):
            for d, idx in enumerate(self.photon_clicks(key, batch.groups[key], rng)):
                per_det[d].append(idx)
        out = []
        for d, b in enumerate(self.bindings):
            dark = _bernoulli_positions(batch.n_pulses, b.params.dark_prob, rng)
            allidx = np.concatenate(per_det[d] + [dark]) if per_det[d] else dark
            out.append(np.unique(allidx) + batch.offset)
        return out


def sampled_clicks(bench: Bench, batches, seed: int, stream: int = 1) -> list[np.ndarray]:
    """Raw click indices per detector over all batches (dead time not applied)."""
    model = TrajectoryModel(bench)
    per_det = [[] for _ in range(bench.n_detectors)]
    for i, batch in enumerate(batches):
        rng = chunk_rng(seed, i, stream)
        for d, idx in enumerate(model.batch_clicks(batch, rng)):
            per_det[d].append(idx)
    return [np.concatenate(x) if x else np.empty(0, dtype=np.int64) for x in per_det]


def sampled_tallies(bench: Bench, clicks, subsets, dead_time: bool = True) -> dict:
    from .detection import coincidences

    eff = []
    for d, idx in enumerate(clicks):
        dead = bench.detectors[d].dead_time_pulses if dead_time else 0
        eff.append(apply_dead_time(idx, dead))
    return {tuple(s): coincidences(eff, s) for s in subsets}


# -- exact enumeration oracle ------------------------------------------------------


def _occupations(n_labels: int, n_max: int):
    for total in range(n_max + 1):
        for combo in _compositions(total, n_labels):
            yield combo


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _source_branches(name: str, params: SourceParams, bench: Bench, n_max: Optional[int]):
    """Exact ``[(probability, [Pair...])]`` for one source's pulse."""
    lam = params.weights
    a, b = SOURCE_ARMS[name]
    if bench.pair_mode == "single":
        occs = [(tuple(1 if j == k else 0 for j in range(len(lam))), float(lam[k])) for k in range(len(lam))]
    else:
        if n_max is None:
            raise ValidationError("thermal enumeration needs a pair truncation")
        occs = []
        for occ in _occupations(len(lam), n_max):
            p = float(np.prod([thermal_pmf(n, params.mu * w) for n, w in zip(occ, lam)]))
            if p > 0:
                occs.append((occ, p))
        norm = sum(p for _, p in occs)
        occs = [(o, p / norm) for o, p in occs]

    delayed = bench.delay_source == name and bench.retention < 1.0
    out = []
    for occ, p_occ in occs:
        present = [(k, n) for k, n in enumerate(occ) if n]
        relabel_opts = product(*[(False, True)] * len(present)) if delayed else [tuple(False for _ in present)]
        for flags in relabel_opts:
            p_rel = 1.0
            base = []
            for (k, n), flag in zip(present, flags):
                p_rel *= (1.0 - bench.retention) if flag else (bench.retention if delayed else 1.0)
                la = lb = k
                if flag:
                    if bench.circuit.delay_port == a:
                        la = FRESH_LABEL + k
                    else:
                        lb = FRESH_LABEL + k
                base.extend([(la, lb)] * n)
            if p_rel == 0.0:
                continue
            if params.werner > 0:
                options = [(1.0 - params.werner, None)] + [
                    (params.werner / 4, (pa, pb)) for pa in "HV" for pb in "HV"
                ]
                for choice in product(options, repeat=len(base)):
                    p_w = float(np.prod([c[0] for c in choice]))
                    pairs = [Pair(a, b, la, lb, params.bell, c[1]) for (la, lb), c in zip(base, choice)]
                    out.append((p_occ * p_rel * p_w, pairs))
            else:
                out.append((p_occ * p_rel, [Pair(a, b, la, lb, params.bell, None) for la, lb in base]))
    return out


def enumerate_keys(bench: Bench, n_max: Optional[int], state_cap: int = 200_000) -> dict:
    """Exact probability of every canonical emission key (pairs per source <= ``n_max``)."""
    per_source = [_source_branches(name, params, bench, n_max) for name, params in bench.sources]
    size = int(np.prod([len(x) for x in per_source]))
    if size > state_cap:
        raise ValidationError(
            f"enumeration needs {size} joint configurations (cap {state_cap}); use a smaller N_max"
        )
    out: dict = defaultdict(float)
    for combo in product(*per_source):
        p = float(np.prod([c[0] for c in combo]))
        pairs = [pr for c in combo for pr in c[1]]
        if 2 * len(pairs) > bench.photon_cap:
            continue
        out[canonical_key(pairs)] += p
    return dict(out)


def exact_probabilities(model: ExactModel, key_probs: dict, subsets) -> dict:
    out = {}
    items = sorted(key_probs.items(), key=lambda kv: key_order(kv[0]))
    qs = [(p, model.no_click(k)) for k, p in items]
    for subset in subsets:
        mask = subset_mask(subset)
        out[tuple(subset)] = float(sum(p * all_click_prob(q, mask) for p, q in qs))
    return out
