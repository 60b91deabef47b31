"""Sparse Fock-space states over a registry of labelled optical modes.

A pattern is stored as a sorted tuple of mode indices with repetition, so
``(0, 0, 3)`` means two photons in mode 0 and one in mode 3.  This keeps the
few-photon states used here small regardless of how many modes are
registered.  :func:`occupation` converts a pattern to the dense
one-count-per-mode vector.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from functools import lru_cache
from math import comb, factorial, sqrt
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError

UNITARITY_TOL = 1e-12
NORM_TOL = 1e-9
PRUNE_TOL = 1e-12

POLARIZATIONS = ("H", "V")
BLOCKED = "blocked"

OccupationPattern = tuple  # sorted tuple of mode indices, one entry per photon


class ModeKey(NamedTuple):
    """One bosonic mode: spatial port, polarization and spectral label."""

    port: str
    pol: str
    label: int = 0


class ModeRegistry:
    """Assigns each distinct :class:`ModeKey` one dense index."""

    def __init__(self, modes: Iterable[ModeKey] = ()):
        self._index: dict[ModeKey, int] = {}
        self._modes: list[ModeKey] = []
        for m in modes:
            self.add(m)

    def add(self, mode: ModeKey) -> int:
        mode = ModeKey(*mode)
        if mode.pol not in POLARIZATIONS:
            raise ValidationError(f"polarization must be H or V, got {mode.pol!r}")
        if mode.label < 0:
            raise ValidationError(f"spectral label must be >= 0, got {mode.label}")
        idx = self._index.get(mode)
        if idx is None:
            idx = len(self._modes)
            self._index[mode] = idx
            self._modes.append(mode)
        return idx

    def index(self, mode: ModeKey) -> int:
        try:
            return self._index[mode]
        except KeyError:
            raise ConfigurationError(f"mode {mode} is not registered") from None

    def __getitem__(self, idx: int) -> ModeKey:
        return self._modes[idx]

    def __contains__(self, mode) -> bool:
        return mode in self._index

    def __len__(self) -> int:
        return len(self._modes)

    def __iter__(self) -> Iterator[ModeKey]:
        return iter(self._modes)

    @property
    def modes(self) -> tuple[ModeKey, ...]:
        return tuple(self._modes)

    def labels(self) -> set[int]:
        return {m.label for m in self._modes}

    def ports(self) -> set[str]:
        return {m.port for m in self._modes}


def occupation(pattern: OccupationPattern, size: int) -> tuple[int, ...]:
    """Dense occupation vector of ``pattern`` over ``size`` modes."""
    counts = [0] * size
    for i in pattern:
        counts[i] += 1
    return tuple(counts)


def pattern_from_counts(counts: Sequence[int]) -> OccupationPattern:
    out = []
    for i, n in enumerate(counts):
        if n < 0:
            raise ValidationError("occupation numbers must be non-negative")
        out.extend([i] * n)
    return tuple(out)


def _fock_weight(pattern: OccupationPattern) -> float:
    """sqrt(prod n_i!) for the multiset ``pattern``."""
    w = 1.0
    for n in Counter(pattern).values():
        if n > 1:
            w *= factorial(n)
    return sqrt(w)


class SparseState:
    """Normalized superposition of occupation patterns."""

    __slots__ = ("registry", "amplitudes")

    def __init__(self, registry: ModeRegistry, amplitudes: dict | None = None):
        self.registry = registry
        self.amplitudes: dict[OccupationPattern, complex] = dict(amplitudes or {})

    @classmethod
    def vacuum(cls, registry: ModeRegistry) -> "SparseState":
        return cls(registry, {(): 1.0 + 0j})

    @classmethod
    def from_modes(cls, registry: ModeRegistry, modes: Iterable[ModeKey]) -> "SparseState":
        """Fock state with one photon created in each listed mode (repeats allowed)."""
        pattern = tuple(sorted(registry.index(m) for m in modes))
        return cls(registry, {pattern: 1.0 + 0j})

    @classmethod
    def superpose(cls, registry: ModeRegistry, terms) -> "SparseState":
        """Normalized sum of ``coeff * |modes>`` for ``(coeff, modes)`` in ``terms``."""
        amps: dict = defaultdict(complex)
        for coeff, modes in terms:
            pattern = tuple(sorted(registry.index(m) for m in modes))
            amps[pattern] += coeff
        state = cls(registry, amps).pruned()
        return state.normalized()

    def copy(self) -> "SparseState":
        return SparseState(self.registry, self.amplitudes)

    def __len__(self) -> int:
        return len(self.amplitudes)

    def __iter__(self):
        return iter(self.amplitudes.items())

    def __repr__(self) -> str:
        terms = ", ".join(f"{p}: {a:.4g}" for p, a in list(self.amplitudes.items())[:6])
        more = "" if len(self) <= 6 else f", ... ({len(self)} terms)"
        return f"SparseState({{{terms}{more}}})"

    def norm2(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def normalized(self) -> "SparseState":
        n2 = self.norm2()
        if n2 == 0.0:
            raise ValidationError("cannot normalize the zero vector")
        s = 1.0 / sqrt(n2)
        return SparseState(self.registry, {p: a * s for p, a in self.amplitudes.items()})

    def pruned(self, tol: float = PRUNE_TOL) -> "SparseState":
        return SparseState(
            self.registry, {p: a for p, a in self.amplitudes.items() if abs(a) > tol}
        )

    def photon_numbers(self) -> set[int]:
        return {len(p) for p in self.amplitudes}

    def support(self) -> set[int]:
        """Mode indices occupied in at least one pattern."""
        out: set[int] = set()
        for p in self.amplitudes:
            out.update(p)
        return out

    def mean_photons(self, mode: ModeKey) -> float:
        idx = self.registry.index(mode)
        return float(sum(abs(a) ** 2 * p.count(idx) for p, a in self.amplitudes.items()))

    def inner(self, other: "SparseState") -> complex:
        """<self|other>."""
        total = 0j
        for p, a in self.amplitudes.items():
            b = other.amplitudes.get(p)
            if b is not None:
                total += a.conjugate() * b
        return total

    def dense_amplitudes(self) -> dict[tuple[int, ...], complex]:
        size = len(self.registry)
        return {occupation(p, size): a for p, a in self.amplitudes.items()}


def check_unitary(u, tol: float = UNITARITY_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise ValidationError(f"two-mode unitary must be 2x2, got shape {u.shape}")
    if not np.allclose(u.conj().T @ u, np.eye(2), atol=tol, rtol=0):
        raise ValidationError("matrix is not unitary within tolerance")
    return u


@lru_cache(maxsize=4096)
def _two_mode_table(u: tuple, na: int, nb: int) -> tuple:
    """Output amplitudes for |na, nb> -> sum_p c_p |p, na+nb-p>."""
    u00, u01, u10, u11 = u
    raw: dict[int, complex] = defaultdict(complex)
    for i in range(na + 1):
        ci = comb(na, i) * u00**i * u10 ** (na - i)
        if ci == 0:
            continue
        for j in range(nb + 1):
            cj = comb(nb, j) * u01**j * u11 ** (nb - j)
            raw[i + j] += ci * cj
    n = na + nb
    scale = 1.0 / sqrt(factorial(na) * factorial(nb))
    return tuple(
        (p, c * sqrt(factorial(p) * factorial(n - p)) * scale)
        for p, c in sorted(raw.items())
        if abs(c) > 0
    )


def apply_linear_two_mode(state: SparseState, ia: int, ib: int, u: np.ndarray) -> SparseState:
    """Substitute a† -> u00 a† + u10 b†, b† -> u01 a† + u11 b† (no unitarity check)."""
    key = (complex(u[0, 0]), complex(u[0, 1]), complex(u[1, 0]), complex(u[1, 1]))
    out: dict = defaultdict(complex)
    for pattern, amp in state.amplitudes.items():
        na = pattern.count(ia)
        nb = pattern.count(ib)
        if na == 0 and nb == 0:
            out[pattern] += amp
            continue
        rest = tuple(i for i in pattern if i != ia and i != ib)
        for p, c in _two_mode_table(key, na, nb):
            new = tuple(sorted(rest + (ia,) * p + (ib,) * (na + nb - p)))
            out[new] += amp * c
    return SparseState(state.registry, {p: a for p, a in out.items() if abs(a) > PRUNE_TOL})


def apply_two_mode(state: SparseState, a: ModeKey, b: ModeKey, u) -> SparseState:
    """Apply a 2x2 unitary between modes ``a`` and ``b``.

    Creation operators transform as ``a† -> u00 a† + u10 b†`` and
    ``b† -> u01 a† + u11 b†``; columns of ``u`` are the input modes.
    """
    ia = state.registry.index(a)
    ib = state.registry.index(b)
    if ia == ib:
        raise ValidationError("two-mode unitary needs two distinct modes")
    u = check_unitary(u)
    return apply_linear_two_mode(state, ia, ib, u)


def tensor(sa: SparseState, sb: SparseState) -> SparseState:
    """Joint state of two states over disjoint modes of one registry."""
    if sa.registry is not sb.registry:
        raise ValidationError("tensor product needs states over the same registry")
    if sa.support() & sb.support():
        raise ValidationError("tensor product needs disjoint mode support")
    out: dict = {}
    for pa, aa in sa.amplitudes.items():
        for pb, ab in sb.amplitudes.items():
            out[tuple(sorted(pa + pb))] = aa * ab
    return SparseState(sa.registry, out)


def loss_branches(state: SparseState, mode: ModeKey, t: float):
    """Kraus branches of a pure-loss channel with transmission ``t`` on ``mode``.

    Returns ``[(lost, probability, normalized_state), ...]`` for every branch
    with non-zero probability.  The Kraus operator for ``lost`` photons maps
    ``|n> -> sqrt(C(n, lost) t^(n-lost) (1-t)^lost) |n - lost>``.
    """
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"transmission must lie in [0, 1], got {t}")
    idx = state.registry.index(mode)
    if t == 1.0:
        return [(0, 1.0, state)]
    unnorm: dict[int, dict] = defaultdict(dict)
    for pattern, amp in state.amplitudes.items():
        n = pattern.count(idx)
        if n == 0:
            unnorm[0][pattern] = amp
            continue
        rest = tuple(i for i in pattern if i != idx)
        for lost in range(n + 1):
            k = comb(n, lost) * t ** (n - lost) * (1.0 - t) ** lost
            if k == 0.0:
                continue
            kept = tuple(sorted(rest + (idx,) * (n - lost)))
            unnorm[lost][kept] = amp * sqrt(k)
    out = []
    for lost in sorted(unnorm):
        s = SparseState(state.registry, unnorm[lost])
        p = s.norm2()
        if p > 0.0:
            out.append((lost, p, s.normalized()))
    return out


def sample_loss(state: SparseState, mode: ModeKey, t: float, rng: np.random.Generator):
    """One Kraus trajectory of the loss channel; returns ``(state, lost_count)``."""
    branches = loss_branches(state, mode, t)
    if len(branches) == 1:
        lost, _, s = branches[0]
        return s, lost
    probs = np.array([b[1] for b in branches])
    k = rng.choice(len(branches), p=probs / probs.sum())
    lost, _, s = branches[k]
    return s, lost


def sample_loss_batch(state: SparseState, mode: ModeKey, t: float, rng, size: int):
    """``size`` independent trajectories of :func:`sample_loss` from one state.

    Returns ``(lost_per_draw, {lost: state})``.
    """
    branches = loss_branches(state, mode, t)
    if len(branches) == 1:
        lost, _, s = branches[0]
        return np.full(size, lost, dtype=np.int64), {lost: s}
    probs = np.array([b[1] for b in branches])
    picks = rng.choice(len(branches), size=size, p=probs / probs.sum())
    losts = np.array([b[0] for b in branches], dtype=np.int64)
    return losts[picks], {b[0]: b[2] for b in branches}


def measurement_distribution(state: SparseState) -> dict[OccupationPattern, float]:
    """Photon-counting probabilities of every occupied pattern."""
    probs = {p: abs(a) ** 2 for p, a in state.amplitudes.items()}
    total = sum(probs.values())
    if abs(total - 1.0) > NORM_TOL:
        raise ValidationError(f"state is not normalized (norm^2 = {total:.12g})")
    return probs


def polarization_density_matrix(state: SparseState, qubits, condition=None) -> np.ndarray:
    """Density matrix of polarization qubits carried by single photons.

    ``qubits`` is a list of ``(H_mode, V_mode)`` pairs.  Only patterns with
    exactly one photon in each pair contribute; all other modes are traced
    out.  ``condition(pattern)`` further restricts which patterns count.
    The result is normalized to unit trace (the post-selected state).
    """
    reg = state.registry
    pairs = [(reg.index(h), reg.index(v)) for h, v in qubits]
    qubit_modes = {i for pair in pairs for i in pair}
    dim = 2 ** len(pairs)
    blocks: dict = defaultdict(lambda: np.zeros(dim, dtype=complex))
    for pattern, amp in state.amplitudes.items():
        if condition is not None and not condition(pattern):
            continue
        idx = 0
        ok = True
        for h, v in pairs:
            nh, nv = pattern.count(h), pattern.count(v)
            if nh + nv != 1:
                ok = False
                break
            idx = 2 * idx + (1 if nv else 0)
        if not ok:
            continue
        rest = tuple(i for i in pattern if i not in qubit_modes)
        blocks[rest][idx] += amp
    rho = np.zeros((dim, dim), dtype=complex)
    for vec in blocks.values():
        rho += np.outer(vec, vec.conj())
    tr = np.trace(rho).real
    if tr <= 0:
        raise ValidationError("post-selection has zero probability")
    return rho / tr


def _expand_block(inside: tuple, modes: Sequence[int], pos: dict, matrix: np.ndarray) -> list:
    poly: dict = {(): 1.0 + 0j}
    for i in inside:
        col = matrix[:, pos[i]]
        nz = [(modes[j], x) for j, x in enumerate(col) if x != 0]
        nxt: dict = defaultdict(complex)
        for mono, c in poly.items():
            for m, x in nz:
                nxt[tuple(sorted(mono + (m,)))] += c * x
        poly = nxt
    scale = 1.0 / _fock_weight(inside)
    return [(m, c * _fock_weight(m) * scale) for m, c in poly.items() if c != 0]


def apply_single_particle(state: SparseState, modes: Sequence[int], matrix) -> SparseState:
    """Second-quantized action of a single-particle matrix on ``modes``.

    Each creation operator on ``modes[i]`` becomes
    ``sum_j matrix[j, i] a†(modes[j])``.  ``matrix`` need not be unitary, so
    the result is generally unnormalized.
    """
    matrix = np.asarray(matrix, dtype=complex)
    pos = {m: i for i, m in enumerate(modes)}
    cache: dict = {}
    out: dict = defaultdict(complex)
    for pattern, amp in state.amplitudes.items():
        inside = tuple(i for i in pattern if i in pos)
        if not inside:
            out[pattern] += amp
            continue
        rest = tuple(i for i in pattern if i not in pos)
        table = cache.get(inside)
        if table is None:
            table = cache[inside] = _expand_block(inside, modes, pos, matrix)
        for sub, c in table:
            out[tuple(sorted(rest + sub))] += amp * c
    return SparseState(state.registry, {p: a for p, a in out.items() if a != 0})
