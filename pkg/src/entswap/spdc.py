"""Pulsed SPDC source: Schmidt-mode thermal statistics and pair states.

Spectral purity enters only through the Schmidt weights.  Both photons of
a pair carry the same integer spectral label; two photons interfere fully
when their labels match and not at all otherwise.  A relative delay is
modelled by giving the delayed arm's label a fresh value with probability
``1 - q(tau)``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from math import log, pi, sqrt
from typing import NamedTuple, Optional

import numpy as np

from .errors import ValidationError
from .fock import ModeKey, ModeRegistry, SparseState, _fock_weight

log_ = logging.getLogger(__name__)

SOURCE_ARMS = {"I": ("ch1", "ch2"), "II": ("ch3", "ch4")}
BELL_STATES = ("psi-", "psi+", "phi+", "phi-")
SPEED_OF_LIGHT = 299_792_458.0
SCHMIDT_TAIL = 1e-6


@dataclass(frozen=True)
class FilterSpec:
    """Bandpass filters on some arms of a source."""

    arms: tuple = ()
    transmission: float = 0.77
    purity_after: float = 0.851

    def __post_init__(self):
        if not 0.0 <= self.transmission <= 1.0:
            raise ValidationError("filter transmission must lie in [0, 1]")
        if not 0.0 < self.purity_after <= 1.0:
            raise ValidationError("filter purity_after must lie in (0, 1]")


@dataclass(frozen=True)
class SourceParams:
    mu: float = 0.1
    purity: float = 0.82
    bell: str = "psi-"
    transmission: tuple = (0.2 / 0.79, 0.2 / 0.79)
    filter: Optional[FilterSpec] = None
    label_truncation: Optional[int] = None
    werner: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValidationError(f"mu must be >= 0, got {self.mu}")
        if not 0.0 < self.purity <= 1.0:
            raise ValidationError(f"purity must lie in (0, 1], got {self.purity}")
        if self.bell not in BELL_STATES:
            raise ValidationError(f"bell must be one of {BELL_STATES}, got {self.bell!r}")
        if len(self.transmission) != 2 or not all(0.0 <= t <= 1.0 for t in self.transmission):
            raise ValidationError("transmission needs two values in [0, 1]")
        if not 0.0 <= self.werner <= 1.0:
            raise ValidationError("werner admixture must lie in [0, 1]")
        if self.filter is not None and self.filter.purity_after < self.purity:
            raise ValidationError("filter purity_after must not be below the intrinsic purity")

    @property
    def weights(self) -> np.ndarray:
        return schmidt_weights(self.purity, self.label_truncation)


def schmidt_ratio(purity: float) -> float:
    """Geometric ratio x with sum_k ((1-x) x^k)^2 = purity."""
    if not 0.0 < purity <= 1.0:
        raise ValidationError(f"purity must lie in (0, 1], got {purity}")
    return (1.0 - purity) / (1.0 + purity)


def schmidt_weights(purity: float, truncation: Optional[int] = None) -> np.ndarray:
    """Geometric Schmidt weights, truncated after index ``truncation`` and renormalized.

    With no truncation given, the smallest one keeping at least
    ``1 - 1e-6`` of the weight is used.
    """
    x = schmidt_ratio(purity)
    if x == 0.0:
        return np.ones(1)
    if truncation is None:
        truncation = max(0, int(np.ceil(log(SCHMIDT_TAIL) / log(x))) - 1)
        while x ** (truncation + 1) > SCHMIDT_TAIL:
            truncation += 1
    if truncation < 0:
        raise ValidationError("label truncation must be >= 0")
    lam = (1.0 - x) * x ** np.arange(truncation + 1)
    return lam / lam.sum()


def thermal_pmf(n, mean):
    """P(n) = m^n / (1 + m)^(n + 1)."""
    n = np.asarray(n)
    return mean**n / (1.0 + mean) ** (n + 1)


def apply_filter(params: SourceParams, arms: tuple) -> SourceParams:
    """Fold a source's filters into arm transmissions and spectral purity.

    ``arms`` names the source's two output channels in order.
    """
    f = params.filter
    if f is None:
        return params
    trans = tuple(
        t * f.transmission if arm in f.arms else t for t, arm in zip(params.transmission, arms)
    )
    purity = f.purity_after if any(a in f.arms for a in arms) else params.purity
    return replace(params, transmission=trans, purity=purity, filter=None)


# -- delay --------------------------------------------------------------------


def coherence_sigma_ps(fwhm_nm: float = 1.2, center_nm: float = 1584.0) -> float:
    """Gaussian width (ps) of the two-photon overlap versus relative delay.

    For an intensity spectrum with angular-frequency standard deviation
    s_w, the squared overlap of a photon with its delayed copy is
    exp(-s_w^2 tau^2), i.e. a Gaussian in tau with sigma = 1/(sqrt(2) s_w).
    """
    if fwhm_nm <= 0 or center_nm <= 0:
        raise ValidationError("spectral width and centre must be positive")
    dnu = SPEED_OF_LIGHT * fwhm_nm * 1e-9 / (center_nm * 1e-9) ** 2
    sigma_w = 2 * pi * dnu / (2 * sqrt(2 * log(2)))
    return 1e12 / (sqrt(2) * sigma_w)


def label_retention(tau_ps: float, sigma_ps: float) -> float:
    """Probability that a delayed photon keeps its spectral label."""
    return float(np.exp(-(tau_ps**2) / (2 * sigma_ps**2)))


# -- emission -----------------------------------------------------------------


@dataclass(frozen=True)
class PairEmission:
    """Pair counts per Schmidt label for one source in one pulse."""

    counts: tuple = ()

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def nonzero(self):
        return [(k, n) for k, n in enumerate(self.counts) if n]


def sample_emission(params: SourceParams, rng: np.random.Generator) -> PairEmission:
    """Draw thermal pair numbers independently for each Schmidt label."""
    means = params.mu * params.weights
    if params.mu == 0:
        return PairEmission(tuple(0 for _ in means))
    # numpy's geometric counts trials to first success (>= 1)
    counts = rng.geometric(1.0 / (1.0 + means)) - 1
    return PairEmission(tuple(int(c) for c in counts))


class Pair(NamedTuple):
    """One created pair: output ports, spectral labels and polarization content.

    ``pols`` is ``None`` for the configured Bell state or an explicit
    ``(pol_a, pol_b)`` product for a depolarized pair.
    """

    port_a: str
    port_b: str
    label_a: int
    label_b: int
    bell: str = "psi-"
    pols: Optional[tuple] = None


def pair_terms(pair: Pair):
    """Creation-operator bilinear of ``pair`` as ``[(coeff, mode_a, mode_b)]``."""
    a, b = pair.port_a, pair.port_b
    ka, kb = pair.label_a, pair.label_b
    if pair.pols is not None:
        pa, pb = pair.pols
        return [(1.0, ModeKey(a, pa, ka), ModeKey(b, pb, kb))]
    s = 1 / sqrt(2)
    sign = -1.0 if pair.bell.endswith("-") else 1.0
    if pair.bell.startswith("psi"):
        combos = (("H", "V"), ("V", "H"))
    else:
        combos = (("H", "H"), ("V", "V"))
    return [
        (s, ModeKey(a, combos[0][0], ka), ModeKey(b, combos[0][1], kb)),
        (s * sign, ModeKey(a, combos[1][0], ka), ModeKey(b, combos[1][1], kb)),
    ]


def pairs_state(pairs, registry: ModeRegistry) -> SparseState:
    """Normalized product of pair-creation operators acting on vacuum."""
    poly: dict = {(): 1.0 + 0j}
    for pair in pairs:
        terms = [(c, registry.index(ma), registry.index(mb)) for c, ma, mb in pair_terms(pair)]
        nxt: dict = defaultdict(complex)
        for mono, coeff in poly.items():
            for c, ia, ib in terms:
                nxt[tuple(sorted(mono + (ia, ib)))] += coeff * c
        poly = nxt
    amps = {m: c * _fock_weight(m) for m, c in poly.items() if abs(c) > 0}
    return SparseState(registry, amps).pruned().normalized()


def emission_pairs(
    emission: PairEmission,
    params: SourceParams,
    source: str,
    rng: Optional[np.random.Generator] = None,
    retention: float = 1.0,
    delay_arm: Optional[str] = None,
    fresh_start: int = 10_000,
) -> list[Pair]:
    """Pairs produced by ``emission``, with delay relabelling and depolarization.

    Each Schmidt label present on the delayed arm keeps its value with
    probability ``retention``; otherwise all photons of that label on the
    delayed arm move to a fresh label numbered from ``fresh_start``.
    """
    port_a, port_b = SOURCE_ARMS[source]
    out = []
    fresh = fresh_start
    for label, n in emission.nonzero():
        la, lb = label, label
        if delay_arm in (port_a, port_b) and retention < 1.0:
            if rng is None:
                raise ValidationError("delay relabelling needs an rng")
            if rng.random() >= retention:
                if delay_arm == port_a:
                    la = fresh
                else:
                    lb = fresh
                fresh += 1
        for _ in range(n):
            pols = None
            if params.werner > 0.0:
                if rng is None:
                    raise ValidationError("depolarized pairs need an rng")
                if rng.random() < params.werner:
                    pols = tuple("HV"[i] for i in rng.integers(0, 2, size=2))
            out.append(Pair(port_a, port_b, la, lb, params.bell, pols))
    return out


def emit_state(
    emission: PairEmission,
    params: SourceParams,
    registry: ModeRegistry,
    source: str = "I",
    rng: Optional[np.random.Generator] = None,
    retention: float = 1.0,
    delay_arm: Optional[str] = None,
) -> SparseState:
    """State of one source's pulse: normalized product of its pair operators."""
    pairs = emission_pairs(emission, params, source, rng, retention, delay_arm)
    for p in pairs:
        for port, label in ((p.port_a, p.label_a), (p.port_b, p.label_b)):
            for pol in "HV":
                registry.add(ModeKey(port, pol, label))
    return pairs_state(pairs, registry)
