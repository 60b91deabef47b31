"""Threshold detectors, coincidence tallies and the derived figures of merit."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import cos, radians, sqrt
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .fock import ModeRegistry, OccupationPattern

REP_RATE = 76e6
DARK_RATE_CPS = 2000.0
DEAD_TIME_S = 40e-9


@dataclass(frozen=True)
class DetectorParams:
    """Polarization-dependent threshold detector.

    Efficiency follows ``eta_min + (eta_max - eta_min) cos^2(chi - axis)``
    for a photon polarized at angle ``chi``.
    """

    eta_max: float = 0.79
    eta_min: float = 0.395
    axis: float = 0.0
    dark_prob: float = DARK_RATE_CPS / REP_RATE
    dead_time_pulses: int = 3

    def __post_init__(self):
        if not 0.0 <= self.eta_min <= self.eta_max <= 1.0:
            raise ValidationError("need 0 <= eta_min <= eta_max <= 1")
        if not 0.0 <= self.dark_prob < 1.0:
            raise ValidationError("dark_prob must lie in [0, 1)")
        if self.dead_time_pulses < 0 or int(self.dead_time_pulses) != self.dead_time_pulses:
            raise ValidationError("dead_time_pulses must be a non-negative integer")

    @property
    def polarization_free(self) -> bool:
        return self.eta_min == self.eta_max

    def efficiency(self, chi: float) -> float:
        return self.eta_min + (self.eta_max - self.eta_min) * cos(radians(chi - self.axis)) ** 2

    def efficiency_matrix(self) -> np.ndarray:
        """POVM element for 'photon registered', in the (H, V) basis."""
        a = radians(self.axis)
        v = np.array([cos(a), np.sin(a)])
        return self.eta_min * np.eye(2) + (self.eta_max - self.eta_min) * np.outer(v, v)

    def scaled(self, factor: float) -> "DetectorParams":
        return replace(self, eta_max=self.eta_max * factor, eta_min=self.eta_min * factor)


def dark_prob_from_rate(dcr: float, rep_rate: float) -> float:
    """Per-pulse dark-click probability for a dark rate in counts per second."""
    if rep_rate <= 0:
        raise ValidationError("repetition rate must be positive")
    if dcr < 0:
        raise ValidationError("dark count rate must be >= 0")
    p = dcr / rep_rate
    if p >= 1.0:
        raise ValidationError(f"dark probability {p} per pulse is not below 1")
    return p


def dead_time_pulses(dead_time_s: float = DEAD_TIME_S, rep_rate: float = REP_RATE) -> int:
    """Whole pulse periods fully covered by the dead time (40 ns at 76 MHz -> 3)."""
    return int(dead_time_s * rep_rate)


def click_probability(etas: Iterable[float], dark_prob: float = 0.0) -> float:
    p_none = 1.0 - dark_prob
    for eta in etas:
        p_none *= 1.0 - eta
    return 1.0 - p_none


@dataclass(frozen=True)
class DetectorBinding:
    """A detector watching one port; ``frame`` is the angle of the port's H mode."""

    port: str
    params: DetectorParams
    frame: float = 0.0


def photon_efficiencies(pattern: OccupationPattern, registry: ModeRegistry, bindings):
    """Per-detector list of single-photon efficiencies for the photons in ``pattern``."""
    port_slot = {b.port: i for i, b in enumerate(bindings)}
    out = [[] for _ in bindings]
    for idx in pattern:
        mode = registry[idx]
        slot = port_slot.get(mode.port)
        if slot is None:
            continue
        b = bindings[slot]
        chi = b.frame + (0.0 if mode.pol == "H" else 90.0)
        out[slot].append(b.params.efficiency(chi))
    return out


def detect(pattern: OccupationPattern, registry: ModeRegistry, bindings, rng) -> tuple[bool, ...]:
    """Click pattern for one photon-number outcome (threshold detection with darks)."""
    clicks = []
    for b, etas in zip(bindings, photon_efficiencies(pattern, registry, bindings)):
        clicks.append(bool(rng.random() < click_probability(etas, b.params.dark_prob)))
    return tuple(clicks)


# -- tallies ------------------------------------------------------------------


def apply_dead_time(indices: np.ndarray, dead_pulses: int) -> np.ndarray:
    """Drop clicks falling within ``dead_pulses`` pulses after a registered click."""
    indices = np.asarray(indices, dtype=np.int64)
    if dead_pulses == 0 or len(indices) < 2:
        return indices
    if np.all(np.diff(indices) > dead_pulses):
        return indices
    keep = np.zeros(len(indices), dtype=bool)
    blind_until = -1
    for i, p in enumerate(indices.tolist()):
        if p > blind_until:
            keep[i] = True
            blind_until = p + dead_pulses
    return indices[keep]


def coincidences(click_indices: Sequence[np.ndarray], subset: Sequence[int]) -> int:
    """Number of pulses where every detector in ``subset`` registered a click."""
    common = None
    for d in subset:
        idx = click_indices[d]
        common = idx if common is None else np.intersect1d(common, idx, assume_unique=True)
    return 0 if common is None else int(len(common))


def tally(clicks, subsets, dead_time=0) -> dict[tuple, int]:
    """Count pulses where all detectors of each subset click.

    ``clicks`` is a (pulses x detectors) boolean array ordered by pulse.
    ``dead_time`` is one value for all detectors or one per detector.
    """
    clicks = np.asarray(clicks, dtype=bool)
    n_det = clicks.shape[1]
    dead = [dead_time] * n_det if np.isscalar(dead_time) else list(dead_time)
    idx = [apply_dead_time(np.flatnonzero(clicks[:, d]), dead[d]) for d in range(n_det)]
    return {tuple(s): coincidences(idx, s) for s in subsets}


@dataclass
class TallyResult:
    """Coincidence counts for one setting.

    ``raw``/``b1``/``b2`` are counts (expected counts when the
    conditional-expectation estimator is used).  ``*_se`` hold the
    simulation's own standard errors; ``None`` means the counts were
    sampled and Poisson errors apply.
    """

    setting: dict
    raw: float
    n_pulses: int
    rep_rate: float = REP_RATE
    b1: float = 0.0
    b2: float = 0.0
    raw_se: Optional[float] = None
    b1_se: Optional[float] = None
    b2_se: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def background(self) -> float:
        return self.b1 + self.b2

    @property
    def net(self) -> float:
        return self.raw - self.background

    @property
    def raw_error(self) -> float:
        """Poisson error of the raw count."""
        return sqrt(max(self.raw, 0.0))

    @property
    def net_error(self) -> float:
        """Poisson error of the net count."""
        return sqrt(max(self.raw + self.b1 + self.b2, 0.0))

    @property
    def sampled(self) -> bool:
        return self.raw_se is None

    @property
    def raw_sim_error(self) -> float:
        """Statistical error of the simulated raw count."""
        return self.raw_error if self.raw_se is None else self.raw_se

    @property
    def net_sim_error(self) -> float:
        if self.raw_se is None:
            return self.net_error
        return sqrt(self.raw_se**2 + (self.b1_se or 0.0) ** 2 + (self.b2_se or 0.0) ** 2)

    @property
    def duration_s(self) -> float:
        return self.n_pulses / self.rep_rate

    def rate(self, count: Optional[float] = None) -> float:
        """Counts per second."""
        count = self.raw if count is None else count
        return count * self.rep_rate / self.n_pulses


def background_subtract(raw: TallyResult, b1: TallyResult, b2: TallyResult) -> TallyResult:
    """Net counts: raw minus the sum of the two blocked-arm tallies."""
    if not (raw.n_pulses == b1.n_pulses == b2.n_pulses):
        raise ValidationError("background tallies must cover the same number of pulses")
    if not (raw.rep_rate == b1.rep_rate == b2.rep_rate):
        raise ValidationError("background tallies must share the repetition rate")
    return replace(raw, b1=b1.raw, b2=b2.raw, b1_se=b1.raw_se, b2_se=b2.raw_se)


# -- visibilities and fidelity --------------------------------------------------


def visibility(c_max: float, c_min: float) -> float:
    """Fringe visibility (max - min) / (max + min)."""
    if c_max <= 0 or c_max + c_min <= 0:
        raise ValidationError("visibility is undefined for a zero maximum")
    return (c_max - c_min) / (c_max + c_min)


def visibility_error(c_max, c_min, s_max, s_min) -> float:
    d = (c_max + c_min) ** 2
    return sqrt((2 * c_min / d * s_max) ** 2 + (2 * c_max / d * s_min) ** 2)


def dip_visibility(plateau: float, dip: float) -> float:
    """Depth of a coincidence dip relative to its plateau."""
    if plateau <= 0:
        raise ValidationError("dip visibility is undefined for a zero plateau")
    return (plateau - dip) / plateau


def dip_visibility_error(plateau, dip, s_plateau, s_dip) -> float:
    return sqrt((dip / plateau**2 * s_plateau) ** 2 + (s_dip / plateau) ** 2)


def fidelity_from_visibility(v: float) -> float:
    """Bell-state fidelity of a Werner-like state with fringe visibility ``v``."""
    if not 0.0 <= v <= 1.0:
        raise ValidationError(f"visibility must lie in [0, 1], got {v}")
    return (3.0 * v + 1.0) / 4.0


def is_entangled(v: float) -> bool:
    """Peres threshold: visibility strictly above 1/3."""
    if not 0.0 <= v <= 1.0:
        raise ValidationError(f"visibility must lie in [0, 1], got {v}")
    return v > 1.0 / 3.0
