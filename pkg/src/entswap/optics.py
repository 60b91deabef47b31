"""Jones-calculus elements and the three bench layouts.

Every element is passive and photon-number conserving.  A polarizer sends
the rejected component into a per-arm ``blocked_<port>`` mode that no
detector watches, so evolution stays unitary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from math import cos, radians, sin, sqrt
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, ValidationError
from .fock import (
    POLARIZATIONS,
    ModeKey,
    ModeRegistry,
    SparseState,
    apply_linear_two_mode,
    check_unitary,
    sample_loss,
)

CHANNELS = ("ch1", "ch2", "ch3", "ch4")
INTERNAL_PORTS = ("5", "6", "7", "8")

BS_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / sqrt(2)
BS_SYMMETRIC = np.array([[1, 1j], [1j, 1]], dtype=complex) / sqrt(2)


def blocked_port(port: str) -> str:
    return f"blocked_{port}"


def is_blocked(port: str) -> bool:
    return port.startswith("blocked")


def rotation(angle_deg: float) -> np.ndarray:
    """Rotate a polarization vector by ``angle_deg``."""
    c, s = cos(radians(angle_deg)), sin(radians(angle_deg))
    return np.array([[c, -s], [s, c]], dtype=complex)


def jones_of(kind: str, theta: float) -> np.ndarray:
    """Jones matrix of a half- or quarter-wave plate with fast axis at ``theta`` degrees."""
    theta = theta % 180.0
    if kind == "HWP":
        c, s = cos(radians(2 * theta)), sin(radians(2 * theta))
        return np.array([[c, s], [s, -c]], dtype=complex)
    if kind == "QWP":
        return rotation(theta) @ np.diag([1.0, 1j]) @ rotation(-theta)
    raise ValidationError(f"no Jones matrix for element kind {kind!r}")


def splitter_matrix(ratio: float = 0.5, convention: str = "hadamard") -> np.ndarray:
    """Two-port splitter with power transmission ``ratio``."""
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"splitting ratio must lie in [0, 1], got {ratio}")
    t, r = sqrt(ratio), sqrt(1.0 - ratio)
    if convention == "hadamard":
        return np.array([[t, r], [r, -t]], dtype=complex)
    if convention == "symmetric":
        return np.array([[t, 1j * r], [1j * r, t]], dtype=complex)
    raise ValidationError(f"unknown splitter convention {convention!r}")


# -- elements ---------------------------------------------------------------


@dataclass(frozen=True)
class HWP:
    port: str
    theta: float


@dataclass(frozen=True)
class QWP:
    port: str
    theta: float


@dataclass(frozen=True)
class Polarizer:
    """Passes polarization ``theta``; the rejected light goes to the ``dump`` port.

    Each polarizer needs its own empty dump: rejected photons must stay
    distinguishable from those of any other polarizer.
    """

    port: str
    theta: float
    dump: Optional[str] = None

    @property
    def dump_port(self) -> str:
        return self.dump or blocked_port(self.port)


@dataclass(frozen=True)
class PBS:
    """Single-input splitter: H continues to ``port_h``, V to ``port_v``."""

    port_in: str
    port_h: str
    port_v: str


@dataclass(frozen=True)
class FBS:
    """Fiber beam splitter joining ``port_a``/``port_b`` into ``out_a``/``out_b``."""

    port_a: str
    port_b: str
    out_a: str
    out_b: str
    ratio: float = 0.5
    convention: str = "hadamard"


@dataclass(frozen=True)
class FPBS:
    """Two-input polarizing splitter.

    H from ``port_in_a`` and V from ``port_in_b`` leave by ``port_h``;
    V from ``port_in_a`` and H from ``port_in_b`` leave by ``port_v``.
    """

    port_in_a: str
    port_in_b: str
    port_h: str
    port_v: str


@dataclass(frozen=True)
class Delay:
    """Relative path delay in picoseconds; acts through spectral labelling."""

    port: str
    tau_ps: float


@dataclass(frozen=True)
class Loss:
    port: str
    transmission: float


Element = Union[HWP, QWP, Polarizer, PBS, FBS, FPBS, Delay, Loss]


def element_ports(element: Element) -> tuple[str, ...]:
    if isinstance(element, (HWP, QWP, Delay, Loss)):
        return (element.port,)
    if isinstance(element, Polarizer):
        return (element.port, element.dump_port)
    if isinstance(element, PBS):
        return (element.port_in, element.port_h, element.port_v)
    if isinstance(element, FBS):
        return (element.port_a, element.port_b, element.out_a, element.out_b)
    if isinstance(element, FPBS):
        return (element.port_in_a, element.port_in_b, element.port_h, element.port_v)
    raise ValidationError(f"unknown element {element!r}")


# -- setups -------------------------------------------------------------------


class SetupKind(str, Enum):
    SOURCE_TEST = "source_test"
    HOM_TELEPORT = "hom_teleport"
    SWAP = "swap"


@dataclass(frozen=True)
class DetectorSlot:
    """Where a detector sits and how its polarization axis is set.

    ``fpc_axis`` is the polarization the fiber controller aligns to the
    detector's best axis (``None`` when mixed polarizations arrive).
    ``polarization_free`` marks slots whose efficiency is effectively
    scalar.
    """

    name: str
    port: str
    fpc_axis: Optional[float] = None
    polarization_free: bool = False


@dataclass(frozen=True)
class SetupSettings:
    thetas: tuple = (None, None, None, None)
    tau_ps: float = 0.0
    source: str = "I"
    fbs_ratio: float = 0.5
    bs_convention: str = "hadamard"

    def __post_init__(self):
        if len(self.thetas) != 4:
            raise ValidationError("thetas needs four entries (None = polarizer removed)")
        if self.source not in ("I", "II"):
            raise ValidationError(f"source must be 'I' or 'II', got {self.source!r}")


@dataclass(frozen=True)
class Circuit:
    kind: SetupKind
    elements: tuple
    detectors: tuple  # DetectorSlot
    input_ports: tuple
    delay_port: Optional[str] = None
    tau_ps: float = 0.0
    settings: SetupSettings = field(default_factory=SetupSettings)

    @property
    def detector_ports(self) -> tuple[str, ...]:
        return tuple(d.port for d in self.detectors)

    def ports(self) -> set[str]:
        out = set(self.input_ports)
        for e in self.elements:
            out.update(element_ports(e))
        return out

    def registry_for(self, labels: Sequence[int]) -> ModeRegistry:
        """Registry over every port the circuit touches, for the given labels."""
        reg = ModeRegistry()
        for label in sorted(set(labels)):
            for port in sorted(self.ports()):
                for pol in POLARIZATIONS:
                    reg.add(ModeKey(port, pol, label))
        return reg


def _polarizers(thetas, ports):
    return [Polarizer(p, t) for p, t in zip(ports, thetas) if t is not None]


def build_setup(kind, settings: SetupSettings | None = None) -> Circuit:
    """Circuit for the source test, HOM/teleportation bench or swapping bench."""
    settings = settings or SetupSettings()
    kind = SetupKind(kind)
    t1, t2, t3, t4 = settings.thetas

    if kind is SetupKind.SOURCE_TEST:
        if settings.source == "I":
            ports, angles = ("ch1", "ch2"), (t1, t2)
        else:
            ports, angles = ("ch4", "ch3"), (t4, t3)
        elements = tuple(_polarizers(angles, ports))
        none_present = all(a is None for a in angles)
        detectors = tuple(
            DetectorSlot(f"D{p[-1]}", p, fpc_axis=a, polarization_free=none_present)
            for p, a in zip(ports, angles)
        )
        return Circuit(kind, elements, detectors, ports, settings=settings)

    fbs = FBS("ch1", "ch4", "5", "6", ratio=settings.fbs_ratio, convention=settings.bs_convention)
    heralds = (
        DetectorSlot("D2", "ch2", fpc_axis=t2),
        DetectorSlot("D3", "ch3", fpc_axis=t3),
    )

    if kind is SetupKind.HOM_TELEPORT:
        elements = _polarizers((t1, t2, t3, t4), CHANNELS) + [Delay("ch4", settings.tau_ps), fbs]
        # both interfering photons are fixed by polarizers -> the controllers align them
        aligned = t1 is not None and t4 is not None and (t1 - t4) % 180 == 0
        axis = t1 if aligned else None
        detectors = (DetectorSlot("D5", "5", fpc_axis=axis), DetectorSlot("D6", "6", fpc_axis=axis)) + heralds
        return Circuit(
            kind, tuple(elements), detectors, CHANNELS, "ch4", settings.tau_ps, settings
        )

    if t1 is not None or t4 is not None:
        raise ValidationError("swap setup runs with polarizers 1 and 4 removed")
    elements = _polarizers((None, t2, t3, None), CHANNELS) + [
        HWP("ch4", 45.0),
        Delay("ch4", settings.tau_ps),
        fbs,
        FPBS("5", "6", "7", "8"),
    ]
    detectors = (
        DetectorSlot("D7", "7", polarization_free=True),
        DetectorSlot("D8", "8", polarization_free=True),
    ) + heralds
    return Circuit(kind, tuple(elements), detectors, CHANNELS, "ch4", settings.tau_ps, settings)


# -- Fock-space action (trajectory route) ---------------------------------------


def _relabel(state: SparseState, mapping: dict[int, int]) -> SparseState:
    out = {}
    for pattern, amp in state.amplitudes.items():
        new = tuple(sorted(mapping.get(i, i) for i in pattern))
        out[new] = out.get(new, 0) + amp
    return SparseState(state.registry, out)


def _port_modes(reg: ModeRegistry, port: str, pol: str):
    """Indices of (port, pol, label) for every registered label."""
    return {m.label: i for i, m in enumerate(reg) if m.port == port and m.pol == pol}


def _require(reg: ModeRegistry, ports):
    known = reg.ports()
    for p in ports:
        if p not in known:
            raise ConfigurationError(f"port {p!r} is not bound in the mode registry")


def _apply_polarization_matrix(state, port, u):
    reg = state.registry
    hs, vs = _port_modes(reg, port, "H"), _port_modes(reg, port, "V")
    for label, ih in hs.items():
        state = apply_linear_two_mode(state, ih, vs[label], u)
    return state


def apply_element(state: SparseState, element: Element, rng=None) -> SparseState:
    reg = state.registry
    _require(reg, element_ports(element))

    if isinstance(element, (HWP, QWP)):
        u = jones_of(type(element).__name__, element.theta)
        return _apply_polarization_matrix(state, element.port, u)

    if isinstance(element, Polarizer):
        dump = {i for i, m in enumerate(reg) if m.port == element.dump_port}
        if any(i in dump for pattern in state.amplitudes for i in pattern):
            raise ConfigurationError(f"dump port {element.dump_port!r} is already occupied")
        state = _apply_polarization_matrix(state, element.port, rotation(-element.theta))
        vs = _port_modes(reg, element.port, "V")
        bvs = _port_modes(reg, element.dump_port, "V")
        swap = {}
        for label, iv in vs.items():
            swap[iv] = bvs[label]
            swap[bvs[label]] = iv
        state = _relabel(state, swap)
        return _apply_polarization_matrix(state, element.port, rotation(element.theta))

    if isinstance(element, PBS):
        mapping = {}
        for pol, dest in (("H", element.port_h), ("V", element.port_v)):
            src, dst = _port_modes(reg, element.port_in, pol), _port_modes(reg, dest, pol)
            for label, i in src.items():
                mapping[i] = dst[label]
        return _relabel(state, mapping)

    if isinstance(element, FPBS):
        routes = (
            (element.port_in_a, "H", element.port_h),
            (element.port_in_a, "V", element.port_v),
            (element.port_in_b, "H", element.port_v),
            (element.port_in_b, "V", element.port_h),
        )
        mapping = {}
        for src_port, pol, dest in routes:
            src, dst = _port_modes(reg, src_port, pol), _port_modes(reg, dest, pol)
            for label, i in src.items():
                mapping[i] = dst[label]
        return _relabel(state, mapping)

    if isinstance(element, FBS):
        u = check_unitary(splitter_matrix(element.ratio, element.convention))
        mapping = {}
        for pol in POLARIZATIONS:
            for src, dest in ((element.port_a, element.out_a), (element.port_b, element.out_b)):
                s, d = _port_modes(reg, src, pol), _port_modes(reg, dest, pol)
                for label, i in s.items():
                    mapping[i] = d[label]
        state = _relabel(state, mapping)
        for pol in POLARIZATIONS:
            outs_a, outs_b = _port_modes(reg, element.out_a, pol), _port_modes(reg, element.out_b, pol)
            for label, ia in outs_a.items():
                state = apply_linear_two_mode(state, ia, outs_b[label], u)
        return state

    if isinstance(element, Delay):
        return state

    if isinstance(element, Loss):
        if rng is None:
            raise ValidationError("a Loss element needs an rng")
        for m in list(reg):
            if m.port == element.port:
                state, _ = sample_loss(state, m, element.transmission, rng)
        return state

    raise ValidationError(f"unknown element {element!r}")


def run_circuit(state: SparseState, circuit: Circuit, rng=None) -> SparseState:
    for element in circuit.elements:
        state = apply_element(state, element, rng)
    return state


# -- single-particle transfer matrix (generating-function route) -----------------


def transfer_matrix(circuit: Circuit) -> tuple[np.ndarray, list[tuple[str, str]]]:
    """Single-photon transfer matrix of ``circuit`` for one spectral label.

    Returns ``(U, basis)`` where ``basis`` lists ``(port, pol)`` and
    ``U[out, in]`` is the amplitude for a photon entering ``basis[in]`` to
    leave in ``basis[out]``.  Loss elements are not representable here.
    """
    ports = sorted(circuit.ports())
    basis = [(p, pol) for p in ports for pol in POLARIZATIONS]
    index = {b: i for i, b in enumerate(basis)}
    n = len(basis)
    total = np.eye(n, dtype=complex)

    def local(port, m2):
        step = np.eye(n, dtype=complex)
        ih, iv = index[(port, "H")], index[(port, "V")]
        step[np.ix_([ih, iv], [ih, iv])] = m2
        return step

    def move(pairs):
        # destination modes are empty when a router acts, so their columns are irrelevant
        step = np.eye(n, dtype=complex)
        for s, _ in pairs:
            step[:, index[s]] = 0.0
        for s, d in pairs:
            step[index[d], index[s]] = 1.0
        return step

    dumps = set()
    for e in circuit.elements:
        if isinstance(e, (HWP, QWP)):
            total = local(e.port, jones_of(type(e).__name__, e.theta)) @ total
        elif isinstance(e, Polarizer):
            th = radians(e.theta)
            proj = np.array([[cos(th) ** 2, cos(th) * sin(th)], [cos(th) * sin(th), sin(th) ** 2]])
            step = np.eye(n, dtype=complex)
            p, b = e.port, e.dump_port
            if b in dumps:
                raise ConfigurationError(f"dump port {b!r} is shared by two polarizers")
            dumps.add(b)
            pi = [index[(p, "H")], index[(p, "V")]]
            step[np.ix_(pi, pi)] = proj
            # rejected amplitude lands in the blocked V mode, as in the Fock route
            step[index[(b, "V")], pi] = [-sin(th), cos(th)]
            total = step @ total
        elif isinstance(e, PBS):
            total = move([((e.port_in, "H"), (e.port_h, "H")), ((e.port_in, "V"), (e.port_v, "V"))]) @ total
        elif isinstance(e, FPBS):
            total = move(
                [
                    ((e.port_in_a, "H"), (e.port_h, "H")),
                    ((e.port_in_a, "V"), (e.port_v, "V")),
                    ((e.port_in_b, "H"), (e.port_v, "H")),
                    ((e.port_in_b, "V"), (e.port_h, "V")),
                ]
            ) @ total
        elif isinstance(e, FBS):
            u = splitter_matrix(e.ratio, e.convention)
            step = np.eye(n, dtype=complex)
            for pol in POLARIZATIONS:
                ins = [index[(e.port_a, pol)], index[(e.port_b, pol)]]
                outs = [index[(e.out_a, pol)], index[(e.out_b, pol)]]
                step[:, ins] = 0.0
                step[np.ix_(outs, ins)] = u
            total = step @ total
        elif isinstance(e, Delay):
            continue
        else:
            raise ValidationError(f"{type(e).__name__} has no single-particle matrix")
    return total, basis
