from math import cos, radians, sin, sqrt

import numpy as np
import pytest

from entswap.errors import ConfigurationError, ValidationError
from entswap.fock import ModeKey, ModeRegistry, SparseState, measurement_distribution, polarization_density_matrix
from entswap.optics import (
    FBS,
    HWP,
    PBS,
    QWP,
    Delay,
    Polarizer,
    SetupKind,
    SetupSettings,
    apply_element,
    build_setup,
    jones_of,
    run_circuit,
    splitter_matrix,
    transfer_matrix,
)
from entswap.spdc import Pair, pairs_state


def detected(dist, registry, ports):
    """Marginal distribution over photons in the given ports."""
    out = {}
    for pattern, p in dist.items():
        key = tuple(i for i in pattern if registry[i].port in ports)
        out[key] = out.get(key, 0.0) + p
    return out


def one_photon(port, pol, extra_ports=()):
    reg = ModeRegistry(ModeKey(p, q, 0) for p in (port,) + tuple(extra_ports) for q in "HV")
    return SparseState.from_modes(reg, [ModeKey(port, pol, 0)])


class TestJones:
    def test_hwp_zero(self):
        assert np.allclose(jones_of("HWP", 0), [[1, 0], [0, -1]])

    def test_hwp_45_flips(self):
        assert np.allclose(jones_of("HWP", 45), [[0, 1], [1, 0]])

    def test_qwp_twice_is_hwp(self):
        q = jones_of("QWP", 0)
        prod = q @ q
        phase = prod[0, 0] / jones_of("HWP", 0)[0, 0]
        assert np.allclose(prod, phase * jones_of("HWP", 0))
        assert abs(abs(phase) - 1) < 1e-12

    def test_modulo_180(self):
        assert np.allclose(jones_of("QWP", 200), jones_of("QWP", 20))

    @pytest.mark.parametrize("kind", ["HWP", "QWP"])
    @pytest.mark.parametrize("theta", [0, 17, 45, 90, 133])
    def test_unitary(self, kind, theta):
        u = jones_of(kind, theta)
        assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-12)

    def test_other_kind(self):
        with pytest.raises(ValidationError):
            jones_of("PBS", 0)

    def test_splitter_ratio(self):
        with pytest.raises(ValidationError):
            splitter_matrix(1.2)


class TestApplyElement:
    def test_pbs_routes_h(self):
        s = one_photon("in", "H", ("t", "r"))
        out = apply_element(s, PBS("in", "t", "r"))
        assert [out.registry[i] for p in out.amplitudes for i in p] == [ModeKey("t", "H", 0)]

    def test_polarizer_blocks_v(self):
        s = one_photon("x", "V", ("blocked_x",))
        out = apply_element(s, Polarizer("x", 0))
        dist = measurement_distribution(out)
        assert detected(dist, out.registry, {"x"}) == pytest.approx({(): 1.0})

    def test_polarizer_passes_projection(self):
        s = one_photon("x", "H", ("blocked_x",))
        out = apply_element(s, Polarizer("x", 30))
        dist = detected(measurement_distribution(out), out.registry, {"x"})
        assert 1 - dist.get((), 0.0) == pytest.approx(cos(radians(30)) ** 2)

    def test_hom_zero_coincidence(self):
        reg = ModeRegistry(ModeKey(p, q, 0) for p in ("ch1", "ch4", "5", "6") for q in "HV")
        s = SparseState.from_modes(reg, [ModeKey("ch1", "H", 0), ModeKey("ch4", "H", 0)])
        out = apply_element(s, FBS("ch1", "ch4", "5", "6"))
        i5, i6 = reg.index(ModeKey("5", "H", 0)), reg.index(ModeKey("6", "H", 0))
        assert abs(out.amplitudes.get((i5, i6), 0.0)) < 1e-12

    def test_occupied_dump_rejected(self):
        s = apply_element(one_photon("x", "V", ("blocked_x",)), Polarizer("x", 0))
        with pytest.raises(ConfigurationError):
            apply_element(s, Polarizer("x", 0))

    def test_unbound_port(self):
        with pytest.raises(ConfigurationError):
            apply_element(one_photon("x", "H"), HWP("nowhere", 0))

    def test_delay_is_identity(self):
        s = one_photon("x", "H")
        assert apply_element(s, Delay("x", 5.0)).amplitudes == s.amplitudes

    def test_polarizer_idempotent(self):
        rng = np.random.default_rng(2)
        for theta in rng.uniform(0, 180, 5):
            for pol in "HV":
                s = apply_element(one_photon("x", pol, ("blocked_x", "dump2")), QWP("x", 22.0))
                once = apply_element(s, Polarizer("x", theta))
                twice = apply_element(once, Polarizer("x", theta, dump="dump2"))
                d1 = detected(measurement_distribution(once), s.registry, {"x"})
                d2 = detected(measurement_distribution(twice), s.registry, {"x"})
                for k in set(d1) | set(d2):
                    assert d1.get(k, 0.0) == pytest.approx(d2.get(k, 0.0), abs=1e-12)


class TestBuildSetup:
    def test_source_test_two_detectors(self):
        c = build_setup(SetupKind.SOURCE_TEST, SetupSettings(thetas=(0, 45, None, None)))
        assert len(c.detectors) == 2

    def test_swap_rejects_theta1(self):
        with pytest.raises(ValidationError):
            build_setup(SetupKind.SWAP, SetupSettings(thetas=(0, None, None, None)))

    def test_swap_detectors(self):
        c = build_setup(SetupKind.SWAP, SetupSettings(thetas=(None, 0, 0, None)))
        assert c.detector_ports == ("7", "8", "ch2", "ch3")
        assert any(isinstance(e, HWP) and e.port == "ch4" and e.theta == 45 for e in c.elements)

    def test_hom_no_dip_configuration(self):
        c = build_setup(SetupKind.HOM_TELEPORT, SetupSettings(thetas=(None, 90, 0, None)))
        assert c.detector_ports == ("5", "6", "ch2", "ch3")
        assert [e.theta for e in c.elements if isinstance(e, Polarizer)] == [90, 0]


def _ideal_source_test(t1, t2):
    c = build_setup(SetupKind.SOURCE_TEST, SetupSettings(thetas=(t1, t2, None, None)))
    reg = c.registry_for([0])
    out = run_circuit(pairs_state([Pair("ch1", "ch2", 0, 0)], reg), c)
    dist = measurement_distribution(out)
    return sum(p for pat, p in dist.items() if {reg[i].port for i in pat} == {"ch1", "ch2"})


def test_singlet_anticorrelation():
    rng = np.random.default_rng(4)
    for t1, t2 in rng.uniform(0, 180, size=(20, 2)):
        assert _ideal_source_test(t1, t2) == pytest.approx(0.5 * sin(radians(t1 - t2)) ** 2, abs=1e-9)


@pytest.mark.parametrize("bell,expected", [("psi-", 1.0), ("psi+", 0.0), ("phi+", 0.0), ("phi-", 0.0)])
def test_bsm_selectivity(bell, expected):
    """Only the singlet leaves one photon in each splitter output."""
    c = build_setup(SetupKind.HOM_TELEPORT, SetupSettings(thetas=(None,) * 4))
    reg = c.registry_for([0])
    out = run_circuit(pairs_state([Pair("ch1", "ch4", 0, 0, bell)], reg), c)
    dist = measurement_distribution(out)
    both = sum(p for pat, p in dist.items() if sorted(reg[i].port for i in pat) == ["5", "6"])
    assert both == pytest.approx(expected, abs=1e-9)
    if bell == "psi-":
        h5v6 = tuple(sorted((reg.index(ModeKey("5", "H", 0)), reg.index(ModeKey("6", "V", 0)))))
        assert dist[h5v6] == pytest.approx(0.5, abs=1e-9)


def test_swap_analyzer_selectivity():
    """Only one Bell component of ch1/ch4 reaches ports 7 and 8 together."""
    c = build_setup(SetupKind.SWAP, SetupSettings(thetas=(None,) * 4))
    reg = c.registry_for([0])
    probs = {}
    for bell in ("psi-", "psi+", "phi+", "phi-"):
        out = run_circuit(pairs_state([Pair("ch1", "ch4", 0, 0, bell)], reg), c)
        dist = measurement_distribution(out)
        probs[bell] = sum(p for pat, p in dist.items() if sorted(reg[i].port for i in pat) == ["7", "8"])
    # the ch4 flip turns phi+ into psi+, which the splitter pair sends to 7 and 8
    assert probs["phi+"] == pytest.approx(1.0, abs=1e-9)
    assert [probs[b] for b in ("psi-", "psi+", "phi-")] == pytest.approx([0, 0, 0], abs=1e-9)

    psi = pairs_state([Pair("ch1", "ch2", 0, 0), Pair("ch3", "ch4", 0, 0)], reg)
    out = run_circuit(psi, c)
    i7 = {reg.index(ModeKey("7", p, 0)) for p in "HV"}
    i8 = {reg.index(ModeKey("8", p, 0)) for p in "HV"}
    cond = lambda pat: sum(i in i7 for i in pat) == 1 and sum(i in i8 for i in pat) == 1  # noqa: E731
    rho = polarization_density_matrix(out, [(ModeKey(ch, "H", 0), ModeKey(ch, "V", 0)) for ch in ("ch2", "ch3")], cond)
    phi_plus = np.array([1, 0, 0, 1]) / sqrt(2)
    assert np.real(phi_plus @ rho @ phi_plus) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("kind,thetas", [
    (SetupKind.HOM_TELEPORT, (10, 80, 35, 120)),
    (SetupKind.SWAP, (None, 30, 60, None)),
    (SetupKind.SOURCE_TEST, (15, 100, None, None)),
])
def test_transfer_matrix_matches_fock_route(kind, thetas):
    """The single-particle matrix reproduces the Fock evolution of every one-photon input."""
    c = build_setup(kind, SetupSettings(thetas=thetas))
    u, basis = transfer_matrix(c)
    reg = c.registry_for([0])
    for port in c.input_ports:
        for pol in "HV":
            out = run_circuit(SparseState.from_modes(reg, [ModeKey(port, pol, 0)]), c)
            col = u[:, basis.index((port, pol))]
            for j, (p, q) in enumerate(basis):
                amp = out.amplitudes.get((reg.index(ModeKey(p, q, 0)),), 0.0)
                assert abs(amp - col[j]) < 1e-12


def test_phase_convention_independent_distributions():
    for kind, thetas in ((SetupKind.HOM_TELEPORT, (None, 45, 135, None)), (SetupKind.SWAP, (None, 45, 45, None))):
        dists = []
        for conv in ("hadamard", "symmetric"):
            c = build_setup(kind, SetupSettings(thetas=thetas, bs_convention=conv))
            reg = c.registry_for([0, 1])
            psi = pairs_state([Pair("ch1", "ch2", 0, 0), Pair("ch3", "ch4", 0, 0), Pair("ch3", "ch4", 1, 1)], reg)
            dists.append(measurement_distribution(run_circuit(psi, c)))
        keys = set(dists[0]) | set(dists[1])
        assert max(abs(dists[0].get(k, 0) - dists[1].get(k, 0)) for k in keys) < 1e-9
