"""Scenario runners: source test, HOM, teleportation, swapping, rates, validation, sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from math import sqrt
from typing import Optional

import numpy as np

from .detection import (
    REP_RATE,
    DetectorParams,
    TallyResult,
    background_subtract,
    dark_prob_from_rate,
    dip_visibility,
    dip_visibility_error,
    fidelity_from_visibility,
    is_entangled,
    visibility,
    visibility_error,
)
from .engine import (
    Bench,
    ExactModel,
    TrajectoryModel,
    all_click_prob,
    enumerate_keys,
    exact_probabilities,
    expected_tallies,
    key_order,
    merge_counts,
    sample_batches,
    sampled_clicks,
    sampled_tallies,
    subset_mask,
)
from .errors import ValidationError
from .fock import ModeKey, SparseState, polarization_density_matrix, tensor
from .optics import SetupKind, SetupSettings, build_setup, run_circuit
from .spdc import SOURCE_ARMS, Pair, SourceParams, apply_filter, coherence_sigma_ps, label_retention, pairs_state

log = logging.getLogger(__name__)

SETUPS = ("source_test", "hom", "teleport", "swap")
ESTIMATORS = ("expected", "sampled")
QUARTER_TURNS = (0.0, 45.0, 90.0, 135.0)
SWEEP_ANGLES = tuple(22.5 * k for k in range(8))
DEFAULT_DELAYS = tuple(float(t) for t in range(-10, 11))
FOURFOLD = (0, 1, 2, 3)
VNET_BAND = (-0.05, 1.01)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs.

    ``thetas`` holds the fixed polarizer angles (``None`` = removed);
    ``fixed_angles`` and ``sweep_angles`` describe fringe scans.  Exactly
    one of ``n_pulses`` (Monte Carlo) and ``n_max`` (enumeration) is set.
    """

    setup: str = "hom"
    sources: tuple = (SourceParams(), SourceParams())
    detectors: tuple = (DetectorParams(),) * 4
    rep_rate: float = REP_RATE
    n_pulses: Optional[int] = 1_000_000
    n_max: Optional[int] = None
    thetas: tuple = (0.0, 90.0, 90.0, 0.0)
    fixed_angles: tuple = QUARTER_TURNS
    sweep_angles: tuple = SWEEP_ANGLES
    angle_pairs: tuple = ((90.0, 90.0), (90.0, 0.0))
    delays: tuple = DEFAULT_DELAYS
    seed: int = 0
    fwhm_nm: float = 1.2
    center_nm: float = 1584.0
    source: str = "I"
    pair_mode: str = "thermal"
    lossless: bool = False
    estimator: str = "expected"
    workers: int = 1
    fbs_ratio: float = 0.5
    bs_convention: str = "hadamard"
    photon_cap: int = 8
    background: bool = True

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValidationError(f"setup must be one of {SETUPS}, got {self.setup!r}")
        if (self.n_pulses is None) == (self.n_max is None):
            raise ValidationError("set exactly one of n_pulses and n_max")
        if self.n_pulses is not None and self.n_pulses <= 0:
            raise ValidationError("n_pulses must be > 0")
        if self.n_max is not None and self.n_max < 0:
            raise ValidationError("n_max must be >= 0")
        if len(self.sources) != 2:
            raise ValidationError("need parameters for both sources")
        if len(self.detectors) != 4:
            raise ValidationError("need parameters for four detectors")
        if self.rep_rate <= 0:
            raise ValidationError("rep_rate must be > 0")
        if len(self.thetas) != 4:
            raise ValidationError("thetas needs four entries")
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"estimator must be one of {ESTIMATORS}")
        if self.pair_mode not in ("thermal", "single"):
            raise ValidationError("pair_mode must be 'thermal' or 'single'")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.setup in ("hom", "teleport") and self.delays:
            d = sorted(self.delays)
            if 0.0 not in d or not np.allclose(d, sorted(-x for x in d)):
                raise ValidationError("delay grid must be symmetric about 0 and contain 0")

    @property
    def sigma_ps(self) -> float:
        return coherence_sigma_ps(self.fwhm_nm, self.center_nm)


@dataclass
class CurveResult:
    """One scanned curve with its extracted figures of merit."""

    setup: str
    abscissa_name: str
    abscissa: list
    points: list  # TallyResult per abscissa value
    fixed: dict = field(default_factory=dict)
    v_raw: float = float("nan")
    v_net: float = float("nan")
    v_raw_err: float = float("nan")
    v_net_err: float = float("nan")
    fidelity: float = float("nan")
    entangled: bool = False
    flagged: bool = False

    def rates(self) -> list[float]:
        return [p.rate() for p in self.points]

    def summary(self) -> dict:
        return {
            "setup": self.setup,
            "fixed": self.fixed,
            "abscissa_name": self.abscissa_name,
            "v_raw": self.v_raw,
            "v_raw_err": self.v_raw_err,
            "v_net": self.v_net,
            "v_net_err": self.v_net_err,
            "fidelity": self.fidelity,
            "entangled": self.entangled,
            "flagged": self.flagged,
            "peak_rate_cps": max(self.rates()) if self.points else 0.0,
        }


# -- bench assembly -------------------------------------------------------------


LOSSLESS = DetectorParams(eta_max=1.0, eta_min=1.0, dark_prob=0.0, dead_time_pulses=0)


def _kind(setup: str) -> SetupKind:
    return {
        "source_test": SetupKind.SOURCE_TEST,
        "hom": SetupKind.HOM_TELEPORT,
        "teleport": SetupKind.HOM_TELEPORT,
        "swap": SetupKind.SWAP,
    }[setup]


def _align(det: DetectorParams, slot) -> DetectorParams:
    if slot.polarization_free:
        return replace(det, eta_min=det.eta_max, axis=0.0)
    if slot.fpc_axis is not None:
        return replace(det, axis=float(slot.fpc_axis))
    return replace(det, axis=0.0)


def make_bench(config: ExperimentConfig, thetas, tau_ps: float = 0.0, blocked: tuple = ()) -> Bench:
    """Bench for one setting; ``blocked`` lists arms whose transmission is forced to 0."""
    settings = SetupSettings(
        thetas=tuple(thetas),
        tau_ps=tau_ps,
        source=config.source,
        fbs_ratio=config.fbs_ratio,
        bs_convention=config.bs_convention,
    )
    circuit = build_setup(_kind(config.setup), settings)
    names = (config.source,) if config.setup == "source_test" else ("I", "II")
    sources = []
    trans = {}
    for name in names:
        params = config.sources[0 if name == "I" else 1]
        params = apply_filter(params, SOURCE_ARMS[name])
        for arm, t in zip(SOURCE_ARMS[name], params.transmission):
            trans[arm] = 1.0 if config.lossless else t
        sources.append((name, params))
    for arm in blocked:
        trans[arm] = 0.0
    if config.lossless:
        dets = tuple(LOSSLESS for _ in circuit.detectors)
    else:
        dets = tuple(_align(d, slot) for d, slot in zip(config.detectors, circuit.detectors))
    retention = label_retention(tau_ps, config.sigma_ps) if circuit.delay_port else 1.0
    return Bench(
        circuit,
        tuple(sources),
        dets,
        trans,
        retention=retention,
        pair_mode=config.pair_mode,
        photon_cap=config.photon_cap,
        max_pairs_per_source=config.n_max if config.n_max is not None else None,
    )


class Runner:
    """Evaluates tallies for many settings, sharing emission samples where possible."""

    def __init__(self, config: ExperimentConfig, n_pulses: Optional[int] = None):
        self.config = config
        self.n_pulses = n_pulses or config.n_pulses
        self._batches: dict = {}

    def batches(self, bench: Bench):
        sig = bench.emission_signature()
        hit = self._batches.get(sig)
        if hit is None:
            hit = self._batches[sig] = sample_batches(bench, self.n_pulses, self.config.seed, self.config.workers)
        return hit

    def tally(self, bench: Bench, subsets, setting: dict) -> dict:
        """``{subset: TallyResult}`` for one bench."""
        cfg = self.config
        batches = self.batches(bench)
        out = {}
        if cfg.estimator == "expected":
            model = ExactModel(bench)
            est = expected_tallies(model, merge_counts(batches), self.n_pulses, subsets)
            for s, (mean, se) in est.items():
                out[s] = TallyResult(dict(setting), mean, self.n_pulses, cfg.rep_rate, raw_se=se)
        else:
            clicks = sampled_clicks(bench, batches, cfg.seed)
            counts = sampled_tallies(bench, clicks, subsets, dead_time=True)
            for s, c in counts.items():
                out[s] = TallyResult(dict(setting), c, self.n_pulses, cfg.rep_rate)
            out["_clicks"] = clicks
        return out

    def point(self, thetas, tau_ps: float, subset, setting: dict, background_arms=()) -> TallyResult:
        raw = self.tally(make_bench(self.config, thetas, tau_ps), [subset], setting)[tuple(subset)]
        if not (self.config.background and background_arms):
            return raw
        b1, b2 = (
            self.tally(make_bench(self.config, thetas, tau_ps, (arm,)), [subset], setting)[tuple(subset)]
            for arm in background_arms
        )
        return background_subtract(raw, b1, b2)


# -- figure-of-merit extraction ------------------------------------------------


def _fringe_metrics(curve: CurveResult):
    raw = np.array([p.raw for p in curve.points])
    net = np.array([p.net for p in curve.points])
    i_max, i_min = int(np.argmax(raw)), int(np.argmin(raw))
    pmax, pmin = curve.points[i_max], curve.points[i_min]
    curve.v_raw = visibility(raw[i_max], raw[i_min])
    curve.v_raw_err = visibility_error(raw[i_max], raw[i_min], pmax.raw_sim_error, pmin.raw_sim_error)
    j_max, j_min = int(np.argmax(net)), int(np.argmin(net))
    if net[j_max] > 0 and net[j_max] + net[j_min] > 0:
        curve.v_net = visibility(net[j_max], net[j_min])
        curve.v_net_err = visibility_error(
            net[j_max], net[j_min], curve.points[j_max].net_sim_error, curve.points[j_min].net_sim_error
        )
    else:
        # background exceeds the fringe: no meaningful net visibility
        curve.flagged = True
        log.warning("net counts of curve %s are not positive", curve.fixed)
    _finish(curve)


def _dip_metrics(curve: CurveResult):
    taus = np.array(curve.abscissa, dtype=float)
    i0 = int(np.flatnonzero(taus == 0.0)[0])
    outer = [int(np.argmin(taus)), int(np.argmax(taus))]

    def extract(values, errors):
        plateau = float(np.mean([values[i] for i in outer]))
        s_plateau = sqrt(sum(errors[i] ** 2 for i in outer)) / len(outer)
        if plateau <= 0:
            return float("nan"), float("nan")
        v = dip_visibility(plateau, values[i0])
        return v, dip_visibility_error(plateau, values[i0], s_plateau, errors[i0])

    curve.v_raw, curve.v_raw_err = extract([p.raw for p in curve.points], [p.raw_sim_error for p in curve.points])
    curve.v_net, curve.v_net_err = extract([p.net for p in curve.points], [p.net_sim_error for p in curve.points])
    _finish(curve)


def _finish(curve: CurveResult):
    v = curve.v_net
    if np.isnan(v):
        return
    lo, hi = VNET_BAND
    curve.flagged = not lo <= v <= hi
    if curve.flagged:
        log.warning("net visibility %.4f outside the noise band %s", v, VNET_BAND)
    clipped = min(max(v, 0.0), 1.0)
    curve.fidelity = fidelity_from_visibility(clipped)
    curve.entangled = is_entangled(clipped)


# -- scenarios -------------------------------------------------------------------


def _require(config: ExperimentConfig, setup: str) -> ExperimentConfig:
    if config.setup != setup:
        raise ValidationError(f"config is for {config.setup!r}, expected {setup!r}")
    if config.n_pulses is None:
        raise ValidationError("Monte Carlo runs need n_pulses")
    return config


def run_source_test(config: ExperimentConfig, runner: Optional[Runner] = None) -> list[CurveResult]:
    """Two-fold fringes: one curve per fixed angle, sweeping the partner polarizer.

    Net counts subtract the accidental coincidences expected from the two
    singles rates.
    """
    _require(config, "source_test")
    runner = runner or Runner(config)
    fixed_idx, sweep_idx = (0, 1) if config.source == "I" else (3, 2)
    curves = []
    for fixed in config.fixed_angles:
        points = []
        for ang in config.sweep_angles:
            thetas = [None] * 4
            thetas[fixed_idx], thetas[sweep_idx] = fixed, ang
            setting = {f"theta{fixed_idx + 1}": fixed, f"theta{sweep_idx + 1}": ang}
            res = runner.tally(make_bench(config, thetas), [(0, 1), (0,), (1,)], setting)
            coinc = res[(0, 1)]
            if config.background:
                acc = res[(0,)].raw * res[(1,)].raw / runner.n_pulses
                coinc = replace(coinc, b1=acc, b1_se=0.0 if coinc.raw_se is not None else None)
            coinc.extra.update(singles=[res[(0,)].raw, res[(1,)].raw])
            points.append(coinc)
        curve = CurveResult(
            "source_test", f"theta{sweep_idx + 1}", list(config.sweep_angles), points, {f"theta{fixed_idx + 1}": fixed}
        )
        _fringe_metrics(curve)
        curves.append(curve)
    return curves


def _delay_curve(config, runner, thetas, setup, fixed) -> CurveResult:
    points = []
    for tau in config.delays:
        setting = dict(fixed, tau_ps=tau)
        points.append(runner.point(thetas, tau, FOURFOLD, setting, ("ch1", "ch4")))
    curve = CurveResult(setup, "tau_ps", list(config.delays), points, fixed)
    _dip_metrics(curve)
    return curve


def run_hom(config: ExperimentConfig, runner: Optional[Runner] = None) -> CurveResult:
    """Four-fold HOM dip versus delay with blocked-arm background subtraction."""
    _require(config, "hom")
    if any(t is None for t in config.thetas):
        raise ValidationError("HOM runs with all four polarizers present")
    runner = runner or Runner(config)
    fixed = {f"theta{i + 1}": t for i, t in enumerate(config.thetas)}
    return _delay_curve(config, runner, config.thetas, "hom", fixed)


def run_teleportation(
    config: ExperimentConfig, theta2: float, theta3: float, runner: Optional[Runner] = None
) -> CurveResult:
    """Four-fold counts versus delay for one pair of analyzer angles."""
    _require(config, "teleport")
    runner = runner or Runner(config)
    thetas = (None, theta2, theta3, None)
    return _delay_curve(config, runner, thetas, "teleport", {"theta2": theta2, "theta3": theta3})


def run_swapping(
    config: ExperimentConfig, theta2s=None, runner: Optional[Runner] = None
) -> list[CurveResult]:
    """Four-fold fringes sweeping theta3, one curve per theta2."""
    _require(config, "swap")
    runner = runner or Runner(config)
    curves = []
    for t2 in theta2s if theta2s is not None else config.fixed_angles:
        points = []
        for t3 in config.sweep_angles:
            points.append(
                runner.point((None, t2, t3, None), 0.0, FOURFOLD, {"theta2": t2, "theta3": t3}, ("ch1", "ch4"))
            )
        curve = CurveResult("swap", "theta3", list(config.sweep_angles), points, {"theta2": t2})
        _fringe_metrics(curve)
        curves.append(curve)
    return curves


def minimal_fidelity(curves) -> dict:
    """Smallest net visibility over curves, with its fidelity and the entanglement flag."""
    vs = [c.v_net for c in curves if not np.isnan(c.v_net)]
    if not vs:
        return {"v_min": float("nan"), "fidelity": float("nan"), "entangled": False}
    v = min(max(min(vs), 0.0), 1.0)
    return {"v_min": min(vs), "fidelity": fidelity_from_visibility(v), "entangled": is_entangled(v)}


def dead_time_factor(p_click: float, dead: int) -> float:
    """Counted fraction of clicks for a non-extending dead time of ``dead`` pulses."""
    return 1.0 / (1.0 + dead * p_click)


def run_rates(config: ExperimentConfig, runner: Optional[Runner] = None) -> dict:
    """Singles, two-fold and four-fold rates (cps) with polarizers removed.

    Sampled runs apply dead time pulse by pulse; conditional-expectation
    runs apply the renewal factor ``1 / (1 + d p)`` per detector.
    """
    if config.n_pulses is None:
        raise ValidationError("rate runs need n_pulses")
    runner = runner or Runner(config)
    report = {"setup": config.setup, "rep_rate": config.rep_rate, "n_pulses": runner.n_pulses}
    if config.setup == "source_test":
        subsets = [(0,), (1,), (0, 1)]
    else:
        subsets = [(0,), (1,), (2,), (3,), (2, 3), (0, 1), FOURFOLD]
    thetas = (None,) * 4
    bench = make_bench(config, thetas)
    res = runner.tally(bench, subsets, {})
    n = runner.n_pulses
    factors = []
    for d in range(bench.n_detectors):
        p = res[(d,)].raw / n
        dead = bench.detectors[d].dead_time_pulses
        factors.append(1.0 if config.estimator == "sampled" else dead_time_factor(p, dead))
    names = [slot.name for slot in bench.circuit.detectors]
    rates = {}
    for s in subsets:
        scale = float(np.prod([factors[d] for d in s]))
        key = "&".join(names[d] for d in s)
        rates[key] = res[s].rate() * scale
        rates[key + "_err"] = res[s].rate(res[s].raw_sim_error) * scale
    report["rates_cps"] = rates
    report["singles_cps"] = {names[d]: rates[names[d]] for d in range(bench.n_detectors)}
    if config.setup == "source_test":
        report["twofold_cps"] = rates["&".join(names[:2])]
    else:
        report["twofold_cps"] = rates["&".join(names[2:4])]
        report["fourfold_cps"] = rates["&".join(names)]
    report["per_pulse"] = {k: v / config.rep_rate for k, v in rates.items() if not k.endswith("_err")}
    return report


def with_extra_loss(config: ExperimentConfig, loss_db: float) -> ExperimentConfig:
    """Symmetric extra channel loss on every arm."""
    t = 10 ** (-loss_db / 10)
    srcs = tuple(replace(s, transmission=tuple(x * t for x in s.transmission)) for s in config.sources)
    return replace(config, sources=srcs)


# -- prepared-qubit and single-pair algebra ----------------------------------------


def teleport_prepared_qubit(alpha: complex, beta: complex, fbs_convention: str = "hadamard") -> dict:
    """Teleport ``alpha|H> + beta|V>`` from ch1 using a singlet on ch3/ch4.

    Lossless and single-pair.  The output state on ch3 is taken conditional
    on one photon at each splitter output.
    """
    norm = sqrt(abs(alpha) ** 2 + abs(beta) ** 2)
    if norm == 0:
        raise ValidationError("qubit amplitudes must not both vanish")
    alpha, beta = alpha / norm, beta / norm
    circuit = build_setup(SetupKind.HOM_TELEPORT, SetupSettings(thetas=(None,) * 4, bs_convention=fbs_convention))
    reg = circuit.registry_for([0])
    qubit = SparseState.superpose(
        reg, [(alpha, [ModeKey("ch1", "H", 0)]), (beta, [ModeKey("ch1", "V", 0)])]
    )
    pair = pairs_state([Pair("ch3", "ch4", 0, 0, "psi-")], reg)
    out = run_circuit(tensor(qubit, pair), circuit)
    i5 = {reg.index(ModeKey("5", p, 0)) for p in "HV"}
    i6 = {reg.index(ModeKey("6", p, 0)) for p in "HV"}

    def bsm(pattern):
        return sum(i in i5 for i in pattern) == 1 and sum(i in i6 for i in pattern) == 1

    p_success = sum(abs(a) ** 2 for pat, a in out.amplitudes.items() if bsm(pat))
    rho = polarization_density_matrix(out, [(ModeKey("ch3", "H", 0), ModeKey("ch3", "V", 0))], bsm)
    psi_in = np.array([alpha, beta])
    fid = float(np.real(psi_in.conj() @ rho @ psi_in))
    return {"rho": rho, "fidelity": fid, "p_success": p_success}


def swap_conditional_state(fbs_convention: str = "hadamard") -> dict:
    """Ideal single-pair swap: ch2/ch3 state conditional on one photon at each of ports 7 and 8."""
    circuit = build_setup(SetupKind.SWAP, SetupSettings(thetas=(None,) * 4, bs_convention=fbs_convention))
    reg = circuit.registry_for([0])
    psi = pairs_state([Pair("ch1", "ch2", 0, 0, "psi-"), Pair("ch3", "ch4", 0, 0, "psi-")], reg)
    out = run_circuit(psi, circuit)
    i7 = {reg.index(ModeKey("7", p, 0)) for p in "HV"}
    i8 = {reg.index(ModeKey("8", p, 0)) for p in "HV"}

    def bsm(pattern):
        return sum(i in i7 for i in pattern) == 1 and sum(i in i8 for i in pattern) == 1

    p_success = sum(abs(a) ** 2 for pat, a in out.amplitudes.items() if bsm(pat))
    qubits = [(ModeKey(c, "H", 0), ModeKey(c, "V", 0)) for c in ("ch2", "ch3")]
    rho = polarization_density_matrix(out, qubits, bsm)
    phi_plus = np.array([1, 0, 0, 1]) / sqrt(2)
    return {"rho": rho, "overlap": float(np.real(phi_plus @ rho @ phi_plus)), "p_success": p_success}


def single_pair_probability(config: ExperimentConfig, thetas, subset, tau_ps: float = 0.0) -> float:
    """Exact click probability with one pair per source (lossless when ``config.lossless``)."""
    cfg = replace(config, pair_mode="single", n_pulses=None, n_max=1)
    bench = make_bench(cfg, thetas, tau_ps)
    bench = replace(bench, max_pairs_per_source=None)
    model = ExactModel(bench)
    return exact_probabilities(model, enumerate_keys(bench, None), [subset])[tuple(subset)]


# -- validation ---------------------------------------------------------------------


@dataclass
class Comparison:
    name: str
    exact: float  # expected count
    estimate: float
    se: float

    @property
    def z(self) -> float:
        if self.se == 0.0:
            return 0.0 if abs(self.estimate - self.exact) <= 1e-9 * max(1.0, abs(self.exact)) else float("inf")
        return abs(self.estimate - self.exact) / self.se

    def row(self) -> dict:
        return {"observable": self.name, "exact": self.exact, "estimate": self.estimate, "se": self.se, "z": self.z}


def _validation_points(config: ExperimentConfig):
    """Representative settings: dip and plateau, or fringe maximum and minimum."""
    if config.setup == "hom":
        far = max(config.delays) if config.delays else 10.0
        return [("dip", config.thetas, 0.0), ("plateau", config.thetas, far)]
    if config.setup == "teleport":
        t2, t3 = config.thetas[1], config.thetas[2]
        far = max(config.delays) if config.delays else 10.0
        return [("dip", (None, t2, t3, None), 0.0), ("plateau", (None, t2, t3, None), far)]
    if config.setup == "swap":
        t2 = config.thetas[1] if config.thetas[1] is not None else 0.0
        return [("max", (None, t2, t2, None), 0.0), ("min", (None, t2, t2 + 90.0, None), 0.0)]
    t1 = config.thetas[0] if config.thetas[0] is not None else 0.0
    return [("max", (t1, t1 + 90.0, None, None), 0.0), ("min", (t1, t1, None, None), 0.0)]


def validate(config: ExperimentConfig, n_pulses: int = 1_000_000, key_trajectories: int = 20_000) -> dict:
    """Compare Monte Carlo estimates against exact enumeration at pair truncation ``config.n_max``.

    Three families of comparisons are reported:
    ``expected`` (conditional-expectation estimator vs enumeration),
    ``sampled`` (pulse-by-pulse trajectory counts vs enumeration) and
    ``conditional`` (trajectory click frequencies for the most likely
    emission keys vs their exact conditional probabilities).
    Standard errors come from the exact key distribution, so the z-scores
    stay honest when rare emission keys are missing from a short run.
    Dead time is disabled so that both sides describe the same per-pulse physics.
    """
    if config.n_max is None:
        raise ValidationError("validate needs n_max")
    cfg = replace(config, detectors=tuple(replace(d, dead_time_pulses=0) for d in config.detectors))
    subsets = [FOURFOLD, (2, 3)] if cfg.setup != "source_test" else [(0, 1)]
    rows = []
    for name, thetas, tau in _validation_points(cfg):
        bench = make_bench(cfg, thetas, tau)
        model = ExactModel(bench)
        key_probs = enumerate_keys(bench, cfg.n_max)
        exact = exact_probabilities(model, key_probs, subsets)
        spread = _exact_spread(model, key_probs, subsets)
        batches = sample_batches(bench, n_pulses, cfg.seed, cfg.workers)
        est = expected_tallies(model, merge_counts(batches), n_pulses, subsets)
        clicks = sampled_clicks(bench, batches, cfg.seed)
        counts = sampled_tallies(bench, clicks, subsets, dead_time=False)
        for s in subsets:
            tag = "&".join(str(x) for x in s)
            p = exact[s]
            rows.append(Comparison(f"{name}/expected/{tag}", p * n_pulses, est[s][0], sqrt(n_pulses) * spread[s]))
            rows.append(
                Comparison(f"{name}/sampled/{tag}", p * n_pulses, counts[s], sqrt(n_pulses * p * (1 - p)))
            )
        rows.extend(_conditional_checks(bench, key_probs, subsets, name, key_trajectories, cfg.seed))
    zs = [r.z for r in rows]
    return {
        "setup": cfg.setup,
        "n_max": cfg.n_max,
        "n_pulses": n_pulses,
        "rows": [r.row() for r in rows],
        "max_z": max(zs) if zs else 0.0,
        "passed": all(z < 3.0 for z in zs),
    }


def _exact_spread(model: ExactModel, key_probs: dict, subsets) -> dict:
    """Per-pulse standard deviation of the conditional-expectation estimator under the exact key law."""
    out = {}
    qs = [(p, model.no_click(k)) for k, p in sorted(key_probs.items(), key=lambda kv: key_order(kv[0]))]
    for subset in subsets:
        mask = subset_mask(subset)
        f = np.array([all_click_prob(q, mask) for _, q in qs])
        w = np.array([p for p, _ in qs])
        mean = float(w @ f)
        out[tuple(subset)] = sqrt(max(float(w @ (f * f)) - mean * mean, 0.0))
    return out


def _conditional_checks(bench, key_probs, subsets, name, trials, seed, top: int = 2):
    """Trajectory vs exact click probabilities for the most relevant emission keys.

    The four-fold check runs on a lossless copy of the bench, where the
    conditional probabilities are large enough to be resolved; the lossy
    bench is checked on its most frequent observable.
    """
    ideal = replace(
        bench,
        transmissions={p: 1.0 for p in bench.transmissions},
        detectors=tuple(LOSSLESS for _ in bench.detectors),
    )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    rows = []
    for tag, variant, subset in (("lossless", ideal, subsets[0]), ("lossy", bench, subsets[-1])):
        model = ExactModel(variant)
        traj = TrajectoryModel(variant)
        mask = subset_mask(subset)
        ranked = sorted(
            ((p * all_click_prob(model.no_click(k), mask), k) for k, p in key_probs.items() if k),
            key=lambda x: (-x[0], key_order(x[1])),
        )
        for rank, (_, key) in enumerate(ranked[:top]):
            p = all_click_prob(model.no_click(key), mask)
            hits = traj.photon_clicks(key, np.arange(trials, dtype=np.int64), rng)
            clicked = np.ones(trials, dtype=bool)
            for d in subset:
                c = rng.random(trials) < traj.bindings[d].params.dark_prob
                c[hits[d]] = True
                clicked &= c
            rows.append(
                Comparison(
                    f"{name}/conditional-{tag}/key{rank}",
                    p * trials,
                    float(clicked.sum()),
                    sqrt(trials * p * (1 - p)),
                )
            )
    return rows


# -- sweeps ------------------------------------------------------------------------------


def _headline_visibility(config: ExperimentConfig, runner: Runner) -> dict:
    if config.setup == "hom":
        c = run_hom(config, runner)
        return {"v_raw": c.v_raw, "v_raw_err": c.v_raw_err, "v_net": c.v_net, "v_net_err": c.v_net_err}
    if config.setup == "swap":
        curves = run_swapping(config, runner=runner)
        return {
            "v_raw": [c.v_raw for c in curves],
            "v_raw_err": [c.v_raw_err for c in curves],
            "v_net": [c.v_net for c in curves],
            "v_net_err": [c.v_net_err for c in curves],
        }
    if config.setup == "teleport":
        c = run_teleportation(config, config.thetas[1], config.thetas[2], runner)
        return {"v_raw": c.v_raw, "v_raw_err": c.v_raw_err, "v_net": c.v_net, "v_net_err": c.v_net_err}
    curves = run_source_test(config, runner)
    return {"v_raw": [c.v_raw for c in curves], "v_net": [c.v_net for c in curves]}


def sweep_mu(config: ExperimentConfig, mus) -> list[dict]:
    """Visibilities as both sources' mean pair number varies (ratio between sources kept)."""
    base = config.sources[0].mu or 1.0
    out = []
    for mu in mus:
        scale = mu / base
        srcs = tuple(replace(s, mu=s.mu * scale) for s in config.sources)
        cfg = replace(config, sources=srcs)
        out.append({"mu": mu, **_headline_visibility(cfg, Runner(cfg))})
    return out


def sweep_rep_rate(config: ExperimentConfig, rep_rates) -> list[dict]:
    """Visibilities at a fixed pair rate: mu scales as 1 / rep_rate, dark counts per pulse likewise."""
    base_rep = config.rep_rate
    out = []
    for rep in rep_rates:
        scale = base_rep / rep
        srcs = tuple(replace(s, mu=s.mu * scale) for s in config.sources)
        dets = tuple(
            replace(d, dark_prob=dark_prob_from_rate(d.dark_prob * base_rep, rep)) for d in config.detectors
        )
        cfg = replace(config, sources=srcs, detectors=dets, rep_rate=rep)
        out.append({"rep_rate": rep, "mu": srcs[0].mu, **_headline_visibility(cfg, Runner(cfg))})
    return out
