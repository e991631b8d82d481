"""Frame-based simulation of the channelizer under a controller."""

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .controllers import ControllerInput
from .errors import ConfigError
from .model import (
    FAMILY, ActionSpace, Category, Config, CrChainParams, PowerTable, SeqParams,
    StateSpace, TRANS_OF, TransitionTimeTable, build_cr_stm, build_model,
    build_seq_cr_stm, check_weights, normalized_savings, sim_countdown,
)
from .solver import SolverConfig

TRACE_HEADER = ["frame", "cr_hex", "cf1", "cf2", "action", "served", "requested", "power_w"]
TRACE_SCHEMA = "chanmdp-trace/1"


# --- request traffic --------------------------------------------------------------


def gen_iid_requests(params, n_frames, seed):
    """Sample the two-regime request chain, starting from the idle mask."""
    rng = np.random.default_rng(seed)
    stm = build_cr_stm(params)
    cdf = np.cumsum(stm, axis=1)
    cdf[:, -1] = 1.0
    out = np.empty(n_frames, dtype=np.int64)
    state = 0
    u = rng.random(n_frames)
    for k in range(n_frames):
        state = int(np.searchsorted(cdf[state], u[k], side="right"))
        out[k] = state
    return out


def _seq_episodes(params, n_channels, n_frames, rng):
    # yields (channel or None, length) episodes until n_frames are covered
    total = 0
    prev = None
    p_gap = params.mean_gap / (1.0 + params.mean_gap)
    while total < n_frames:
        if prev is None:
            ch = int(rng.integers(n_channels)) if params.channel_selection == "uniform_random" else 0
        elif params.channel_selection == "round_robin":
            ch = (prev + 1) % n_channels
        elif n_channels > 1:
            ch = int(rng.integers(n_channels - 1))
            ch += ch >= prev
        else:
            ch = 0
        dwell = int(rng.geometric(1.0 / params.mean_dwell))
        yield ch, dwell
        total += dwell
        prev = ch
        if params.mean_gap > 0 and rng.random() < p_gap:
            gap = int(rng.geometric(1.0 / (1.0 + params.mean_gap)))
            yield None, gap
            total += gap


def gen_seq_requests(params, n_channels, n_frames, seed, return_episodes=False):
    """Alternating dwell/gap episodes; one channel requested per dwell.

    Dwells are geometric on {1, 2, ...} with mean ``mean_dwell``; gaps are
    geometric on {0, 1, ...} with mean ``mean_gap``.  Consecutive dwells use
    different channels (next index for round-robin).
    """
    rng = np.random.default_rng(seed)
    out = np.zeros(n_frames, dtype=np.int64)
    episodes = []
    k = 0
    for ch, length in _seq_episodes(params, n_channels, n_frames, rng):
        episodes.append((ch, length))
        end = min(k + length, n_frames)
        if ch is not None:
            out[k:end] = 1 << ch
        k = end
    return (out, episodes) if return_episodes else out


# --- scenario ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    use_case: str = "IID"
    iid: CrChainParams = field(default_factory=CrChainParams)
    seq: SeqParams = field(default_factory=SeqParams)
    n_channels: int = 8
    transition_time_frames: float = 1.0
    frame_period: float = 1.0
    n_frames: int = 20000
    seed: int = 1
    weights: tuple = (0.9, 0.1)
    power: PowerTable = field(default_factory=PowerTable)
    solver: SolverConfig = field(default_factory=SolverConfig)
    with_transitions: bool = True
    n_actions: int = None
    label: str = ""

    def __post_init__(self):
        if self.use_case not in ("IID", "SEQ"):
            raise ConfigError(f"use_case must be IID or SEQ, got {self.use_case!r}")
        if int(self.n_frames) < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.transition_time_frames < 0:
            raise ConfigError("transition_time_frames must be >= 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "weights", check_weights(self.weights))
        if self.iid.n_channels != self.n_channels:
            object.__setattr__(self, "iid", replace(self.iid, n_channels=self.n_channels))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"filter", "mharp", "sweep"}
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k in known}
        try:
            if "iid" in kw:
                kw["iid"] = CrChainParams(**kw["iid"])
            if "seq" in kw:
                kw["seq"] = SeqParams(**kw["seq"])
            if "power" in kw:
                kw["power"] = PowerTable(**kw["power"])
            if "solver" in kw:
                kw["solver"] = SolverConfig(**kw["solver"])
            if "weights" in kw:
                kw["weights"] = tuple(kw["weights"])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def cr_stm(self):
        if self.use_case == "IID":
            return build_cr_stm(self.iid)
        return build_seq_cr_stm(self.seq, self.n_channels)

    def requests(self):
        if self.use_case == "IID":
            return gen_iid_requests(self.iid, self.n_frames, self.seed)
        return gen_seq_requests(self.seq, self.n_channels, self.n_frames, self.seed)

    def times(self):
        return TransitionTimeTable.default(self.transition_time_frames)

    def build_model(self, with_transitions=None):
        wt = self.with_transitions if with_transitions is None else with_transitions
        return build_model(self.cr_stm(), self.weights, self.n_channels, wt, self.times(),
                           self.power, self.n_actions, self.frame_period,
                           meta={"scenario": self.to_dict()})


# --- processing-system machine ----------------------------------------------------


class ProcessingMachine:
    """Deterministic configuration state machine driven by actions.

    A cross-family command of duration T >= T_F occupies the destination's
    transition configuration for ceil(T / T_F) frames, counting the command
    frame.  On the landing frame the configuration follows that frame's
    action when it targets the in-flight algorithm, otherwise the original
    command's target.
    """

    def __init__(self, n_channels=8, times=None, frame_period=1.0,
                 initial=Config(Category.SLEEP_DFTFB)):
        self.space = StateSpace(n_channels, True)
        self.times = times or TransitionTimeTable.default()
        self.frame_period = frame_period
        self.config = initial
        self.remaining = 0
        self.pending = None

    @property
    def in_transition(self):
        return self.config.category in (Category.TRANS_DCM, Category.TRANS_DFTFB)

    def advance(self, action):
        tgt = action.target
        if self.in_transition:
            fam = FAMILY[self.config.category]
            if action.family == fam:
                self.pending = tgt
            if self.remaining > 0:
                self.remaining -= 1
            else:
                self.config = self.pending
                self.pending = None
            return self.config
        t = self.times.time(self.config.category, tgt.category)
        d = sim_countdown(t, self.frame_period)
        if d == 0:
            self.config = tgt
        else:
            self.config = Config(TRANS_OF[action.family])
            self.remaining = d - 1
            self.pending = tgt
        return self.config


@dataclass
class SimMetrics:
    success_rate: float
    avg_power: float
    normalized_power_savings: float
    n_frames: int
    served_total: int
    requested_total: int
    transition_frames: int
    trace: dict = None

    def as_row(self):
        return {
            "success_rate": self.success_rate,
            "avg_power_w": self.avg_power,
            "normalized_power_savings": self.normalized_power_savings,
            "n_frames": self.n_frames,
            "served": self.served_total,
            "requested": self.requested_total,
            "transition_frames": self.transition_frames,
        }


def _popcount(x):
    return bin(int(x)).count("1")


class _FullFidelity:
    """Runs the DSP kernels on synthetic tones for the active configuration."""

    def __init__(self, n_channels, seed):
        from .channelizer import FRAME_LEN, DcmState, DftfbState
        from .filters import FilterSpec, design_with_fallback

        h = design_with_fallback(FilterSpec(num_channels=n_channels, num_taps=8 * n_channels))
        self.M = n_channels
        self.frame_len = FRAME_LEN // 8 * n_channels
        self.dftfb = DftfbState(h, n_channels)
        self.dcm = DcmState(h, 0, n_channels)
        self.rng = np.random.default_rng([int(seed), 0xD5B])
        self.n = 0

    def served(self, cr, config):
        from .channelizer import dcm_process, dftfb_process, retune_dcm

        n = self.n + np.arange(self.frame_len)
        x = 1e-3 * (self.rng.standard_normal(self.frame_len)
                    + 1j * self.rng.standard_normal(self.frame_len))
        for m in range(self.M):
            if (cr >> m) & 1:
                x = x + np.exp(2j * np.pi * m * n / self.M)
        self.n += self.frame_len
        cat = config.category
        if cat == Category.DFTFB:
            out = dftfb_process(self.dftfb, x)
        elif cat == Category.DCM:
            retune_dcm(self.dcm, config.channel)
            out = dcm_process(self.dcm, x)
        else:
            return 0
        # a request counts as served when its channel output carries the tone
        served = 0
        for m in range(self.M):
            y = out[m]
            if (cr >> m) & 1 and y is not None and np.sqrt(np.mean(np.abs(y[-2:]) ** 2)) > 0.5:
                served += 1
        return served


def run_simulation(controller, scenario, trace=None, record_trace=False, fidelity="abstract"):
    """Drive ``controller`` over a request trace and aggregate the metrics."""
    if fidelity not in ("abstract", "full"):
        raise ConfigError(f"unknown fidelity {fidelity!r}")
    N = scenario.n_channels
    actions = getattr(controller, "actions", None) or ActionSpace(N, scenario.n_actions)
    if actions.n_channels != N:
        raise ConfigError("controller and scenario disagree on the channel count")
    requests = scenario.requests() if trace is None else np.asarray(trace, dtype=np.int64)
    machine = ProcessingMachine(N, scenario.times(), scenario.frame_period)
    dsp = _FullFidelity(N, scenario.seed) if fidelity == "full" else None
    controller.reset()
    pw = scenario.power
    n = len(requests)
    served = np.zeros(n, dtype=np.int64)
    requested = np.zeros(n, dtype=np.int64)
    power = np.zeros(n)
    acts = np.zeros(n, dtype=np.int64)
    cfgs = []
    n_trans = 0
    for k in range(n):
        cr = int(requests[k])
        cfg = machine.config
        inp = ControllerInput(cr, cfg.category, cfg.channel, machine.in_transition, machine.pending)
        a = int(controller.step(inp))
        if not 0 <= a < len(actions):
            raise ConfigError(f"controller emitted invalid action {a}")
        active = machine.advance(actions[a])
        if dsp is not None:
            served[k] = dsp.served(cr, active)
        else:
            served[k] = _popcount(cr & active.produced_mask(N))
        requested[k] = _popcount(cr)
        power[k] = pw.of(active.category)
        acts[k] = a
        n_trans += active.category in (Category.TRANS_DCM, Category.TRANS_DFTFB)
        if record_trace:
            cfgs.append(active)
    req_total = int(requested.sum())
    srv_total = int(served.sum())
    avg = float(power.mean())
    bounds = pw.bounds(machine.space)
    metrics = SimMetrics(
        success_rate=srv_total / req_total if req_total else 1.0,
        avg_power=avg,
        normalized_power_savings=float(normalized_savings(avg, bounds)),
        n_frames=n,
        served_total=srv_total,
        requested_total=req_total,
        transition_frames=int(n_trans),
    )
    if record_trace:
        metrics.trace = {
            "cr": requests.copy(),
            "config": cfgs,
            "action": acts,
            "served": served,
            "requested": requested,
            "power": power,
            "action_names": [actions[int(a)].name for a in acts],
        }
    return metrics


def trace_csv(metrics):
    """Render a recorded trace as CSV text with a schema comment first."""
    tr = metrics.trace
    if tr is None:
        raise ConfigError("simulation was run without record_trace")
    buf = io.StringIO()
    buf.write(f"# schema: {TRACE_SCHEMA} columns={','.join(TRACE_HEADER)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for k, cfg in enumerate(tr["config"]):
        w.writerow([k, f"{int(tr['cr'][k]):02x}", cfg.category.name,
                    "" if cfg.channel is None else cfg.channel, tr["action_names"][k],
                    int(tr["served"][k]), int(tr["requested"][k]), repr(float(tr["power"][k]))])
    return buf.getvalue()


# --- sweeps -----------------------------------------------------------------------


def iid_family(base, betas=None):
    betas = betas if betas is not None else [round(0.05 * i, 2) for i in range(1, 11)]
    return [replace(base, use_case="IID", iid=replace(base.iid, beta=b), label=f"beta={b:g}")
            for b in betas]


def seq_family(base, dwells=None):
    dwells = dwells if dwells is not None else list(range(2, 21, 2))
    return [replace(base, use_case="SEQ", seq=replace(base.seq, mean_dwell=float(d)),
                    label=f"dwell={d:g}") for d in dwells]


def _run_cell(args):
    factory, scenario = args
    controller = factory(scenario)
    m = run_simulation(controller, scenario)
    return {"controller": controller.name, "scenario": scenario.label or scenario.use_case,
            **m.as_row()}


def sweep(factories, scenarios, n_jobs=1):
    """One metrics row per (scenario, controller).

    ``factories`` maps to callables ``scenario -> controller``; MDP factories
    rebuild and re-solve the model for every scenario.  With ``n_jobs > 1``
    scenarios run in worker processes, which requires picklable factories.
    """
    if not scenarios:
        raise ConfigError("sweep needs at least one scenario")
    cells = [(f, s) for s in scenarios for f in factories]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


# --- picklable controller factories -----------------------------------------------


class MdpFactory:
    """Build, solve and wrap an MDP policy for each scenario."""

    def __init__(self, weights=None, with_transitions=None, name=None):
        self.weights = tuple(weights) if weights is not None else None
        self.with_transitions = with_transitions
        self.name = name

    def solve(self, scenario):
        from .solver import value_iteration

        if self.weights is not None:
            scenario = replace(scenario, weights=self.weights)
        model = scenario.build_model(self.with_transitions)
        policy, _, stats = value_iteration(model, scenario.solver)
        return model, policy, stats

    def __call__(self, scenario):
        from .controllers import MdpController

        model, policy, _ = self.solve(scenario)
        name = self.name or (f"MDP r1={self.weights[0]:g}" if self.weights else "MDP")
        return MdpController(policy, model.space, model.actions, name=name)


class MharpFactory:
    def __init__(self, tuning="power_optimized", config=None):
        self.tuning = tuning
        self.config = config

    def __call__(self, scenario):
        from .controllers import MharpConfig, MharpController

        cfg = self.config or MharpConfig.preset(self.tuning, scenario.n_channels)
        model = scenario.build_model(True)
        return MharpController(cfg, model.reward, model.space, model.actions)


class ManualFactory:
    def __init__(self, kind, threshold=None):
        self.kind = kind
        self.threshold = threshold

    def __call__(self, scenario):
        from . import controllers as c

        actions = ActionSpace(scenario.n_channels, scenario.n_actions)
        if self.kind == "dftfb":
            return c.ManualDftfb(actions)
        if self.kind == "dftfb_sleep":
            return c.ManualDftfbSleep(actions)
        if self.kind == "dcm_sleep":
            return c.ManualDcmSleep(actions)
        if self.kind == "combo":
            return c.ManualCombo(self.threshold, actions)
        raise ConfigError(f"unknown manual controller {self.kind!r}")


def manual_factories():
    out = [ManualFactory("dftfb"), ManualFactory("dftfb_sleep"), ManualFactory("dcm_sleep")]
    return out + [ManualFactory("combo", t) for t in range(2, 7)]
