"""Factored MDP model of the reconfigurable channelizer.

A state is ``(cr, cf)``: ``cr`` is the channelization-request bit mask for
the upcoming frame (bit m = channel m) and ``cf`` indexes the processing
configuration that was active during the previous frame.  The flat state
index is ``cr * n_cf + cf``.

The transition model factors as ``p(cr' | cr) * p(cf' | cf1, a)`` where
``cf1`` is the top-level configuration category.  Only the two small blocks
are stored; dense matrices are built on demand for testing.
"""

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError, SizeError

DENSE_CAP = 4096


class Category(IntEnum):
    SLEEP_DCM = 0
    SLEEP_DFTFB = 1
    DCM = 2
    DFTFB = 3
    TRANS_DCM = 4
    TRANS_DFTFB = 5


STABLE = (Category.SLEEP_DCM, Category.SLEEP_DFTFB, Category.DCM, Category.DFTFB)
TRANSITIONAL = (Category.TRANS_DCM, Category.TRANS_DFTFB)

FAMILY = {
    Category.SLEEP_DCM: Category.DCM,
    Category.DCM: Category.DCM,
    Category.TRANS_DCM: Category.DCM,
    Category.SLEEP_DFTFB: Category.DFTFB,
    Category.DFTFB: Category.DFTFB,
    Category.TRANS_DFTFB: Category.DFTFB,
}
TRANS_OF = {Category.DCM: Category.TRANS_DCM, Category.DFTFB: Category.TRANS_DFTFB}


def popcount(x):
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros_like(x)
    while np.any(x):
        out += x & 1
        x = x >> 1
    return out


@dataclass(frozen=True)
class Config:
    category: Category
    channel: int = None

    @property
    def name(self):
        if self.category == Category.DCM:
            return f"DCM{self.channel}"
        return self.category.name

    def produced_mask(self, n_channels):
        if self.category == Category.DFTFB:
            return (1 << n_channels) - 1
        if self.category == Category.DCM:
            return 1 << self.channel
        return 0


@dataclass(frozen=True)
class FactoredState:
    cr: int
    cf1: Category
    cf2: int = None


@dataclass(frozen=True)
class StateSpace:
    """Index maps for ``(cr, cf)`` states."""

    n_channels: int = 8
    with_transitions: bool = True

    def __post_init__(self):
        if self.n_channels < 1:
            raise ConfigError("n_channels must be >= 1")
        configs = [Config(Category.SLEEP_DCM), Config(Category.SLEEP_DFTFB)]
        configs += [Config(Category.DCM, m) for m in range(self.n_channels)]
        configs.append(Config(Category.DFTFB))
        if self.with_transitions:
            configs += [Config(Category.TRANS_DCM), Config(Category.TRANS_DFTFB)]
        object.__setattr__(self, "configs", tuple(configs))
        cats = STABLE + (TRANSITIONAL if self.with_transitions else ())
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "_cf_lookup", {c: i for i, c in enumerate(configs)})

    @property
    def n_cr(self):
        return 1 << self.n_channels

    @property
    def n_cf(self):
        return len(self.configs)

    @property
    def n_cf1(self):
        return len(self.categories)

    @property
    def n_states(self):
        return self.n_cr * self.n_cf

    def cf_index(self, category, channel=None):
        category = Category(category)
        if category != Category.DCM:
            channel = None
        return self._cf_lookup[Config(category, channel)]

    def has(self, config):
        return config in self._cf_lookup

    def index(self, cr, cf):
        return cr * self.n_cf + cf

    def decode(self, s):
        cr, cf = divmod(int(s), self.n_cf)
        c = self.configs[cf]
        return FactoredState(cr, c.category, c.channel)

    def encode(self, state):
        return self.index(state.cr, self.cf_index(state.cf1, state.cf2))

    @property
    def cf1_of(self):
        """Category position (within ``categories``) of each configuration."""
        pos = {c: i for i, c in enumerate(self.categories)}
        return np.array([pos[c.category] for c in self.configs])

    @property
    def produced(self):
        return np.array([c.produced_mask(self.n_channels) for c in self.configs])

    def served_matrix(self):
        """served[cr, cf] = number of requested channels configuration cf produces."""
        cr = np.arange(self.n_cr)[:, None]
        return popcount(cr & self.produced[None, :])


def enumerate_states(n_channels=8, with_transitions=True):
    return StateSpace(n_channels, with_transitions)


@dataclass(frozen=True)
class Action:
    id: int
    name: str
    target: Config

    @property
    def family(self):
        return FAMILY[self.target.category]


class ActionSpace:
    """Commandable target configurations.

    The base set is 2 sleep targets + one DCM target per channel + DFTFB.
    ``n_actions = base + 2`` appends PREP_DCM / PREP_DFTFB, which load an
    algorithm without enabling it and so behave exactly like the matching
    sleep command.
    """

    def __init__(self, n_channels=8, n_actions=None):
        base = [Action(0, "SLEEP_DCM", Config(Category.SLEEP_DCM)),
                Action(1, "SLEEP_DFTFB", Config(Category.SLEEP_DFTFB))]
        base += [Action(2 + m, f"DCM{m}", Config(Category.DCM, m)) for m in range(n_channels)]
        base.append(Action(2 + n_channels, "DFTFB", Config(Category.DFTFB)))
        n_base = len(base)
        if n_actions is None:
            n_actions = n_base
        if n_actions == n_base + 2:
            base += [Action(n_base, "PREP_DCM", Config(Category.SLEEP_DCM)),
                     Action(n_base + 1, "PREP_DFTFB", Config(Category.SLEEP_DFTFB))]
        elif n_actions != n_base:
            raise ConfigError(f"n_actions must be {n_base} or {n_base + 2}, got {n_actions}")
        if len(base) > 16:
            raise ConfigError("more than 16 actions cannot be packed into 4 bits")
        self.n_channels = n_channels
        self.actions = tuple(base)
        self._by_name = {a.name: a for a in base}

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i):
        return self.actions[i]

    def __iter__(self):
        return iter(self.actions)

    def id(self, name):
        return self._by_name[name].id

    @property
    def sleep_dcm(self):
        return 0

    @property
    def sleep_dftfb(self):
        return 1

    def dcm(self, m):
        return 2 + int(m)

    @property
    def dftfb(self):
        return 2 + self.n_channels

    def sleep_for(self, family):
        return self.sleep_dcm if family == Category.DCM else self.sleep_dftfb


# --- channelization-request chain -------------------------------------------------


@dataclass(frozen=True)
class CrChainParams:
    beta: float = 0.2
    p_start: float = 0.05
    p_stop: float = 0.3
    n_channels: int = 8

    def __post_init__(self):
        for name in ("beta", "p_start", "p_stop"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")


def request_distribution(beta, n_channels):
    """P_D(j) = beta^sigma(j) * (1 - beta)^(N - sigma(j)) over all request masks."""
    sigma = popcount(np.arange(1 << n_channels))
    return beta ** sigma * (1.0 - beta) ** (n_channels - sigma)


def build_cr_stm(params):
    """Two-regime request chain: the idle mask i0 = 0 uses P_0, every other uses P_1."""
    n = 1 << params.n_channels
    pd = request_distribution(params.beta, params.n_channels)
    idle = np.zeros(n)
    idle[0] = 1.0
    p0 = params.p_start * pd + (1.0 - params.p_start) * idle
    p1 = params.p_stop * idle + (1.0 - params.p_stop) * pd
    stm = np.tile(p1, (n, 1))
    stm[0] = p0
    return stm


@dataclass(frozen=True)
class SeqParams:
    mean_dwell: float = 8.0
    mean_gap: float = 4.0
    channel_selection: str = "uniform_random"

    def __post_init__(self):
        if self.mean_dwell < 1:
            raise ConfigError("mean_dwell must be >= 1")
        if self.mean_gap < 0:
            raise ConfigError("mean_gap must be >= 0")
        if self.channel_selection not in ("uniform_random", "round_robin"):
            raise ConfigError(f"unknown channel_selection {self.channel_selection!r}")


def build_seq_cr_stm(params, n_channels=8):
    """Request chain of the sequential-sensing environment.

    One channel is requested at a time.  A dwell ends with probability
    1/mean_dwell per frame; a gap of at least one idle frame follows with
    probability mean_gap/(1+mean_gap) and each idle frame ends with
    probability 1/(1+mean_gap).  After a dwell the next channel differs from
    the current one (uniform over the rest, or the next index for
    round-robin); after a gap it is taken uniform over all channels, since
    the idle mask does not remember the previous one.
    """
    n = 1 << n_channels
    N = n_channels
    stm = np.zeros((n, n))
    p_end = 1.0 / params.mean_dwell
    p_gap = params.mean_gap / (1.0 + params.mean_gap)
    singles = [1 << k for k in range(N)]
    idle_row = np.zeros(n)
    idle_row[0] = p_gap
    for s in singles:
        idle_row[s] += (1.0 - p_gap) / N
    for i in range(n):
        stm[i] = idle_row
    for k, s in enumerate(singles):
        row = np.zeros(n)
        row[s] = 1.0 - p_end
        row[0] += p_end * p_gap
        if N == 1:
            row[s] += p_end * (1.0 - p_gap)
        elif params.channel_selection == "round_robin":
            row[singles[(k + 1) % N]] += p_end * (1.0 - p_gap)
        else:
            for j, t in enumerate(singles):
                if j != k:
                    row[t] += p_end * (1.0 - p_gap) / (N - 1)
        stm[s] = row
    return stm


# --- processing-system transitions ------------------------------------------------


@dataclass
class TransitionTimeTable:
    """Reconfiguration time in frames keyed by (source category, target category).

    Sources and targets are the four stable categories.  Entries below one
    frame period complete before the next frame.
    """

    times: dict = field(default_factory=dict)

    @classmethod
    def default(cls, reconfig_frames=1.0, wake_frames=0.0, sleep_frames=0.0):
        t = {}
        for src in STABLE:
            for dst in STABLE:
                if FAMILY[src] != FAMILY[dst]:
                    t[(src, dst)] = float(reconfig_frames)
                elif src == dst:
                    t[(src, dst)] = 0.0
                elif dst in (Category.SLEEP_DCM, Category.SLEEP_DFTFB):
                    t[(src, dst)] = float(sleep_frames)
                else:
                    t[(src, dst)] = float(wake_frames)
        return cls(t)

    def __post_init__(self):
        for key, v in self.times.items():
            if v < 0:
                raise ConfigError(f"negative transition time for {key}")

    def time(self, src, dst):
        return self.times.get((Category(src), Category(dst)), 0.0)


def exit_probability(t, frame_period=1.0):
    """Per-frame completion probability c = 1 / floor(T / T_F) for T >= T_F."""
    k = math.floor(t / frame_period)
    if k < 1:
        raise ValueError("exit probability is only defined for T >= T_F")
    return 1.0 / k


def sim_countdown(t, frame_period=1.0):
    """Frames a deterministic machine spends in transition: ceil(T / T_F), or 0 below T_F."""
    if t < frame_period:
        return 0
    return int(math.ceil(t / frame_period - 1e-12))


def _transition_exit_probs(space, times, frame_period):
    probs = {}
    for fam in (Category.DCM, Category.DFTFB):
        floors = {math.floor(times.time(src, dst) / frame_period)
                  for src in STABLE for dst in STABLE
                  if FAMILY[dst] == fam and times.time(src, dst) >= frame_period}
        if len(floors) > 1:
            raise ConfigError(
                f"transitions into {fam.name} have different whole-frame durations {sorted(floors)}; "
                "a single transition state per destination cannot represent them")
        probs[fam] = 1.0 / floors.pop() if floors else 1.0
    return probs


def build_sp_stm(space, actions, times, frame_period=1.0):
    """Per-action processing-system blocks P(cf' | cf1, a), shaped (A, n_cf1, n_cf).

    Stable sources move deterministically to the commanded configuration when
    the move is faster than a frame, otherwise to the destination's
    transition state.  A transition state is left with probability c each
    frame; the landing configuration follows the action when that action
    targets the in-flight algorithm, otherwise the algorithm's ON
    configuration (channel 0 for DCM).  Without transition states every move
    is treated as completing within the frame.
    """
    A = len(actions)
    blocks = np.zeros((A, space.n_cf1, space.n_cf))
    exit_p = _transition_exit_probs(space, times, frame_period) if space.with_transitions else {}
    for a in actions:
        tgt = space.cf_index(a.target.category, a.target.channel)
        for row, cat in enumerate(space.categories):
            if cat in STABLE:
                t = times.time(cat, a.target.category)
                if t < frame_period or not space.with_transitions:
                    blocks[a.id, row, tgt] = 1.0
                else:
                    blocks[a.id, row, space.cf_index(TRANS_OF[a.family])] = 1.0
            else:
                fam = FAMILY[cat]
                c = exit_p[fam]
                land = tgt if a.family == fam else space.cf_index(fam, 0)
                blocks[a.id, row, space.cf_index(cat)] += 1.0 - c
                blocks[a.id, row, land] += c
    return blocks


@dataclass
class FactoredSTM:
    space: StateSpace
    cr_block: np.ndarray
    cf_blocks: np.ndarray  # (A, n_cf1, n_cf)

    @property
    def n_actions(self):
        return self.cf_blocks.shape[0]

    def cf_block(self, a):
        """Full |CF| x |CF| block for action ``a`` (rows repeat per category)."""
        return self.cf_blocks[a][self.space.cf1_of]

    def dense(self, a):
        if self.space.n_states > DENSE_CAP:
            raise SizeError(
                f"dense expansion limited to {DENSE_CAP} states, model has {self.space.n_states}")
        return np.kron(self.cr_block, self.cf_block(a))

    def element_count(self):
        sp = self.space
        return sp.n_cr ** 2 + sp.n_cf * sp.n_cf1 * self.n_actions


def _check_stochastic(m, what, tol=1e-12):
    if np.any(m < -tol) or np.any(m > 1 + tol):
        raise ConfigError(f"{what} has entries outside [0, 1]")
    if not np.allclose(m.sum(axis=-1), 1.0, rtol=0.0, atol=tol):
        raise ConfigError(f"{what} rows do not sum to 1")


def assemble_stm(space, cr_block, cf_blocks):
    cr_block = np.asarray(cr_block, dtype=float)
    cf_blocks = np.asarray(cf_blocks, dtype=float)
    if cr_block.shape != (space.n_cr, space.n_cr):
        raise ConfigError(f"cr block shape {cr_block.shape} does not match {space.n_cr} masks")
    if cf_blocks.shape[1:] != (space.n_cf1, space.n_cf):
        raise ConfigError(f"cf block shape {cf_blocks.shape} does not match the state space")
    _check_stochastic(cr_block, "cr block")
    _check_stochastic(cf_blocks, "cf blocks")
    return FactoredSTM(space, cr_block, cf_blocks)


# --- reward -----------------------------------------------------------------------


@dataclass(frozen=True)
class PowerTable:
    """Average power per configuration category, in watts."""

    sleep: float = 5.36e-6
    dcm: float = 7.61e-3
    dftfb: float = 17.92e-3
    transition: float = 10.25e-3

    def of(self, category):
        category = Category(category)
        if category in (Category.SLEEP_DCM, Category.SLEEP_DFTFB):
            return self.sleep
        if category == Category.DCM:
            return self.dcm
        if category == Category.DFTFB:
            return self.dftfb
        return self.transition

    def vector(self, space):
        return np.array([self.of(c.category) for c in space.configs])

    def bounds(self, space):
        v = self.vector(space)
        return float(v.min()), float(v.max())


def check_weights(weights):
    w = tuple(float(x) for x in weights)
    if len(w) != 2:
        raise ConfigError("expected two reward weights (productivity, power savings)")
    if any(x < 0 or x > 1 for x in w) or abs(sum(w) - 1.0) > 1e-9:
        raise ConfigError(f"reward weights {w} must lie in [0, 1] and sum to 1")
    return w


@dataclass
class RewardTable:
    R: np.ndarray  # (n_states, A)
    weights: tuple
    power: np.ndarray  # per-configuration power, watts
    g1: np.ndarray  # (n_states, A)
    g2: np.ndarray  # (n_states, A)
    x2_bounds: tuple

    def as_blocks(self, space):
        """Reward reshaped to (A, n_cr, n_cf)."""
        A = self.R.shape[1]
        return self.R.T.reshape(A, space.n_cr, space.n_cf)


def build_reward(weights, power_table, space, stm):
    """R(s, a) = r1 * g1 + r2 * g2 using the configuration reached by acting a from s.

    g1 is the expected number of requested channels served this frame over
    N_C; g2 maps the expected power of the reached configuration onto [0, 1]
    with the most power-hungry (s, a) at 0 and the least at 1.
    """
    r1, r2 = check_weights(weights)
    power = power_table.vector(space)
    served = space.served_matrix().astype(float)
    A = stm.n_actions
    g1 = np.empty((A, space.n_cr, space.n_cf))
    x2 = np.empty((A, space.n_cf))
    for a in range(A):
        P = stm.cf_block(a)
        g1[a] = served @ P.T / space.n_channels
        x2[a] = P @ power
    lo, hi = float(x2.min()), float(x2.max())
    span = hi - lo
    g2_cf = (hi - x2) / span if span > 0 else np.ones_like(x2)
    g2 = np.broadcast_to(g2_cf[:, None, :], g1.shape)
    R = r1 * g1 + r2 * g2

    def flat(x):
        return np.ascontiguousarray(x.reshape(A, -1).T)

    return RewardTable(flat(R), (r1, r2), power, flat(g1), flat(g2), (lo, hi))


def normalized_savings(power, bounds):
    lo, hi = bounds
    return (hi - power) / (hi - lo)


# --- assembled model --------------------------------------------------------------


@dataclass
class ChannelizerModel:
    space: StateSpace
    actions: ActionSpace
    stm: FactoredSTM
    reward: RewardTable
    meta: dict = field(default_factory=dict)

    @property
    def n_states(self):
        return self.space.n_states

    @property
    def n_actions(self):
        return len(self.actions)

    def fingerprint(self):
        h = hashlib.sha256()
        for arr in (self.stm.cr_block, self.stm.cf_blocks, self.reward.R):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def build_model(cr_block, weights, n_channels=8, with_transitions=True, times=None,
                power=None, n_actions=None, frame_period=1.0, meta=None):
    space = StateSpace(n_channels, with_transitions)
    actions = ActionSpace(n_channels, n_actions)
    times = times or TransitionTimeTable.default()
    cf_blocks = build_sp_stm(space, actions, times, frame_period)
    stm = assemble_stm(space, cr_block, cf_blocks)
    reward = build_reward(weights, power or PowerTable(), space, stm)
    return ChannelizerModel(space, actions, stm, reward, dict(meta or {}))


def factored_size(model):
    """(dense element count |S|^2 |A|, factored count |CR|^2 + |CF| |CF1| |A|)."""
    sp = model.space
    A = model.n_actions
    dense = sp.n_states ** 2 * A
    return dense, model.stm.element_count()


# --- serialization ----------------------------------------------------------------

MODEL_MAGIC = b"FMDP"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sBIIIIIB")


def save_model(model, path):
    """Binary container plus a ``.json`` mirror next to it."""
    sp = model.space
    path = Path(path)
    header = _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, sp.n_channels, sp.n_cr, sp.n_cf,
                          sp.n_cf1, model.n_actions, int(sp.with_transitions))
    blocks = [model.stm.cr_block, model.stm.cf_blocks, model.reward.R]
    with open(path, "wb") as f:
        f.write(header)
        for b in blocks:
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    mirror = {
        "magic": MODEL_MAGIC.decode(),
        "version": MODEL_VERSION,
        "n_channels": sp.n_channels,
        "with_transitions": sp.with_transitions,
        "n_cr": sp.n_cr,
        "n_cf": sp.n_cf,
        "n_cf1": sp.n_cf1,
        "n_actions": model.n_actions,
        "configs": [c.name for c in sp.configs],
        "actions": [a.name for a in model.actions],
        "weights": list(model.reward.weights),
        "power_w": model.reward.power.tolist(),
        "cr_block": model.stm.cr_block.tolist(),
        "cf_blocks": model.stm.cf_blocks.tolist(),
        "meta": model.meta,
    }
    path.with_suffix(".json").write_text(json.dumps(mirror, indent=1, default=str))
    return path


def load_model(path, weights=None, power=None):
    """Read a binary model.  The reward block is restored as stored."""
    data = Path(path).read_bytes()
    magic, version, n_ch, n_cr, n_cf, n_cf1, A, with_t = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ConfigError(f"not a model file (magic {magic!r})")
    if version != MODEL_VERSION:
        raise ConfigError(f"unsupported model version {version}")
    space = StateSpace(n_ch, bool(with_t))
    if (space.n_cr, space.n_cf, space.n_cf1) != (n_cr, n_cf, n_cf1):
        raise ConfigError("model header dimensions are inconsistent")
    off = _HEADER.size
    sizes = [(n_cr, n_cr), (A, n_cf1, n_cf), (space.n_states, A)]
    arrays = []
    for shape in sizes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).copy())
        off += 8 * n
    stm = assemble_stm(space, arrays[0], arrays[1])
    actions = ActionSpace(n_ch, A)
    mirror_path = Path(path).with_suffix(".json")
    meta, w, pw = {}, weights, None
    if mirror_path.exists():
        mirror = json.loads(mirror_path.read_text())
        meta = mirror.get("meta", {})
        w = w or tuple(mirror.get("weights", (0.5, 0.5)))
        pw = np.array(mirror.get("power_w"))
    reward = build_reward(w or (0.5, 0.5), power or PowerTable(), space, stm)
    reward.R = arrays[2]
    if pw is not None:
        reward.power = pw
    return ChannelizerModel(space, actions, stm, reward, meta)


def describe(model):
    sp = model.space
    dense, fact = factored_size(model)
    return {
        "n_channels": sp.n_channels,
        "with_transitions": sp.with_transitions,
        "n_states": sp.n_states,
        "n_cr": sp.n_cr,
        "n_cf": sp.n_cf,
        "n_cf1": sp.n_cf1,
        "n_actions": model.n_actions,
        "dense_stm_elements": dense,
        "factored_stm_elements": fact,
        "reduction_ratio": fact / dense,
        "x2_bounds_w": list(model.reward.x2_bounds),
        "weights": list(model.reward.weights),
    }

