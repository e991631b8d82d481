"""Per-frame controllers: MDP lookup table, manual rules and the smoothed-threshold mHARP."""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EncodingError
from .model import ActionSpace, Category, Config, FAMILY, TRANSITIONAL


@dataclass(frozen=True)
class ControllerInput:
    """What a controller sees before frame k: the upcoming requests and the
    configuration that was active in frame k-1.  ``pending`` is the target of
    an in-flight reconfiguration, if any."""

    cr: int
    cf1: Category
    cf2: int = None
    in_transition: bool = False
    pending: Config = None

    @property
    def sigma(self):
        return bin(self.cr).count("1")

    @property
    def config(self):
        return Config(self.cf1, self.cf2 if self.cf1 == Category.DCM else None)


def lowest_channel(cr):
    return (cr & -cr).bit_length() - 1


class Controller:
    name = "controller"

    def __init__(self, actions=None):
        self.actions = actions or ActionSpace()

    def reset(self):
        pass

    def step(self, inp):
        raise NotImplementedError


class MdpController(Controller):
    """Table lookup at the flat state index.

    A policy built without transition states has no entry for a transitional
    configuration; such inputs are looked up at the in-flight target's
    algorithm in its ON configuration (DCM keeps the pending channel).
    """

    name = "MDP"

    def __init__(self, policy, space, actions=None, name=None):
        super().__init__(actions or ActionSpace(space.n_channels, policy.n_actions))
        if len(policy) != space.n_states:
            raise EncodingError(
                f"policy has {len(policy)} entries, state space needs {space.n_states}")
        self.policy = np.asarray(policy.actions)
        self.space = space
        if name:
            self.name = name

    def _cf(self, inp):
        cfg = inp.config
        if self.space.has(cfg):
            return self.space.cf_index(cfg.category, cfg.channel)
        if cfg.category in TRANSITIONAL:
            fam = FAMILY[cfg.category]
            ch = 0
            if inp.pending is not None and inp.pending.category == Category.DCM:
                ch = inp.pending.channel
            return self.space.cf_index(fam, ch)
        raise EncodingError(f"configuration {cfg.name} is not in the policy's state space")

    def step(self, inp):
        if not 0 <= inp.cr < self.space.n_cr:
            raise EncodingError(f"request mask {inp.cr:#x} out of range")
        s = self.space.index(inp.cr, self._cf(inp))
        return int(self.policy[s])


class ManualDftfb(Controller):
    name = "DFTFB"

    def step(self, inp):
        return self.actions.dftfb


class ManualDftfbSleep(Controller):
    name = "DFTFB+Sleep"

    def step(self, inp):
        return self.actions.sleep_dftfb if inp.cr == 0 else self.actions.dftfb


class ManualDcmSleep(Controller):
    name = "DCM+Sleep"

    def step(self, inp):
        if inp.cr == 0:
            return self.actions.sleep_dcm
        return self.actions.dcm(lowest_channel(inp.cr))


class ManualCombo(Controller):
    """DCM below the threshold, DFTFB at or above it, sleep of the loaded
    algorithm when nothing is requested.  Reconfigurations run to completion."""

    def __init__(self, threshold, actions=None):
        super().__init__(actions)
        if not 2 <= int(threshold) <= 6:
            raise ConfigError(f"DFT threshold {threshold} outside 2..6")
        self.threshold = int(threshold)
        self.name = f"Combo{self.threshold}"
        self._last = None

    def reset(self):
        self._last = None

    def step(self, inp):
        if inp.in_transition and self._last is not None:
            return self._last
        s = inp.sigma
        if s == 0:
            a = self.actions.sleep_for(FAMILY[inp.cf1])
        elif s < self.threshold:
            a = self.actions.dcm(lowest_channel(inp.cr))
        else:
            a = self.actions.dftfb
        self._last = a
        return a


@dataclass(frozen=True)
class MharpConfig:
    window: int = 16
    theta_low: float = 0.25
    theta_high: float = 6.0
    tuning: str = "power_optimized"
    n_channels: int = 8

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("mHARP window must be >= 1")
        if not 0 <= self.theta_low < self.theta_high <= self.n_channels:
            raise ConfigError(
                f"need 0 <= theta_low < theta_high <= {self.n_channels}, "
                f"got {self.theta_low}, {self.theta_high}")

    @classmethod
    def preset(cls, tuning, n_channels=8):
        if tuning not in MHARP_PRESETS:
            raise ConfigError(f"unknown mHARP tuning {tuning!r}")
        w, lo, hi = MHARP_PRESETS[tuning]
        return cls(w, lo, hi, tuning, n_channels)


MHARP_PRESETS = {
    "power_optimized": (16, 0.25, 6.0),
    "success_optimized": (4, 0.1, 1.5),
}


class MharpController(Controller):
    """Moving average of the request count compared against two thresholds.

    The window starts filled with idle frames.  Within the category chosen by
    the thresholds the action with the largest immediate reward wins; only
    the sleep category offers a real choice (either algorithm's sleep).
    """

    def __init__(self, config, reward, space, actions=None):
        super().__init__(actions or ActionSpace(space.n_channels))
        self.cfg = config
        self.R = reward.R
        self.space = space
        self.name = f"mHARP-{config.tuning}"
        self.reset()

    def reset(self):
        W = self.cfg.window
        self._sigma = deque([0] * W, maxlen=W)
        self._masks = deque([0] * W, maxlen=W)
        self._sum = 0

    def _mode_channel(self):
        counts = np.zeros(self.space.n_channels, dtype=int)
        for mask in self._masks:
            for m in range(self.space.n_channels):
                counts[m] += (mask >> m) & 1
        return int(np.argmax(counts))

    def average(self):
        return self._sum / self.cfg.window

    def step(self, inp):
        self._sum += inp.sigma - self._sigma[0]
        self._sigma.append(inp.sigma)
        self._masks.append(inp.cr)
        avg = self.average()
        if avg < self.cfg.theta_low:
            allowed = [self.actions.sleep_dcm, self.actions.sleep_dftfb]
        elif avg < self.cfg.theta_high:
            allowed = [self.actions.dcm(self._mode_channel())]
        else:
            allowed = [self.actions.dftfb]
        if len(allowed) == 1:
            return allowed[0]
        cfg = inp.config
        cf = self.space.cf_index(cfg.category, cfg.channel)
        row = self.R[self.space.index(inp.cr, cf), allowed]
        return allowed[int(np.argmax(row))]


def manual_controllers(actions=None):
    """The eight manual baselines: three fixed rules and five combo thresholds."""
    out = [ManualDftfb(actions), ManualDftfbSleep(actions), ManualDcmSleep(actions)]
    out += [ManualCombo(t, actions) for t in range(2, 7)]
    return out
