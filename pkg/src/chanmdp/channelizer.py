"""Polyphase DFT filter bank (all channels) and tunable polyphase decimator (one channel).

Conventions: channel m is centred at normalized frequency m/M and is shifted
to DC by exp(-i*2*pi*m*n/M).  Output sample k of every channel is taken at
input index n = k*M, so a frame of N samples (N a multiple of M) yields N/M
outputs per channel.  Both processors keep the last ``num_taps - 1`` input
samples as their delay line, so frames can be streamed in any admissible
size without changing the output.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .filters import FirFilter, polyphase_decompose

FRAME_LEN = 64


@dataclass
class Frame:
    samples: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)


@dataclass
class ChannelOutputs:
    """Per-channel output vectors; ``None`` marks an absent channel."""

    outputs: list

    @property
    def present(self):
        return [o is not None for o in self.outputs]

    def __getitem__(self, m):
        return self.outputs[m]

    def stacked(self):
        return np.vstack([o for o in self.outputs if o is not None])


def _as_samples(frame):
    return frame.samples if isinstance(frame, Frame) else np.asarray(frame, dtype=complex)


def idft_matrix(M):
    """Direct M-point inverse DFT without the 1/M factor: W[m, p] = exp(i*2*pi*m*p/M)."""
    k = np.arange(M)
    return np.exp(2j * np.pi * np.outer(k, k) / M)


def _branch_sums(history, x, branches):
    """Polyphase branch outputs w[p, k] = sum_q E_p[q] * x[kM - qM - p]."""
    M = len(branches)
    L = len(branches[0])
    ext = np.concatenate([history, x])
    off = len(history)
    K = len(x) // M
    # taps index l = q*M + p against samples n_k - l
    l = np.arange(L * M).reshape(L, M)
    n_k = off + M * np.arange(K)
    seg = ext[n_k[:, None, None] - l[None, :, :]]  # (K, L, M)
    E = np.stack(branches, axis=1)  # (L, M): E[q, p]
    return np.einsum("klp,lp->pk", seg, E)


@dataclass
class DftfbState:
    prototype: FirFilter
    M: int = 8
    history: np.ndarray = None
    branches: list = field(init=False)
    _idft: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.branches = polyphase_decompose(self.prototype, self.M)
        if self.history is None:
            self.history = np.zeros(len(self.prototype) - 1, dtype=complex)
        self._idft = idft_matrix(self.M)

    @property
    def delay_lines(self):
        """History viewed per branch: row p holds x[n - p - qM] for the next instant."""
        padded = np.concatenate([self.history, [0.0]])[::-1]
        return padded.reshape(-1, self.M).T


def dftfb_process(state, frame):
    """Channelize one frame into all M subchannels, advancing the delay line."""
    x = _as_samples(frame)
    M = state.M
    if len(x) % M:
        raise ShapeError(f"frame length {len(x)} is not a multiple of M={M}")
    w = _branch_sums(state.history, x, state.branches)
    y = state._idft @ w
    n_hist = len(state.history)
    if n_hist:
        state.history = np.concatenate([state.history, x])[-n_hist:]
    return ChannelOutputs(list(y))


def dftfb_reference(h, x, M=8):
    """Direct-form oracle: modulated filter, mix to DC, keep every M-th sample."""
    taps = h.taps if isinstance(h, FirFilter) else np.asarray(h)
    x = np.asarray(x, dtype=complex)
    n = np.arange(len(x))
    out = []
    for m in range(M):
        hm = taps * np.exp(2j * np.pi * m * np.arange(len(taps)) / M)
        v = np.convolve(x, hm)[: len(x)]
        out.append((v * np.exp(-2j * np.pi * m * n / M))[::M])
    return out


@dataclass
class DcmState:
    prototype: FirFilter
    channel: int = 0
    M: int = 8
    history: np.ndarray = None
    phase: float = 0.0
    samples_seen: int = 0
    branches: list = field(init=False)

    def __post_init__(self):
        if not 0 <= self.channel < self.M:
            raise ConfigError(f"channel {self.channel} outside 0..{self.M - 1}")
        if self.history is None:
            self.history = np.zeros(len(self.prototype) - 1, dtype=complex)
        self._load_coefficients()

    def _load_coefficients(self):
        # H_m(z): prototype modulated to channel m, then split into branches
        taps = self.prototype.taps
        hm = taps * np.exp(2j * np.pi * self.channel * np.arange(len(taps)) / self.M)
        self.branches = polyphase_decompose(hm, self.M)


def dcm_process(state, frame):
    """Extract the tuned channel: polyphase H_m, mixer, decimate by M.

    The mixer phase accumulator advances by 2*pi*m/M per input sample and is
    carried across frames.
    """
    x = _as_samples(frame)
    M = state.M
    if len(x) % M:
        raise ShapeError(f"frame length {len(x)} is not a multiple of M={M}")
    w = _branch_sums(state.history, x, state.branches)
    filtered = w.sum(axis=0)
    step = 2 * np.pi * state.channel / M
    mixer = np.exp(-1j * (state.phase + step * M * np.arange(len(filtered))))
    y = filtered * mixer
    state.phase = float((state.phase + step * len(x)) % (2 * np.pi))
    state.samples_seen += len(x)
    n_hist = len(state.history)
    if n_hist:
        state.history = np.concatenate([state.history, x])[-n_hist:]
    outputs = [None] * M
    outputs[state.channel] = y
    return ChannelOutputs(outputs)


def retune_dcm(state, new_m):
    """Switch the decimator to channel ``new_m`` from the next frame on.

    The delay line holds raw input samples and stays valid; the mixer phase
    is re-derived from the absolute sample count so the result matches a
    decimator that had been tuned to ``new_m`` all along.
    """
    if not 0 <= new_m < state.M:
        raise ConfigError(f"channel {new_m} outside 0..{state.M - 1}")
    if new_m == state.channel:
        return state
    state.channel = int(new_m)
    state.phase = float((2 * np.pi * new_m * state.samples_seen / state.M) % (2 * np.pi))
    state._load_coefficients()
    return state


def dcm_reference(h, x, m, M=8):
    """Direct pipeline oracle: filter by H_m, mix by exp(-i*2*pi*m*n/M), decimate by M."""
    taps = h.taps if isinstance(h, FirFilter) else np.asarray(h)
    x = np.asarray(x, dtype=complex)
    hm = taps * np.exp(2j * np.pi * m * np.arange(len(taps)) / M)
    v = np.convolve(x, hm)[: len(x)]
    return (v * np.exp(-2j * np.pi * m * np.arange(len(x)) / M))[::M]


def channel_tone(m, n_samples, M=8, start=0, amplitude=1.0):
    """Complex exponential at the centre of channel m."""
    n = np.arange(start, start + n_samples)
    return amplitude * np.exp(2j * np.pi * m * n / M)
