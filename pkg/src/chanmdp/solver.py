"""Discounted value iteration on the factored model and policy storage."""

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EncodingError, NonConvergenceError


@dataclass(frozen=True)
class SolverConfig:
    gamma: float = 0.95
    epsilon: float = 1e-6
    max_iter: int = 10000
    tie_tol: float = 1e-9

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma={self.gamma} must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class SolverStats:
    iterations: int = 0
    wall_time_s: float = 0.0
    residuals: list = field(default_factory=list)
    converged: bool = False
    multiplies: int = 0

    @property
    def final_residual(self):
        return self.residuals[-1] if self.residuals else float("inf")

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "wall_time_s": self.wall_time_s,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "multiplies_per_backup": self.multiplies,
        }


class MultiplyCounter:
    """Tally of scalar multiplications performed by the backups."""

    def __init__(self):
        self.count = 0

    def add(self, n):
        self.count += int(n)


def factored_backup(V, model, action, counter=None):
    """One-action Bellman backup Q_a = R_a + gamma-free expectation term.

    Returns ``(R_a, E_a)`` over flat states where ``E_a[s] = sum_s' P(s'|s,a) V[s']``
    computed as ``P_cr @ V2 @ P_cf_a^T`` with V2 the (|CR|, |CF|) reshape of V.
    The dense |S| x |S| matrix is never formed.
    """
    sp = model.space
    V2 = np.asarray(V).reshape(sp.n_cr, sp.n_cf)
    C = model.stm.cf_blocks[action]  # (n_cf1, n_cf)
    W = V2 @ C.T  # (n_cr, n_cf1)
    E = model.stm.cr_block @ W
    if counter is not None:
        counter.add(sp.n_cr * sp.n_cf * sp.n_cf1 + sp.n_cr * sp.n_cr * sp.n_cf1)
    E_full = E[:, sp.cf1_of]
    return model.reward.R[:, action], E_full.reshape(-1)


def _all_backups(V2, cf_blocks, cr_block, cf1_of):
    # W[r, a, k] = sum_c V2[r, c] C[a, k, c]; then mix over cr
    A, K, _ = cf_blocks.shape
    W = np.einsum("rc,akc->rak", V2, cf_blocks).reshape(V2.shape[0], A * K)
    E = (cr_block @ W).reshape(V2.shape[0], A, K)
    return E[:, :, cf1_of]  # (n_cr, A, n_cf)


def q_values(model, V, gamma):
    """Q(s, a) for every state and action, shape (n_states, A)."""
    sp = model.space
    V2 = np.asarray(V).reshape(sp.n_cr, sp.n_cf)
    E = _all_backups(V2, model.stm.cf_blocks, model.stm.cr_block, sp.cf1_of)
    E = E.transpose(0, 2, 1).reshape(sp.n_states, -1)
    return model.reward.R + gamma * E


def greedy(Q, tie_tol=1e-9):
    """Argmax per row; values within ``tie_tol * (1 + |max|)`` count as tied
    and the lowest action id wins."""
    best = Q.max(axis=1, keepdims=True)
    tol = tie_tol * (1.0 + np.abs(best))
    return np.argmax(Q >= best - tol, axis=1)


def value_iteration(model, config=None, V0=None):
    """Solve for the optimal discounted policy.

    Iterates until the max-norm change of V is at most ``epsilon``.  Returns
    ``(policy, V, stats)``.  Raises NonConvergenceError after ``max_iter``
    sweeps.
    """
    cfg = config or SolverConfig()
    sp = model.space
    R = model.reward.R
    nA = R.shape[1]
    R3 = R.reshape(sp.n_cr, sp.n_cf, nA)
    cf_blocks = model.stm.cf_blocks
    cr_block = model.stm.cr_block
    cf1_of = sp.cf1_of
    V2 = np.zeros((sp.n_cr, sp.n_cf)) if V0 is None else np.asarray(V0, float).reshape(sp.n_cr, sp.n_cf)
    stats = SolverStats()
    stats.multiplies = nA * (sp.n_cr * sp.n_cf * sp.n_cf1 + sp.n_cr ** 2 * sp.n_cf1)
    t0 = time.perf_counter()
    for it in range(1, cfg.max_iter + 1):
        E = _all_backups(V2, cf_blocks, cr_block, cf1_of)  # (n_cr, A, n_cf)
        Q = R3 + cfg.gamma * E.transpose(0, 2, 1)
        V_new = Q.max(axis=2)
        res = float(np.max(np.abs(V_new - V2)))
        stats.residuals.append(res)
        V2 = V_new
        if res <= cfg.epsilon:
            stats.converged = True
            break
    stats.iterations = it
    stats.wall_time_s = time.perf_counter() - t0
    if not stats.converged:
        raise NonConvergenceError(
            f"value iteration did not reach epsilon={cfg.epsilon} in {cfg.max_iter} iterations",
            residual=stats.final_residual, iterations=stats.iterations)
    V = V2.reshape(-1)
    policy = greedy(q_values(model, V, cfg.gamma), cfg.tie_tol)
    table = PolicyTable(policy.astype(np.uint8), n_actions=nA,
                        meta={"gamma": cfg.gamma, "epsilon": cfg.epsilon,
                              "fingerprint": model.fingerprint()})
    return table, V, stats


def dense_backup(V, P, R, gamma):
    """Q[s, a] = R[s, a] + gamma * sum_s' P[a, s, s'] V[s'] for dense P (A, S, S)."""
    return R + gamma * np.einsum("ast,t->sa", P, V)


def solve_dense(P, R, config=None):
    """Value iteration on an explicit MDP; same stopping and tie rules as
    ``value_iteration``.  Returns ``(policy, V, stats)``."""
    cfg = config or SolverConfig()
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    V = np.zeros(P.shape[1])
    stats = SolverStats(multiplies=P.size)
    t0 = time.perf_counter()
    for it in range(1, cfg.max_iter + 1):
        V_new = dense_backup(V, P, R, cfg.gamma).max(axis=1)
        res = float(np.max(np.abs(V_new - V)))
        stats.residuals.append(res)
        V = V_new
        if res <= cfg.epsilon:
            stats.converged = True
            break
    stats.iterations = it
    stats.wall_time_s = time.perf_counter() - t0
    if not stats.converged:
        raise NonConvergenceError(
            f"value iteration did not reach epsilon={cfg.epsilon} in {cfg.max_iter} iterations",
            residual=stats.final_residual, iterations=stats.iterations)
    return greedy(dense_backup(V, P, R, cfg.gamma), cfg.tie_tol), V, stats


def evaluate_policy(P, R, policy, gamma):
    """Exact discounted value of a stationary deterministic policy."""
    P = np.asarray(P)
    S = P.shape[1]
    idx = np.arange(S)
    P_pi = P[policy, idx, :]
    R_pi = np.asarray(R)[idx, policy]
    return np.linalg.solve(np.eye(S) - gamma * P_pi, R_pi)


# --- policy table -----------------------------------------------------------------


@dataclass
class PolicyTable:
    actions: np.ndarray
    n_actions: int = 11
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.uint8)
        if self.actions.size and int(self.actions.max()) >= self.n_actions:
            raise EncodingError("policy holds an action id beyond n_actions")

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, s):
        return int(self.actions[s])


def pack_policy(actions):
    """Two 4-bit action ids per byte; the even state sits in the low nibble."""
    a = np.asarray(actions, dtype=np.int64)
    if a.size and (a.min() < 0 or a.max() > 15):
        raise EncodingError("action ids must fit in 4 bits")
    if len(a) % 2:
        a = np.append(a, 0)
    return (a[0::2] | (a[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_policy(data, n_states):
    b = np.frombuffer(bytes(data), dtype=np.uint8)
    if len(b) != (n_states + 1) // 2:
        raise EncodingError(f"expected {(n_states + 1) // 2} bytes for {n_states} states, got {len(b)}")
    out = np.empty(2 * len(b), dtype=np.uint8)
    out[0::2] = b & 0x0F
    out[1::2] = b >> 4
    return out[:n_states]


POLICY_MAGIC = b"MPOL"
POLICY_VERSION = 1
_POL_HEADER = struct.Struct("<4sBI")


def _checksum(payload):
    return int(np.frombuffer(payload, dtype=np.uint8).sum(dtype=np.uint64)) % (1 << 32)


def encode_policy(policy):
    payload = pack_policy(policy.actions)
    return (_POL_HEADER.pack(POLICY_MAGIC, POLICY_VERSION, len(policy))
            + payload + struct.pack("<I", _checksum(payload)))


def decode_policy(data, n_actions=16):
    if len(data) < _POL_HEADER.size + 4:
        raise EncodingError("policy file is truncated")
    magic, version, n = _POL_HEADER.unpack_from(data)
    if magic != POLICY_MAGIC:
        raise EncodingError(f"bad policy magic {magic!r}")
    if version != POLICY_VERSION:
        raise EncodingError(f"unsupported policy version {version}")
    payload = data[_POL_HEADER.size:-4]
    (stored,) = struct.unpack("<I", data[-4:])
    if stored != _checksum(payload):
        raise EncodingError("policy checksum mismatch")
    return PolicyTable(unpack_policy(payload, n), n_actions=n_actions)


def write_policy(policy, path):
    Path(path).write_bytes(encode_policy(policy))
    return Path(path)


def read_policy(path, n_actions=16):
    return decode_policy(Path(path).read_bytes(), n_actions)
