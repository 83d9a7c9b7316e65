"""Unitary oracles built from epochal environments.

Every oracle call stands for one full epoch of interaction, so a handle
accounts ``M`` interaction steps per query.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent_env import EpochalDeterministicEnv, RewardedPercept, StochasticEpochalEnv, ValidationError
from .constants import DENSE_DIM_CAP, DISENTANGLE_TOL, DISTRIBUTION_TOL
from .quantum_core import RegisterLayout, ResourceError, StateVector, UnitaryOp, apply_unitary_array

EXPORT_MAGIC = b"QORC"


class OracleConstructionError(RuntimeError):
    """An oracle failed a structural check while being built."""


@dataclass
class OracleHandle:
    kind: str
    layout: RegisterLayout
    ops: tuple[UnitaryOp, ...]
    M: int
    env_fingerprint: str
    self_inverse: bool = False
    info: dict = field(default_factory=dict)
    query_counter: int = 0

    @property
    def cost_per_call(self) -> int:
        return self.M

    @property
    def interaction_steps(self) -> int:
        return self.query_counter * self.M

    def count(self, calls: int = 1) -> None:
        self.query_counter += int(calls)

    def reset_counter(self) -> None:
        self.query_counter = 0

    @property
    def unitary(self) -> UnitaryOp:
        """The oracle as a single operator on all registers of ``layout``."""
        if len(self.ops) == 1:
            return self.ops[0]
        d = self.layout.total_dim
        if d > 2**12:
            raise ResourceError(f"refusing to materialize a {d}-dimensional product")
        cols = np.eye(d, dtype=complex)
        for op in self.ops:
            cols = np.stack([apply_unitary_array(c, self.layout, op) for c in cols.T], axis=1)
        return UnitaryOp(tuple(range(self.layout.num_registers)), cols)

    def apply_array(self, amps: np.ndarray, inverse: bool = False) -> np.ndarray:
        """One oracle call on a raw amplitude array (counts one query)."""
        self.count()
        ops = reversed(self.ops) if inverse else self.ops
        for op in ops:
            amps = apply_unitary_array(amps, self.layout, op.dagger() if inverse else op)
        return amps

    def apply(self, state: StateVector, inverse: bool = False) -> StateVector:
        if state.layout.dims != self.layout.dims:
            raise ValidationError("state layout does not match the oracle layout")
        return StateVector(self.layout, self.apply_array(state.amplitudes, inverse))


# ---------------------------------------------------------------- encodings


def _bits(count: int) -> int:
    return max(0, math.ceil(math.log2(count))) if count > 1 else 0


@dataclass(frozen=True)
class PerceptBlockCode:
    """Binary encoding of the M rewarded percepts of an epoch.

    Each step contributes ``percept_bits + reward_bits`` bits, first step most
    significant; the register combines codes by bitwise XOR, so every
    non-identity element has order 2.
    """

    M: int
    num_percepts: int
    lambda_max: int

    @property
    def percept_bits(self) -> int:
        return _bits(self.num_percepts)

    @property
    def reward_bits(self) -> int:
        return _bits(self.lambda_max + 1)

    @property
    def step_bits(self) -> int:
        return self.percept_bits + self.reward_bits

    @property
    def dim(self) -> int:
        return 2 ** (self.M * self.step_bits)

    def encode(self, percepts, rewards) -> int:
        code = 0
        for p, r in zip(percepts, rewards):
            code = (code << self.step_bits) | (int(p) << self.reward_bits) | int(r)
        return code

    def decode(self, code: int) -> list[RewardedPercept]:
        out = []
        rmask = (1 << self.reward_bits) - 1
        for i in reversed(range(self.M)):
            chunk = (int(code) >> (i * self.step_bits)) & ((1 << self.step_bits) - 1)
            out.append(RewardedPercept(chunk >> self.reward_bits, chunk & rmask))
        return out

    def total_rewards(self) -> np.ndarray:
        """Total reward encoded in every register value (padding included)."""
        codes = np.arange(self.dim, dtype=np.int64)
        total = np.zeros(self.dim, dtype=np.int64)
        rmask = (1 << self.reward_bits) - 1
        for i in range(self.M):
            total += (codes >> (i * self.step_bits)) & rmask
        return total


def percept_block_code(env: EpochalDeterministicEnv) -> PerceptBlockCode:
    return PerceptBlockCode(env.M, env.alphabet.num_percepts, env.lambda_max)


def _env_codes(env: EpochalDeterministicEnv, code: PerceptBlockCode) -> np.ndarray:
    return np.array([code.encode(env.percept_table[a], env.reward_table[a]) for a in range(env.N)],
                    dtype=np.int64)


# ---------------------------------------------------------------- deterministic oracles


def build_reversible_env_unitary(env: EpochalDeterministicEnv, block_dim: int | None = None) -> OracleHandle:
    """``|a>|y> -> |a>|y XOR code(a)>`` on (sequence, percept-block) registers."""
    code = percept_block_code(env)
    if block_dim is not None and block_dim != code.dim:
        raise ValidationError(f"percept register dimension {block_dim} does not match the "
                              f"binary group encoding of dimension {code.dim}")
    layout = RegisterLayout((env.N, code.dim))
    if layout.total_dim > DENSE_DIM_CAP:
        raise ResourceError(f"U_E needs dimension {layout.total_dim} above the dense cap")
    codes = _env_codes(env, code)
    a = np.repeat(np.arange(env.N, dtype=np.int64), code.dim)
    y = np.tile(np.arange(code.dim, dtype=np.int64), env.N)
    perm = a * code.dim + (y ^ codes[a])
    op = UnitaryOp((0, 1), permutation=perm)
    return OracleHandle("reversible", layout, (op,), env.M, env.fingerprint(), self_inverse=True,
                        info={"block_code": code, "codes": codes})


def _check_binary(env: EpochalDeterministicEnv) -> np.ndarray:
    tot = env.total_rewards()
    if np.any((tot != 0) & (tot != 1)):
        raise ValidationError("phase-flip oracle needs total epoch rewards in {0, 1}")
    return tot


def build_phase_flip_oracle(env: EpochalDeterministicEnv) -> OracleHandle:
    """Diagonal ``(-1)^Lambda(a)`` built by phase kick-back: U_E, then a phase on
    the reward bits of the percept block, then U_E again.  The percept block must
    return to all-zeros; anything else means the table is not reversible."""
    tot = _check_binary(env)
    code = percept_block_code(env)
    codes = _env_codes(env, code)
    z_lambda = np.where(code.total_rewards() == 1, -1.0, 1.0)
    N = env.N
    if N * code.dim <= DENSE_DIM_CAP:
        # dense route: run the three unitaries on a generic superposition over a
        ue = build_reversible_env_unitary(env)
        layout = ue.layout
        coeff = np.exp(2j * np.pi * np.arange(N) / (N + 1)) / math.sqrt(N)
        psi = np.zeros((N, code.dim), dtype=complex)
        psi[:, 0] = coeff
        psi = apply_unitary_array(psi.reshape(-1), layout, ue.ops[0])
        psi = apply_unitary_array(psi, layout, UnitaryOp((1,), diagonal=z_lambda))
        psi = apply_unitary_array(psi, layout, ue.ops[0]).reshape(N, code.dim)
        leak = float(np.sum(np.abs(psi[:, 1:]) ** 2))
        diag = psi[:, 0] / coeff
        route = "dense"
    else:
        # same conjugation done directly on basis indices
        y = codes
        phase = z_lambda[y]
        back = y ^ codes
        leak = float(np.count_nonzero(back))
        diag = phase.astype(complex)
        route = "index"
    if leak > DISENTANGLE_TOL:
        raise OracleConstructionError(f"ancilla did not disentangle (residual weight {leak:.3g})")
    diag = np.where(diag.real < 0, -1.0, 1.0)
    if np.any(diag != np.where(tot == 1, -1.0, 1.0)):
        raise OracleConstructionError("phase kick-back disagrees with the reward table")
    op = UnitaryOp((0,), diagonal=diag)
    return OracleHandle("phase_flip", RegisterLayout((N,)), (op,), env.M, env.fingerprint(),
                        self_inverse=True, info={"marked": np.flatnonzero(tot == 1), "route": route,
                                                 "ancilla_leak": leak})


def _default_count_dim(env: EpochalDeterministicEnv) -> int:
    return 1 << (env.M * env.lambda_max).bit_length()


def build_counting_oracle(env: EpochalDeterministicEnv, count_dim: int | None = None,
                          include_percepts: bool = False) -> OracleHandle:
    """``|a>|y> -> |a>|y XOR total(a)>``.

    The percept block that the environment writes is computed and uncomputed
    inside the call, so by default the handle acts on (sequence, count) only.
    ``include_percepts`` keeps that register explicit:
    ``|a>|b>|y> -> |a>|b>|y XOR total(b XOR code(a))>``.
    """
    D = _default_count_dim(env) if count_dim is None else int(count_dim)
    if D <= env.M * env.lambda_max:
        raise ValidationError(f"count register of dimension {D} cannot hold totals up to "
                              f"{env.M * env.lambda_max}")
    if D & (D - 1):
        raise ValidationError("count register dimension must be a power of two")
    tot = env.total_rewards()
    N = env.N
    if include_percepts:
        code = percept_block_code(env)
        codes = _env_codes(env, code)
        block_tot = code.total_rewards()
        layout = RegisterLayout((N, code.dim, D))
        if layout.total_dim > DENSE_DIM_CAP:
            raise ResourceError("explicit percept register exceeds the dense cap")
        a, b, y = np.meshgrid(np.arange(N), np.arange(code.dim), np.arange(D), indexing="ij")
        a, b, y = a.ravel(), b.ravel(), y.ravel()
        s = block_tot[b ^ codes[a]] % D
        perm = (a * code.dim + b) * D + (y ^ s)
        op = UnitaryOp((0, 1, 2), permutation=perm)
    else:
        layout = RegisterLayout((N, D))
        if layout.total_dim > DENSE_DIM_CAP:
            raise ResourceError("counting oracle exceeds the dense cap")
        a = np.repeat(np.arange(N), D)
        y = np.tile(np.arange(D), N)
        perm = a * D + (y ^ (tot[a] % D))
        op = UnitaryOp((0, 1), permutation=perm)
    return OracleHandle("counting", layout, (op,), env.M, env.fingerprint(), self_inverse=True,
                        info={"totals": tot, "count_dim": D, "include_percepts": include_percepts,
                              "max_total": env.M * env.lambda_max})


# ---------------------------------------------------------------- stochastic oracles


def rotation_blocks(theta: np.ndarray, reflection: bool = False) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    b = np.empty((theta.size, 2, 2))
    b[:, 0, 0] = c
    b[:, 1, 0] = s
    if reflection:
        b[:, 0, 1] = s
        b[:, 1, 1] = -c
    else:
        b[:, 0, 1] = -s
        b[:, 1, 1] = c
    return b


def build_stochastic_oracle(env: StochasticEpochalEnv, self_inverse: bool = False) -> OracleHandle:
    """``|a>|0> -> |a>(cos t_a|0> + sin t_a|1>)`` with ``sin^2 t_a = p_r(a)``.

    The common +1 eigenstate of the percept extension is isometric to this
    two-dimensional reward-register picture, so it is left implicit.  With
    ``self_inverse`` each block is the reflection ``[[c, s], [s, -c]]``, which
    has the same first column.
    """
    rp = np.asarray(env.reward_prob)
    if np.any(rp < 0) or np.any(rp > 1):
        raise ValidationError("reward probabilities must lie in [0, 1]")
    theta = np.arcsin(np.sqrt(rp))
    layout = RegisterLayout((env.N, 2))
    op = UnitaryOp((0, 1), blocks=rotation_blocks(theta, self_inverse))
    return OracleHandle("stochastic", layout, (op,), env.M, env.fingerprint(), self_inverse=self_inverse,
                        info={"theta": theta, "reward_prob": rp})


def _householder_to(v: np.ndarray) -> np.ndarray:
    """Real reflection mapping basis vector 0 onto the unit vector ``v``."""
    d = v.size
    e0 = np.zeros(d)
    e0[0] = 1.0
    u = e0 - v
    nu = np.dot(u, u)
    if nu < 1e-30:
        return np.eye(d)
    return np.eye(d) - 2 * np.outer(u, u) / nu


def build_purified_env_unitary(env: StochasticEpochalEnv) -> OracleHandle:
    """Purified S_E on (sequence, percepts, percept copy, reward) registers.

    ``|a>|0>|0>|0> -> |a> sum_s sqrt(P(s)) |s>|s>|lambda(s, a)>``, realized as a
    preparation unitary on the doubled percept register followed by a reward
    write ``|a>|s>|s'>|l> -> |a>|s>|s'>|l + lambda(s, a) mod L>``.
    """
    if env.percept_probs is None:
        raise ValidationError("purified oracle needs a percept distribution")
    pp = np.asarray(env.percept_probs, dtype=float)
    if pp.min() < 0 or abs(pp.sum() - 1) > DISTRIBUTION_TOL:
        raise ValidationError("percept distribution is not normalized")
    S = pp.size
    N = env.N
    L = env.lambda_max + 1
    layout = RegisterLayout((N, S, S, L))
    if layout.total_dim > DENSE_DIM_CAP:
        raise ResourceError(f"purified oracle needs dimension {layout.total_dim} above the dense cap")
    if S * S > 2**12:
        raise ResourceError("percept preparation too large to hold densely")
    target = np.zeros(S * S)
    target[np.arange(S) * S + np.arange(S)] = np.sqrt(pp)
    prep = UnitaryOp((1, 2), _householder_to(target))
    a, s, s2, lam = np.meshgrid(np.arange(N), np.arange(S), np.arange(S), np.arange(L), indexing="ij")
    a, s, s2, lam = (x.ravel() for x in (a, s, s2, lam))
    new_lam = (lam + env.pair_rewards[s, a]) % L
    perm = ((a * S + s) * S + s2) * L + new_lam
    write = UnitaryOp((0, 1, 2, 3), permutation=perm)
    # |pi> = S_E (uniform over a) |000>; target = its rewarded component
    rewarded = (env.pair_rewards > 0).astype(float)  # (S, N)
    gamma_sq = float(pp @ rewarded.mean(axis=1))
    return OracleHandle("purified", layout, (prep, write), env.M, env.fingerprint(), self_inverse=False,
                        info={"gamma": math.sqrt(gamma_sq), "gamma_sq": gamma_sq, "percept_probs": pp,
                              "pair_rewards": env.pair_rewards})


# ---------------------------------------------------------------- export


def export_oracle(handle: OracleHandle, path: str | Path) -> dict:
    """Write the dense oracle matrix as a JSON header plus row-major
    little-endian complex128 data.

    File layout: ``QORC`` magic, little-endian uint32 header length, UTF-8 JSON
    header, matrix bytes.
    """
    mat = np.ascontiguousarray(handle.unitary.matrix, dtype="<c16")
    header = {"dims": list(handle.layout.dims), "kind": handle.kind, "env_fingerprint": handle.env_fingerprint,
              "shape": list(mat.shape), "dtype": "complex128", "byte_order": "little", "order": "row-major"}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(EXPORT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(mat.tobytes(order="C"))
    return header


def load_oracle_matrix(path: str | Path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != EXPORT_MAGIC:
            raise ValidationError("not an oracle export file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        data = fh.read()
    shape = tuple(header["shape"])
    mat = np.frombuffer(data, dtype="<c16")
    if mat.size != shape[0] * shape[1]:
        raise ValidationError("oracle export is truncated")
    return header, mat.reshape(shape).astype(complex)
