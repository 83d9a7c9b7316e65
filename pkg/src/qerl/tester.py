"""Tested agent-environment interactions on small dense registers.

The joint system is ``(R_A, R_C, R_E, T_1, ..., T_k)``: the agent's private
register, the shared communication register, the environment's private
register, and one fresh tester subsystem per tested move.  Actors are given as
per-move unitary dilations on ``(private, comm, ancilla)`` with the ancilla
starting in ``|0>`` and traced out afterwards, so every move is a CPTP map on
``(private, comm)``.

A tester map after a move is controlled on the classical basis of ``R_C`` and
acts on a fresh subsystem only.  The classical tester adds the symbol into the
fresh subsystem modulo its dimension, which copies ``|x>|0> -> |x>|x>``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .constants import DENSITY_DIM_CAP, STATE_TOL
from .quantum_core import (
    DensityMatrix,
    LayoutError,
    ResourceError,
    UnitaryOp,
    apply_kraus,
    apply_unitary,
    dephase,
    partial_trace,
    trace_distance,
)

AGENT, ENVIRONMENT = "agent", "environment"
INVARIANCE_TOL = 1e-10
LABEL_TOL = 1e-12

COMM = 1
CORE = (0, 1, 2)


class InapplicableError(ValueError):
    """A construction was asked for outside its preconditions."""


def _unitary_check(u: np.ndarray, what: str) -> None:
    d = u.shape[0]
    if u.shape != (d, d) or np.max(np.abs(u.conj().T @ u - np.eye(d))) > 1e-9:
        raise ValueError(f"{what} is not unitary")


def _as_density(state, dim: int) -> np.ndarray:
    s = np.asarray(state, dtype=complex)
    if s.ndim == 1:
        if s.shape != (dim,):
            raise LayoutError(f"initial state has length {s.shape[0]}, expected {dim}")
        s = np.outer(s, s.conj()) / np.vdot(s, s).real
    if s.shape != (dim, dim):
        raise LayoutError(f"initial state has shape {s.shape}, expected {(dim, dim)}")
    DensityMatrix((dim,), s)
    return s


def dilate(kraus: Sequence[np.ndarray]) -> tuple[np.ndarray, int]:
    """Complete the Stinespring isometry of ``kraus`` to a unitary.

    Returns ``(U, ancilla_dim)`` with ``U`` on ``(system, ancilla)`` row-major and
    ``U (|psi> |0>) = sum_j K_j |psi> |j>``.
    """
    ops = [np.asarray(k, dtype=complex) for k in kraus]
    d = ops[0].shape[0]
    a = len(ops)
    v = np.zeros((d * a, d), dtype=complex)
    for j, k in enumerate(ops):
        v[j::a, :] = k
    if np.max(np.abs(v.conj().T @ v - np.eye(d))) > 1e-9:
        raise ValueError("Kraus operators are not trace preserving")
    u_full = np.linalg.svd(v, full_matrices=True)[0]
    complement = u_full[:, d:]
    u = np.zeros((d * a, d * a), dtype=complex)
    fresh = np.arange(d) * a
    u[:, fresh] = v
    u[:, np.setdiff1d(np.arange(d * a), fresh)] = complement
    return u, a


def classical_kraus(transition: np.ndarray) -> list[np.ndarray]:
    """Kraus operators ``sqrt(T[o, i]) |o><i|`` of a column-stochastic matrix."""
    t = np.asarray(transition, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.any(t < -STATE_TOL) or np.max(np.abs(t.sum(axis=0) - 1)) > 1e-9:
        raise ValueError("transition matrix must be column-stochastic")
    d = t.shape[0]
    out = []
    for o, i in zip(*np.nonzero(t > 0)):
        k = np.zeros((d, d), dtype=complex)
        k[o, i] = np.sqrt(t[o, i])
        out.append(k)
    return out


@dataclass(frozen=True, eq=False)
class ChannelActor:
    """An agent or environment given by per-move dilations.

    ``unitaries[i]`` is applied on the actor's ``i``-th move (the last one is
    reused if the interaction runs longer).  With ``classical_interface`` the
    communication register is dephased whenever it is handed to or from the
    actor.
    """

    role: str
    private_dim: int
    comm_dim: int
    unitaries: tuple[np.ndarray, ...]
    ancilla_dim: int = 1
    initial_state: np.ndarray | None = None
    classical_interface: bool = False
    name: str = ""
    labels: tuple[np.ndarray, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.role not in (AGENT, ENVIRONMENT):
            raise ValueError(f"role must be {AGENT!r} or {ENVIRONMENT!r}")
        if min(self.private_dim, self.comm_dim, self.ancilla_dim) < 1:
            raise LayoutError("register dimensions must be positive")
        if not self.unitaries:
            raise ValueError("an actor needs at least one move")
        d = self.private_dim * self.comm_dim * self.ancilla_dim
        us = []
        for i, u in enumerate(self.unitaries):
            u = np.array(u, dtype=complex)
            if u.shape != (d, d):
                raise LayoutError(f"move {i} dilation has shape {u.shape}, expected {(d, d)}")
            _unitary_check(u, f"move {i} dilation")
            u.setflags(write=False)
            us.append(u)
        object.__setattr__(self, "unitaries", tuple(us))
        init = self.initial_state
        if init is None:
            init = np.zeros(self.private_dim)
            init[0] = 1
        object.__setattr__(self, "initial_state", _as_density(init, self.private_dim))

    @classmethod
    def from_kraus(cls, role, private_dim, comm_dim, kraus_per_move, initial_state=None, name=""):
        dilations = [dilate(ks) for ks in kraus_per_move]
        a = max(n for _, n in dilations)
        if any(n != a for _, n in dilations):
            # pad every move to a common ancilla size with zero Kraus operators
            d = private_dim * comm_dim
            padded = [list(ks) + [np.zeros((d, d))] * (a - len(ks)) for ks in kraus_per_move]
            dilations = [dilate(ks) for ks in padded]
        return cls(role, private_dim, comm_dim, tuple(u for u, _ in dilations), a, initial_state, name=name)

    @classmethod
    def from_unitaries(cls, role, private_dim, comm_dim, unitaries, initial_state=None, name=""):
        return cls(role, private_dim, comm_dim, tuple(unitaries), 1, initial_state, name=name)

    @classmethod
    def classical(cls, role, private_dim, comm_dim, transitions, initial_label=0, name="", labels=None):
        """Classical actor from column-stochastic matrices over ``(memory, symbol)``."""
        init = np.zeros(private_dim)
        init[initial_label] = 1
        kraus = [classical_kraus(t) for t in transitions]
        actor = cls.from_kraus(role, private_dim, comm_dim, kraus, init, name=name)
        return replace(actor, labels=labels) if labels is not None else actor

    @property
    def dim(self) -> int:
        return self.private_dim * self.comm_dim

    def unitary(self, move: int) -> np.ndarray:
        return self.unitaries[min(move, len(self.unitaries) - 1)]

    @cached_property
    def _kraus(self) -> tuple[tuple[np.ndarray, ...], ...]:
        d, a = self.dim, self.ancilla_dim
        out = []
        for u in self.unitaries:
            blocks = u.reshape(d, a, d, a)[:, :, :, 0]
            ks = tuple(blocks[:, j, :] for j in range(a) if np.max(np.abs(blocks[:, j, :])) > 0)
            out.append(ks)
        return tuple(out)

    def kraus(self, move: int) -> tuple[np.ndarray, ...]:
        return self._kraus[min(move, len(self._kraus) - 1)]

    def channel(self, move: int, rho: np.ndarray) -> np.ndarray:
        """Apply this actor's ``move`` to a state on ``(private, comm)``."""
        return sum(k @ rho @ k.conj().T for k in self.kraus(move))

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "name": self.name,
            "private_dim": self.private_dim,
            "comm_dim": self.comm_dim,
            "ancilla_dim": self.ancilla_dim,
            "classical_interface": self.classical_interface,
            "initial_state": _encode(self.initial_state),
            "unitaries": [_encode(u) for u in self.unitaries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelActor":
        return cls(
            d["role"], int(d["private_dim"]), int(d["comm_dim"]),
            tuple(_decode(u) for u in d["unitaries"]), int(d.get("ancilla_dim", 1)),
            _decode(d["initial_state"]), bool(d.get("classical_interface", False)), d.get("name", ""),
        )


def _encode(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=complex)
    return {"real": a.real.tolist(), "imag": a.imag.tolist()}


def _decode(d) -> np.ndarray:
    if isinstance(d, dict):
        return np.asarray(d["real"], dtype=float) + 1j * np.asarray(d["imag"], dtype=float)
    return np.asarray(d, dtype=complex)


def classicalize(actor: ChannelActor) -> ChannelActor:
    """The same actor with a classical-basis measurement on both sides of every move."""
    name = actor.name + "+dephased" if actor.name else "dephased"
    return replace(actor, classical_interface=True, name=name)


@dataclass(frozen=True, eq=False)
class Tester:
    """Classically controlled maps applied after each move.

    ``kind`` is ``classical``, ``sporadic`` (untested for the first
    ``untested_steps`` moves, classical afterwards) or ``custom``, where
    ``maps[i]`` has shape ``(comm_dim, d_T, d_T)`` and holds ``U^x`` for the
    ``i``-th tested move.

    Classical copies are measure-and-copy: the fresh record is decohered right
    after the copy, as if a second copy were taken and discarded.  With
    ``coherent_copy`` the bare unitary copy is kept instead; later moves that
    rotate ``R_C`` can then leave coherences between earlier records.
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str = "classical"
    untested_steps: int = 0
    maps: tuple[np.ndarray, ...] = ()
    coherent_copy: bool = False

    def __post_init__(self):
        if self.kind not in ("classical", "sporadic", "custom"):
            raise ValueError(f"unknown tester kind {self.kind!r}")
        if self.untested_steps < 0:
            raise ValueError("untested_steps must be non-negative")
        if self.kind == "custom":
            if not self.maps:
                raise ValueError("a custom tester needs at least one map")
            ms = []
            for i, m in enumerate(self.maps):
                m = np.array(m, dtype=complex)
                if m.ndim != 3 or m.shape[1] != m.shape[2]:
                    raise LayoutError(f"custom map {i} must have shape (symbols, d, d)")
                for x in range(m.shape[0]):
                    _unitary_check(m[x], f"custom map {i}, symbol {x}")
                m.setflags(write=False)
                ms.append(m)
            object.__setattr__(self, "maps", tuple(ms))

    @classmethod
    def classical(cls, coherent_copy: bool = False) -> "Tester":
        return cls("classical", coherent_copy=coherent_copy)

    @classmethod
    def sporadic(cls, untested_steps: int) -> "Tester":
        return cls("sporadic", int(untested_steps))

    @classmethod
    def custom(cls, maps) -> "Tester":
        return cls("custom", 0, tuple(maps))

    @classmethod
    def trivial(cls, comm_dim: int, register_dim: int | None = None) -> "Tester":
        d = register_dim or comm_dim
        return cls.custom([np.stack([np.eye(d)] * comm_dim)])

    @classmethod
    def random(cls, comm_dim: int, register_dim: int, moves: int, rng: np.random.Generator) -> "Tester":
        maps = [np.stack([_haar(register_dim, rng) for _ in range(comm_dim)]) for _ in range(moves)]
        return cls.custom(maps)

    @property
    def is_classical(self) -> bool:
        if self.coherent_copy:
            return False
        return self.kind == "classical" or (self.kind == "sporadic" and self.untested_steps == 0)

    def tests(self, move: int) -> bool:
        return self.kind != "sporadic" or move >= self.untested_steps

    def register_dim(self, comm_dim: int) -> int:
        return self.maps[0].shape[1] if self.kind == "custom" else comm_dim

    def blocks(self, tested_index: int, comm_dim: int) -> np.ndarray:
        if self.kind == "custom":
            m = self.maps[min(tested_index, len(self.maps) - 1)]
            if m.shape[0] != comm_dim:
                raise LayoutError(f"custom map has {m.shape[0]} symbols, register has {comm_dim}")
            return m
        return np.stack([np.roll(np.eye(comm_dim), x, axis=0) for x in range(comm_dim)])

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "sporadic":
            d["untested_steps"] = self.untested_steps
        if self.kind == "custom":
            d["maps"] = len(self.maps)
        elif self.coherent_copy:
            d["coherent_copy"] = True
        return d


def _haar(d: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


@dataclass(frozen=True)
class QuantumHistoryState:
    """State of the tester register after ``t`` moves."""

    rho: DensityMatrix
    t: int
    tester: Tester
    joint: DensityMatrix | None = field(default=None, repr=False)

    def history_distribution(self) -> np.ndarray:
        return self.rho.diagonal()

    def off_diagonal_norm(self) -> float:
        m = self.rho.matrix
        return float(np.linalg.norm(m - np.diag(np.diag(m))))

    def history_strings(self, tol: float = STATE_TOL) -> dict[tuple[int, ...], float]:
        probs = self.history_distribution()
        return {self.rho.layout.digits(i): float(p) for i, p in enumerate(probs) if p > tol}


@dataclass
class InteractionTrace:
    """Final joint state plus the reduced core state after every move."""

    joint: DensityMatrix
    core_states: list[DensityMatrix]
    tester_registers: tuple[int, ...]
    movers: list[str]


def _check_pair(agent: ChannelActor, env: ChannelActor) -> None:
    if agent.role != AGENT or env.role != ENVIRONMENT:
        raise ValueError("expected an (agent, environment) pair")
    if agent.comm_dim != env.comm_dim:
        raise LayoutError(f"communication dims differ: {agent.comm_dim} vs {env.comm_dim}")


def simulate_interaction(agent: ChannelActor, env: ChannelActor, t: int, tester: Tester | None = None,
                         first: str = ENVIRONMENT) -> InteractionTrace:
    """Alternate the two actors on ``R_C`` for ``t`` moves, testing after each."""
    _check_pair(agent, env)
    if t < 0:
        raise ValueError("t must be non-negative")
    dc = agent.comm_dim
    tested = sum(tester.tests(m) for m in range(t)) if tester is not None else 0
    dt = tester.register_dim(dc) if tester is not None else 1
    final_dim = agent.private_dim * dc * env.private_dim * dt**tested
    if final_dim > DENSITY_DIM_CAP:
        raise ResourceError(f"joint dimension {final_dim} exceeds the density cap {DENSITY_DIM_CAP}")
    c0 = np.zeros((dc, dc))
    c0[0, 0] = 1
    init = np.kron(np.kron(agent.initial_state, c0), env.initial_state)
    rho = DensityMatrix((agent.private_dim, dc, env.private_dim), init, check=False)
    order = [env, agent] if first == ENVIRONMENT else [agent, env]
    counts = {AGENT: 0, ENVIRONMENT: 0}
    core, movers, t_regs, n_tested = [], [], [], 0
    for move in range(t):
        mover, other = order[move % 2], order[(move + 1) % 2]
        reg = 0 if mover.role == AGENT else 2
        if mover.classical_interface:
            rho = dephase(rho, [COMM])
        rho = apply_kraus(rho, [reg, COMM], mover.kraus(counts[mover.role]))
        counts[mover.role] += 1
        if mover.classical_interface or other.classical_interface:
            rho = dephase(rho, [COMM])
        if tester is not None and tester.tests(move):
            fresh = np.zeros((dt, dt))
            fresh[0, 0] = 1
            rho = rho.tensor(DensityMatrix((dt,), fresh, check=False))
            new = rho.layout.num_registers - 1
            rho = apply_unitary(rho, UnitaryOp((COMM, new), blocks=tester.blocks(n_tested, dc), check=False))
            if tester.kind != "custom" and not tester.coherent_copy:
                rho = dephase(rho, [new])
            t_regs.append(new)
            n_tested += 1
        core.append(partial_trace(rho, CORE))
        movers.append(mover.role)
    return InteractionTrace(rho, core, tuple(t_regs), movers)


def run_tested_interaction(agent: ChannelActor, env: ChannelActor, tester: Tester, t: int,
                           keep_joint: bool = False, first: str = ENVIRONMENT) -> QuantumHistoryState:
    trace = simulate_interaction(agent, env, t, tester, first)
    if trace.tester_registers:
        rho = partial_trace(trace.joint, trace.tester_registers)
    else:
        rho = DensityMatrix((1,), np.ones((1, 1)), check=False)
    return QuantumHistoryState(rho, t, tester, trace.joint if keep_joint else None)


@dataclass
class InvarianceReport:
    holds: bool
    max_trace_distance: float
    distances: list[float]

    def to_dict(self) -> dict:
        return {"holds": self.holds, "max_trace_distance": self.max_trace_distance,
                "distances": self.distances}


def verify_classical_interaction_invariance(agent: ChannelActor, env: ChannelActor, t: int,
                                            first: str = ENVIRONMENT) -> InvarianceReport:
    """Compare the core state with and without a classical tester after every move."""
    plain = simulate_interaction(agent, env, t, None, first).core_states
    tested = simulate_interaction(agent, env, t, Tester.classical(), first).core_states
    dists = [trace_distance(a, b) for a, b in zip(plain, tested)]
    worst = max(dists, default=0.0)
    return InvarianceReport(worst < INVARIANCE_TOL, worst, dists)


def is_classical_form(rho: DensityMatrix, tol: float = INVARIANCE_TOL) -> bool:
    """Structural test of ``sum_x |x><x|_C (x) tau_x`` with every ``tau_x`` separable.

    Separability of the private blocks is judged by the partial transpose,
    which is exact when one side is a qubit and the other has dimension <= 3.
    """
    da, dc, de = rho.layout.dims
    m = rho.matrix
    if np.max(np.abs(m - dephase(rho, [COMM]).matrix)) > tol:
        return False
    t = m.reshape(da, dc, de, da, dc, de)
    for x in range(dc):
        block = t[:, x, :, :, x, :]
        pt = np.transpose(block, (0, 3, 2, 1)).reshape(da * de, da * de)
        if np.linalg.eigvalsh((pt + pt.conj().T) / 2).min() < -tol:
            return False
    return True


def classify_structurally(agent: ChannelActor, env: ChannelActor, t: int, first: str = ENVIRONMENT) -> bool:
    """True if the untested core state has classical form after every move."""
    return all(is_classical_form(r) for r in simulate_interaction(agent, env, t, None, first).core_states)


class _LabelTable:
    def __init__(self):
        self.items: list[np.ndarray] = []

    def index(self, m: np.ndarray) -> int:
        for i, item in enumerate(self.items):
            if item.shape == m.shape and np.max(np.abs(item - m)) < LABEL_TOL:
                return i
        self.items.append(m)
        return len(self.items) - 1


def _branch_step(actor: ChannelActor, move: int, eta: np.ndarray, x: int) -> list[tuple[float, np.ndarray, int]]:
    dc = actor.comm_dim
    cx = np.zeros((dc, dc))
    cx[x, x] = 1
    out = actor.channel(move, np.kron(eta, cx)).reshape(actor.private_dim, dc, actor.private_dim, dc)
    res = []
    for y in range(dc):
        block = out[:, y, :, y]
        p = float(np.trace(block).real)
        if p > LABEL_TOL:
            b = block / p
            res.append((p, (b + b.conj().T) / 2, y))
    return res


def build_classical_equivalent(agent: ChannelActor, env: ChannelActor, tester: Tester, t: int,
                               first: str = ENVIRONMENT) -> tuple[ChannelActor, ChannelActor]:
    """Classical actors whose memories are labels of the originals' private states.

    The original interaction is followed branch by branch with ``R_C`` in a
    classical state; each actor's memory becomes an index into the table of
    distinct private density matrices it passes through.
    """
    _check_pair(agent, env)
    if not tester.is_classical:
        report = verify_classical_interaction_invariance(agent, env, t, first)
        if not report.holds:
            raise InapplicableError(
                "interaction is not classical (distance "
                f"{report.max_trace_distance:.3g}) and the tester is not classical")
    actors = {AGENT: agent, ENVIRONMENT: env}
    tables = {AGENT: _LabelTable(), ENVIRONMENT: _LabelTable()}
    la = tables[AGENT].index(agent.initial_state)
    le = tables[ENVIRONMENT].index(env.initial_state)
    branches = {(la, 0, le): 1.0}
    moves: dict[str, list[dict]] = {AGENT: [], ENVIRONMENT: []}
    order = [ENVIRONMENT, AGENT] if first == ENVIRONMENT else [AGENT, ENVIRONMENT]
    for move in range(t):
        role = order[move % 2]
        actor, table = actors[role], tables[role]
        own = len(moves[role])
        trans: dict[tuple[int, int], list[tuple[float, int, int]]] = {}
        new: dict[tuple[int, int, int], float] = {}
        for (a, x, e), p in branches.items():
            mine = a if role == AGENT else e
            key = (mine, x)
            if key not in trans:
                trans[key] = [(q, table.index(eta), y) for q, eta, y in _branch_step(actor, own, table.items[mine], x)]
            for q, lab, y in trans[key]:
                nk = (lab, y, e) if role == AGENT else (a, y, lab)
                new[nk] = new.get(nk, 0.0) + p * q
        moves[role].append(trans)
        branches = new

    dc = agent.comm_dim
    built = {}
    for role, actor in actors.items():
        n = max(1, len(tables[role].items))
        mats = []
        for trans in moves[role] or [{}]:
            tm = np.eye(n * dc)
            for (lab, x), outs in trans.items():
                col = lab * dc + x
                tm[:, col] = 0
                for q, lab2, y in outs:
                    tm[lab2 * dc + y, col] += q
                tm[:, col] /= tm[:, col].sum()
            mats.append(tm)
        name = (actor.name or role) + "[classical]"
        built[role] = ChannelActor.classical(role, n, dc, mats, 0, name=name, labels=tuple(tables[role].items))
    return built[AGENT], built[ENVIRONMENT]


# ---------------------------------------------------------------- fixtures

def _perm_transition(d_priv: int, d_comm: int, fn) -> np.ndarray:
    """Deterministic transition ``(m, x) -> fn(m, x) = (m', y)``."""
    t = np.zeros((d_priv * d_comm, d_priv * d_comm))
    for m in range(d_priv):
        for x in range(d_comm):
            m2, y = fn(m, x)
            t[m2 * d_comm + y, m * d_comm + x] = 1
    return t


def classical_env_fixture() -> ChannelActor:
    # percept is the memory bit; memory accumulates the actions mod 2
    t = _perm_transition(2, 2, lambda m, x: ((m + x) % 2, m))
    return ChannelActor.classical(ENVIRONMENT, 2, 2, [t], name="parity-env")


def classical_agent_fixture() -> ChannelActor:
    t = _perm_transition(2, 2, lambda m, x: (1 - m, (x + m) % 2))
    return ChannelActor.classical(AGENT, 2, 2, [t], name="alternating-agent")


def stochastic_agent_fixture(p: float = 0.3) -> ChannelActor:
    """Emits action 1 with probability ``p`` regardless of the percept."""
    t = np.zeros((4, 4))
    for x in range(2):
        t[0 * 2 + 1, x] = p
        t[0 * 2 + 0, x] = 1 - p
        t[1 * 2 + 1, 2 + x] = p
        t[1 * 2 + 0, 2 + x] = 1 - p
    return ChannelActor.classical(AGENT, 2, 2, [t], name=f"coin-agent-{p}")


def _ry(angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def internally_quantum_agent() -> ChannelActor:
    """Rotates its qubit memory depending on the percept and answers ``x XOR 1``."""
    u = np.zeros((4, 4), dtype=complex)
    for x in range(2):
        r = _ry(np.pi / 3 if x == 0 else np.pi / 5)
        for m in range(2):
            for m2 in range(2):
                u[m2 * 2 + (1 - x), m * 2 + x] = r[m2, m]
    return ChannelActor.from_unitaries(AGENT, 2, 2, [u], name="rotating-agent")


def internally_quantum_env() -> ChannelActor:
    """Qubit memory rotated by the action; the percept is a fixed function of the action."""
    u = np.zeros((4, 4), dtype=complex)
    for x in range(2):
        r = _ry(np.pi / 4 * (1 + x))
        for m in range(2):
            for m2 in range(2):
                u[m2 * 2 + x, m * 2 + x] = r[m2, m]
    return ChannelActor.from_unitaries(ENVIRONMENT, 2, 2, [u], name="rotating-env")


HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def superposing_agent() -> ChannelActor:
    """Applies a Hadamard to ``R_C``: from ``|0>`` it emits an equal superposition."""
    return ChannelActor.from_unitaries(AGENT, 2, 2, [np.kron(np.eye(2), HADAMARD)], name="superposing-agent")


def superposing_env() -> ChannelActor:
    return ChannelActor.from_unitaries(ENVIRONMENT, 2, 2, [np.kron(np.eye(2), HADAMARD)], name="superposing-env")


def copying_env() -> ChannelActor:
    """Adds ``R_C`` into its memory modulo 2 (a CNOT from the register)."""
    u = np.zeros((4, 4), dtype=complex)
    for m in range(2):
        for x in range(2):
            u[((m + x) % 2) * 2 + x, m * 2 + x] = 1
    return ChannelActor.from_unitaries(ENVIRONMENT, 2, 2, [u], name="copying-env")


def grover_interaction_fixture(n: int = 4, marked: int = 1) -> tuple[ChannelActor, ChannelActor, int]:
    """Agent prepares the uniform superposition, environment phase-flips ``marked``,
    agent reflects about the mean.  Returns ``(agent, env, moves)``."""
    prep = np.fft.fft(np.eye(n), norm="ortho")  # first column is uniform
    diffusion = 2 * np.full((n, n), 1 / n) - np.eye(n)
    oracle = np.eye(n, dtype=complex)
    oracle[marked, marked] = -1
    agent = ChannelActor.from_unitaries(AGENT, 1, n, [prep, diffusion], name="grover-agent")
    env = ChannelActor.from_unitaries(ENVIRONMENT, 1, n, [np.eye(n), oracle], name="grover-env")
    return agent, env, 4


def final_comm_distribution(agent: ChannelActor, env: ChannelActor, t: int, first: str = ENVIRONMENT) -> np.ndarray:
    rho = simulate_interaction(agent, env, t, None, first).core_states[-1]
    return partial_trace(rho, [COMM]).diagonal()


def sample_comm_register(agent: ChannelActor, env: ChannelActor, t: int, rng: np.random.Generator,
                         shots: int, first: str = ENVIRONMENT) -> np.ndarray:
    """Measure ``R_C`` after ``t`` moves ``shots`` times; returns outcome counts."""
    p = np.clip(final_comm_distribution(agent, env, t, first), 0, None)
    return rng.multinomial(shots, p / p.sum())


@dataclass
class CorpusEntry:
    name: str
    agent: ChannelActor
    env: ChannelActor
    t: int
    classical: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "t": self.t, "classical": self.classical,
                "agent": self.agent.to_dict(), "env": self.env.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusEntry":
        return cls(d["name"], ChannelActor.from_dict(d["agent"]), ChannelActor.from_dict(d["env"]),
                   int(d["t"]), bool(d["classical"]))


def fixture_corpus() -> list[CorpusEntry]:
    """Small actor pairs (dims <= 4, t <= 4) labelled by whether they interact classically."""
    entries = [
        CorpusEntry("classical-deterministic", classical_agent_fixture(), classical_env_fixture(), 4, True),
        CorpusEntry("classical-stochastic", stochastic_agent_fixture(), classical_env_fixture(), 4, True),
        CorpusEntry("internally-quantum", internally_quantum_agent(), internally_quantum_env(), 4, True),
        CorpusEntry("dephased-quantum-agent", classicalize(internally_quantum_agent()), superposing_env(), 3, True),
        CorpusEntry("entangling", superposing_agent(), copying_env(), 3, False),
        CorpusEntry("entangling-env-dephased", superposing_agent(), classicalize(copying_env()), 3, True),
        CorpusEntry("entangling-agent-dephased", classicalize(superposing_agent()), copying_env(), 3, True),
        CorpusEntry("superposing-env", classical_agent_fixture(), superposing_env(), 3, False),
    ]
    return entries


def save_corpus(entries: Sequence[CorpusEntry], path) -> None:
    Path(path).write_text(json.dumps([e.to_dict() for e in entries], indent=1))


def load_corpus(path) -> list[CorpusEntry]:
    return [CorpusEntry.from_dict(d) for d in json.loads(Path(path).read_text())]


def _history_distance(a: QuantumHistoryState, b: QuantumHistoryState) -> float:
    if a.rho.layout.dims != b.rho.layout.dims:
        return 1.0
    return trace_distance(a.rho, b.rho)


def lemma_reports(entries: Sequence[CorpusEntry] | None = None, rng: np.random.Generator | None = None,
                  grover_n: int = 4) -> list[dict]:
    """Numerical checks of the four no-go statements on a corpus.

    Each report is ``{lemma, holds, max_trace_distance, details}``.
    """
    entries = list(fixture_corpus() if entries is None else entries)
    rng = np.random.default_rng(0) if rng is None else rng
    reports = []

    # classical interaction <=> invariance under a classical tester
    worst, agree, details = 0.0, True, {}
    for e in entries:
        rep = verify_classical_interaction_invariance(e.agent, e.env, e.t)
        structural = classify_structurally(e.agent, e.env, e.t)
        agree &= (rep.holds == structural == e.classical)
        if e.classical:
            worst = max(worst, rep.max_trace_distance)
        details[e.name] = {"invariant": rep.holds, "structural": structural,
                           "max_trace_distance": rep.max_trace_distance}
    reports.append({"lemma": "classical-interaction-invariance", "holds": bool(agree and worst < INVARIANCE_TOL),
                    "max_trace_distance": worst, "details": details})

    # classically interacting pairs have classical twins under any tester
    worst, details = 0.0, {}
    for e in entries:
        if not e.classical:
            continue
        dt = 2
        testers = {"classical": Tester.classical(),
                   "random": Tester.random(e.agent.comm_dim, dt, e.t, rng),
                   "sporadic-1": Tester.sporadic(1)}
        for tname, tester in testers.items():
            a2, e2 = build_classical_equivalent(e.agent, e.env, tester, e.t)
            d = _history_distance(run_tested_interaction(e.agent, e.env, tester, e.t),
                                  run_tested_interaction(a2, e2, tester, e.t))
            worst = max(worst, d)
            details[f"{e.name}/{tname}"] = d
    reports.append({"lemma": "classical-equivalent-any-tester", "holds": worst < INVARIANCE_TOL,
                    "max_trace_distance": worst, "details": details})

    # every pair has classical twins under the classical tester
    worst, details = 0.0, {}
    tc = Tester.classical()
    for e in entries:
        a2, e2 = build_classical_equivalent(e.agent, e.env, tc, e.t)
        d = _history_distance(run_tested_interaction(e.agent, e.env, tc, e.t),
                              run_tested_interaction(a2, e2, tc, e.t))
        worst = max(worst, d)
        details[e.name] = d
    reports.append({"lemma": "classical-tester-equivalent", "holds": worst < INVARIANCE_TOL,
                    "max_trace_distance": worst, "details": details})

    # a dephased environment forces a classical interaction and kills the search advantage
    worst, details = 0.0, {}
    for e in entries:
        rep = verify_classical_interaction_invariance(e.agent, classicalize(e.env), e.t)
        worst = max(worst, rep.max_trace_distance)
        details[e.name] = rep.max_trace_distance
    agent, env, moves = grover_interaction_fixture(grover_n)
    coherent = float(final_comm_distribution(agent, env, moves)[1])
    dephased = float(final_comm_distribution(agent, classicalize(env), moves)[1])
    details["grover"] = {"coherent_success": coherent, "dephased_success": dephased, "guessing": 1 / grover_n}
    ok = worst < INVARIANCE_TOL and abs(dephased - 1 / grover_n) < INVARIANCE_TOL
    reports.append({"lemma": "classicalization", "holds": bool(ok), "max_trace_distance": worst,
                    "details": details})
    return reports
