"""Dense linear algebra over registers of arbitrary (qudit) dimension.

Every register is a qudit of its own dimension; a layout is the ordered tuple
of those dimensions and flat indices follow row-major (first register most
significant) order, the same convention as ``numpy.ravel_multi_index``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import DENSE_DIM_CAP, DENSITY_DIM_CAP, STATE_TOL, UNITARY_TOL


class LayoutError(ValueError):
    """Register indices or dimensions do not fit the layout."""


class ResourceError(RuntimeError):
    """A dense object would exceed the configured dimension cap."""


class MeasurementError(ValueError):
    """A forced measurement outcome has zero Born probability."""


@dataclass(frozen=True)
class RegisterLayout:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise LayoutError("a layout needs at least one register")
        if any(d < 1 for d in dims):
            raise LayoutError(f"register dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    @property
    def num_registers(self) -> int:
        return len(self.dims)

    def check_registers(self, registers: Sequence[int]) -> tuple[int, ...]:
        regs = tuple(int(r) for r in registers)
        if len(set(regs)) != len(regs):
            raise LayoutError(f"duplicate register index in {regs}")
        for r in regs:
            if not 0 <= r < self.num_registers:
                raise LayoutError(f"register {r} out of range for {self.num_registers} registers")
        return regs

    def sub(self, registers: Sequence[int]) -> "RegisterLayout":
        regs = self.check_registers(registers)
        return RegisterLayout(tuple(self.dims[r] for r in regs))

    def flat_index(self, digits: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(d) for d in digits), self.dims))

    def digits(self, index: int) -> tuple[int, ...]:
        return tuple(int(d) for d in np.unravel_index(int(index), self.dims))

    def __add__(self, other: "RegisterLayout") -> "RegisterLayout":
        return RegisterLayout(self.dims + other.dims)


def _check_cap(dim: int, cap: int = DENSE_DIM_CAP) -> None:
    if dim > cap:
        raise ResourceError(f"dimension {dim} exceeds dense cap {cap}")


def _as_layout(layout) -> RegisterLayout:
    if isinstance(layout, RegisterLayout):
        return layout
    if isinstance(layout, int):
        return RegisterLayout((layout,))
    return RegisterLayout(tuple(layout))


@dataclass(frozen=True, eq=False)
class StateVector:
    layout: RegisterLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        layout = _as_layout(self.layout)
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != layout.total_dim:
            raise LayoutError(f"{amps.size} amplitudes for layout of dimension {layout.total_dim}")
        _check_cap(amps.size)
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > STATE_TOL:
            raise ValueError(f"state is not normalized (squared norm {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, layout, index=0) -> "StateVector":
        layout = _as_layout(layout)
        if not isinstance(index, (int, np.integer)):
            index = layout.flat_index(index)
        amps = np.zeros(layout.total_dim, dtype=complex)
        amps[int(index)] = 1.0
        return cls(layout, amps)

    @classmethod
    def uniform(cls, layout) -> "StateVector":
        layout = _as_layout(layout)
        d = layout.total_dim
        return cls(layout, np.full(d, 1 / np.sqrt(d), dtype=complex))

    @classmethod
    def normalized(cls, layout, amplitudes) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(layout, amps / norm)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def tensor(self, other: "StateVector") -> "StateVector":
        return StateVector(self.layout + other.layout, np.kron(self.amplitudes, other.amplitudes))

    def to_density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(self.layout, np.outer(a, a.conj()))

    def overlap(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    layout: RegisterLayout
    matrix: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        layout = _as_layout(self.layout)
        d = layout.total_dim
        _check_cap(d, DENSITY_DIM_CAP)
        mat = np.array(self.matrix, dtype=complex)
        if mat.shape != (d, d):
            raise LayoutError(f"matrix shape {mat.shape} does not match layout dimension {d}")
        if self.check:
            if np.max(np.abs(mat - mat.conj().T), initial=0.0) > STATE_TOL:
                raise ValueError("density matrix is not Hermitian")
            tr = np.trace(mat).real
            if abs(tr - 1.0) > STATE_TOL:
                raise ValueError(f"density matrix has trace {tr!r}")
            if np.linalg.eigvalsh(mat).min() < -STATE_TOL:
                raise ValueError("density matrix has a negative eigenvalue")
        mat.setflags(write=False)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_probabilities(cls, layout, probs) -> "DensityMatrix":
        return cls(layout, np.diag(np.asarray(probs, dtype=complex)))

    @classmethod
    def maximally_mixed(cls, layout) -> "DensityMatrix":
        layout = _as_layout(layout)
        d = layout.total_dim
        return cls(layout, np.eye(d, dtype=complex) / d)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def tensor(self, other: "DensityMatrix") -> "DensityMatrix":
        return DensityMatrix(self.layout + other.layout, np.kron(self.matrix, other.matrix), check=False)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix).real.copy()

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)


class UnitaryOp:
    """A unitary acting on a subset of registers.

    Stored as a dense matrix, a diagonal, a permutation with optional phases
    (``out[perm[i]] = phases[i] * in[i]``), or a stack of blocks
    ``blocks[c]`` acting on the remaining targets while the first target
    register holds ``c``.  Structured forms are materialized to a dense matrix
    on request via :attr:`matrix`.
    """

    def __init__(self, target_registers, matrix=None, *, diagonal=None, permutation=None,
                 phases=None, blocks=None, check: bool = True):
        self.target_registers = tuple(int(r) for r in target_registers)
        given = sum(x is not None for x in (matrix, diagonal, permutation, blocks))
        if given != 1:
            raise ValueError("give exactly one of matrix, diagonal, permutation, blocks")
        self._dense = self._diag = self._perm = self._phases = self._blocks = None
        if matrix is not None:
            m = np.array(matrix, dtype=complex)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise LayoutError(f"unitary matrix must be square, got shape {m.shape}")
            _check_cap(m.shape[0])
            if check:
                err = np.max(np.abs(m @ m.conj().T - np.eye(m.shape[0])), initial=0.0)
                if err > UNITARY_TOL:
                    raise ValueError(f"matrix is not unitary (max deviation {err:.3g})")
            m.setflags(write=False)
            self._dense = m
            self.dim = m.shape[0]
        elif diagonal is not None:
            dg = np.array(diagonal, dtype=complex).reshape(-1)
            if check and np.max(np.abs(np.abs(dg) - 1), initial=0.0) > UNITARY_TOL:
                raise ValueError("diagonal entries must have modulus 1")
            dg.setflags(write=False)
            self._diag = dg
            self.dim = dg.size
        elif blocks is not None:
            b = np.array(blocks, dtype=complex)
            if b.ndim != 3 or b.shape[1] != b.shape[2]:
                raise LayoutError(f"blocks must have shape (count, d, d), got {b.shape}")
            if check:
                eye = np.eye(b.shape[1])
                err = np.max(np.abs(b @ b.conj().transpose(0, 2, 1) - eye), initial=0.0)
                if err > UNITARY_TOL:
                    raise ValueError(f"blocks are not unitary (max deviation {err:.3g})")
            b.setflags(write=False)
            self._blocks = b
            self.dim = b.shape[0] * b.shape[1]
        else:
            p = np.array(permutation, dtype=np.int64).reshape(-1)
            if check and not np.array_equal(np.sort(p), np.arange(p.size)):
                raise ValueError("permutation must be a rearrangement of range(dim)")
            p.setflags(write=False)
            self._perm = p
            if phases is not None:
                ph = np.array(phases, dtype=complex).reshape(-1)
                if ph.size != p.size:
                    raise LayoutError("phases and permutation differ in length")
                if check and np.max(np.abs(np.abs(ph) - 1), initial=0.0) > UNITARY_TOL:
                    raise ValueError("phases must have modulus 1")
                ph.setflags(write=False)
                self._phases = ph
            self.dim = p.size

    @property
    def kind(self) -> str:
        if self._dense is not None:
            return "dense"
        if self._blocks is not None:
            return "blocks"
        return "diagonal" if self._diag is not None else "permutation"

    @property
    def diagonal(self) -> np.ndarray | None:
        return self._diag

    @property
    def permutation(self) -> np.ndarray | None:
        return self._perm

    @property
    def blocks(self) -> np.ndarray | None:
        return self._blocks

    @property
    def matrix(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        _check_cap(self.dim)
        if self._diag is not None:
            return np.diag(self._diag)
        if self._blocks is not None:
            c, d, _ = self._blocks.shape
            m = np.zeros((self.dim, self.dim), dtype=complex)
            for i in range(c):
                m[i * d:(i + 1) * d, i * d:(i + 1) * d] = self._blocks[i]
            return m
        m = np.zeros((self.dim, self.dim), dtype=complex)
        ph = self._phases if self._phases is not None else np.ones(self.dim)
        m[self._perm, np.arange(self.dim)] = ph
        return m

    def dagger(self) -> "UnitaryOp":
        if self._dense is not None:
            return UnitaryOp(self.target_registers, self._dense.conj().T, check=False)
        if self._diag is not None:
            return UnitaryOp(self.target_registers, diagonal=self._diag.conj(), check=False)
        if self._blocks is not None:
            return UnitaryOp(self.target_registers, blocks=self._blocks.conj().transpose(0, 2, 1), check=False)
        inv = np.empty_like(self._perm)
        inv[self._perm] = np.arange(self.dim)
        phases = None
        if self._phases is not None:
            phases = np.empty(self.dim, dtype=complex)
            phases[self._perm] = self._phases.conj()
        return UnitaryOp(self.target_registers, permutation=inv, phases=phases, check=False)

    def apply_flat(self, block: np.ndarray) -> np.ndarray:
        """Apply to an array whose first axis indexes the target space."""
        if self._dense is not None:
            return np.tensordot(self._dense, block, axes=(1, 0))
        if self._diag is not None:
            return self._diag.reshape((-1,) + (1,) * (block.ndim - 1)) * block
        if self._blocks is not None:
            c, d, _ = self._blocks.shape
            grouped = block.reshape(c, d, -1)
            return np.einsum("cij,cjr->cir", self._blocks, grouped).reshape(block.shape)
        out = np.empty_like(block)
        if self._phases is not None:
            out[self._perm] = self._phases.reshape((-1,) + (1,) * (block.ndim - 1)) * block
        else:
            out[self._perm] = block
        return out

    def __repr__(self):
        return f"UnitaryOp(targets={self.target_registers}, kind={self.kind}, dim={self.dim})"


def _apply_left(tensor: np.ndarray, dims: tuple[int, ...], targets: tuple[int, ...],
                op: UnitaryOp, trailing: int) -> np.ndarray:
    # tensor has shape dims + (trailing,) after reshape
    t = tensor.reshape(dims + (trailing,))
    n = len(dims)
    rest = [i for i in range(n) if i not in targets]
    order = list(targets) + rest + [n]
    moved = np.transpose(t, order)
    tdim = int(np.prod([dims[i] for i in targets], dtype=np.int64))
    block = moved.reshape(tdim, -1)
    out = op.apply_flat(block).reshape(moved.shape)
    return np.transpose(out, np.argsort(order)).reshape(-1, trailing)


def _check_op(layout: RegisterLayout, op: UnitaryOp) -> tuple[int, ...]:
    targets = layout.check_registers(op.target_registers)
    tdim = int(np.prod([layout.dims[r] for r in targets], dtype=np.int64))
    if tdim != op.dim:
        raise LayoutError(
            f"operator of dimension {op.dim} does not match target registers {targets} "
            f"of dimension {tdim}")
    if op.blocks is not None and layout.dims[targets[0]] != op.blocks.shape[0]:
        raise LayoutError("block count does not match the control register dimension")
    return targets


def apply_unitary(state, op: UnitaryOp):
    """Return ``U|psi>`` for a :class:`StateVector` or ``U rho U^dagger`` for a
    :class:`DensityMatrix`."""
    layout = state.layout
    targets = _check_op(layout, op)
    dims = layout.dims
    if isinstance(state, StateVector):
        out = _apply_left(state.amplitudes, dims, targets, op, 1).reshape(-1)
        return StateVector(layout, out)
    if isinstance(state, DensityMatrix):
        d = layout.total_dim
        left = _apply_left(state.matrix, dims, targets, op, d)
        both = _apply_left(left.conj().T, dims, targets, op, d).conj().T
        return DensityMatrix(layout, (both + both.conj().T) / 2, check=False)
    raise TypeError(f"cannot apply a unitary to {type(state).__name__}")


def apply_unitary_array(amplitudes: np.ndarray, layout: RegisterLayout, op: UnitaryOp) -> np.ndarray:
    """Unchecked variant of :func:`apply_unitary` on a raw amplitude array."""
    targets = _check_op(layout, op)
    return _apply_left(amplitudes, layout.dims, targets, op, 1).reshape(-1)


def born_probabilities(state: StateVector, registers: Sequence[int]) -> np.ndarray:
    """Marginal outcome distribution of ``registers`` as an array shaped by their dims."""
    layout = state.layout
    regs = layout.check_registers(registers)
    p = state.probabilities().reshape(layout.dims)
    rest = tuple(i for i in range(layout.num_registers) if i not in regs)
    marg = p.sum(axis=rest) if rest else p
    # sum keeps the remaining axes in ascending order; reorder to the request
    kept = sorted(regs)
    return np.transpose(marg, [kept.index(r) for r in regs])


def measure_registers(state: StateVector, registers: Sequence[int], rng: np.random.Generator | None = None,
                      outcome: Sequence[int] | None = None):
    """Projectively measure ``registers`` in the computational basis.

    Returns ``(outcome, collapsed_state, probability)``.  Pass ``outcome`` to
    force a branch instead of sampling; a zero-probability branch raises
    :class:`MeasurementError`.
    """
    layout = state.layout
    regs = layout.check_registers(registers)
    marg = born_probabilities(state, regs)
    flat = marg.reshape(-1)
    if outcome is None:
        if rng is None:
            raise ValueError("sampling a measurement needs an rng")
        flat = np.clip(flat, 0, None)
        idx = int(rng.choice(flat.size, p=flat / flat.sum()))
        outcome = tuple(int(x) for x in np.unravel_index(idx, marg.shape))
    else:
        outcome = tuple(int(x) for x in outcome)
        if len(outcome) != len(regs):
            raise LayoutError("outcome length differs from number of measured registers")
    prob = float(marg[outcome])
    if prob <= STATE_TOL**2:
        raise MeasurementError(f"outcome {outcome} has zero probability")
    amps = state.amplitudes.reshape(layout.dims).copy()
    mask = np.ones(layout.dims, dtype=bool)
    for r, v in zip(regs, outcome):
        sel = [slice(None)] * layout.num_registers
        sel[r] = np.arange(layout.dims[r]) != v
        mask[tuple(sel)] = False
    amps[~mask] = 0
    return outcome, StateVector(layout, amps.reshape(-1) / np.sqrt(prob)), prob


def partial_trace(state, keep: Sequence[int]) -> DensityMatrix:
    """Reduced state on ``keep`` (in the given order).  Accepts a pure
    :class:`StateVector` as well, which avoids forming the full density matrix."""
    layout = state.layout
    keep = layout.check_registers(keep)
    if not keep:
        raise LayoutError("partial trace needs at least one register to keep")
    dims = layout.dims
    n = layout.num_registers
    traced = [i for i in range(n) if i not in keep]
    dk = int(np.prod([dims[i] for i in keep], dtype=np.int64))
    out_layout = RegisterLayout(tuple(dims[i] for i in keep))
    if isinstance(state, StateVector):
        psi = np.transpose(state.amplitudes.reshape(dims), list(keep) + traced).reshape(dk, -1)
        rho = psi @ psi.conj().T
    elif isinstance(state, DensityMatrix):
        t = state.matrix.reshape(dims + dims)
        order = list(keep) + traced + [n + i for i in keep] + [n + i for i in traced]
        dt = state.dim // dk
        m = np.transpose(t, order).reshape(dk, dt, dk, dt)
        rho = np.einsum("ajbj->ab", m)
    else:
        raise TypeError(f"cannot trace {type(state).__name__}")
    return DensityMatrix(out_layout, (rho + rho.conj().T) / 2, check=False)


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Half the trace norm of ``rho - sigma``."""
    if rho.layout.dims != sigma.layout.dims:
        raise LayoutError(f"layouts differ: {rho.layout.dims} vs {sigma.layout.dims}")
    diff = rho.matrix - sigma.matrix
    ev = np.linalg.eigvalsh((diff + diff.conj().T) / 2)
    return float(min(1.0, 0.5 * np.abs(ev).sum()))


def dephase(rho: DensityMatrix, registers: Sequence[int]) -> DensityMatrix:
    """Measure-and-forget ``registers`` in the computational basis."""
    layout = rho.layout
    regs = layout.check_registers(registers)
    dims = layout.dims
    n = layout.num_registers
    t = rho.matrix.reshape(dims + dims).copy()
    for r in regs:
        shape = [1] * (2 * n)
        shape[r] = dims[r]
        shape[n + r] = dims[r]
        t = t * np.eye(dims[r]).reshape(shape)
    return DensityMatrix(layout, t.reshape(rho.matrix.shape), check=False)


def apply_kraus(rho: DensityMatrix, registers: Sequence[int], kraus: Sequence[np.ndarray]) -> DensityMatrix:
    """``sum_k K rho K^dagger`` with every ``K`` acting on ``registers``.

    Trace preservation is the caller's contract; it is checked loosely here.
    """
    layout = rho.layout
    targets = layout.check_registers(registers)
    dims = layout.dims
    n = layout.num_registers
    tdim = int(np.prod([dims[r] for r in targets], dtype=np.int64))
    ops = [np.asarray(k, dtype=complex) for k in kraus]
    if any(k.shape != (tdim, tdim) for k in ops):
        raise LayoutError(f"Kraus operators must be {tdim}x{tdim} on registers {targets}")
    completeness = sum(k.conj().T @ k for k in ops)
    if np.max(np.abs(completeness - np.eye(tdim))) > UNITARY_TOL:
        raise ValueError("Kraus operators are not trace preserving")
    rest = [i for i in range(n) if i not in targets]
    perm = list(targets) + rest
    order = perm + [n + i for i in perm]
    t = np.transpose(rho.matrix.reshape(dims + dims), order)
    shape = t.shape
    m = t.reshape(tdim, rho.dim // tdim, tdim, rho.dim // tdim)
    out = sum(np.einsum("ab,bjck,dc->ajdk", k, m, k.conj()) for k in ops)
    out = np.transpose(out.reshape(shape), np.argsort(order)).reshape(rho.dim, rho.dim)
    return DensityMatrix(layout, (out + out.conj().T) / 2, check=False)
