"""Circuit IR and the compilation of the single-step TFD ansatz to native gates.

Native gates are ``RXY(phi, theta)`` (rotation by ``theta`` about the
equatorial axis at azimuth ``phi``), ``RZ(alpha)`` and ``CZ``. The pipeline is

1. :func:`pass_decompose_exponentials` - Bell preparation and the ``ZZ``/``XX``
   exponentials become CNOTs, RZ and basis rotations;
2. :func:`pass_cnot_to_cz` - every CNOT becomes ``RY(-90) CZ RY(90)`` on the
   target, then single-qubit runs are merged and RZ gates pushed to the start;
3. :func:`pass_reduce_depth` - CZ pairs separated only by bit-flip-like
   single-qubit gates are cancelled;
4. :func:`pass_eliminate_rz` - the leading RZ layer acts on ``|0>`` and is dropped.

Angles are radians. Gate lists are in time order (first applied first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .qudit import SiteSpec, make_register, qubit_lift, register_dims, site_index

TWO_QUBIT = {"CZ", "CNOT", "EXP_ZZ", "EXP_XX", "PREP_BELL"}
ANGLES_PER_KIND = {
    "RXY": 2, "RZ": 1, "CZ": 0, "CNOT": 0, "EXP_ZZ": 1, "EXP_XX": 1, "PREP_BELL": 0, "MEASURE": 0,
}
ATOL = 1e-12

ANSATZ_SITES = ("B2", "B1", "A2", "A1")


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[str, ...]
    angles: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ANGLES_PER_KIND:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        nt = 2 if self.kind in TWO_QUBIT else 1
        if len(self.targets) != nt or len(set(self.targets)) != nt:
            raise CircuitError(f"{self.kind} needs {nt} distinct targets, got {self.targets}")
        if len(self.angles) != ANGLES_PER_KIND[self.kind]:
            raise CircuitError(f"{self.kind} takes {ANGLES_PER_KIND[self.kind]} angles")
        if not all(math.isfinite(a) for a in self.angles):
            raise CircuitError("gate angles must be finite")

    @property
    def is_two_qubit(self) -> bool:
        return self.kind in TWO_QUBIT


def RXY(site: str, phi: float, theta: float) -> Gate:
    return Gate("RXY", (site,), (phi, theta))


def RY(site: str, theta: float) -> Gate:
    return Gate("RXY", (site,), (math.pi / 2, theta))


def RX(site: str, theta: float) -> Gate:
    return Gate("RXY", (site,), (0.0, theta))


def RZ(site: str, alpha: float) -> Gate:
    return Gate("RZ", (site,), (alpha,))


def CZ(a: str, b: str) -> Gate:
    return Gate("CZ", (a, b))


def CNOT(control: str, target: str) -> Gate:
    return Gate("CNOT", (control, target))


@dataclass(frozen=True)
class Circuit:
    register: tuple[SiteSpec, ...]
    moments: tuple[tuple[Gate, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "register", tuple(self.register))
        object.__setattr__(self, "moments", tuple(tuple(m) for m in self.moments))
        labels = {s.label for s in self.register}
        for m in self.moments:
            used: set[str] = set()
            for g in m:
                if not set(g.targets) <= labels:
                    raise CircuitError(f"gate {g} acts outside the register")
                if used & set(g.targets):
                    raise CircuitError("gates within one moment must act on disjoint sites")
                used |= set(g.targets)

    @classmethod
    def from_gates(cls, register, gates: Iterable[Gate]) -> "Circuit":
        """Greedy left-aligned packing of a time-ordered gate list."""
        register = tuple(register)
        frontier = {s.label: 0 for s in register}
        moments: list[list[Gate]] = []
        for g in gates:
            k = max(frontier[t] for t in g.targets)
            if k == len(moments):
                moments.append([])
            moments[k].append(g)
            for t in g.targets:
                frontier[t] = k + 1
        return cls(register, tuple(tuple(m) for m in moments))

    @property
    def depth(self) -> int:
        return len(self.moments)

    @property
    def gates(self) -> list[Gate]:
        return [g for m in self.moments for g in m]

    def count(self, kind: str) -> int:
        return sum(g.kind == kind for g in self.gates)

    def to_text(self) -> str:
        return dumps(self)


@dataclass(frozen=True)
class VariationalAngles:
    alpha1: float = 0.0
    alpha2: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "gamma1", "gamma2"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2, self.gamma1, self.gamma2])

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "VariationalAngles":
        return cls(*[float(v) for v in x])

    def canonical(self) -> "VariationalAngles":
        """Angles wrapped into (-pi, pi]."""
        y = np.mod(self.as_array() + np.pi, 2 * np.pi) - np.pi
        y = np.where(y <= -np.pi, y + 2 * np.pi, y)
        return VariationalAngles.from_array(y)


# ---------------------------------------------------------------------------
# gate matrices

def rxy_matrix(phi: float, theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [[c, -1j * np.exp(-1j * phi) * s], [-1j * np.exp(1j * phi) * s, c]], dtype=complex
    )


def rz_matrix(alpha: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * alpha), np.exp(0.5j * alpha)])


CZ_MATRIX = np.diag([1, 1, 1, -1]).astype(complex)
CNOT_MATRIX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def _pauli_exp(p: np.ndarray, phi: float) -> np.ndarray:
    # exp(-i phi P/2) for P with P^2 = 1
    return math.cos(phi / 2) * np.eye(len(p)) - 1j * math.sin(phi / 2) * p


def gate_matrix(g: Gate) -> np.ndarray:
    """Qubit-subspace matrix of a gate, ordered as ``g.targets``."""
    if g.kind == "RXY":
        return rxy_matrix(*g.angles)
    if g.kind == "RZ":
        return rz_matrix(g.angles[0])
    if g.kind == "CZ":
        return CZ_MATRIX
    if g.kind == "CNOT":
        return CNOT_MATRIX
    if g.kind == "EXP_ZZ":
        return _pauli_exp(np.diag([1.0, -1, -1, 1]).astype(complex), g.angles[0])
    if g.kind == "EXP_XX":
        xx = np.fliplr(np.eye(4)).astype(complex)
        return _pauli_exp(xx, g.angles[0])
    if g.kind == "PREP_BELL":
        # encoder acting on |00>: RY(90) on the first site, then CNOT onto the second
        return CNOT_MATRIX @ np.kron(rxy_matrix(math.pi / 2, math.pi / 2), np.eye(2))
    raise CircuitError(f"{g.kind} has no unitary")


def local_gate_matrix(g: Gate, dims: Sequence[int]) -> np.ndarray:
    """Gate matrix lifted to the target sites' dimensions (identity on leaked levels)."""
    u = gate_matrix(g)
    if len(g.targets) == 1:
        return qubit_lift(u, dims[0])
    da, db = dims
    if da == db == 2:
        return u
    out = np.eye(da * db, dtype=complex)
    idx = [a * db + b for a in range(2) for b in range(2)]
    out[np.ix_(idx, idx)] = u
    return out


def unitary_of(c: Circuit) -> np.ndarray:
    """Full-register unitary in moment order (leaked levels untouched)."""
    dims = register_dims(c.register)
    d = int(np.prod(dims))
    u = np.eye(d, dtype=complex).reshape(dims + (d,))
    for g in c.gates:
        if g.kind == "MEASURE":
            raise CircuitError("measurement is not unitary")
        idx = [site_index(c.register, t) for t in g.targets]
        op = local_gate_matrix(g, [dims[i] for i in idx])
        u = apply_local(u, op, idx, dims)
    return u.reshape(d, d)


def apply_local(tensor: np.ndarray, op: np.ndarray, idx: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """Apply ``op`` to the leading row axes ``idx`` of a tensor shaped ``dims + rest``."""
    k = len(idx)
    local = [dims[i] for i in idx]
    op_t = op.reshape(local + local)
    moved = np.moveaxis(tensor, idx, range(k))
    out = np.tensordot(op_t, moved, axes=(list(range(k, 2 * k)), list(range(k))))
    return np.moveaxis(out, range(k), idx)


def equal_up_to_phase(u: np.ndarray, v: np.ndarray) -> float:
    """max |u - e^{i phi} v| with the phase aligned on the largest entry of ``v``."""
    k = np.unravel_index(np.argmax(np.abs(v)), v.shape)
    if abs(v[k]) < ATOL:
        return float(np.max(np.abs(u)))
    phase = u[k] / v[k]
    phase /= abs(phase) if abs(phase) > 0 else 1.0
    return float(np.max(np.abs(u - phase * v)))


# ---------------------------------------------------------------------------
# abstract ansatz

def ansatz_register(dim: int = 2) -> tuple[SiteSpec, ...]:
    return make_register(ANSATZ_SITES, dim)


def build_abstract_circuit(angles: VariationalAngles, dim: int = 2) -> Circuit:
    """Bell pairs, then U_intra(gamma), then U_inter(alpha).

    Target order inside two-site exponentials fixes the control/target choice
    used later by :func:`pass_decompose_exponentials`.
    """
    a = angles
    gates = [Gate("PREP_BELL", ("B2", "A2")), Gate("PREP_BELL", ("B1", "A1"))]
    gates += [RX(s, a.gamma1) for s in ANSATZ_SITES]
    gates += [Gate("EXP_ZZ", ("B1", "B2"), (a.gamma2,)), Gate("EXP_ZZ", ("A1", "A2"), (a.gamma2,))]
    gates += [Gate("EXP_XX", ("B2", "A2"), (a.alpha1,)), Gate("EXP_XX", ("B1", "A1"), (a.alpha1,))]
    gates += [Gate("EXP_ZZ", ("A2", "B2"), (a.alpha2,)), Gate("EXP_ZZ", ("A1", "B1"), (a.alpha2,))]
    return Circuit.from_gates(ansatz_register(dim), gates)


# ---------------------------------------------------------------------------
# passes

def _zz_as_cnots(g: Gate) -> list[Gate]:
    c, t = g.targets
    return [CNOT(c, t), RZ(t, g.angles[0]), CNOT(c, t)]


def pass_decompose_exponentials(c: Circuit) -> Circuit:
    out: list[Gate] = []
    for g in c.gates:
        if g.kind == "EXP_ZZ":
            out += _zz_as_cnots(g)
        elif g.kind == "EXP_XX":
            p, q = g.targets
            out += [RY(p, -math.pi / 2), RY(q, -math.pi / 2)]
            out += _zz_as_cnots(Gate("EXP_ZZ", g.targets, g.angles))
            out += [RY(p, math.pi / 2), RY(q, math.pi / 2)]
        elif g.kind == "PREP_BELL":
            b, a = g.targets
            out += [RY(b, math.pi / 2), CNOT(b, a)]
        else:
            out.append(g)
    return Circuit.from_gates(c.register, out)


def zxz_decompose(u: np.ndarray, atol: float = 1e-12) -> tuple[float, float, float]:
    """Return ``(phi, theta, alpha)`` with ``u ~ RZ(alpha) @ RXY(phi, theta)`` up to phase.

    ``theta`` lies in [0, pi]; ``alpha`` is 0 when ``theta == pi``.
    """
    v = u / np.sqrt(np.linalg.det(u))
    a, b = v[0, 0], v[0, 1]
    # atan2 keeps full precision near theta = 0 and theta = pi, unlike acos
    theta = 2 * math.atan2(abs(b), abs(a))
    alpha = -2 * np.angle(a) if abs(a) > atol else 0.0
    if abs(b) > atol:
        phi = -np.angle(1j * b * np.exp(0.5j * alpha))
    else:
        phi = 0.0
    return float(phi), float(theta), float(alpha)


def _snap(x: float, tol: float = 1e-12) -> float:
    x = math.remainder(x, 2 * math.pi)
    for ref in (0.0, math.pi / 2, -math.pi / 2, math.pi):
        if abs(x - ref) < tol:
            return ref
    return x


def _is_trivial_angle(x: float, tol: float = 1e-12) -> bool:
    return abs(math.remainder(x, 2 * math.pi)) < tol


def _emit_single(site: str, u: np.ndarray) -> list[Gate]:
    phi, theta, alpha = zxz_decompose(u)
    out = []
    if not _is_trivial_angle(theta):
        out.append(RXY(site, _snap(phi), _snap(theta)))
    if not _is_trivial_angle(alpha):
        out.append(RZ(site, _snap(alpha)))
    return out


def merge_single_qubit_runs(gates: Sequence[Gate]) -> list[Gate]:
    """Fuse each run of RXY/RZ gates on one site into at most ``RXY`` then ``RZ``."""
    pending: dict[str, np.ndarray] = {}
    out: list[Gate] = []

    def flush(site):
        u = pending.pop(site, None)
        if u is not None:
            out.extend(_emit_single(site, u))

    for g in gates:
        if g.kind in ("RXY", "RZ"):
            s = g.targets[0]
            pending[s] = gate_matrix(g) @ pending.get(s, np.eye(2, dtype=complex))
        else:
            for t in g.targets:
                flush(t)
            out.append(g)
    for s in list(pending):
        flush(s)
    return out


def sink_rz(gates: Sequence[Gate]) -> list[Gate]:
    """Move every RZ to the start of the circuit.

    Uses RZ(a) RXY(phi, th) = RXY(phi + a, th) RZ(a) and that RZ commutes with
    CZ. Passing a measurement with a nonzero frame raises.
    """
    acc: dict[str, float] = {}
    rev: list[Gate] = []
    for g in reversed(gates):
        if g.kind == "RZ":
            s = g.targets[0]
            acc[s] = acc.get(s, 0.0) + g.angles[0]
        elif g.kind == "RXY":
            s = g.targets[0]
            a = acc.get(s, 0.0)
            rev.append(RXY(s, _snap(g.angles[0] + a), g.angles[1]) if a else g)
        elif g.kind == "CZ":
            rev.append(g)
        elif g.kind == "MEASURE":
            if not _is_trivial_angle(acc.get(g.targets[0], 0.0)):
                raise CircuitError("cannot propagate RZ through a measurement")
            rev.append(g)
        else:
            raise CircuitError(f"sink_rz needs native gates, found {g.kind}")
    head = [RZ(s, _snap(a)) for s, a in sorted(acc.items()) if not _is_trivial_angle(a)]
    return head + rev[::-1]


def _native_cleanup(register, gates: Sequence[Gate]) -> Circuit:
    return Circuit.from_gates(register, sink_rz(merge_single_qubit_runs(gates)))


def pass_cnot_to_cz(c: Circuit) -> Circuit:
    if c.count("CNOT") == 0:
        return c
    out: list[Gate] = []
    for g in c.gates:
        if g.kind == "CNOT":
            ctl, tgt = g.targets
            out += [RY(tgt, -math.pi / 2), CZ(ctl, tgt), RY(tgt, math.pi / 2)]
        else:
            out.append(g)
    if any(g.kind not in ("RXY", "RZ", "CZ", "MEASURE") for g in out):
        return Circuit.from_gates(c.register, out)
    return _native_cleanup(c.register, out)


def _is_monomial(u: np.ndarray, tol: float = 1e-10) -> int | None:
    """0 if diagonal, 1 if anti-diagonal, None otherwise."""
    if abs(u[0, 1]) < tol and abs(u[1, 0]) < tol:
        return 0
    if abs(u[0, 0]) < tol and abs(u[1, 1]) < tol:
        return 1
    return None


def _cancel_one_cz_pair(gates: list[Gate]) -> list[Gate] | None:
    for i, g in enumerate(gates):
        if g.kind != "CZ":
            continue
        p, q = g.targets
        window: dict[str, list[int]] = {p: [], q: []}
        j = None
        for k in range(i + 1, len(gates)):
            h = gates[k]
            touched = set(h.targets) & {p, q}
            if not touched:
                continue
            if h.kind in ("RXY", "RZ"):
                window[h.targets[0]].append(k)
                continue
            if h.kind == "CZ" and set(h.targets) == {p, q}:
                j = k
            break
        if j is None:
            continue
        mats = {}
        for s in (p, q):
            u = np.eye(2, dtype=complex)
            for k in window[s]:
                u = gate_matrix(gates[k]) @ u
            mats[s] = u
        kinds = {s: _is_monomial(mats[s]) for s in (p, q)}
        if None in kinds.values():
            continue
        # CZ (A x B) CZ = (A Z^b) x (Z^a B)
        new: list[Gate] = [RZ(p, math.pi)] if kinds[q] else []
        new += [gates[k] for k in window[p]]
        new += [gates[k] for k in window[q]]
        if kinds[p]:
            new.append(RZ(q, math.pi))
        drop = {i, j} | set(window[p]) | set(window[q])
        return gates[:i] + new + [h for k, h in enumerate(gates) if k > i and k not in drop]
    return None


def pass_reduce_depth(c: Circuit) -> Circuit:
    """Cancel CZ pairs whose sandwiched single-qubit gates are diagonal or bit-flip-like.

    This generalises commuting RY(180) through CZ: a diagonal or anti-diagonal
    single-qubit gate passes through CZ at the cost of a Z on the partner.
    """
    gates = list(c.gates)
    changed = False
    while True:
        nxt = _cancel_one_cz_pair(gates)
        if nxt is None:
            break
        gates, changed = nxt, True
    if not changed:
        return c
    out = _native_cleanup(c.register, gates)
    return out if out.depth <= c.depth else c


def pass_eliminate_rz(c: Circuit) -> Circuit:
    """Push RZ gates to the start and drop them (valid for the |0...0> input)."""
    gates = sink_rz(c.gates)
    return Circuit.from_gates(c.register, [g for g in gates if g.kind != "RZ"])


def compile_stages(angles: VariationalAngles, reduce: bool = True, dim: int = 2) -> dict[str, Circuit]:
    stages = {"abstract": build_abstract_circuit(angles, dim)}
    stages["cnot"] = pass_decompose_exponentials(stages["abstract"])
    stages["native"] = pass_cnot_to_cz(stages["cnot"])
    last = stages["native"]
    if reduce:
        stages["reduced"] = last = pass_reduce_depth(last)
    stages["final"] = pass_eliminate_rz(last)
    return stages


def compile_ansatz(angles: VariationalAngles, dim: int = 2) -> Circuit:
    return compile_stages(angles, dim=dim)["final"]


def prepare_zero_column(u: np.ndarray) -> np.ndarray:
    return u[:, 0]


# ---------------------------------------------------------------------------
# text format

def _fmt(x: float) -> str:
    return f"{x:.12g}"


def dumps(c: Circuit) -> str:
    """One gate per line, ``GATE t1[,t2] [a1[,a2]]``; a blank line ends a moment."""
    lines = ["REGISTER " + ",".join(f"{s.label}:{s.dim}" for s in c.register)]
    for m in c.moments:
        for g in m:
            parts = [g.kind, ",".join(g.targets)]
            if g.angles:
                parts.append(",".join(_fmt(a) for a in g.angles))
            lines.append(" ".join(parts))
        lines.append("")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Circuit:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("REGISTER "):
        raise CircuitError("missing REGISTER header")
    register = []
    for item in lines[0].split()[1].split(","):
        lab, dim = item.split(":")
        register.append(SiteSpec(lab, int(dim)))
    moments: list[list[Gate]] = [[]]
    for line in lines[1:]:
        line = line.strip()
        if not line:
            if moments[-1]:
                moments.append([])
            continue
        parts = line.split()
        angles = tuple(float(a) for a in parts[2].split(",")) if len(parts) > 2 else ()
        moments[-1].append(Gate(parts[0], tuple(parts[1].split(",")), angles))
    if not moments[-1]:
        moments.pop()
    return Circuit(tuple(register), tuple(tuple(m) for m in moments))
