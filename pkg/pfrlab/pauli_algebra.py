"""
Single-qubit Pauli and Clifford group algebra in the Pauli transfer matrix (PTM) picture.

Conventions used throughout pfrlab:

- Pauli basis ordering (I, X, Y, Z), orthonormal elements B_i = P_i / sqrt(2).
- PTM entries R_ij = 1/2 Tr[P_i L(P_j)], so a channel acts on Bloch 4-vectors by R @ v
  and channels compose as R_second @ R_first.
- Choi matrix J = 1/2 sum_ij R_ij P_i (x) P_j^T, trace 2 for a trace-preserving map.
- Paulis are tracked without phase; P and -P are the same channel.
"""

from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from functools import cache
from typing import NamedTuple

import numpy as np

CP_TOLERANCE = -1e-10
TP_TOLERANCE = 1e-14

PAULI_MATRICES = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)
PAULI_MATRICES.setflags(write=False)


class Pauli(IntEnum):
    I = 0  # noqa: E741
    X = 1
    Y = 2
    Z = 3

    @property
    def matrix(self):
        return PAULI_MATRICES[self]

    @classmethod
    def parse(cls, token):
        try:
            return cls[token.strip().upper()]
        except KeyError:
            raise ValueError(f"not a Pauli label: {token!r}") from None


# symplectic (x, z) bits packed as 2x+z
_TO_SYMPLECTIC = (0b00, 0b10, 0b11, 0b01)
_FROM_SYMPLECTIC = {code: Pauli(i) for i, code in enumerate(_TO_SYMPLECTIC)}


def pauli_mul(a, b):
    """Phase-free product of two Pauli labels"""
    return _FROM_SYMPLECTIC[_TO_SYMPLECTIC[a] ^ _TO_SYMPLECTIC[b]]


def pauli_commutes(a, b):
    xa, za = divmod(_TO_SYMPLECTIC[a], 2)
    xb, zb = divmod(_TO_SYMPLECTIC[b], 2)
    return (xa * zb + za * xb) % 2 == 0


@cache
def _walsh():
    w = np.array([[1.0 if pauli_commutes(p, q) else -1.0 for q in Pauli] for p in Pauli])
    w.setflags(write=False)
    return w


def walsh_matrix():
    """Character table chi(P, Q) = +1 when P and Q commute, -1 otherwise; W @ W = 4 I"""
    return _walsh()


def pauli_probs_from_eigenvalues(eigenvalues):
    """Pauli-channel (quasi-)probabilities from the PTM diagonal: p_Q = 1/4 sum_P chi(P,Q) lambda_P"""
    return _walsh() @ np.asarray(eigenvalues, dtype=float) / 4.0


def eigenvalues_from_probs(probs):
    """PTM diagonal of the Pauli channel with error probabilities ``probs``"""
    return _walsh() @ np.asarray(probs, dtype=float)


def pauli_channel_ptm(probs):
    return np.diag(eigenvalues_from_probs(probs))


def depolarizing_ptm(p):
    return np.diag([1.0, 1.0 - p, 1.0 - p, 1.0 - p])


# ---------------------------------------------------------------------------
# PTM / Choi conversions


def ptm_from_unitary(u):
    """PTM of the unitary channel rho -> U rho U^dagger"""
    u = np.asarray(u, dtype=complex)
    conjugated = np.einsum("ab,jbc,dc->jad", u, PAULI_MATRICES, u.conj())
    return 0.5 * np.einsum("iab,jba->ij", PAULI_MATRICES, conjugated).real


def ptm_from_kraus(kraus_ops):
    m = np.zeros((4, 4))
    for k in kraus_ops:
        k = np.asarray(k, dtype=complex)
        conjugated = np.einsum("ab,jbc,dc->jad", k, PAULI_MATRICES, k.conj())
        m += 0.5 * np.einsum("iab,jba->ij", PAULI_MATRICES, conjugated).real
    return m


@cache
def _choi_basis():
    # basis[i, j] = P_i (x) P_j^T
    basis = np.array([[np.kron(p, q.T) for q in PAULI_MATRICES] for p in PAULI_MATRICES])
    basis.setflags(write=False)
    return basis


def ptm_to_choi(m):
    return 0.5 * np.einsum("ij,ijab->ab", np.asarray(m, dtype=float), _choi_basis())


def choi_to_ptm(choi):
    return 0.5 * np.einsum("ab,ijba->ij", np.asarray(choi, dtype=complex), _choi_basis()).real


def choi_eigenvalues(m):
    return np.linalg.eigvalsh(ptm_to_choi(m))


def is_tp(m, tol=TP_TOLERANCE):
    return bool(np.all(np.abs(np.asarray(m)[0] - (1.0, 0.0, 0.0, 0.0)) <= tol))


def is_cp(m, tol=CP_TOLERANCE):
    return bool(choi_eigenvalues(m).min() >= tol)


def is_cptp(m):
    return is_tp(m, tol=1e-12) and is_cp(m)


def project_tp(m):
    out = np.array(m, dtype=float)
    out[0] = (1.0, 0.0, 0.0, 0.0)
    return out


def project_cp(m):
    w, v = np.linalg.eigh(ptm_to_choi(m))
    return choi_to_ptm((v * np.clip(w, 0.0, None)) @ v.conj().T)


def project_cptp(m, max_iter=500, tol=1e-12):
    """
    Nearest CPTP map in Frobenius norm, by Dykstra's alternating projections between
    the PSD Choi cone and the trace-preserving affine set. The Frobenius norm of the
    PTM equals that of the Choi matrix, so the TP step is done on the PTM.
    """
    x = np.array(m, dtype=float)
    if is_cptp(x):
        return project_tp(x)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = project_tp(x + p)
        p = x + p - y
        x_next = project_cp(y + q)
        q = y + q - x_next
        converged = np.linalg.norm(x_next - x) < tol
        x = x_next
        if converged:
            break
    out = project_tp(x)
    lowest = choi_eigenvalues(out).min()
    if lowest < CP_TOLERANCE:
        # mix in the completely depolarizing channel, whose Choi matrix is I/2
        t = -lowest / (0.5 - lowest)
        out = (1.0 - t) * out + t * np.diag([1.0, 0.0, 0.0, 0.0])
    return out


def pauli_twirl(m):
    """Average of P E P over the four Paulis: the diagonal of ``m``, off-diagonals exactly zero"""
    m = np.asarray(m, dtype=float)
    signs = _walsh()
    return np.mean([np.outer(s, s) * m for s in signs], axis=0)


# ---------------------------------------------------------------------------
# unitaries


def rotation_unitary(axis, angle):
    """exp(-i angle/2 n.sigma) for a (not necessarily normalized) Bloch axis ``axis``"""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    generator = np.einsum("k,kab->ab", n, PAULI_MATRICES[1:])
    return np.cos(angle / 2.0) * np.eye(2) - 1j * np.sin(angle / 2.0) * generator


def rotation_ptm(axis, angle):
    return ptm_from_unitary(rotation_unitary(axis, angle))


X_AXIS = (1.0, 0.0, 0.0)
Y_AXIS = (0.0, 1.0, 0.0)
Z_AXIS = (0.0, 0.0, 1.0)

X90_UNITARY = rotation_unitary(X_AXIS, np.pi / 2)
Y90_UNITARY = rotation_unitary(Y_AXIS, np.pi / 2)
Z90_UNITARY = rotation_unitary(Z_AXIS, np.pi / 2)


# ---------------------------------------------------------------------------
# Clifford group


class CliffordTables(NamedTuple):
    ptms: np.ndarray  # (24, 4, 4) int8
    unitaries: np.ndarray  # (24, 2, 2) complex, one representative each
    compose: np.ndarray  # compose[a, b] = a after b
    conj: np.ndarray  # conj[c, p] = label of C P C^dagger
    inverse: np.ndarray


N_CLIFFORDS = 24


@cache
def clifford_tables():
    """
    Enumerate the single-qubit Clifford group by closure from X_pi/2 and Z_pi/2 and
    derive every table from the PTMs. Elements are ordered by descending flattened
    PTM, which places the identity at index 0.
    """
    found = {}
    queue = deque([np.eye(2, dtype=complex)])
    while queue:
        u = queue.popleft()
        ptm = np.rint(ptm_from_unitary(u)).astype(np.int8)
        key = ptm.tobytes()
        if key in found:
            continue
        found[key] = (ptm, u)
        queue.extend(g @ u for g in (X90_UNITARY, Z90_UNITARY))
    if len(found) != N_CLIFFORDS:
        raise RuntimeError(f"Clifford closure produced {len(found)} elements")

    ordered = sorted(found.values(), key=lambda pair: tuple(pair[0].ravel()), reverse=True)
    ptms = np.array([ptm for ptm, _ in ordered])
    unitaries = np.array([u for _, u in ordered])
    index = {ptm.tobytes(): i for i, ptm in enumerate(ptms)}

    products = np.einsum("aij,bjk->abik", ptms.astype(np.int64), ptms.astype(np.int64)).astype(np.int8)
    compose = np.array([[index[products[a, b].tobytes()] for b in range(N_CLIFFORDS)] for a in range(N_CLIFFORDS)])
    conj = np.argmax(np.abs(ptms), axis=1)
    inverse = np.array([index[np.ascontiguousarray(ptm.T).tobytes()] for ptm in ptms])

    tables = CliffordTables(ptms, unitaries, compose, conj, inverse)
    for array in tables:
        array.setflags(write=False)
    return tables


def clifford_index_of_ptm(m):
    key = np.rint(np.asarray(m)).astype(np.int8).tobytes()
    for i, ptm in enumerate(clifford_tables().ptms):
        if ptm.tobytes() == key:
            return i
    raise ValueError("matrix is not a Clifford PTM")


@dataclass(frozen=True, order=True)
class Clifford:
    idx: int

    def __post_init__(self):
        if not 0 <= self.idx < N_CLIFFORDS:
            raise ValueError(f"Clifford index out of range: {self.idx}")

    def __matmul__(self, other):
        return Clifford(int(clifford_tables().compose[self.idx, other.idx]))

    @property
    def ptm(self):
        return clifford_tables().ptms[self.idx]

    @property
    def unitary(self):
        return clifford_tables().unitaries[self.idx]

    def inverse(self):
        return Clifford(int(clifford_tables().inverse[self.idx]))

    def conjugate(self, pauli):
        return Pauli(int(clifford_tables().conj[self.idx, pauli]))

    @classmethod
    def from_unitary(cls, u):
        return cls(clifford_index_of_ptm(ptm_from_unitary(u)))

    @classmethod
    def from_pauli(cls, pauli):
        return cls.from_unitary(PAULI_MATRICES[pauli])

    def __str__(self):
        return f"C{self.idx}"


def compose_cliffords(a, b):
    return a @ b


def clifford_conjugate_pauli(c, p):
    """Phase-free label of C P C^dagger"""
    return c.conjugate(p)


def ptm_of_clifford(c):
    return clifford_tables().ptms[c.idx].astype(float)


IDENTITY = Clifford(0)


@cache
def named_cliffords():
    """Gate names used by GST designs and circuit text, mapped to group elements"""
    return {
        "Gi": IDENTITY,
        "Gx": Clifford.from_unitary(X90_UNITARY),
        "Gy": Clifford.from_unitary(Y90_UNITARY),
    }


def hadamard():
    return Clifford.from_unitary(np.array([[1, 1], [1, -1]]) / np.sqrt(2))
