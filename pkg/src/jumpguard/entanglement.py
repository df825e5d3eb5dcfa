"""Bipartite entanglement quantifiers and trajectory-ensemble averaging.

Measures follow the usual conventions:

* concurrence (two qubits): C = max(0, l1 - l2 - l3 - l4) with l_i the
  descending square roots of the eigenvalues of rho (sy x sy) rho* (sy x sy);
  for a pure state this reduces to |<psi| sy x sy |psi*>|.
* entanglement of formation (two qubits): E_F = h((1 + sqrt(1 - C^2)) / 2)
  with h the binary entropy, base 2.
* negativity: absolute sum of the negative eigenvalues of the partial
  transpose, equal to (||rho^Tb||_1 - 1) / 2. Bounded by (d_min - 1)/2.
* entropy of entanglement (pure states): von Neumann entropy, base 2, of
  either reduced state.

Trajectory averages weight the per-record measure by the record
probability, E = sum_i E(psi_i) P_i.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .linalg import (
    SpaceLayout,
    as_matrix,
    as_vector,
    make_layout,
    partial_trace,
    partial_transpose,
)

_EIG_CLIP = 1e-12


class Measure(enum.Enum):
    CONCURRENCE = "concurrence"
    ENTANGLEMENT_OF_FORMATION = "eof"
    NEGATIVITY = "negativity"
    ENTROPY_OF_ENTANGLEMENT = "entropy"


def measure_cap(measure: Measure, layout) -> float:
    """Largest value the measure can take on the given bipartite layout."""
    layout = make_layout(layout)
    d_min = min(layout.subsystem_dims)
    if measure is Measure.CONCURRENCE:
        return 1.0
    if measure is Measure.NEGATIVITY:
        return (d_min - 1) / 2.0
    return float(np.log2(d_min))  # E_F and entropy


@dataclass(frozen=True)
class EntanglementValue:
    measure: Measure
    value: float

    def __post_init__(self):
        if self.value < -1e-12:
            raise ValueError(f"entanglement value must be >= 0, got {self.value}")
        object.__setattr__(self, "value", max(0.0, float(self.value)))

    @classmethod
    def compute(cls, state, measure: Measure, layout) -> "EntanglementValue":
        v = measure_state(state, measure, layout)
        cap = measure_cap(measure, layout)
        if v > cap + 1e-9:
            raise ValueError(f"{measure.value} = {v} exceeds its bound {cap}")
        return cls(measure, min(v, cap))


_SY2 = np.kron(
    np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
)


def _require_two_qubits(rho: np.ndarray):
    if rho.shape != (4, 4):
        raise ValueError(f"two-qubit state required, got shape {rho.shape}")


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p)))


def concurrence_2q(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit density matrix."""
    rho = as_matrix(rho)
    _require_two_qubits(rho)
    rho_tilde = _SY2 @ rho.conj() @ _SY2
    lam = np.linalg.eigvals(rho @ rho_tilde)
    lam = np.sqrt(np.clip(lam.real, 0.0, None))
    lam.sort()
    return float(max(0.0, lam[3] - lam[2] - lam[1] - lam[0]))


def pure_concurrence_2q(psi: np.ndarray) -> float:
    """|<psi| sy x sy |psi*>|, equal to the mixed-state formula on projectors."""
    psi = as_vector(psi)
    if psi.shape != (4,):
        raise ValueError("two-qubit pure state required")
    return float(abs(psi @ _SY2 @ psi))


def eof_from_concurrence(c: float) -> float:
    c = min(max(float(c), 0.0), 1.0)
    return binary_entropy(0.5 * (1.0 + np.sqrt(max(0.0, 1.0 - c * c))))


def eof_2q(rho: np.ndarray) -> float:
    """Entanglement of formation of a two-qubit state (exact via concurrence)."""
    return eof_from_concurrence(concurrence_2q(rho))


def negativity(rho: np.ndarray, layout: SpaceLayout) -> float:
    """Absolute sum of negative eigenvalues of the partial transpose."""
    layout = make_layout(layout)
    rho = as_matrix(rho)
    pt = partial_transpose(rho, 1, layout)
    eig = np.linalg.eigvalsh(pt)
    eig = np.where(np.abs(eig) < _EIG_CLIP, 0.0, eig)
    return float(-eig[eig < 0].sum())


def entanglement_entropy(psi: np.ndarray, layout: SpaceLayout) -> float:
    """Von Neumann entropy (base 2) of either reduced state of a pure state."""
    layout = make_layout(layout)
    psi = as_vector(psi)
    n2 = np.vdot(psi, psi).real
    if abs(n2 - 1.0) > 1e-8:
        raise ValueError(f"state not normalized (|psi|^2 = {n2})")
    reduced = partial_trace(np.outer(psi, psi.conj()), 0, layout)
    lam = np.linalg.eigvalsh(reduced)
    lam = np.clip(lam, 0.0, None)
    lam = lam[lam > _EIG_CLIP]
    return float(-(lam * np.log2(lam)).sum())


def measure_state(state: np.ndarray, measure: Measure, layout: SpaceLayout) -> float:
    """Evaluate one measure on a pure state vector or a density matrix."""
    layout = make_layout(layout)
    state = np.asarray(state, dtype=np.complex128)
    pure = state.ndim == 1
    if measure is Measure.NEGATIVITY:
        rho = np.outer(state, state.conj()) if pure else state
        return negativity(rho, layout)
    if measure is Measure.ENTROPY_OF_ENTANGLEMENT:
        if not pure:
            raise ValueError("entropy of entanglement is defined for pure records only")
        return entanglement_entropy(state, layout)
    if layout.subsystem_dims != (2, 2):
        raise ValueError(f"{measure.value} requires a two-qubit layout")
    if measure is Measure.CONCURRENCE:
        return pure_concurrence_2q(state) if pure else concurrence_2q(state)
    if measure is Measure.ENTANGLEMENT_OF_FORMATION:
        c = pure_concurrence_2q(state) if pure else concurrence_2q(state)
        return eof_from_concurrence(c)
    raise ValueError(f"unknown measure {measure}")


def average_entanglement(records, measure: Measure, layout: SpaceLayout) -> float:
    """Probability-weighted measure over trajectory records.

    Pure records are evaluated as state vectors, density records (from
    inefficient monitoring) directly as mixed states.
    """
    layout = make_layout(layout)
    total = 0.0
    for rec in records:
        total += rec.probability * measure_state(rec.state, measure, layout)
    return float(total)


# Batched helpers used by the scenario observables; these operate on stacks
# of state vectors (n, d) or density matrices (n, d, d).


def negativity_batch_pure(states: np.ndarray, layout: SpaceLayout) -> np.ndarray:
    layout = make_layout(layout)
    da, db = layout.subsystem_dims
    n = states.shape[0]
    rho = np.einsum("ni,nj->nij", states, states.conj())
    pt = rho.reshape(n, da, db, da, db).transpose(0, 1, 4, 3, 2).reshape(n, da * db, da * db)
    eig = np.linalg.eigvalsh(pt)
    eig = np.where(np.abs(eig) < _EIG_CLIP, 0.0, eig)
    return -np.where(eig < 0, eig, 0.0).sum(axis=1)


def negativity_batch_density(rhos: np.ndarray, layout: SpaceLayout) -> np.ndarray:
    layout = make_layout(layout)
    da, db = layout.subsystem_dims
    n = rhos.shape[0]
    pt = rhos.reshape(n, da, db, da, db).transpose(0, 1, 4, 3, 2).reshape(n, da * db, da * db)
    eig = np.linalg.eigvalsh(pt)
    eig = np.where(np.abs(eig) < _EIG_CLIP, 0.0, eig)
    return -np.where(eig < 0, eig, 0.0).sum(axis=1)


def entropy_batch_pure(states: np.ndarray, layout: SpaceLayout) -> np.ndarray:
    layout = make_layout(layout)
    da, db = layout.subsystem_dims
    n = states.shape[0]
    amp = states.reshape(n, da, db)
    reduced = np.einsum("nab,ncb->nac", amp, amp.conj())
    lam = np.clip(np.linalg.eigvalsh(reduced), 0.0, None)
    safe = np.where(lam > _EIG_CLIP, lam, 1.0)
    return -(lam * np.log2(safe)).sum(axis=1)


def eof_batch_pure_2q(states: np.ndarray) -> np.ndarray:
    c = np.abs(np.einsum("ni,ij,nj->n", states, _SY2, states))
    s = 0.5 * (1.0 + np.sqrt(np.clip(1.0 - c * c, 0.0, None)))
    out = np.zeros_like(s)
    interior = (s > 0.0) & (s < 1.0)
    si = s[interior]
    out[interior] = -(si * np.log2(si) + (1.0 - si) * np.log2(1.0 - si))
    return out
