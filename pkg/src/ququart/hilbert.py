"""Mode space, state vectors, density matrices and the ququart MUB table.

The photon lives in polarization (H, V) tensored with a truncated ladder of
OAM eigenmodes m. Amplitudes are stored row-major, polarization outer and
OAM inner, so index = pol * len(oam_values) + oam_index.

The ququart is the four-dimensional subspace {H, V} x {+2, -2}, ordered

    |1> = |H,+2>,  |2> = |H,-2>,  |3> = |V,+2>,  |4> = |V,-2>.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DomainError, InputError

PHYS_TOL = 1e-9
EXACT_TOL = 1e-12

POLARIZATION_LABELS = ("H", "V")
QUQUART_LABELS = ("H,+2", "H,-2", "V,+2", "V,-2")
BASIS_LABELS = ("I", "II", "III", "IV", "V")

_S2 = np.sqrt(2.0)

# Circular states follow from the tabulated logical expansions: |R,a> must equal
# 1/2(|1> + i|2> + i|3> - |4>) up to phase, which fixes R = (H + iV)/sqrt2.
POLARIZATION_STATES = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "A": np.array([1.0, 1.0], dtype=complex) / _S2,
    "D": np.array([1.0, -1.0], dtype=complex) / _S2,
    "R": np.array([1.0, 1.0j], dtype=complex) / _S2,
    "L": np.array([1.0, -1.0j], dtype=complex) / _S2,
}


@dataclass(frozen=True)
class ModeSpace:
    """Polarization (H, V) tensored with a symmetric, step-2 OAM ladder."""

    oam_values: tuple[int, ...] = (-4, -2, 0, 2, 4)
    polarization_dim: int = 2

    def __post_init__(self):
        oam = tuple(int(m) for m in self.oam_values)
        object.__setattr__(self, "oam_values", oam)
        if self.polarization_dim != 2:
            raise InputError("polarization_dim must be 2")
        if len(oam) < 3 or oam != tuple(sorted(set(oam))):
            raise InputError(f"oam_values must be strictly increasing: {oam}")
        if any(b - a != 2 for a, b in zip(oam, oam[1:])):
            raise InputError(f"oam_values must have step 2: {oam}")
        if oam != tuple(-m for m in reversed(oam)):
            raise InputError(f"oam_values must be symmetric about 0: {oam}")
        if not {-2, 0, 2} <= set(oam):
            raise InputError("oam_values must contain -2, 0 and +2")

    @property
    def dim(self) -> int:
        return self.polarization_dim * len(self.oam_values)

    @property
    def n_oam(self) -> int:
        return len(self.oam_values)

    def index(self, pol: int | str, m: int) -> int:
        if isinstance(pol, str):
            pol = POLARIZATION_LABELS.index(pol)
        if m not in self.oam_values:
            raise InputError(f"m={m} is not on the OAM ladder {self.oam_values}")
        return pol * self.n_oam + self.oam_values.index(m)

    def ququart_indices(self) -> tuple[int, int, int, int]:
        return (self.index(0, 2), self.index(0, -2), self.index(1, 2), self.index(1, -2))

    def to_dict(self) -> dict:
        return {"polarization": list(POLARIZATION_LABELS), "oam_values": list(self.oam_values)}

    @classmethod
    def from_dict(cls, data: dict) -> "ModeSpace":
        pol = data.get("polarization", list(POLARIZATION_LABELS))
        if list(pol) != list(POLARIZATION_LABELS):
            raise InputError(f"unsupported polarization basis {pol}")
        return cls(tuple(data["oam_values"]))


DEFAULT_SPACE = ModeSpace()


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=complex)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitudes over a ModeSpace. Immutable."""

    space: ModeSpace
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        if amps.shape != (self.space.dim,):
            raise InputError(f"expected {self.space.dim} amplitudes, got {amps.shape[0]}")
        if not np.all(np.isfinite(amps)):
            raise InputError("amplitudes must be finite")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_ququart(cls, coeffs: Sequence[complex], space: ModeSpace = DEFAULT_SPACE,
                     normalize: bool = True) -> "StateVector":
        coeffs = np.asarray(coeffs, dtype=complex).reshape(-1)
        if coeffs.shape != (4,):
            raise InputError("ququart coefficients must have length 4")
        if normalize:
            n = np.linalg.norm(coeffs)
            if n == 0:
                raise InputError("cannot normalize a zero vector")
            coeffs = coeffs / n
        amps = np.zeros(space.dim, dtype=complex)
        amps[list(space.ququart_indices())] = coeffs
        return cls(space, amps)

    @classmethod
    def product(cls, polarization, oam: dict[int, complex],
                space: ModeSpace = DEFAULT_SPACE) -> "StateVector":
        """Build |pol> x sum_m c_m |m>. ``polarization`` is a label or a 2-vector."""
        pol = POLARIZATION_STATES[polarization] if isinstance(polarization, str) \
            else np.asarray(polarization, dtype=complex)
        orb = np.zeros(space.n_oam, dtype=complex)
        for m, c in oam.items():
            if m not in space.oam_values:
                raise InputError(f"m={m} is not on the OAM ladder {space.oam_values}")
            orb[space.oam_values.index(m)] = c
        return cls(space, np.kron(pol, orb))

    @classmethod
    def basis_ket(cls, pol: int | str, m: int, space: ModeSpace = DEFAULT_SPACE) -> "StateVector":
        amps = np.zeros(space.dim, dtype=complex)
        amps[space.index(pol, m)] = 1.0
        return cls(space, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0:
            raise DomainError("cannot normalize a zero state")
        return StateVector(self.space, self.amplitudes / n)

    def as_grid(self) -> np.ndarray:
        """Amplitudes as a (2, n_oam) array: rows H, V; columns the OAM ladder."""
        return self.amplitudes.reshape(2, self.space.n_oam)

    def oam_weights(self) -> dict[int, float]:
        w = np.sum(np.abs(self.as_grid()) ** 2, axis=0)
        return {m: float(x) for m, x in zip(self.space.oam_values, w)}

    def ququart_coefficients(self) -> np.ndarray:
        return self.amplitudes[list(self.space.ququart_indices())].copy()

    def weight_outside_ququart(self) -> float:
        mask = np.ones(self.space.dim, dtype=bool)
        mask[list(self.space.ququart_indices())] = False
        return float(np.sum(np.abs(self.amplitudes[mask]) ** 2))

    def same_state(self, other: "StateVector", tol: float = PHYS_TOL) -> bool:
        """Equality of physical states, i.e. up to a global phase."""
        if abs(self.norm() - other.norm()) > tol:
            return False
        return overlap_squared(self.normalized(), other.normalized()) >= 1.0 - tol

    def to_json(self) -> dict:
        return {
            "schema": "ququart.state/1",
            "space": self.space.to_dict(),
            "amplitudes": [[float(a.real), float(a.imag)] for a in self.amplitudes],
        }

    @classmethod
    def from_json(cls, data: dict) -> "StateVector":
        if data.get("schema", "ququart.state/1") != "ququart.state/1":
            raise InputError(f"unsupported state schema {data.get('schema')}")
        space = ModeSpace.from_dict(data["space"])
        amps = np.array([complex(re, im) for re, im in data["amplitudes"]])
        return cls(space, amps)


def _check_same_space(a: StateVector, b: StateVector) -> None:
    if a.space != b.space:
        raise InputError("states live on different mode spaces")


def inner_product(a: StateVector, b: StateVector) -> complex:
    """<a|b>, conjugate-linear in ``a``."""
    _check_same_space(a, b)
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def overlap_squared(a: StateVector, b: StateVector) -> float:
    return abs(inner_product(a, b)) ** 2


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """4x4 operator on the ququart subspace in the |1>..|4> order.

    Construction checks hermiticity and unit trace only; a linear-inversion
    estimate may carry negative eigenvalues until it is projected.
    """

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = _frozen(self.entries)
        if m.shape != (4, 4):
            raise InputError(f"density matrix must be 4x4, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > PHYS_TOL:
            raise InputError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > PHYS_TOL:
            raise InputError(f"density matrix trace {np.trace(m).real:.12g} != 1")
        object.__setattr__(self, "entries", m)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def is_physical(self, tol: float = PHYS_TOL) -> bool:
        return bool(self.eigenvalues().min() >= -tol)

    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))

    def to_json(self) -> dict:
        return {
            "schema": "ququart.density/1",
            "basis": list(QUQUART_LABELS),
            "entries": [[[float(z.real), float(z.imag)] for z in row] for row in self.entries],
        }

    @classmethod
    def from_json(cls, data: dict) -> "DensityMatrix":
        if data.get("schema", "ququart.density/1") != "ququart.density/1":
            raise InputError(f"unsupported density schema {data.get('schema')}")
        return cls(np.array([[complex(re, im) for re, im in row] for row in data["entries"]]))

    @classmethod
    def maximally_mixed(cls) -> "DensityMatrix":
        return cls(np.eye(4) / 4)


def density_from_state(psi: StateVector, tol: float = PHYS_TOL) -> DensityMatrix:
    """Rank-1 projector |psi><psi| restricted to the ququart subspace."""
    if abs(psi.norm() - 1.0) > tol:
        raise DomainError(f"state is not normalized (norm {psi.norm():.12g})")
    leak = psi.weight_outside_ququart()
    if leak > tol:
        raise DomainError(f"state has weight {leak:.3g} outside the ququart subspace")
    c = psi.ququart_coefficients()
    c = c / np.linalg.norm(c)
    return DensityMatrix(np.outer(c, c.conj()))


def logical_basis(space: ModeSpace = DEFAULT_SPACE) -> list[StateVector]:
    return [StateVector.from_ququart(np.eye(4)[k], space) for k in range(4)]


_OAM_FACTORS = {
    "h": np.array([1, 1], dtype=complex) / _S2,
    "v": np.array([1, -1], dtype=complex) / (1j * _S2),
    "a": np.exp(-1j * np.pi / 4) * np.array([1, 1j], dtype=complex) / _S2,
    "d": np.exp(1j * np.pi / 4) * np.array([1, -1j], dtype=complex) / _S2,
    "+2": np.array([1, 0], dtype=complex),
    "-2": np.array([0, 1], dtype=complex),
}


def oam_superposition(name: str) -> np.ndarray:
    """OAM qubit state over (|+2>, |-2>), phases exactly as printed.

    h, v are the OAM analogues of H, V; a, d of the +-45 degree linear
    polarizations. ``+2`` and ``-2`` are accepted for the eigenstates.
    """
    try:
        return _OAM_FACTORS[name].copy()
    except KeyError:
        raise InputError(f"unknown OAM state {name!r}; expected one of {sorted(_OAM_FACTORS)}") from None


def ququart_product(pol: str, oam: str, space: ModeSpace = DEFAULT_SPACE) -> StateVector:
    """|pol>_pi |oam>_o2 for labels such as ('A', 'h') or ('H', '+2')."""
    try:
        p = POLARIZATION_STATES[pol]
    except KeyError:
        raise InputError(f"unknown polarization {pol!r}") from None
    return StateVector.from_ququart(np.kron(p, oam_superposition(oam)), space, normalize=False)


@dataclass(frozen=True, eq=False)
class MubEntry:
    basis: str
    index: int
    state: StateVector
    logical: str
    name: str

    @property
    def label(self) -> str:
        return f"{self.basis}.{self.index}"


_h = 0.5
_MUB_COEFFS = {
    "I": [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)],
    "II": [(1, 1, 1, 1), (1, -1, 1, -1), (1, 1, -1, -1), (1, -1, -1, 1)],
    "III": [(1, 1j, 1j, -1), (1, -1j, 1j, 1), (1, 1j, -1j, 1), (1, -1j, -1j, -1)],
    "IV": [(1, 1, 1j, -1j), (1, -1, 1j, 1j), (1, 1, -1j, 1j), (1, -1, -1j, -1j)],
    "V": [(1, 1j, 1, -1j), (1, 1j, -1, 1j), (1, -1j, 1, 1j), (1, -1j, -1, -1j)],
}
_MUB_NAMES = {
    "I": ["H,+2", "H,-2", "V,+2", "V,-2"],
    "II": ["A,h", "A,v", "D,h", "D,v"],
    "III": ["R,a", "R,d", "L,a", "L,d"],
    "IV": ["(R,+2 + L,-2)/sqrt2", "(R,+2 - L,-2)/sqrt2", "(L,+2 + R,-2)/sqrt2", "(L,+2 - R,-2)/sqrt2"],
    "V": ["(H,a + V,d)/sqrt2", "(H,a - V,d)/sqrt2", "(H,d + V,a)/sqrt2", "(H,d - V,a)/sqrt2"],
}


def _format_logical(coeffs) -> str:
    terms = []
    for k, c in enumerate(coeffs, start=1):
        c = complex(c)
        if c == 0:
            continue
        sign = "-" if (c.real < 0 or c.imag < 0) else "+"
        mag = "i" if c.imag != 0 else ""
        terms.append((sign, f"{mag}|{k}>"))
    if len(terms) == 1:
        return terms[0][1]
    body = terms[0][1]
    for sign, t in terms[1:]:
        body += f" {sign} {t}"
    return f"1/2({body})"


def _check_basis(basis: str) -> str:
    if basis not in _MUB_COEFFS:
        raise InputError(f"unknown basis {basis!r}; expected one of {BASIS_LABELS}")
    return basis


def mub_state(basis: str, index: int, space: ModeSpace = DEFAULT_SPACE) -> StateVector:
    """State ``index`` (1..4) of MUB ``basis`` (I..V) as listed in the table."""
    _check_basis(basis)
    if not isinstance(index, (int, np.integer)) or not 1 <= index <= 4:
        raise InputError(f"index must be 1..4, got {index!r}")
    coeffs = np.array(_MUB_COEFFS[basis][index - 1], dtype=complex)
    scale = 1.0 if basis == "I" else _h
    return StateVector.from_ququart(scale * coeffs, space, normalize=False)


@dataclass(frozen=True)
class MubTable:
    bases: dict[str, tuple[MubEntry, ...]]

    def entries(self) -> list[MubEntry]:
        return [e for b in BASIS_LABELS for e in self.bases[b]]

    def state(self, basis: str, index: int) -> StateVector:
        return self.bases[_check_basis(basis)][index - 1].state

    def __len__(self):
        return sum(len(v) for v in self.bases.values())


@lru_cache(maxsize=None)
def mub_table(space: ModeSpace = DEFAULT_SPACE) -> MubTable:
    bases = {}
    for b in BASIS_LABELS:
        bases[b] = tuple(
            MubEntry(b, k, mub_state(b, k, space), _format_logical(_MUB_COEFFS[b][k - 1]),
                     _MUB_NAMES[b][k - 1])
            for k in range(1, 5)
        )
    return MubTable(bases)


def parse_state_label(label: str) -> tuple[str, int]:
    """'IV.2' -> ('IV', 2)."""
    try:
        basis, idx = label.strip().split(".")
        return _check_basis(basis), int(idx)
    except (ValueError, AttributeError):
        raise InputError(f"cannot parse state label {label!r}; expected e.g. 'II.3'") from None
