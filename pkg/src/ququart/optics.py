"""Optical elements acting on the polarization x OAM mode space.

Conventions (angles in degrees from the horizontal laboratory axis):

* HWP(t) maps (H, V) by [[cos 2t, sin 2t], [sin 2t, -cos 2t]].
* QWP(t) = exp(-i pi/4) [[c^2 + i s^2, (1-i) s c], [(1-i) s c, s^2 + i c^2]].
* A q-plate of charge q at retardation pi sends |L,m> -> |R,m+2q> and
  |R,m> -> |L,m-2q> with unit coefficients. Away from pi the unconverted
  part keeps amplitude i cos(delta/2) and the converted part sin(delta/2).
* A Dove prism rotated by t rotates the beam by 2t, imprinting exp(2 i m t).

Circular states are L = (H - iV)/sqrt2 and R = (H + iV)/sqrt2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InputError, TruncationError
from .hilbert import (DEFAULT_SPACE, EXACT_TOL, PHYS_TOL, POLARIZATION_STATES, ModeSpace,
                      StateVector)

ELEMENT_KINDS = ("HWP", "QWP", "QPLATE", "PBS_PORT", "SMF_FILTER", "DOVE", "SWAP_LIFT")
UNITARY_KINDS = ("HWP", "QWP", "QPLATE", "DOVE")
PROBABILISTIC = "probabilistic"
DETERMINISTIC = "deterministic"

_L = POLARIZATION_STATES["L"]
_R = POLARIZATION_STATES["R"]


def hwp_jones(angle: float) -> np.ndarray:
    t = np.deg2rad(angle)
    c, s = np.cos(2 * t), np.sin(2 * t)
    return np.array([[c, s], [s, -c]], dtype=complex)


def qwp_jones(angle: float) -> np.ndarray:
    t = np.deg2rad(angle)
    c, s = np.cos(t), np.sin(t)
    return np.exp(-0.25j * np.pi) * np.array(
        [[c * c + 1j * s * s, (1 - 1j) * s * c],
         [(1 - 1j) * s * c, s * s + 1j * c * c]], dtype=complex)


@dataclass(frozen=True, eq=False)
class ModeOperator:
    """Linear map on a ModeSpace plus the part that would leave the ladder.

    ``matrix`` is the in-ladder block. ``leak`` maps input amplitudes onto
    modes beyond the truncation; applying the operator to a state with a
    nonzero leak raises TruncationError instead of silently clipping.
    """

    space: ModeSpace
    matrix: np.ndarray = field(repr=False)
    leak: np.ndarray = field(default=None, repr=False)
    name: str = ""

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        leak = np.zeros((0, self.space.dim), dtype=complex) if self.leak is None \
            else np.array(self.leak, dtype=complex)
        leak.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "leak", leak)

    def apply(self, state: StateVector, tol: float = EXACT_TOL) -> StateVector:
        if state.space != self.space:
            raise InputError("operator and state live on different mode spaces")
        if self.leak.shape[0]:
            lost = float(np.sum(np.abs(self.leak @ state.amplitudes) ** 2))
            if lost > tol:
                raise TruncationError(
                    f"{self.name or 'operator'} pushes weight {lost:.3g} beyond OAM "
                    f"ladder {self.space.oam_values}")
        return StateVector(self.space, self.matrix @ state.amplitudes)

    def __matmul__(self, other: "ModeOperator") -> "ModeOperator":
        # (self @ other) applies ``other`` first.
        leak = np.vstack([other.leak, self.leak @ other.matrix])
        return ModeOperator(self.space, self.matrix @ other.matrix, leak,
                            f"{self.name}*{other.name}")

    def valid_domain(self) -> np.ndarray:
        """Orthonormal columns spanning the inputs that stay on the ladder."""
        if not self.leak.shape[0]:
            return np.eye(self.space.dim, dtype=complex)
        _, s, vh = np.linalg.svd(self.leak)
        rank = int(np.sum(s > 1e-12))
        return vh[rank:].conj().T

    def unitarity_defect(self) -> float:
        """max |P (U^dag U - I) P| over the non-truncated domain P."""
        p = self.valid_domain()
        u = self.matrix @ p
        return float(np.max(np.abs(u.conj().T @ u - np.eye(p.shape[1]))))


def polarization_operator(jones: np.ndarray, space: ModeSpace = DEFAULT_SPACE,
                          name: str = "") -> ModeOperator:
    return ModeOperator(space, np.kron(jones, np.eye(space.n_oam)), None, name)


def waveplate_operator(kind: str, angle: float, space: ModeSpace = DEFAULT_SPACE) -> ModeOperator:
    """Jones operator of a half- or quarter-wave plate, identity on OAM."""
    return _waveplate_cached(kind, float(angle), space)


@lru_cache(maxsize=4096)
def _waveplate_cached(kind: str, angle: float, space: ModeSpace) -> ModeOperator:
    if kind == "HWP":
        jones = hwp_jones(angle)
    elif kind == "QWP":
        jones = qwp_jones(angle)
    else:
        raise InputError(f"waveplate kind must be HWP or QWP, got {kind!r}")
    return polarization_operator(jones, space, f"{kind}({angle:g})")


def qplate_operator(q: float = 1, retardation: float = np.pi, offset: float = 0.0,
                    space: ModeSpace = DEFAULT_SPACE) -> ModeOperator:
    """q-plate of charge ``q`` and retardation ``retardation`` (radians).

    ``offset`` (degrees) is the angle of the optical-axis pattern at azimuth
    zero. It multiplies the L->R branch by exp(2i offset) and the R->L branch
    by exp(-2i offset); zero reproduces the unit-coefficient convention.
    """
    return _qplate_cached(float(q), float(retardation), float(offset), space)


@lru_cache(maxsize=256)
def _qplate_cached(q: float, retardation: float, offset: float, space: ModeSpace) -> ModeOperator:
    if not np.isfinite(retardation) or not 0 <= retardation < 2 * np.pi:
        raise InputError("q-plate retardation must lie in [0, 2pi)")
    shift2 = 2 * q
    if shift2 != round(shift2) or round(shift2) % 2:
        raise InputError(f"charge q={q} gives OAM shift {shift2:g}, not a multiple of the ladder step 2")
    shift = int(round(shift2))
    n = space.n_oam
    ph = np.exp(2j * np.deg2rad(offset))
    conv = np.sin(retardation / 2)
    keep = 1j * np.cos(retardation / 2)
    # Work in the circular basis (L, R) x OAM, then rotate back to (H, V).
    to_circ = np.kron(np.array([_L.conj(), _R.conj()]), np.eye(n))  # rows <L,m|, <R,m|
    from_circ = to_circ.conj().T
    inside = keep * np.eye(2 * n, dtype=complex)
    leak_rows = []
    for k, m in enumerate(space.oam_values):
        for src, dst, dm, phase in ((0, 1, shift, ph), (1, 0, -shift, ph.conjugate())):
            col = src * n + k
            if m + dm in space.oam_values:
                inside[dst * n + space.oam_values.index(m + dm), col] += conv * phase
            elif abs(conv) > 0:
                row = np.zeros(2 * n, dtype=complex)
                row[col] = conv * phase
                leak_rows.append(row)
    matrix = from_circ @ inside @ to_circ
    leak = np.array(leak_rows).reshape(-1, 2 * n) @ to_circ
    return ModeOperator(space, matrix, leak, f"QP(q={q:g},d={retardation:.4g})")


def dove_prism_operator(angle: float, space: ModeSpace = DEFAULT_SPACE) -> ModeOperator:
    """Dove prism rotated by ``angle`` degrees: phase exp(2 i m angle) on mode m.

    At 22.5 degrees this is sigma_z on {+2, -2} up to a global phase.
    """
    t = np.deg2rad(angle)
    phases = np.exp(2j * np.array(space.oam_values) * t)
    return ModeOperator(space, np.kron(np.eye(2), np.diag(phases)), None, f"DOVE({angle:g})")


@dataclass(frozen=True)
class PipelineOutcome:
    state: StateVector | None
    success_probability: float

    def __post_init__(self):
        if not -EXACT_TOL <= self.success_probability <= 1 + PHYS_TOL:
            raise InputError(f"success probability {self.success_probability} outside [0, 1]")
        if self.success_probability == 0 and self.state is not None:
            raise InputError("zero-probability outcome cannot carry a state")

    @property
    def succeeded(self) -> bool:
        return self.state is not None


def _project(state: StateVector, projector_mask: np.ndarray) -> PipelineOutcome:
    kept = np.where(projector_mask, state.amplitudes, 0)
    p = float(np.sum(np.abs(kept) ** 2))
    if p <= EXACT_TOL ** 2:
        return PipelineOutcome(None, 0.0)
    return PipelineOutcome(StateVector(state.space, kept / np.sqrt(p)), min(p, 1.0))


def pbs_project(state: StateVector, port: str = "H") -> PipelineOutcome:
    """Keep the transmitted (H) or reflected (V) arm of a polarizing beam splitter."""
    if port not in ("H", "V"):
        raise InputError(f"PBS port must be 'H' or 'V', got {port!r}")
    grid = np.zeros((2, state.space.n_oam), dtype=bool)
    grid[0 if port == "H" else 1] = True
    return _project(state, grid.reshape(-1))


def smf_filter(state: StateVector) -> PipelineOutcome:
    """Single-mode fiber: keep only the m = 0 component."""
    grid = np.zeros((2, state.space.n_oam), dtype=bool)
    grid[:, state.space.oam_values.index(0)] = True
    return _project(state, grid.reshape(-1))


def _check_mode(mode: str) -> None:
    if mode not in (PROBABILISTIC, DETERMINISTIC):
        raise InputError(f"mode must be {PROBABILISTIC!r} or {DETERMINISTIC!r}, got {mode!r}")


def _support_outside(state: StateVector, allowed: Iterable[tuple[int, int]]) -> float:
    mask = np.ones(state.space.dim, dtype=bool)
    for pol, m in allowed:
        mask[state.space.index(pol, m)] = False
    return float(np.sum(np.abs(state.amplitudes[mask]) ** 2))


def transferrer_pi_to_o2(state: StateVector, mode: str = PROBABILISTIC) -> PipelineOutcome:
    """a|L,0> + b|R,0>  ->  |H> (a|+2> + b|-2>).

    The probabilistic version is a q-plate followed by the H port of a PBS
    (p = 1/2). The deterministic one stands in for the Sagnac scheme and
    returns the same state with p = 1.
    """
    _check_mode(mode)
    if _support_outside(state, [(0, 0), (1, 0)]) > PHYS_TOL:
        raise DomainError("pi->o2 transferrer input must be supported on m = 0")
    out = pbs_project(qplate_operator(space=state.space).apply(state), "H")
    if mode == DETERMINISTIC and out.state is not None:
        return PipelineOutcome(out.state, 1.0)
    return out


def transferrer_o2_to_pi(state: StateVector, mode: str = PROBABILISTIC) -> PipelineOutcome:
    """|H> (a|+2> + b|-2>)  ->  (a|L> + b|R>) |0>.

    Probabilistic: q-plate then single-mode fiber (p = 1/2). Deterministic:
    same output state with p = 1.
    """
    _check_mode(mode)
    if _support_outside(state, [(0, 2), (0, -2)]) > PHYS_TOL:
        raise DomainError("o2->pi transferrer input must be |H> x span{|+2>, |-2>}")
    out = smf_filter(qplate_operator(space=state.space).apply(state))
    if mode == DETERMINISTIC and out.state is not None:
        return PipelineOutcome(out.state, 1.0)
    return out


@dataclass(frozen=True)
class Element:
    """One stage of an optical pipeline.

    ``angle`` applies to waveplates and the Dove prism; ``q``, ``delta`` and
    ``offset`` to q-plates; ``kept_port`` to PBS_PORT; ``direction``
    ('pi_to_o2' or 'o2_to_pi') to SWAP_LIFT, the ideal deterministic
    transferrer.
    """

    kind: str
    angle: float | None = None
    q: float | None = None
    delta: float | None = None
    offset: float | None = None
    kept_port: str | None = None
    direction: str | None = None

    def __post_init__(self):
        if self.kind not in ELEMENT_KINDS:
            raise InputError(f"unknown element kind {self.kind!r}")
        if self.kind in ("HWP", "QWP", "DOVE"):
            if self.angle is None or not np.isfinite(self.angle):
                raise InputError(f"{self.kind} needs a finite angle")
        if self.kind == "QPLATE":
            object.__setattr__(self, "q", 1 if self.q is None else self.q)
            object.__setattr__(self, "delta", float(np.pi) if self.delta is None else float(self.delta))
            object.__setattr__(self, "offset", 0.0 if self.offset is None else float(self.offset))
            if not 0 <= self.delta < 2 * np.pi:
                raise InputError("q-plate retardation must lie in [0, 2pi)")
        if self.kind == "PBS_PORT":
            object.__setattr__(self, "kept_port", self.kept_port or "H")
            if self.kept_port not in ("H", "V"):
                raise InputError(f"kept_port must be H or V, got {self.kept_port!r}")
        if self.kind == "SWAP_LIFT" and self.direction not in ("pi_to_o2", "o2_to_pi"):
            raise InputError("SWAP_LIFT needs direction 'pi_to_o2' or 'o2_to_pi'")

    @property
    def is_projective(self) -> bool:
        return self.kind in ("PBS_PORT", "SMF_FILTER")

    def operator(self, space: ModeSpace = DEFAULT_SPACE) -> ModeOperator:
        if self.kind in ("HWP", "QWP"):
            return waveplate_operator(self.kind, self.angle, space)
        if self.kind == "QPLATE":
            return qplate_operator(self.q, self.delta, self.offset, space)
        if self.kind == "DOVE":
            return dove_prism_operator(self.angle, space)
        raise InputError(f"{self.kind} is not a unitary element")

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.angle is not None:
            out["angle_deg"] = float(self.angle)
        if self.kind == "QPLATE":
            out["q"] = self.q
            out["delta_rad"] = self.delta
            if self.offset:
                out["offset_deg"] = self.offset
        if self.kept_port is not None:
            out["kept_port"] = self.kept_port
        if self.direction is not None:
            out["direction"] = self.direction
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Element":
        return cls(kind=data["kind"], angle=data.get("angle_deg"), q=data.get("q"),
                   delta=data.get("delta_rad"), offset=data.get("offset_deg"),
                   kept_port=data.get("kept_port"), direction=data.get("direction"))


def HWP(angle):
    return Element("HWP", angle=angle)


def QWP(angle):
    return Element("QWP", angle=angle)


def QPLATE(offset=0.0, q=1, delta=np.pi):
    return Element("QPLATE", q=q, delta=delta, offset=offset)


def PBS(port="H"):
    return Element("PBS_PORT", kept_port=port)


SMF = Element("SMF_FILTER")


@dataclass(frozen=True)
class PipelineConfig:
    """Ordered optical stages; projective stages record their kept port."""

    stages: tuple[Element, ...] = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def success_semantics(self) -> list[dict]:
        return [{"stage": i, "kind": e.kind, "kept": e.kept_port or "m=0"}
                for i, e in enumerate(self.stages) if e.is_projective]

    def to_json(self) -> dict:
        out = {"stages": [e.to_json() for e in self.stages]}
        if self.label:
            out["label"] = self.label
        return out

    @classmethod
    def from_json(cls, data: dict) -> "PipelineConfig":
        return cls(tuple(Element.from_json(s) for s in data["stages"]), data.get("label", ""))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def run_pipeline(config: PipelineConfig | Sequence[Element], state: StateVector) -> PipelineOutcome:
    """Apply stages in order, multiplying the success probabilities of projections."""
    stages = config.stages if isinstance(config, PipelineConfig) else tuple(config)
    if abs(state.norm() - 1.0) > PHYS_TOL:
        raise DomainError(f"pipeline input must be normalized (norm {state.norm():.12g})")
    p = 1.0
    for el in stages:
        if el.kind == "PBS_PORT":
            out = pbs_project(state, el.kept_port)
        elif el.kind == "SMF_FILTER":
            out = smf_filter(state)
        elif el.kind == "SWAP_LIFT":
            fn = transferrer_pi_to_o2 if el.direction == "pi_to_o2" else transferrer_o2_to_pi
            out = fn(state, DETERMINISTIC)
        else:
            out = PipelineOutcome(el.operator(state.space).apply(state), 1.0)
        if out.state is None:
            return PipelineOutcome(None, 0.0)
        p *= out.success_probability
        state = out.state
    return PipelineOutcome(state, p)


def deterministic_variant(config: PipelineConfig) -> PipelineConfig:
    """Swap each q-plate + PBS(H) pair for the ideal deterministic transferrer.

    Only pairs whose q-plate has the standard charge, retardation and zero
    offset are replaced, since only those realize the pi->o2 transferrer.
    """
    out = []
    stages = list(config.stages)
    i = 0
    while i < len(stages):
        el = stages[i]
        nxt = stages[i + 1] if i + 1 < len(stages) else None
        if (el.kind == "QPLATE" and el.q == 1 and np.isclose(el.delta, np.pi) and not el.offset
                and nxt is not None and nxt.kind == "PBS_PORT" and nxt.kept_port == "H"):
            out.append(Element("SWAP_LIFT", direction="pi_to_o2"))
            i += 2
            continue
        out.append(el)
        i += 1
    return PipelineConfig(tuple(out), config.label)


def pipeline_operator(config: PipelineConfig | Sequence[Element],
                      space: ModeSpace = DEFAULT_SPACE) -> ModeOperator:
    """Collapse a pipeline into one linear map (projections included).

    For input psi the unnormalized output is ``matrix @ psi`` and the success
    probability its squared norm. SWAP_LIFT stages are not linear maps on the
    whole space and are rejected here.
    """
    stages = config.stages if isinstance(config, PipelineConfig) else tuple(config)
    n = space.n_oam
    total = ModeOperator(space, np.eye(space.dim), None, "id")
    for el in stages:
        if el.kind == "PBS_PORT":
            keep = np.zeros((2, n))
            keep[0 if el.kept_port == "H" else 1] = 1
            op = ModeOperator(space, np.diag(keep.reshape(-1)), None, "PBS")
        elif el.kind == "SMF_FILTER":
            keep = np.zeros((2, n))
            keep[:, space.oam_values.index(0)] = 1
            op = ModeOperator(space, np.diag(keep.reshape(-1)), None, "SMF")
        elif el.kind == "SWAP_LIFT":
            raise InputError("SWAP_LIFT has no whole-space matrix; use run_pipeline")
        else:
            op = el.operator(space)
        total = op @ total
    return total
