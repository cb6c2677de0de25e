"""Photon-counting simulation, density-matrix reconstruction and figures of merit.

Two measurement schemes are supported:

* ``SEPARABLE_36``: every product of a polarization Pauli eigenstate
  (H, V, A, D, R, L) with an OAM one (+2, -2, h, v, a, d). Grouped in
  quadruples they give all 16 moments <sigma_i x sigma_j>, which feed the
  linear inversion rho = 1/4 sum_j r_j lambda_j.
* ``MUB_20``: the four states of each of the five mutually unbiased bases.
  For a complete set of MUBs in dimension 4, sum_{b,k} p_bk Pi_bk = rho + I.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import least_squares

from .errors import InputError, InsufficientDataError
from .hilbert import (BASIS_LABELS, EXACT_TOL, PHYS_TOL, POLARIZATION_STATES, DensityMatrix,
                      StateVector, mub_state, oam_superposition)

SEPARABLE_36 = "SEPARABLE_36"
MUB_20 = "MUB_20"
SCHEMES = (SEPARABLE_36, MUB_20)
DEFAULT_COINCIDENCE_RATE_HZ = 8000.0

_I2 = np.eye(2, dtype=complex)
PAULI = {
    "I": _I2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
# (polarization Pauli, OAM Pauli) for lambda_1 .. lambda_16.
OPERATOR_ORDER = (
    ("X", "I"), ("Y", "I"), ("Z", "I"), ("I", "X"),
    ("X", "X"), ("Y", "X"), ("Z", "X"), ("I", "Y"),
    ("X", "Y"), ("Y", "Y"), ("Z", "Y"), ("I", "Z"),
    ("X", "Z"), ("Y", "Z"), ("Z", "Z"), ("I", "I"),
)

# Eigenstates (+1, -1) of each Pauli, labeled as in the separable scheme.
POL_EIGEN = {"X": ("A", "D"), "Y": ("R", "L"), "Z": ("H", "V")}
OAM_EIGEN = {"X": ("h", "v"), "Y": ("a", "d"), "Z": ("+2", "-2")}


@dataclass(frozen=True)
class OperatorBasis:
    """The 16 Hermitian generators sigma_i (polarization) x sigma_j (OAM)."""

    labels: tuple[tuple[str, str], ...] = OPERATOR_ORDER

    @property
    def operators(self) -> np.ndarray:
        return _operators()

    def __len__(self):
        return len(self.labels)


@lru_cache(maxsize=None)
def _operators() -> np.ndarray:
    ops = np.array([np.kron(PAULI[a], PAULI[b]) for a, b in OPERATOR_ORDER])
    ops.setflags(write=False)
    return ops


@dataclass(frozen=True, eq=False)
class ProjectorSet:
    """Labeled rank-1 projectors on the ququart subspace."""

    scheme: str
    labels: tuple[str, ...]
    vectors: np.ndarray = field(repr=False)  # shape (n, 4), rows are kets

    @property
    def projectors(self) -> np.ndarray:
        return np.einsum("ki,kj->kij", self.vectors, self.vectors.conj())

    def __len__(self):
        return len(self.labels)


@lru_cache(maxsize=None)
def projector_set(scheme: str) -> ProjectorSet:
    if scheme == SEPARABLE_36:
        labels, vecs = [], []
        for pol in ("H", "V", "A", "D", "R", "L"):
            for orb in ("+2", "-2", "h", "v", "a", "d"):
                labels.append(f"{pol},{orb}")
                vecs.append(np.kron(POLARIZATION_STATES[pol], oam_superposition(orb)))
    elif scheme == MUB_20:
        labels = [f"{b}.{k}" for b in BASIS_LABELS for k in range(1, 5)]
        vecs = [mub_state(b, k).ququart_coefficients() for b in BASIS_LABELS for k in range(1, 5)]
    else:
        raise InputError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    arr = np.array(vecs)
    arr.setflags(write=False)
    return ProjectorSet(scheme, tuple(labels), arr)


@dataclass(frozen=True)
class CountsRecord:
    scheme: str
    counts: dict[str, int]
    mean_total_counts: float
    seed: int
    coincidence_rate_hz: float = DEFAULT_COINCIDENCE_RATE_HZ

    def __post_init__(self):
        labels = projector_set(self.scheme).labels
        if set(self.counts) != set(labels):
            missing = sorted(set(labels) - set(self.counts))
            extra = sorted(set(self.counts) - set(labels))
            raise InputError(f"count labels do not match {self.scheme}: missing {missing}, extra {extra}")
        clean = {}
        for k in labels:
            v = self.counts[k]
            if int(v) != v or v < 0:
                raise InputError(f"count for {k} must be a non-negative integer, got {v!r}")
            clean[k] = int(v)
        object.__setattr__(self, "counts", clean)
        if self.mean_total_counts < 0:
            raise InputError("mean_total_counts must be non-negative")

    def to_json(self) -> dict:
        return {
            "schema": "ququart.counts/1",
            "scheme": self.scheme,
            "seed": self.seed,
            "mean_total_counts": self.mean_total_counts,
            "coincidence_rate_hz": self.coincidence_rate_hz,
            "counts": dict(self.counts),
        }

    @classmethod
    def from_json(cls, data: dict) -> "CountsRecord":
        try:
            return cls(data["scheme"], dict(data["counts"]), float(data["mean_total_counts"]),
                       int(data["seed"]),
                       float(data.get("coincidence_rate_hz", DEFAULT_COINCIDENCE_RATE_HZ)))
        except KeyError as exc:
            raise InputError(f"counts record is missing field {exc}") from None


@dataclass(frozen=True)
class NoiseModel:
    """Depolarization (p) followed by dephasing of the polarization blocks (gamma)."""

    depolarizing_p: float = 0.0
    dephasing_gamma: float = 0.0

    def __post_init__(self):
        for name in ("depolarizing_p", "dephasing_gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {v}")


def _as_matrix(rho) -> np.ndarray:
    return rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def expectations(rho) -> np.ndarray:
    """r_j = Tr[rho lambda_j] for the 16 generators."""
    return np.real(np.einsum("kij,ji->k", _operators(), _as_matrix(rho)))


def linear_inversion(r) -> DensityMatrix:
    """rho = 1/4 sum_j r_j lambda_j. Not guaranteed positive."""
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.shape != (16,):
        raise InputError(f"expected 16 moments, got {r.shape[0]}")
    if abs(r[15] - 1.0) > 1e-6:
        raise InputError(f"identity moment r16 = {r[15]:.9g}, expected 1")
    m = 0.25 * np.einsum("k,kij->ij", r, _operators())
    return DensityMatrix(m)


def project_physical(rho_raw) -> DensityMatrix:
    """Nearest-spectrum physical state by iterative eigenvalue truncation.

    The most negative eigenvalue is set to zero and its value spread evenly
    over the eigenvalues still nonzero; repeat until none is negative. The
    eigenvectors are kept. Trace is preserved exactly.
    """
    m = _as_matrix(rho_raw)
    if m.shape != (4, 4):
        raise InputError("expected a 4x4 matrix")
    if np.max(np.abs(m - m.conj().T)) > PHYS_TOL:
        raise InputError("matrix is not Hermitian")
    if abs(np.trace(m).real - 1.0) > 1e-6:
        raise InputError(f"trace {np.trace(m).real:.9g} != 1")
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    if w.min() >= 0:
        return DensityMatrix(m / np.trace(m).real)
    w = w.copy()
    active = w != 0
    while True:
        cand = np.where(active, w, np.inf)
        j = int(np.argmin(cand))
        if cand[j] >= 0:
            break
        val = w[j]
        w[j] = 0.0
        active[j] = False
        w[active] += val / active.sum()
    out = (v * w) @ v.conj().T
    out = 0.5 * (out + out.conj().T)
    return DensityMatrix(out / np.trace(out).real)


def negativity(rho_raw) -> float:
    """Sum of the magnitudes of the negative eigenvalues."""
    w = np.linalg.eigvalsh(_as_matrix(rho_raw))
    return float(-w[w < 0].sum())


def born_probabilities(rho, scheme: str) -> np.ndarray:
    ps = projector_set(scheme)
    m = _as_matrix(rho)
    p = np.real(np.einsum("ki,ij,kj->k", ps.vectors.conj(), m, ps.vectors))
    return np.clip(p, 0.0, None)


def substream_seed(seed: int, scheme: str, label: str) -> int:
    """Stable 64-bit seed for one projector, independent of evaluation order."""
    digest = hashlib.sha256(f"{int(seed)}|{scheme}|{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _poisson_draw(args) -> int:
    seed, scheme, label, lam = args
    if lam <= 0:
        return 0
    return int(np.random.default_rng(substream_seed(seed, scheme, label)).poisson(lam))


def simulate_counts(rho, scheme: str, mean_total_counts: float, seed: int,
                    workers: int = 1,
                    coincidence_rate_hz: float = DEFAULT_COINCIDENCE_RATE_HZ) -> CountsRecord:
    """Independent Poisson counts with mean Tr[rho Pi] * mean_total_counts.

    Each projector draws from its own generator seeded by (seed, scheme,
    label), so the record is identical for any ``workers``.
    """
    if mean_total_counts < 0:
        raise InputError("mean_total_counts must be non-negative")
    ps = projector_set(scheme)
    lam = born_probabilities(rho, scheme) * mean_total_counts
    jobs = [(seed, scheme, lab, float(l)) for lab, l in zip(ps.labels, lam)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(_poisson_draw, jobs))
    else:
        draws = [_poisson_draw(j) for j in jobs]
    return CountsRecord(scheme, dict(zip(ps.labels, draws)), float(mean_total_counts), int(seed),
                        coincidence_rate_hz)


def expected_counts(rho, scheme: str, mean_total_counts: float) -> dict[str, float]:
    """Noiseless means; useful as an exact-arithmetic input to the estimators."""
    ps = projector_set(scheme)
    return dict(zip(ps.labels, born_probabilities(rho, scheme) * mean_total_counts))


def _counts_lookup(counts, scheme):
    if isinstance(counts, CountsRecord):
        if counts.scheme != scheme:
            raise InputError(f"expected a {scheme} record, got {counts.scheme}")
        counts = counts.counts
    labels = projector_set(scheme).labels
    missing = [lab for lab in labels if lab not in counts]
    if missing:
        raise InputError(f"counts missing labels {missing}")
    return {k: float(counts[k]) for k in labels}


def counts_to_expectations(counts) -> np.ndarray:
    """Estimate the 16 moments from separable-36 counts.

    <sigma_i x sigma_j> uses the quadruple of eigenstate products
    (+,+), (+,-), (-,+), (-,-): (N++ - N+- - N-+ + N--) / sum. Marginal
    moments pool the three quadruples sharing the relevant Pauli.
    ``counts`` may be a CountsRecord or a label -> (possibly real) mapping.
    """
    c = _counts_lookup(counts, SEPARABLE_36)

    def quad(i, j):
        (pp, pm), (op, om) = POL_EIGEN[i], OAM_EIGEN[j]
        return np.array([c[f"{pp},{op}"], c[f"{pp},{om}"], c[f"{pm},{op}"], c[f"{pm},{om}"]])

    r = np.zeros(16)
    for k, (a, b) in enumerate(OPERATOR_ORDER):
        if a == "I" and b == "I":
            r[k] = 1.0
            continue
        if a != "I" and b != "I":
            groups = [quad(a, b)]
            weights = np.array([1, -1, -1, 1])
        elif b == "I":
            groups = [quad(a, j) for j in "XYZ"]
            weights = np.array([1, 1, -1, -1])
        else:
            groups = [quad(i, b) for i in "XYZ"]
            weights = np.array([1, -1, 1, -1])
        for g in groups:
            if g.sum() <= 0:
                raise InsufficientDataError(f"no counts in a quadruple needed for <{a}{b}>")
        total = sum(g.sum() for g in groups)
        r[k] = sum(weights @ g for g in groups) / total
    return r


def mub_probabilities(counts) -> np.ndarray:
    """Per-basis normalized frequencies, shape (5, 4)."""
    c = _counts_lookup(counts, MUB_20)
    p = np.array([[c[f"{b}.{k}"] for k in range(1, 5)] for b in BASIS_LABELS])
    tot = p.sum(axis=1)
    if np.any(tot <= 0):
        empty = [b for b, t in zip(BASIS_LABELS, tot) if t <= 0]
        raise InsufficientDataError(f"no counts in basis {', '.join(empty)}")
    return p / tot[:, None]


def mub_linear_estimate(counts) -> DensityMatrix:
    """sum_{b,k} p_bk Pi_bk - I, before any positivity correction."""
    p = mub_probabilities(counts).reshape(-1)
    proj = projector_set(MUB_20).projectors
    return DensityMatrix(np.einsum("k,kij->ij", p, proj) - np.eye(4))


def mub_reconstruct(counts) -> DensityMatrix:
    return project_physical(mub_linear_estimate(counts))


def separable_reconstruct(counts) -> DensityMatrix:
    return project_physical(linear_inversion(counts_to_expectations(counts)))


def f_exp(counts, basis: str, target_index: int) -> float:
    """Target detections over all detections in ``basis`` (MUB_20 counts)."""
    if basis not in BASIS_LABELS:
        raise InputError(f"unknown basis {basis!r}")
    if not 1 <= target_index <= 4:
        raise InputError("target_index must be 1..4")
    c = _counts_lookup(counts, MUB_20)
    row = np.array([c[f"{basis}.{k}"] for k in range(1, 5)])
    total = row.sum()
    if total <= 0:
        raise InsufficientDataError(f"no counts in basis {basis}")
    return float(row[target_index - 1] / total)


def f_exp_stderr(f: float, basis_total: float) -> float:
    """Poisson standard error of F_exp given the basis total."""
    if basis_total <= 0:
        raise InsufficientDataError("basis total must be positive")
    return math.sqrt(max(f * (1 - f), 0.0) / basis_total)


def count_budget_for_stderr(f: float, stderr: float) -> float:
    """Basis total needed for a given F_exp standard error."""
    if stderr <= 0:
        raise InputError("stderr must be positive")
    return f * (1 - f) / stderr ** 2


def fidelity(rho, target: StateVector | np.ndarray) -> float:
    """<phi|rho|phi> for a pure target on the ququart subspace."""
    if isinstance(target, StateVector):
        if target.weight_outside_ququart() > PHYS_TOL:
            raise InputError("target must lie in the ququart subspace")
        t = target.ququart_coefficients()
    else:
        t = np.asarray(target, dtype=complex)
    t = t / np.linalg.norm(t)
    return float(np.real(np.vdot(t, _as_matrix(rho) @ t)))


def purity(rho) -> float:
    m = _as_matrix(rho)
    return float(np.real(np.trace(m @ m)))


def linear_entropy(rho, normalized: bool = True) -> float:
    """(4/3)(1 - Tr rho^2), or 1 - Tr rho^2 when ``normalized`` is False."""
    s = 1.0 - purity(rho)
    return 4.0 / 3.0 * s if normalized else s


def apply_noise(rho, model: NoiseModel) -> DensityMatrix:
    m = _as_matrix(rho)
    p, g = model.depolarizing_p, model.dephasing_gamma
    m = (1 - p) * m + p * np.eye(4) / 4
    if g:
        m = m.copy()
        m[:2, 2:] *= 1 - g
        m[2:, :2] *= 1 - g
    return DensityMatrix(m)


def werner(target: StateVector, p: float) -> DensityMatrix:
    """(1 - p)|phi><phi| + p I/4."""
    t = target.ququart_coefficients()
    return DensityMatrix((1 - p) * np.outer(t, t.conj()) + p * np.eye(4) / 4)


@dataclass(frozen=True)
class NoiseFit:
    model: NoiseModel
    fidelity: float
    linear_entropy: float
    residuals: tuple[float, ...]


def fit_noise_to_state(target: StateVector, fidelity_target: float, entropy_target: float,
                       sigma_f: float = 0.003, sigma_s: float = 0.002) -> NoiseFit:
    """Weighted least-squares (p, gamma) reproducing a measured (F, S_L) pair.

    For states without polarization-block coherence gamma has no effect; the
    solver then leaves it at its starting value of zero.
    """
    rho0 = np.outer(target.ququart_coefficients(), target.ququart_coefficients().conj())

    def observables(x):
        rho = apply_noise(rho0, NoiseModel(*np.clip(x, 0, 1)))
        return fidelity(rho, target), linear_entropy(rho)

    def resid(x):
        f, s = observables(x)
        return [(f - fidelity_target) / sigma_f, (s - entropy_target) / sigma_s]

    sol = least_squares(resid, x0=[0.01, 0.0], bounds=([0, 0], [1, 1]), xtol=1e-14, ftol=1e-14)
    model = NoiseModel(*(float(v) for v in np.clip(sol.x, 0, 1)))
    f, s = observables(sol.x)
    return NoiseFit(model, f, s, tuple(float(v) for v in sol.fun))


def ideal_f_exp(rho, basis: str, target_index: int) -> float:
    p = born_probabilities(rho, MUB_20).reshape(5, 4)[BASIS_LABELS.index(basis)]
    return float(p[target_index - 1] / p.sum())


def basis_mean_f_exp(model: NoiseModel) -> dict[str, float]:
    """Noise-only mean F_exp per basis (no counting noise)."""
    out = {}
    for b in BASIS_LABELS:
        vals = []
        for k in range(1, 5):
            t = mub_state(b, k).ququart_coefficients()
            rho = apply_noise(np.outer(t, t.conj()), model)
            vals.append(ideal_f_exp(rho, b, k))
        out[b] = float(np.mean(vals))
    return out


def fit_noise_to_basis_means(means: dict[str, float]) -> NoiseFit:
    """Global (p, gamma) best matching per-basis mean fidelities (fractions)."""
    target = np.array([means[b] for b in BASIS_LABELS])

    def resid(x):
        got = basis_mean_f_exp(NoiseModel(*np.clip(x, 0, 1)))
        return np.array([got[b] for b in BASIS_LABELS]) - target

    sol = least_squares(resid, x0=[0.05, 0.05], bounds=([0, 0], [1, 1]), xtol=1e-12, ftol=1e-12)
    model = NoiseModel(*(float(v) for v in np.clip(sol.x, 0, 1)))
    return NoiseFit(model, float("nan"), float("nan"), tuple(float(v) for v in sol.fun))


def random_density_matrix(rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Wishart-style random state: G G^dag / Tr, G complex Gaussian 4 x rank."""
    rank = rank or int(rng.integers(1, 5))
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real)


def is_close_density(a, b, tol: float = EXACT_TOL) -> bool:
    return bool(np.max(np.abs(_as_matrix(a) - _as_matrix(b))) <= tol)


def fit_global_noise(target: StateVector, fidelity_target: float, entropy_target: float,
                     basis_means: dict[str, float], sigma_f: float = 0.003,
                     sigma_s: float = 0.002, sigma_mean: float = 0.004) -> NoiseFit:
    """One (p, gamma) fitted jointly to a state's (F, S_L) and per-basis mean F_exp."""
    t = target.ququart_coefficients()
    rho0 = np.outer(t, t.conj())
    goal = np.array([basis_means[b] for b in BASIS_LABELS])

    def resid(x):
        model = NoiseModel(*np.clip(x, 0, 1))
        rho = apply_noise(rho0, model)
        means = basis_mean_f_exp(model)
        got = np.array([means[b] for b in BASIS_LABELS])
        return np.concatenate([[(fidelity(rho, target) - fidelity_target) / sigma_f,
                                (linear_entropy(rho) - entropy_target) / sigma_s],
                               (got - goal) / sigma_mean])

    sol = least_squares(resid, x0=[0.03, 0.05], bounds=([0, 0], [1, 1]), xtol=1e-12, ftol=1e-12)
    model = NoiseModel(*(float(v) for v in np.clip(sol.x, 0, 1)))
    rho = apply_noise(rho0, model)
    return NoiseFit(model, fidelity(rho, target), linear_entropy(rho),
                    tuple(float(v) for v in sol.fun))
