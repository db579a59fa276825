"""Symmetric-sector (j = N/2) state-vector simulation of N two-level atoms.

Amplitudes are stored in ascending magnetic quantum number, index k <-> m = k - N/2.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln

NORM_TOL = 1e-10


class Axis(enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"


class Action(enum.IntEnum):
    FREE = 0
    PULSE_X = 1
    PULSE_Y = 2


@dataclass(frozen=True)
class SpinState:
    n_atoms: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError(f"invalid system size: n_atoms={self.n_atoms}")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.n_atoms + 1,):
            raise ValueError(
                f"amplitude vector has shape {amps.shape}, expected ({self.n_atoms + 1},)"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def m(self) -> np.ndarray:
        return magnetic_numbers(self.n_atoms)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def check_norm(self, tol: float = NORM_TOL) -> None:
        err = abs(self.norm() - 1.0)
        if err > tol:
            raise ValueError(f"state norm deviates from 1 by {err:.3e}")


def magnetic_numbers(n_atoms: int) -> np.ndarray:
    return np.arange(n_atoms + 1) - n_atoms / 2


def dicke_state(n_atoms: int, m: float) -> SpinState:
    k = int(round(m + n_atoms / 2))
    if not 0 <= k <= n_atoms or abs(k - n_atoms / 2 - m) > 1e-12:
        raise ValueError(f"m={m} is not a valid magnetic number for N={n_atoms}")
    amps = np.zeros(n_atoms + 1, dtype=complex)
    amps[k] = 1.0
    return SpinState(n_atoms, amps)


def ghz_state(n_atoms: int) -> SpinState:
    amps = np.zeros(n_atoms + 1, dtype=complex)
    amps[0] = amps[-1] = 1 / np.sqrt(2)
    return SpinState(n_atoms, amps)


def css_initial(n_atoms: int) -> SpinState:
    """Coherent spin state along +x, i.e. exp(-i pi/2 J_y) applied to all-up."""
    if n_atoms < 1:
        raise ValueError(f"invalid system size: n_atoms={n_atoms}")
    k = np.arange(n_atoms + 1)
    log_binom = gammaln(n_atoms + 1) - gammaln(k + 1) - gammaln(n_atoms - k + 1)
    amps = np.exp(0.5 * log_binom - 0.5 * n_atoms * np.log(2.0))
    return SpinState(n_atoms, amps.astype(complex))


# ---------------------------------------------------------------------------
# generators

def ladder_coefficients(n_atoms: int) -> np.ndarray:
    """<m+1|J_+|m> for m = -j ... j-1."""
    j = n_atoms / 2
    m = magnetic_numbers(n_atoms)[:-1]
    return np.sqrt(j * (j + 1) - m * (m + 1))


def apply_jplus(n_atoms: int, vec: np.ndarray) -> np.ndarray:
    out = np.zeros_like(vec, dtype=complex)
    out[1:] = ladder_coefficients(n_atoms) * vec[:-1]
    return out


def apply_jminus(n_atoms: int, vec: np.ndarray) -> np.ndarray:
    out = np.zeros_like(vec, dtype=complex)
    out[:-1] = ladder_coefficients(n_atoms) * vec[1:]
    return out


def apply_generator(n_atoms: int, axis: Axis, vec: np.ndarray) -> np.ndarray:
    """J_axis |vec> using the tridiagonal ladder structure."""
    axis = Axis(axis)
    if axis is Axis.Z:
        return magnetic_numbers(n_atoms) * vec
    up, down = apply_jplus(n_atoms, vec), apply_jminus(n_atoms, vec)
    if axis is Axis.X:
        return 0.5 * (up + down)
    return -0.5j * (up - down)


def dense_generator(n_atoms: int, axis: Axis) -> np.ndarray:
    """Dense (N+1)x(N+1) matrix of J_axis; intended for small-N cross checks."""
    axis = Axis(axis)
    if axis is Axis.Z:
        return np.diag(magnetic_numbers(n_atoms)).astype(complex)
    jp = np.diag(ladder_coefficients(n_atoms), -1).astype(complex)
    if axis is Axis.X:
        return 0.5 * (jp + jp.T)
    return -0.5j * (jp - jp.T)


# ---------------------------------------------------------------------------
# propagators

def apply_oat(state: SpinState, chi_dt: float) -> SpinState:
    """exp(-i chi_dt J_z^2); negative chi_dt gives the time-reversed twist."""
    if not np.isfinite(chi_dt):
        raise ValueError(f"chi_dt must be finite, got {chi_dt}")
    return SpinState(state.n_atoms, _oat_phases(state.n_atoms, float(chi_dt)) * state.amplitudes)


@lru_cache(maxsize=512)
def _oat_phases(n_atoms: int, chi_dt: float) -> np.ndarray:
    m = magnetic_numbers(n_atoms)
    out = np.exp(-1j * chi_dt * m * m)
    out.setflags(write=False)
    return out


def _z_phases(n_atoms: int, angle: float) -> np.ndarray:
    return np.exp(-1j * angle * magnetic_numbers(n_atoms))


@lru_cache(maxsize=None)
def _jx_eigensystem(n_atoms: int) -> tuple[np.ndarray, np.ndarray]:
    # J_x is real symmetric tridiagonal with spectrum exactly -j..j
    off = 0.5 * ladder_coefficients(n_atoms)
    _, vecs = eigh_tridiagonal(np.zeros(n_atoms + 1), off)
    vecs.setflags(write=False)
    return magnetic_numbers(n_atoms), vecs


@lru_cache(maxsize=256)
def wigner_small_d(n_atoms: int, angle: float) -> np.ndarray:
    """Real orthogonal matrix of exp(-i angle J_y) in the Dicke basis.

    Built from the J_x eigenbasis, using J_y = R_z(pi/2) J_x R_z(-pi/2).
    """
    evals, vecs = _jx_eigensystem(n_atoms)
    w = _z_phases(n_atoms, np.pi / 2)[:, None] * vecs
    d = (w * np.exp(-1j * angle * evals)) @ w.conj().T
    if np.max(np.abs(d.imag), initial=0.0) > 1e-8:
        raise FloatingPointError("y-rotation matrix acquired an imaginary part")
    d = np.ascontiguousarray(d.real)
    d.setflags(write=False)
    return d


def _real_matvec(d: np.ndarray, vec: np.ndarray) -> np.ndarray:
    # avoids numpy upcasting d to a complex copy
    return d @ vec.real + 1j * (d @ vec.imag)


def _rotate_vec(n_atoms: int, axis: Axis, angle: float, vec: np.ndarray) -> np.ndarray:
    if axis is Axis.Z:
        return _z_phases(n_atoms, angle) * vec
    d = wigner_small_d(n_atoms, float(angle))
    if axis is Axis.Y:
        return _real_matvec(d, vec)
    # exp(-i a J_x) = R_z(-pi/2) exp(-i a J_y) R_z(pi/2)
    inner = _real_matvec(d, _z_phases(n_atoms, np.pi / 2) * vec)
    return _z_phases(n_atoms, -np.pi / 2) * inner


def apply_rotation(state: SpinState, axis: Axis, angle: float) -> SpinState:
    """exp(-i angle J_axis) |state>."""
    if not np.isfinite(angle):
        raise ValueError(f"rotation angle must be finite, got {angle}")
    axis = Axis(axis)
    return SpinState(state.n_atoms, _rotate_vec(state.n_atoms, axis, angle, state.amplitudes))


_PULSE_AXIS = {Action.PULSE_X: Axis.X, Action.PULSE_Y: Axis.Y}


def apply_action(state: SpinState, action: Action | int, chi_dt: float) -> SpinState:
    """One interval: twist for chi_dt, then (optionally) an instantaneous pi/2 pulse."""
    action = Action(action)
    out = apply_oat(state, chi_dt)
    if action is Action.FREE:
        return out
    return apply_rotation(out, _PULSE_AXIS[action], np.pi / 2)


def apply_inverse_action(state: SpinState, action: Action | int, chi_dt: float) -> SpinState:
    action = Action(action)
    if action is not Action.FREE:
        state = apply_rotation(state, _PULSE_AXIS[action], -np.pi / 2)
    return apply_oat(state, -chi_dt)


def apply_sequence(state: SpinState, actions, chi_dt: float) -> SpinState:
    for a in actions:
        state = apply_action(state, a, chi_dt)
    return state


def apply_inverse_sequence(state: SpinState, actions, chi_dt: float) -> SpinState:
    for a in reversed(list(actions)):
        state = apply_inverse_action(state, a, chi_dt)
    return state


# ---------------------------------------------------------------------------
# expectations

def moments(state: SpinState) -> np.ndarray:
    """(<Jx>, <Jy>, <Jz>, <Jx^2>, <Jy^2>, <Jz^2>)."""
    n = state.n_atoms
    c = state.amplitudes
    j = n / 2
    m = state.m
    a = ladder_coefficients(n)
    p = np.abs(c) ** 2
    jplus = np.vdot(c[1:], a * c[:-1])
    jplus2 = np.vdot(c[2:], a[1:] * a[:-1] * c[:-2]) if n >= 2 else 0.0
    jz = float(p @ m)
    jz2 = float(p @ (m * m))
    rest = j * (j + 1) - jz2
    return np.array(
        [
            jplus.real,
            jplus.imag,
            jz,
            0.5 * (rest + jplus2.real),
            0.5 * (rest - jplus2.real),
            jz2,
        ]
    )


def observation(state: SpinState) -> np.ndarray:
    j = state.n_atoms / 2
    mom = moments(state)
    mom[:3] /= j
    mom[3:] /= j * j
    return mom


def covariance_matrix(state: SpinState) -> tuple[np.ndarray, np.ndarray]:
    """Mean spin vector and symmetrized covariance matrix of (Jx, Jy, Jz)."""
    n, c = state.n_atoms, state.amplitudes
    jc = [apply_generator(n, ax, c) for ax in (Axis.X, Axis.Y, Axis.Z)]
    mean = np.array([np.vdot(c, v).real for v in jc])
    second = np.array([[np.vdot(u, v).real for v in jc] for u in jc])
    return mean, second - np.outer(mean, mean)

