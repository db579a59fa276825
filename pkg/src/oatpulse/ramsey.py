"""Time-reversal Ramsey readout of a prepared state and its phase sensitivity."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import PulseSequence
from .spin import (
    Axis,
    SpinState,
    apply_generator,
    apply_inverse_sequence,
    apply_rotation,
    apply_sequence,
    css_initial,
)

DEFAULT_PHI0 = 1e-6


class NonInformativeWorkingPoint(ValueError):
    pass


@dataclass
class RamseyResult:
    phi: float
    mean_jz: float
    var_jz: float
    slope: float
    delta_phi: float


def _actions_and_step(sequence: PulseSequence | None) -> tuple[Sequence[int], float]:
    if sequence is None:
        return [], 0.0
    return sequence.actions, sequence.chi_dt


def prepare(sequence: PulseSequence, n_atoms: int | None = None) -> SpinState:
    """|psi>_T obtained by running the sequence from the CSS (optionally at another N)."""
    n = sequence.n_atoms if n_atoms is None else n_atoms
    return apply_sequence(css_initial(n), sequence.actions, sequence.chi_dt)


def ramsey_state(psi_T: SpinState, sequence: PulseSequence | None, phi: float) -> SpinState:
    """exp(-i pi/2 J_x) U^dagger exp(-i phi J_z) |psi_T>."""
    actions, chi_dt = _actions_and_step(sequence)
    state = apply_rotation(psi_T, Axis.Z, phi)
    state = apply_inverse_sequence(state, actions, chi_dt)
    return apply_rotation(state, Axis.X, np.pi / 2)


def _jz_stats(state: SpinState) -> tuple[float, float]:
    p = np.abs(state.amplitudes) ** 2
    m = state.m
    mean = float(p @ m)
    return mean, float(max(p @ (m * m) - mean * mean, 0.0))


def jz_slope(psi_T: SpinState, sequence: PulseSequence | None, phi: float) -> float:
    """d<J_z>/d phi via the commutator with the back-propagated readout observable.

    With W the readout map and chi = exp(-i phi J_z) psi_T, the derivative is
    -2 Im <J_z chi | W^dagger J_z W chi>.
    """
    actions, chi_dt = _actions_and_step(sequence)
    n = psi_T.n_atoms
    chi_state = apply_rotation(psi_T, Axis.Z, phi)
    out = ramsey_state(psi_T, sequence, phi)
    jz_out = SpinState(n, apply_generator(n, Axis.Z, out.amplitudes))
    # W^dagger = U exp(+i pi/2 J_x)
    back = apply_sequence(apply_rotation(jz_out, Axis.X, -np.pi / 2), actions, chi_dt)
    jz_chi = apply_generator(n, Axis.Z, chi_state.amplitudes)
    return float(-2.0 * np.vdot(jz_chi, back.amplitudes).imag)


def jz_slope_fd(psi_T: SpinState, sequence: PulseSequence | None, phi: float, step: float = 1e-5) -> float:
    plus = _jz_stats(ramsey_state(psi_T, sequence, phi + step))[0]
    minus = _jz_stats(ramsey_state(psi_T, sequence, phi - step))[0]
    return (plus - minus) / (2 * step)


def ramsey_result(psi_T: SpinState, sequence: PulseSequence | None, phi0: float = DEFAULT_PHI0) -> RamseyResult:
    mean, var = _jz_stats(ramsey_state(psi_T, sequence, phi0))
    slope = jz_slope(psi_T, sequence, phi0)
    if abs(slope) < 1e-12:
        raise NonInformativeWorkingPoint(f"|d<Jz>/dphi| = {abs(slope):.3e} at phi0={phi0}")
    return RamseyResult(phi0, mean, var, slope, float(np.sqrt(var) / abs(slope)))


def delta_phi(psi_T: SpinState, sequence: PulseSequence | None, phi0: float = DEFAULT_PHI0) -> float:
    """Error-propagation phase uncertainty (Delta J_z) / |d<J_z>/d phi| at phi0."""
    return ramsey_result(psi_T, sequence, phi0).delta_phi
