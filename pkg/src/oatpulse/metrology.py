"""Figures of merit for collective-spin states: QFI, squeezing, distributions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, xlogy

from .spin import Axis, SpinState, apply_generator, apply_oat, apply_rotation, covariance_matrix, css_initial


class UndefinedDirectionError(ValueError):
    pass


class NotBracketedError(ValueError):
    pass


@dataclass
class MetricReport:
    n_atoms: int
    qfi: float
    squeezing_xi2: float
    dicke_probs: np.ndarray

    @classmethod
    def of(cls, state: SpinState) -> "MetricReport":
        try:
            xi2 = squeezing_parameter(state)
        except UndefinedDirectionError:
            xi2 = float("nan")
        return cls(state.n_atoms, qfi_generator_z(state), xi2, dicke_distribution(state))


def qfi_generator_z(state: SpinState) -> float:
    """Pure-state QFI for phase imprinting by J_z: 4 Var(J_z)."""
    p = np.abs(state.amplitudes) ** 2
    m = state.m
    mean = p @ m
    return float(max(4.0 * (p @ (m * m) - mean * mean), 0.0))


def qfi_by_definition(state: SpinState, theta: float = 0.0) -> float:
    """4[<psi'|psi'> - |<psi'|psi>|^2] with psi(theta) = exp(-i theta J_z) psi."""
    psi = apply_rotation(state, Axis.Z, theta).amplitudes
    dpsi = -1j * apply_generator(state.n_atoms, Axis.Z, psi)
    return float(4.0 * (np.vdot(dpsi, dpsi).real - abs(np.vdot(dpsi, psi)) ** 2))


def squeezing_parameter(state: SpinState, min_mean_spin: float = 1e-9) -> float:
    """Kitagawa-Ueda xi^2 = 4 min Var(J_perp) / N."""
    mean, cov = covariance_matrix(state)
    length = np.linalg.norm(mean)
    if length <= min_mean_spin:
        raise UndefinedDirectionError(f"mean spin length {length:.3e} too small to define a direction")
    n0 = mean / length
    helper = np.array([0.0, 0.0, 1.0]) if abs(n0[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    n1 = np.cross(n0, helper)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(n0, n1)
    perp = np.array([n1, n2])
    c = perp @ cov @ perp.T
    # smallest eigenvalue of the symmetric 2x2 block
    tr, det = c[0, 0] + c[1, 1], c[0, 0] * c[1, 1] - c[0, 1] ** 2
    lam_min = 0.5 * tr - np.sqrt(max(0.25 * tr * tr - det, 0.0))
    return float(4.0 * lam_min / state.n_atoms)


def optimal_squeezing_time(
    n_atoms: int, chi: float = 1.0, t_max: float | None = None, n_grid: int = 200
) -> float:
    """Time minimising xi^2 under free twisting from the x-polarised CSS.

    Coarse scan on (0, t_max] followed by bounded Brent refinement around the best grid point.
    """
    if chi <= 0:
        raise ValueError("chi must be positive")
    if t_max is None:
        t_max = 6.0 * n_atoms ** (-2.0 / 3.0) / chi
    css = css_initial(n_atoms)

    def xi2(t):
        try:
            return squeezing_parameter(apply_oat(css, chi * t))
        except UndefinedDirectionError:
            return np.inf

    grid = np.linspace(0.0, t_max, n_grid + 1)[1:]
    values = np.array([xi2(t) for t in grid])
    k = int(np.argmin(values))
    if k == 0 or k == len(grid) - 1:
        raise NotBracketedError(f"squeezing minimum at grid boundary t={grid[k]:.4g}")
    res = minimize_scalar(xi2, bounds=(grid[k - 1], grid[k + 1]), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x)


def dicke_distribution(state: SpinState) -> np.ndarray:
    return np.abs(state.amplitudes) ** 2


def husimi_grid(state: SpinState, n_theta: int, n_phi: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Husimi Q(theta, phi) = (N+1)/(4 pi) |<theta,phi|psi>|^2 on an equal-angle grid.

    Returns (theta, phi, Q) with Q shaped (n_theta, n_phi); theta spans [0, pi] inclusive,
    phi spans [0, 2 pi) without the duplicate endpoint.
    """
    if n_theta < 2 or n_phi < 2:
        raise ValueError("grid sizes must be >= 2")
    n = state.n_atoms
    thetas = np.linspace(0.0, np.pi, n_theta)
    phis = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    k = np.arange(n + 1)
    log_binom = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    c, s = np.cos(thetas / 2), np.sin(thetas / 2)
    with np.errstate(divide="ignore"):
        mag = np.exp(0.5 * log_binom[None, :] + xlogy(k[None, :], c[:, None])
                     + xlogy((n - k)[None, :], s[:, None]))
    phase = np.exp(-1j * np.outer(phis, k - n / 2))  # (n_phi, N+1)
    # <theta,phi|psi> = sum_k mag_k e^{+i m phi} c_k
    overlap = mag @ (np.conj(phase).T * state.amplitudes[:, None])
    q = (n + 1) / (4 * np.pi) * np.abs(overlap) ** 2
    return thetas, phis, q
