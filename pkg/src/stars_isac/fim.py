"""Fisher information and Cramer-Rao bound for the target direction.

The parameter vector is (azimuth, elevation, Re alpha, Im alpha).  The echo
collected by the sensors over ``T`` frames is ``alpha B eps eps^T A Theta X``
plus white noise, where ``A``/``B`` select PEs and sensors.  Writing
``D_h`` for the derivative of ``alpha B eps eps^T A`` w.r.t. parameter ``h``,

    F[h, v] = (2 T / sigma2) Re Tr(D_v Theta R_x Theta^H D_h^H).

Every entry is affine in ``U = u u^H`` (through ``Theta R_x Theta^H = R_x o U``),
in the probing design ``(R_s, P)`` and in the partition weights ``p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Angles, ChannelSet, SystemConfig, normalize_phase, steering, steering_derivative

PSD_TOL = 1e-9
COND_LIMIT = 1e12


class UnidentifiableError(ValueError):
    """Raised when the Schur complement of the FIM is (numerically) singular."""


@dataclass(frozen=True)
class Partition:
    """First ``N1`` elements are PEs, the remaining ``N2`` are sensors."""

    N: int
    N1: int

    def __post_init__(self):
        if not 1 <= self.N1 <= self.N - 1:
            raise ValueError(f"need 1 <= N1 <= N-1, got N1={self.N1}, N={self.N}")

    @property
    def N2(self) -> int:
        return self.N - self.N1

    @property
    def a(self) -> np.ndarray:
        return (np.arange(self.N) < self.N1).astype(float)

    @property
    def b(self) -> np.ndarray:
        return 1.0 - self.a

    @property
    def A(self) -> np.ndarray:
        return np.diag(self.a)

    @property
    def B(self) -> np.ndarray:
        return np.diag(self.b)


@dataclass
class SurfaceState:
    """Coefficient vector ``u`` (length N, zeros on sensors) and optional lifted ``U``."""

    u: np.ndarray
    U_lifted: np.ndarray | None = None

    @property
    def U(self) -> np.ndarray:
        if self.U_lifted is not None:
            return self.U_lifted
        return np.outer(self.u, self.u.conj())

    @property
    def Theta(self) -> np.ndarray:
        return np.diag(self.u)

    @classmethod
    def ones(cls, partition: Partition) -> "SurfaceState":
        return cls(partition.a.astype(complex))


@dataclass
class ProbingDesign:
    R_s: np.ndarray  # M_t x M_t
    P: np.ndarray  # powers of the users served in the phase

    @classmethod
    def isotropic(cls, config: SystemConfig, phase) -> "ProbingDesign":
        n_users = len(config.phase_users(phase))
        return cls(config.P_BS_max / config.M_t * np.eye(config.M_t, dtype=complex), np.full(n_users, config.P_U_max))


@dataclass
class FimBlocks:
    J_PsiPsi: np.ndarray
    J_PsiAlpha: np.ndarray
    J_AlphaAlpha: np.ndarray

    @classmethod
    def from_matrix(cls, F: np.ndarray) -> "FimBlocks":
        F = 0.5 * (F + F.T)
        return cls(F[:2, :2].copy(), F[:2, 2:].copy(), F[2:, 2:].copy())

    def full(self) -> np.ndarray:
        return np.block([[self.J_PsiPsi, self.J_PsiAlpha], [self.J_PsiAlpha.T, self.J_AlphaAlpha]])


@dataclass
class CrbValue:
    crb_matrix: np.ndarray
    trace: float
    root_crb_deg: float = field(init=False)

    def __post_init__(self):
        self.root_crb_deg = math.degrees(math.sqrt(max(self.trace, 0.0)))


def root_crb_deg(trace: float) -> float:
    return math.degrees(math.sqrt(max(trace, 0.0)))


# ---------------------------------------------------------------------------
# Covariance and direction matrices
# ---------------------------------------------------------------------------


def probing_covariance(phase, channels: ChannelSet, design: ProbingDesign, config: SystemConfig) -> np.ndarray:
    """Covariance of the signal impinging on the surface in ``phase``."""
    phase = normalize_phase(phase)
    R_s = np.asarray(design.R_s)
    if R_s.shape != (channels.G_t.shape[1],) * 2:
        raise ValueError("R_s has the wrong dimension")
    R = channels.G_t @ R_s @ channels.G_t.conj().T
    if phase == 1:
        users = config.phase_users(1)
        P = np.asarray(design.P, dtype=float)
        if P.shape != (len(users),):
            raise ValueError("one power per phase-I user required")
        H = channels.h[:, users]
        R = R + (H * P) @ H.conj().T
    return 0.5 * (R + R.conj().T)


def _check_psd(R: np.ndarray) -> None:
    if not np.allclose(R, R.conj().T, atol=PSD_TOL * max(1.0, np.abs(R).max())):
        raise ValueError("R_x is not Hermitian")
    w = np.linalg.eigvalsh(0.5 * (R + R.conj().T))
    if w.size and w[0] < -PSD_TOL * max(1.0, abs(w[-1])):
        raise ValueError("R_x is not positive semidefinite")


def steering_set(angles: Angles, N_v: int, N_h: int):
    eps = steering(angles, N_v, N_h)
    return eps, steering_derivative(angles, N_v, N_h, "azimuth"), steering_derivative(angles, N_v, N_h, "elevation")


def direction_matrices(eps, d_az, d_el, alpha: complex, partition: Partition) -> np.ndarray:
    """Stack of the four N x N matrices D_h (derivatives of alpha B eps eps^T A)."""
    C = np.outer(eps, eps)
    Caz = np.outer(d_az, eps) + np.outer(eps, d_az)
    Cel = np.outer(d_el, eps) + np.outer(eps, d_el)
    b, a = partition.b, partition.a
    sel = b[:, None] * a[None, :]
    return np.stack([alpha * Caz * sel, alpha * Cel * sel, C * sel, 1j * C * sel])


def _fim_from_D(D: np.ndarray, M: np.ndarray, T: int, sigma2: float) -> np.ndarray:
    # F[h, v] = Re Tr(D_v M D_h^H)
    DM = np.einsum("vab,bc->vac", D, M)
    F = np.real(np.einsum("vac,hac->hv", DM, D.conj()))
    return (2.0 * T / sigma2) * 0.5 * (F + F.T)


def fim_extended(phase, channels: ChannelSet, partition: Partition, surface: SurfaceState, R_x: np.ndarray, T: int, sigma2: float, check: bool = True) -> FimBlocks:
    """FIM through the selection-matrix (extended) form."""
    if check:
        _check_psd(R_x)
    angles, alpha = channels.target(phase)
    D = direction_matrices(*steering_set(angles, channels.N_v, channels.N_h), alpha, partition)
    M = R_x * surface.U
    return FimBlocks.from_matrix(_fim_from_D(D, M, T, sigma2))


def fim_fixed_partition(phase, channels: ChannelSet, partition: Partition, surface: SurfaceState, R_x: np.ndarray, T: int, sigma2: float) -> FimBlocks:
    """FIM with explicit PE steering ``a`` (length N1) and sensor steering ``b`` (length N2)."""
    _check_psd(R_x)
    angles, alpha = channels.target(phase)
    eps, daz, del_ = steering_set(angles, channels.N_v, channels.N_h)
    n1 = partition.N1
    a, b = eps[:n1], eps[n1:]
    da = (daz[:n1], del_[:n1])
    db = (daz[n1:], del_[n1:])
    Q = np.outer(b, a)
    D = np.stack(
        [
            alpha * (np.outer(db[0], a) + np.outer(b, da[0])),
            alpha * (np.outer(db[1], a) + np.outer(b, da[1])),
            Q,
            1j * Q,
        ]
    )
    u = surface.u[:n1]
    M = (np.diag(u) @ R_x[:n1, :n1] @ np.diag(u.conj())) if surface.U_lifted is None else R_x[:n1, :n1] * surface.U[:n1, :n1]
    return FimBlocks.from_matrix(_fim_from_D(D, M, T, sigma2))


def fim_from_frames(phase, channels: ChannelSet, partition: Partition, surface: SurfaceState, X: np.ndarray, sigma2: float) -> np.ndarray:
    """Analytic FIM using the sample covariance of explicit frames ``X`` (N x T)."""
    angles, alpha = channels.target(phase)
    D = direction_matrices(*steering_set(angles, channels.N_v, channels.N_h), alpha, partition)
    T = X.shape[1]
    R_x = X @ X.conj().T / T
    return _fim_from_D(D, R_x * surface.U, T, sigma2)


# ---------------------------------------------------------------------------
# CRB
# ---------------------------------------------------------------------------


def schur_information(blocks: FimBlocks) -> np.ndarray:
    Jaa = blocks.J_AlphaAlpha
    if np.linalg.cond(Jaa) > COND_LIMIT or not np.all(np.isfinite(Jaa)) or np.trace(Jaa) <= 0:
        raise UnidentifiableError("reflection-coefficient block of the FIM is singular")
    S = blocks.J_PsiPsi - blocks.J_PsiAlpha @ np.linalg.solve(Jaa, blocks.J_PsiAlpha.T)
    return 0.5 * (S + S.T)


def crb_from_fim(blocks: FimBlocks) -> CrbValue:
    """CRB of (azimuth, elevation) from the Schur complement of the FIM."""
    # conditioning: congruence with diag(1, 1, s, s) leaves the Schur complement unchanged
    s = math.sqrt(max(np.trace(blocks.J_PsiPsi), 0.0) / max(np.trace(blocks.J_AlphaAlpha), 1e-300))
    scaled = FimBlocks(blocks.J_PsiPsi, blocks.J_PsiAlpha * s, blocks.J_AlphaAlpha * s * s)
    if not np.all(np.isfinite(scaled.full())) or np.trace(blocks.J_AlphaAlpha) <= 0:
        raise UnidentifiableError("FIM is zero or non-finite")
    S = schur_information(scaled)
    w = np.linalg.eigvalsh(S)
    if w[-1] <= 0 or w[0] <= w[-1] / COND_LIMIT:
        raise UnidentifiableError("Schur complement of the FIM is singular")
    C = np.linalg.inv(S)
    C = 0.5 * (C + C.T)
    return CrbValue(C, float(np.trace(C)))


def crb_trace(blocks_or_matrix) -> float:
    if isinstance(blocks_or_matrix, np.ndarray):
        blocks_or_matrix = FimBlocks.from_matrix(blocks_or_matrix)
    return crb_from_fim(blocks_or_matrix).trace


def crb_trace_or_inf(F: np.ndarray) -> float:
    try:
        return crb_trace(F)
    except UnidentifiableError:
        return math.inf


# ---------------------------------------------------------------------------
# Affine maps
# ---------------------------------------------------------------------------


@dataclass
class UAffineMap:
    """F[h, v] = Re sum(G[h, v] o U) on the index set ``idx``."""

    G: np.ndarray  # (4, 4, n, n)
    idx: np.ndarray

    def evaluate(self, U: np.ndarray) -> np.ndarray:
        F = np.real(np.einsum("hvab,ab->hv", self.G, U))
        return 0.5 * (F + F.T)

    def evaluate_full(self, U_full: np.ndarray) -> np.ndarray:
        return self.evaluate(U_full[np.ix_(self.idx, self.idx)])


@dataclass
class DesignAffineMap:
    """F = Re sum(K_R o R_s) + sum_k P_k c_k, with K_R (4, 4, M_t, M_t), c (4, 4, K_phase)."""

    K_R: np.ndarray
    c_P: np.ndarray

    def evaluate(self, R_s: np.ndarray, P: np.ndarray) -> np.ndarray:
        F = np.real(np.einsum("hvab,ab->hv", self.K_R, R_s))
        if self.c_P.shape[-1]:
            F = F + self.c_P @ np.asarray(P, dtype=float)
        return 0.5 * (F + F.T)


@dataclass
class WeightAffineMap:
    """F(p) = sum_n p_n F_n with F_n the FIM when the first n elements are PEs."""

    F_n: np.ndarray  # (N-1, 4, 4)

    def evaluate(self, p: np.ndarray) -> np.ndarray:
        return np.tensordot(np.asarray(p, dtype=float), self.F_n, axes=1)


def _D_for(phase, channels: ChannelSet, partition: Partition) -> np.ndarray:
    angles, alpha = channels.target(phase)
    return direction_matrices(*steering_set(angles, channels.N_v, channels.N_h), alpha, partition)


def _kernels(D: np.ndarray) -> np.ndarray:
    # K[h, v] = D_h^H D_v
    return np.einsum("hba,vbc->hvac", D.conj(), D)


def u_affine_map(phase, channels: ChannelSet, partition: Partition, R_x: np.ndarray, T: int, sigma2: float, restrict: bool = True) -> UAffineMap:
    """Coefficients with ``Theta R_x Theta^H = R_x o U``; restricted to PEs by default."""
    D = _D_for(phase, channels, partition)
    idx = np.arange(partition.N1) if restrict else np.arange(partition.N)
    D = D[:, :, idx]
    K = _kernels(D)
    G = (2.0 * T / sigma2) * np.swapaxes(K, -1, -2) * R_x[np.ix_(idx, idx)]
    return UAffineMap(G, idx)


def weighted_u_affine_map(phase, channels: ChannelSet, p: np.ndarray, R_x: np.ndarray, T: int, sigma2: float) -> UAffineMap:
    """U-map of the p-weighted FIM on the full N x N coefficient matrix."""
    N = channels.N
    G = np.zeros((4, 4, N, N), dtype=complex)
    for n, pn in enumerate(p, start=1):
        if pn != 0.0:
            G += pn * u_affine_map(phase, channels, Partition(N, n), R_x, T, sigma2, restrict=False).G
    return UAffineMap(G, np.arange(N))


def design_affine_map(phase, channels: ChannelSet, partition: Partition | None, u: np.ndarray, config: SystemConfig, p: np.ndarray | None = None) -> DesignAffineMap:
    """Coefficients of the FIM in (R_s, P) for a fixed surface."""
    phase = normalize_phase(phase)
    T, sigma2 = config.T, config.sigma2
    users = config.phase_users(phase)
    N = channels.N
    if p is None:
        parts = [(1.0, partition)]
    else:
        parts = [(pn, Partition(N, n)) for n, pn in enumerate(p, start=1) if pn != 0.0]
    Mt = channels.G_t.shape[1]
    K_R = np.zeros((4, 4, Mt, Mt), dtype=complex)
    c_P = np.zeros((4, 4, len(users) if phase == 1 else 0))
    Gt_eff = u[:, None] * channels.G_t  # Theta G_t
    H_eff = u[:, None] * channels.h[:, users]
    for w, part in parts:
        K = _kernels(_D_for(phase, channels, part))  # (4, 4, N, N)
        # Re Tr(K Theta G_t R_s G_t^H Theta^H) = Re sum((G^H K G)^T o R_s)
        KG = np.einsum("hvab,bm->hvam", K, Gt_eff)
        KR = np.einsum("an,hvam->hvnm", Gt_eff.conj(), KG)
        K_R += w * (2.0 * T / sigma2) * np.swapaxes(KR, -1, -2)
        if phase == 1:
            KH = np.einsum("hvab,bk->hvak", K, H_eff)
            c_P += w * (2.0 * T / sigma2) * np.real(np.einsum("ak,hvak->hvk", H_eff.conj(), KH))
    return DesignAffineMap(K_R, c_P)


def weight_affine_map(phase, channels: ChannelSet, surface: SurfaceState, R_x: np.ndarray, T: int, sigma2: float) -> WeightAffineMap:
    N = channels.N
    F = np.stack(
        [fim_extended(phase, channels, Partition(N, n), surface, R_x, T, sigma2, check=False).full() for n in range(1, N)]
    )
    return WeightAffineMap(F)


def fim_affine_maps(phase, channels: ChannelSet, partition: Partition, fixed: dict, config: SystemConfig, vary: str):
    """Coefficient tables making the FIM affine in the ``vary`` variable.

    ``vary`` is ``"U"`` (needs ``R_x``), ``"design"`` (needs ``u``) or
    ``"p"`` (needs ``surface`` and ``R_x``).
    """
    if vary == "U":
        return u_affine_map(phase, channels, partition, fixed["R_x"], config.T, config.sigma2, restrict=fixed.get("restrict", True))
    if vary == "design":
        return design_affine_map(phase, channels, partition, fixed["u"], config, p=fixed.get("p"))
    if vary == "p":
        return weight_affine_map(phase, channels, fixed["surface"], fixed["R_x"], config.T, config.sigma2)
    raise ValueError(f"unknown variable {vary!r}")
