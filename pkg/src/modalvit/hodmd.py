"""Delay-embedded dynamic mode decomposition and its iterative variant.

``dmd_d`` runs the DMD-d algorithm on a reduced snapshot matrix: a delay
embedding of d consecutive snapshots, a least-squares propagator through a
truncated SVD, an eigendecomposition mapping eigenvalues to (growth rate,
frequency) pairs, and an all-snapshot least-squares amplitude fit.

``iterative_hodmd`` wraps it for frame stacks: spatial HOSVD reduction,
DMD-d on the reduced coefficients, reconstruction, repeated until the
retained HOSVD mode counts stop changing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from modalvit.decomp import hosvd
from modalvit.tensor_core import SnapshotSequence, read_stf, write_stf

DEFAULT_EPS_SVD = 5e-4
DEFAULT_EPS_DMD = 5e-4
DEFAULT_MAX_ITERS = 10


class SequenceTooShortError(ValueError):
    """Sequence has fewer frames than the decomposition threshold; skip it."""


class EigendecompositionError(RuntimeError):
    """Propagator eigendecomposition produced non-finite values."""


@dataclass
class DmdMode:
    """One complex mode: unit-norm spatial shape evolving as e^((delta + i*omega) t)."""

    spatial_shape: np.ndarray  # complex128, flat, unit 2-norm
    frequency: float  # omega, rad/s
    growth_rate: float  # delta, 1/s
    amplitude: float  # >= 0


@dataclass
class DmdModeSet:
    """Modes sorted by amplitude descending (ties: |omega| ascending, then omega descending)."""

    modes: list[DmdMode]
    dt: float
    d: int
    retained_counts: list[tuple[int, int]] = field(default_factory=list)
    frame_shape: Optional[tuple[int, int]] = None

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([m.frequency for m in self.modes])

    @property
    def growth_rates(self) -> np.ndarray:
        return np.array([m.growth_rate for m in self.modes])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([m.amplitude for m in self.modes])


def default_delay(num_frames: int, policy: str = "k3") -> int:
    """Delay index from a policy string: 'k3' (K/3), 'k5' (K/5), or 'fixed:N'."""
    if policy == "k3":
        d = num_frames // 3
    elif policy == "k5":
        d = num_frames // 5
    elif policy.startswith("fixed:"):
        d = int(policy.split(":", 1)[1])
    else:
        raise ValueError(f"unknown delay policy {policy!r}")
    return max(1, d)


def min_snapshots_for(d: int) -> int:
    """Minimum frame count required before a sequence is decomposed."""
    return max(2 * d + 1, 20)


def _delay_embed(reduced: np.ndarray, d: int) -> np.ndarray:
    """[N, K] -> [d*N, K-d+1] with column j stacking snapshots j .. j+d-1."""
    n, k = reduced.shape
    cols = k - d + 1
    return np.vstack([reduced[:, i : i + cols] for i in range(d)])


def _sort_modes(modes: list[DmdMode]) -> list[DmdMode]:
    if len(modes) == 0:
        return modes
    keys = np.array([(-m.amplitude, abs(m.frequency), -m.frequency) for m in modes])
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    return [modes[i] for i in order]


def dmd_d(
    reduced: np.ndarray,
    d: int,
    dt: float,
    eps_dmd: float,
    eps_svd: Optional[float] = None,
) -> DmdModeSet:
    """DMD-d on an [N, K] snapshot matrix.

    ``eps_svd`` truncates the delay-matrix SVD (defaults to ``eps_dmd``);
    ``eps_dmd`` truncates by relative amplitude a_m / a_max.
    """
    reduced = np.asarray(reduced, dtype=np.float64)
    if reduced.ndim != 2:
        raise ValueError(f"expected [N, K] matrix, got shape {reduced.shape}")
    if not np.isfinite(reduced).all():
        raise ValueError("snapshot matrix contains non-finite entries")
    n, k = reduced.shape
    if not 1 <= d < k:
        raise ValueError(f"need 1 <= d < K, got d={d}, K={k}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if eps_svd is None:
        eps_svd = eps_dmd

    delay = _delay_embed(reduced, d)
    x, y = delay[:, :-1], delay[:, 1:]
    u, s, wt = np.linalg.svd(x, full_matrices=False)
    if s[0] <= 0.0:
        return DmdModeSet(modes=[], dt=dt, d=d)
    r = max(1, int(np.count_nonzero(s > eps_svd * s[0])))
    u, s, w = u[:, :r], s[:r], wt[:r].T
    propagator = u.T @ y @ (w / s)
    mu, vecs = np.linalg.eig(propagator)
    if not (np.isfinite(mu).all() and np.isfinite(vecs).all()):
        raise EigendecompositionError("propagator eigendecomposition diverged")

    # zero-magnitude eigenvalues have no finite logarithm
    keep = np.abs(mu) > 1e-12 * np.abs(mu).max(initial=0.0)
    mu, vecs = mu[keep], vecs[:, keep]
    if mu.size == 0:
        return DmdModeSet(modes=[], dt=dt, d=d)

    log_mu = np.log(mu) / dt
    deltas, omegas = log_mu.real, log_mu.imag

    # modes in delay space, then the first N-row block = modes in input space
    q = (u @ vecs)[:n, :]

    # amplitude fit over all K snapshots, solved in the span of the modes:
    # min_b sum_k || Q diag(mu^k) b - v_k ||^2  with Q = Q_hat R
    q_hat, r_mat = np.linalg.qr(q)
    v_proj = q_hat.conj().T @ reduced  # [M, K]
    powers = mu[None, :] ** np.arange(k)[:, None]  # [K, M]
    system = (r_mat[None, :, :] * powers[:, None, :]).reshape(k * r_mat.shape[0], -1)
    rhs = v_proj.T.reshape(-1)
    b, *_ = np.linalg.lstsq(system, rhs, rcond=None)

    components = q * b[None, :]  # b_m q_m, scale-invariant in the eigenvectors
    norms = np.linalg.norm(components, axis=0)
    amax = norms.max(initial=0.0)
    if amax <= 0.0:
        return DmdModeSet(modes=[], dt=dt, d=d)

    modes = []
    for m in range(mu.size):
        if norms[m] <= eps_dmd * amax:
            continue
        modes.append(
            DmdMode(
                spatial_shape=components[:, m] / norms[m],
                frequency=float(omegas[m]),
                growth_rate=float(deltas[m]),
                amplitude=float(norms[m]),
            )
        )
    return DmdModeSet(modes=_sort_modes(modes), dt=dt, d=d)


def hodmd_reconstruct(ms: DmdModeSet, k_indices: Sequence[int]) -> np.ndarray:
    """Rebuild frames k as Re(sum_m a_m u_m e^((delta_m + i omega_m) k dt)).

    Returns [len(k), N_y, N_x] when the mode set has a frame shape, else the
    [N, len(k)] snapshot-matrix layout.
    """
    k_idx = np.asarray(list(k_indices), dtype=np.int64)
    if len(ms.modes) == 0:
        raise ValueError("cannot reconstruct from an empty mode set")
    n = ms.modes[0].spatial_shape.size
    shapes = np.stack([m.spatial_shape for m in ms.modes], axis=1)  # [N, M]
    amps = np.array([m.amplitude for m in ms.modes])
    lam = np.array([m.growth_rate + 1j * m.frequency for m in ms.modes])
    t = k_idx.astype(np.float64) * ms.dt
    z = amps[:, None] * np.exp(lam[:, None] * t[None, :])  # [M, len(k)]
    matrix = (shapes @ z).real  # [N, len(k)]
    if ms.frame_shape is None:
        return matrix
    ny, nx = ms.frame_shape
    if ny * nx != n:
        raise ValueError(f"frame shape {ms.frame_shape} does not match mode length {n}")
    return np.ascontiguousarray(matrix.T.reshape(len(k_idx), ny, nx))


def lift_modes(
    ms: DmdModeSet, uy: np.ndarray, ux: np.ndarray, core_shape: tuple[int, int]
) -> list[DmdMode]:
    """Map reduced-coefficient modes back to full pixel space through the HOSVD factors."""
    ny_r, nx_r = core_shape
    lifted = []
    for m in ms.modes:
        q = m.spatial_shape.reshape(ny_r, nx_r)
        full = uy @ q @ ux.T  # orthonormal factors preserve the unit norm
        flat = full.reshape(-1)
        norm = np.linalg.norm(flat)
        lifted.append(
            DmdMode(
                spatial_shape=flat / norm,
                frequency=m.frequency,
                growth_rate=m.growth_rate,
                amplitude=m.amplitude * float(norm),
            )
        )
    return lifted


def iterative_hodmd(
    s: SnapshotSequence,
    d: Optional[int] = None,
    eps_svd: float = DEFAULT_EPS_SVD,
    eps_dmd: float = DEFAULT_EPS_DMD,
    min_snapshots: Optional[int] = None,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[DmdModeSet, np.ndarray]:
    """Iterated {HOSVD reduce -> DMD-d -> reconstruct} on a frame stack.

    Stops when the retained HOSVD mode counts repeat on consecutive
    iterations (or after ``max_iters``). Returns the final mode set (lifted
    to full pixel space) and the [K, N_y, N_x] reconstruction of every frame.

    Raises :class:`SequenceTooShortError` when the sequence is below the
    frame-count threshold, signalling that it should be skipped.
    """
    if not bool(np.all(s.validity)):
        raise ValueError("sequence has invalid frames; split on validity first")
    k = s.num_frames
    if d is None:
        d = max(1, k // 3)
    if min_snapshots is None:
        min_snapshots = min_snapshots_for(d)
    if k < min_snapshots:
        raise SequenceTooShortError(
            f"{s.sequence_id}: {k} frames < minimum {min_snapshots}"
        )
    if not 1 <= d < k:
        raise ValueError(f"need 1 <= d < K, got d={d}, K={k}")

    ny, nx = s.frame_shape
    data = s.frames.astype(np.float64)
    counts_history: list[tuple[int, int]] = []
    prev_counts: Optional[tuple[int, int]] = None
    mode_set = DmdModeSet(modes=[], dt=s.dt, d=d, frame_shape=(ny, nx))
    recon = np.zeros_like(data)

    for _ in range(max_iters):
        hr = hosvd(data, eps_svd)
        counts = hr.retained
        counts_history.append(counts)
        reduced = hr.core.reshape(k, -1).T  # [n_y * n_x, K]
        ms_red = dmd_d(reduced, d, s.dt, eps_dmd, eps_svd=eps_svd)
        if len(ms_red.modes) == 0:
            break
        lifted = lift_modes(ms_red, hr.factors[0], hr.factors[1], counts)
        mode_set = DmdModeSet(
            modes=_sort_modes(lifted),
            dt=s.dt,
            d=d,
            retained_counts=list(counts_history),
            frame_shape=(ny, nx),
        )
        recon = hodmd_reconstruct(mode_set, range(k))
        if counts == prev_counts:
            break
        prev_counts = counts
        data = recon
    return mode_set, recon


def write_mode_set(ms: DmdModeSet, stf_path: str | Path, json_path: str | Path) -> None:
    """Serialize a mode set: interleaved real/imag planes in STF plus a JSON sidecar."""
    if len(ms.modes) == 0:
        raise ValueError("cannot serialize an empty mode set")
    shapes = np.stack([m.spatial_shape for m in ms.modes])  # [M, N]
    planes = np.stack([shapes.real, shapes.imag], axis=1)  # [M, 2, N]
    if ms.frame_shape is not None:
        ny, nx = ms.frame_shape
        planes = planes.reshape(len(ms.modes), 2, ny, nx)
    write_stf(planes.astype(np.float32), stf_path)
    doc = {
        "dt": ms.dt,
        "d": ms.d,
        "retained_counts": [list(c) for c in ms.retained_counts],
        "frame_shape": list(ms.frame_shape) if ms.frame_shape is not None else None,
        "modes": [
            {"omega": m.frequency, "delta": m.growth_rate, "amplitude": m.amplitude}
            for m in ms.modes
        ],
    }
    Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_mode_set(stf_path: str | Path, json_path: str | Path) -> DmdModeSet:
    """Inverse of :func:`write_mode_set` (float32 precision on the spatial shapes)."""
    planes = read_stf(stf_path).astype(np.float64)
    doc = json.loads(Path(json_path).read_text())
    num_modes = planes.shape[0]
    flat = planes.reshape(num_modes, 2, -1)
    modes = []
    for i, meta in enumerate(doc["modes"]):
        shape = flat[i, 0] + 1j * flat[i, 1]
        modes.append(
            DmdMode(
                spatial_shape=shape,
                frequency=float(meta["omega"]),
                growth_rate=float(meta["delta"]),
                amplitude=float(meta["amplitude"]),
            )
        )
    frame_shape = doc.get("frame_shape")
    return DmdModeSet(
        modes=modes,
        dt=float(doc["dt"]),
        d=int(doc["d"]),
        retained_counts=[tuple(c) for c in doc.get("retained_counts", [])],
        frame_shape=tuple(frame_shape) if frame_shape is not None else None,
    )
