"""UE location sensing: equivalent-channel least squares alternated with Gauss-Newton.

The echo is modelled as ``y = F(U) H_EQ + n`` with ``F(U) = [G(U), F_pos(Q_UE)]``.
``G`` carries the direct reflection (delay, angle, Doppler of the UE), the
block-diagonal ``F_pos`` multiplies a free per-(subcarrier, antenna) vector
that absorbs every indirect path.

Because each ``G`` block is itself a per-(subcarrier, antenna) vector times the
same transmit projection, ``G`` lies in the column span of ``F_pos``: plain LS
is singular and the profiled residual does not depend on ``U``.  A ridge
weight on the indirect block (``idr_ridge``) keeps the direct path in ``G`` and
makes the UE state observable; the indirect paths then act as structured
interference.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from isacsim.errors import ConfigError
from isacsim.geometry import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    GeometryError,
    PathSet,
    SubcarrierGrid,
    UEState,
    canonical_position,
    doppler_shift,
    range_and_cosine,
    steering_matrix,
)

log = logging.getLogger(__name__)

__all__ = [
    "UEState",
    "EquivalentChannel",
    "EstimatorConfig",
    "InitGrid",
    "EstimateTrace",
    "IterationRecord",
    "SingularSystemError",
    "DivergenceError",
    "build_G",
    "build_F_pos",
    "build_F",
    "estimate_channel_ls",
    "idr_weights",
    "equivalent_channel",
    "jacobian",
    "solve_real_normal_equations",
    "gauss_newton_step",
    "profile_objective",
    "projected_step",
    "penalty_gradient",
    "run_sensing",
    "init_state",
    "init_candidates",
    "extract_aoa",
]

COND_LIMIT = 1e12


class SingularSystemError(np.linalg.LinAlgError):
    """A normal-equation system is rank deficient or too ill-conditioned to solve."""


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EquivalentChannel:
    dr_coeff: complex
    idr_vector: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([[self.dr_coeff], np.asarray(self.idr_vector)])

    @classmethod
    def from_stacked(cls, h) -> "EquivalentChannel":
        h = np.asarray(h, dtype=complex)
        return cls(complex(h[0]), h[1:].copy())

    def __mul__(self, k):
        return EquivalentChannel(self.dr_coeff * k, self.idr_vector * k)

    __rmul__ = __mul__


@dataclass(frozen=True)
class InitGrid:
    """Coarse grid searched for the starting state (square grid clipped to a disc)."""

    radius: float = 50.0
    points: int = 10
    # the objective does not depend on velocity, so one value is enough
    velocities: tuple[float, ...] = (0.0,)
    min_distance: float = 1.0
    starts: int = 4

    def __post_init__(self):
        if self.points < 1 or self.starts < 1:
            raise ConfigError("init grid needs points >= 1 and starts >= 1")
        if not self.radius > 0 or not self.velocities:
            raise ConfigError("init grid needs a positive radius and at least one velocity")

    def candidates(self, bs) -> list[np.ndarray]:
        ticks = np.linspace(-self.radius, self.radius, self.points)
        out = []
        for x in ticks:
            for y in ticks:
                d = np.hypot(x, y)
                # mirror images across the array axis are indistinguishable
                if self.min_distance <= d <= self.radius and y >= 0:
                    out.append(np.asarray(bs, dtype=float) + [x, y])
        return out


@dataclass
class EstimatorConfig:
    max_iterations: int = 50
    step_tolerance: float = 1e-4
    max_halvings: int = 10
    idr_ridge: float = 1.0
    projected: bool = True
    init: UEState | InitGrid = field(default_factory=InitGrid)

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if not self.step_tolerance > 0:
            raise ConfigError("step_tolerance must be positive")
        if self.max_halvings < 0:
            raise ConfigError("max_halvings must be >= 0")
        if self.idr_ridge < 0:
            raise ConfigError("idr_ridge must be >= 0")


@dataclass(frozen=True)
class IterationRecord:
    state: UEState
    residual: float
    step: float


@dataclass
class EstimateTrace:
    records: list[IterationRecord]
    state: UEState
    channel: EquivalentChannel
    aoa: float
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])


# ---------------------------------------------------------------------------
# coefficient matrix


def _frame(state_or_pos, grid, array, waveform):
    """Shared per-subcarrier quantities at a UE position."""
    pos = getattr(state_or_pos, "position", state_or_pos)
    dist, cos_phi = range_and_cosine(array.bs, pos, array.axis)
    fn = grid.baseband_freqs
    a = steering_matrix(array.n_tx, fn, cos_phi, array)
    b = steering_matrix(array.n_rx, fn, cos_phi, array)
    g = np.einsum("nt,nmt->nm", a.conj(), waveform)
    return dist, cos_phi, fn, a, b, g


def build_G(state: UEState, grid: SubcarrierGrid, array: ArrayConfig, waveform: np.ndarray) -> np.ndarray:
    """Direct-reflection column of ``F(U)``, length ``N_R N_C M``."""
    dist, _, fn, _, b, g = _frame(state, grid, array, waveform)
    tau0 = 2.0 * dist / SPEED_OF_LIGHT
    fd = doppler_shift(state.velocity, array.carrier_freq)
    p = np.exp(-2j * np.pi * (fn - fd) * tau0)
    return np.einsum("n,nr,nm->nmr", p, b, g).reshape(-1)


def build_F_pos(position, grid: SubcarrierGrid, array: ArrayConfig, waveform: np.ndarray) -> np.ndarray:
    """Block-diagonal indirect part of ``F``: row (n, m, r) holds ``g_{n,m}`` in column (n, r)."""
    _, _, _, _, _, g = _frame(position, grid, array, waveform)
    nc, m, nr = grid.n_coherent, grid.n_symbols, array.n_rx
    out = np.zeros((nc, m, nr, nc, nr), dtype=complex)
    n_idx, r_idx = np.meshgrid(np.arange(nc), np.arange(nr), indexing="ij")
    out[n_idx, :, r_idx, n_idx, r_idx] = g[:, None, :].repeat(nr, axis=1)
    return out.reshape(nc * m * nr, nc * nr)


def build_F(state: UEState, grid, array, waveform) -> np.ndarray:
    return np.column_stack([build_G(state, grid, array, waveform),
                            build_F_pos(state.position, grid, array, waveform)])


def equivalent_channel(pathset: PathSet, grid: SubcarrierGrid, array: ArrayConfig,
                       gain: float = 1.0) -> EquivalentChannel:
    """Ground-truth ``[H_DR; H_IDR]`` of a path set; indirect paths summed per (n, r)."""
    fn = grid.baseband_freqs
    h = np.zeros((grid.n_coherent, array.n_rx), dtype=complex)
    for p in pathset.indirect:
        phase = p.fading * np.exp(-2j * np.pi * (fn - pathset.doppler) * p.delay)
        h += phase[:, None] * steering_matrix(array.n_rx, fn, np.cos(p.aoa), array)
    return EquivalentChannel(complex(gain * pathset.direct.fading), gain * h.reshape(-1))


# ---------------------------------------------------------------------------
# equivalent-channel least squares


def idr_weights(state_or_pos, grid: SubcarrierGrid, array: ArrayConfig, waveform: np.ndarray) -> np.ndarray:
    """Squared column norms of ``F_pos``: ``sum_m |a_n^H x_{n,m}|^2`` for each (n, r)."""
    g = _frame(state_or_pos, grid, array, waveform)[-1]
    return np.repeat(np.sum(np.abs(g) ** 2, axis=1), array.n_rx)


def _solve_ls(F: np.ndarray, y: np.ndarray, ridge, regularize: bool):
    normal = F.conj().T @ F
    rhs = F.conj().T @ y
    p = normal.shape[0]
    w = np.broadcast_to(np.asarray(ridge, dtype=float), (p - 1,))
    if np.any(w > 0):
        normal = normal + np.diag(np.r_[0.0, w])
    trace = float(np.real(np.trace(normal)))
    if trace == 0.0:
        return np.zeros(p, dtype=complex), w, normal
    cond = np.linalg.cond(normal)
    if not cond <= COND_LIMIT:
        if not regularize:
            raise SingularSystemError(
                f"equivalent-channel LS: normal matrix condition number {cond:.3g} exceeds {COND_LIMIT:.0e}")
        warnings.warn(f"equivalent-channel LS ill-conditioned (cond={cond:.3g}); adding Tikhonov term",
                      RuntimeWarning, stacklevel=3)
        normal = normal + 1e-10 * trace / p * np.eye(p)
    return np.linalg.solve(normal, rhs), w, normal


def estimate_channel_ls(F: np.ndarray, y: np.ndarray, ridge=0.0, regularize: bool = True) -> EquivalentChannel:
    """``H = (F^H F + R)^-1 F^H y`` with ``R = diag(0, ridge)``.

    ``ridge`` (scalar or one weight per column after the first) penalises
    every coefficient except the direct-path one.  An ill-conditioned system
    gets a small Tikhonov term (with a warning) when ``regularize`` is set and
    raises :class:`SingularSystemError` otherwise.
    """
    if np.any(np.asarray(ridge) < 0):
        raise ValueError("ridge must be >= 0")
    h, _, _ = _solve_ls(np.asarray(F), np.asarray(y), ridge, regularize)
    return EquivalentChannel.from_stacked(h)


def _profile(state, y, grid, array, waveform, idr_ridge):
    F = build_F(state, grid, array, waveform)
    h, w, normal = _solve_ls(F, y, idr_ridge * idr_weights(state, grid, array, waveform), regularize=True)
    r = y - F @ h
    value = float(np.real(np.vdot(r, r)) + np.sum(w * np.abs(h[1:]) ** 2))
    return value, EquivalentChannel.from_stacked(h), F, normal


def profile_objective(state: UEState, y: np.ndarray, grid, array, waveform, idr_ridge: float = 0.0):
    """Objective with ``H_EQ`` eliminated: ``||y - F H||^2 + idr_ridge * ||F_pos H_IDR||^2``.

    The penalty is on the energy the indirect block contributes to the echo,
    which makes the minimiser independent of ``idr_ridge > 0``.
    Returns ``(objective, channel)``.
    """
    value, channel, _, _ = _profile(state, y, grid, array, waveform, idr_ridge)
    return value, channel


# ---------------------------------------------------------------------------
# Jacobian and Gauss-Newton


def _dg_dcos(a, kappa, waveform):
    t = np.arange(a.shape[1])
    return np.einsum("nt,nmt->nm", (2j * np.pi * np.outer(kappa, t)) * a.conj(), waveform)


def penalty_gradient(state: UEState, channel: EquivalentChannel, grid: SubcarrierGrid, array: ArrayConfig,
                     waveform: np.ndarray, idr_ridge: float) -> np.ndarray:
    """Gradient in (x, y, v) of ``idr_ridge * ||F_pos H_IDR||^2`` with ``H_IDR`` held fixed."""
    dist, cos_phi, fn, a, b, g = _frame(state, grid, array, waveform)
    diff = state.position - array.bs
    grad_cos = array.axis / dist - (diff @ array.axis) * diff / dist**3
    kappa = (fn + array.carrier_freq) / SPEED_OF_LIGHT * array.element_spacing
    dc = 2.0 * np.real(np.sum(g.conj() * _dg_dcos(a, kappa, waveform), axis=1))
    h = np.abs(np.asarray(channel.idr_vector).reshape(grid.n_coherent, array.n_rx)) ** 2
    d = idr_ridge * float(dc @ h.sum(axis=1))
    return np.array([d * grad_cos[0], d * grad_cos[1], 0.0])


def jacobian(state: UEState, channel: EquivalentChannel, grid: SubcarrierGrid, array: ArrayConfig,
             waveform: np.ndarray) -> np.ndarray:
    """``d(F(U) H) / d(x, y, v)`` as a ``3 x N_R N_C M`` complex matrix."""
    dist, cos_phi, fn, a, b, g = _frame(state, grid, array, waveform)
    diff = state.position - array.bs
    e = array.axis
    grad_dist = diff / dist
    grad_cos = e / dist - (diff @ e) * diff / dist**3

    fc = array.carrier_freq
    tau0 = 2.0 * dist / SPEED_OF_LIGHT
    fd = doppler_shift(state.velocity, fc)
    kappa = (fn + fc) / SPEED_OF_LIGHT * array.element_spacing
    r = np.arange(array.n_rx)

    p = np.exp(-2j * np.pi * (fn - fd) * tau0)
    dp_ddist = p * (-2j * np.pi * (fn - fd)) * (2.0 / SPEED_OF_LIGHT)
    dp_dv = p * (2j * np.pi * tau0) * (2.0 * fc / SPEED_OF_LIGHT)
    db_dcos = (-2j * np.pi * np.outer(kappa, r)) * b
    dg_dcos = _dg_dcos(a, kappa, waveform)

    h0 = channel.dr_coeff
    h_idr = np.asarray(channel.idr_vector).reshape(grid.n_coherent, array.n_rx)

    d_dist = h0 * np.einsum("n,nr,nm->nmr", dp_ddist, b, g).reshape(-1)
    d_cos = (h0 * (np.einsum("n,nr,nm->nmr", p, db_dcos, g) + np.einsum("n,nr,nm->nmr", p, b, dg_dcos))
             + np.einsum("nm,nr->nmr", dg_dcos, h_idr)).reshape(-1)
    d_v = h0 * np.einsum("n,nr,nm->nmr", dp_dv, b, g).reshape(-1)

    jx = d_dist * grad_dist[0] + d_cos * grad_cos[0]
    jy = d_dist * grad_dist[1] + d_cos * grad_cos[1]
    return np.vstack([jx, jy, d_v])


def solve_real_normal_equations(J: np.ndarray, r: np.ndarray, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Real step minimising ``||r - J^T kappa||^2``: ``Re(J J^H) kappa = Re(J conj(r))``."""
    J = np.atleast_2d(J)
    A = np.real(J @ J.conj().T)
    rhs = np.real(J @ np.conj(r))
    if not np.all(np.isfinite(A)) or not np.any(A):
        raise SingularSystemError("Gauss-Newton normal matrix is zero or non-finite")
    cond = np.linalg.cond(A)
    if not cond <= cond_limit:
        raise SingularSystemError(f"Gauss-Newton normal matrix condition number {cond:.3g} exceeds {cond_limit:.0e}")
    return np.linalg.solve(A, rhs)


def gauss_newton_step(state: UEState, channel: EquivalentChannel, y: np.ndarray, grid: SubcarrierGrid,
                      array: ArrayConfig, waveform: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimiser of the linearised cost around ``state`` with ``channel`` held fixed.

    Returns ``(kappa, residual)`` where ``kappa`` is the real 3-vector update.
    """
    F = build_F(state, grid, array, waveform)
    resid = y - F @ channel.stacked
    J = jacobian(state, channel, grid, array, waveform)
    return solve_real_normal_equations(J, resid), resid


def projected_step(J: np.ndarray, resid: np.ndarray, F: np.ndarray, normal: np.ndarray,
                   penalty_grad=None) -> np.ndarray:
    """Gauss-Newton step on the objective with ``H_EQ`` profiled out.

    Same right-hand side as :func:`gauss_newton_step`, but the Gram matrix
    drops the part of each Jacobian row that a channel re-fit would absorb.
    Directions absorbed entirely (velocity, whose only effect is a common
    phase on the direct path) get a zero step via a minimum-norm solve.
    ``penalty_grad`` is the gradient of any state-dependent penalty term.
    """
    Jt = J.T
    B = F.conj().T @ Jt
    gram = np.real(Jt.conj().T @ Jt - B.conj().T @ np.linalg.solve(normal, B))
    rhs = np.real(J @ np.conj(resid))
    if penalty_grad is not None:
        rhs = rhs - 0.5 * np.asarray(penalty_grad)
    if not np.all(np.isfinite(gram)) or not np.all(np.isfinite(rhs)):
        raise DivergenceError("non-finite projected Gauss-Newton system")
    # symmetric pseudo-inverse with a relative cut-off
    w, v = np.linalg.eigh(0.5 * (gram + gram.T))
    keep = w > 1e-9 * max(w.max(), 0.0)
    if not keep.any():
        raise SingularSystemError("projected Gauss-Newton Gram matrix vanishes")
    return v[:, keep] @ ((v[:, keep].T @ rhs) / w[keep])


# ---------------------------------------------------------------------------
# orchestration


def extract_aoa(position, bs=(0.0, 0.0), axis=(1.0, 0.0)) -> float:
    _, cos = range_and_cosine(bs, position, axis)
    return float(np.arccos(cos))


def init_candidates(y: np.ndarray, grid: SubcarrierGrid, array: ArrayConfig, waveform: np.ndarray,
                    spec: InitGrid | None = None, idr_ridge: float = 1.0) -> list[tuple[float, UEState]]:
    """All grid candidates as ``(objective, state)``, best first."""
    spec = spec or InitGrid()
    cands = [(q, v) for q in spec.candidates(array.bs) for v in spec.velocities]
    if not cands:
        raise ConfigError("initialisation grid is empty")
    scored = []
    for q, v in cands:
        s = UEState(float(q[0]), float(q[1]), float(v))
        val, _ = profile_objective(s, y, grid, array, waveform, idr_ridge)
        scored.append((val if np.isfinite(val) else np.inf, s))
    scored.sort(key=lambda t: t[0])
    return scored


def init_state(y: np.ndarray, grid: SubcarrierGrid, array: ArrayConfig, waveform: np.ndarray,
               spec: InitGrid | None = None, idr_ridge: float = 1.0) -> UEState:
    """Grid candidate with the smallest profiled objective."""
    return init_candidates(y, grid, array, waveform, spec, idr_ridge)[0][1]


def _safe_profile(state, y, grid, array, waveform, ridge):
    try:
        return _profile(state, y, grid, array, waveform, ridge)
    except GeometryError:
        return np.inf, None, None, None


def _descend(y, state, cfg, grid, array, waveform):
    value, channel, F, normal = _safe_profile(state, y, grid, array, waveform, cfg.idr_ridge)
    if channel is None or not np.isfinite(value):
        raise DivergenceError("non-finite residual at the initial state")
    records = [IterationRecord(state, float(np.sqrt(value)), 0.0)]
    converged = cfg.max_iterations == 0

    for it in range(cfg.max_iterations):
        resid = y - F @ channel.stacked
        J = jacobian(state, channel, grid, array, waveform)
        pg = penalty_gradient(state, channel, grid, array, waveform, cfg.idr_ridge)
        if cfg.projected:
            kappa = projected_step(J, resid, F, normal, pg)
        else:
            A = np.real(J @ J.conj().T)
            kappa = np.linalg.lstsq(A, np.real(J @ resid.conj()) - 0.5 * pg, rcond=1e-12)[0]
        if not np.all(np.isfinite(kappa)):
            raise DivergenceError(f"non-finite Gauss-Newton step at iteration {it + 1}")

        scale = 1.0
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            trial = UEState.from_vector(state.as_vector() + scale * kappa)
            out = _safe_profile(trial, y, grid, array, waveform, cfg.idr_ridge)
            if out[1] is not None and np.isfinite(out[0]) and out[0] <= value:
                accepted = (trial, *out)
                break
            scale *= 0.5

        if accepted is None:
            records.append(IterationRecord(state, float(np.sqrt(value)), 0.0))
            converged = True
            break

        state, value, channel, F, normal = accepted
        step = float(np.linalg.norm(scale * kappa[:2]))
        records.append(IterationRecord(state, float(np.sqrt(value)), step))
        if step < cfg.step_tolerance:
            converged = True
            break
    return value, state, channel, records, converged


def run_sensing(y: np.ndarray, cfg: EstimatorConfig, grid: SubcarrierGrid, array: ArrayConfig,
                waveform: np.ndarray) -> EstimateTrace:
    """Alternate channel LS and damped Gauss-Newton state updates.

    Each update ``U + s*kappa`` halves ``s`` until the profiled objective does
    not increase; if no halving succeeds the run stops.  The loop also stops
    once the position part of the accepted step is below ``step_tolerance``.
    With a grid initialiser the descent is repeated from the best few grid
    points and the lowest final objective wins.  The returned state is
    mirrored into the canonical half-plane.
    """
    y = np.asarray(y, dtype=complex)
    if isinstance(cfg.init, UEState):
        starts = [cfg.init]
    else:
        ranked = init_candidates(y, grid, array, waveform, cfg.init, cfg.idr_ridge)
        starts = [s for _, s in ranked[:max(1, cfg.init.starts)]]

    best = None
    for s0 in starts:
        run = _descend(y, s0, cfg, grid, array, waveform)
        if best is None or run[0] < best[0]:
            best = run
    _, state, channel, records, converged = best

    pos = canonical_position(state.position, array.bs, array.axis)
    final = UEState(float(pos[0]), float(pos[1]), state.velocity)
    return EstimateTrace(records, final, channel, extract_aoa(pos, array.bs, array.axis), converged)
