"""Ground-truth LTI simulation and trajectory data collection.

The learner never touches the model matrices directly: everything
downstream consumes :class:`SnapshotRecord` objects produced here.
Integration uses classical fixed-step 4th-order Runge-Kutta on a fine
grid that refines the coarse sampling instants, so every run is
deterministic and the integrator order is verifiable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import as_matrix, as_vector, check_increasing, check_square
from .exceptions import SimulationError

__all__ = [
    "LtiSystem",
    "SignalGenerator",
    "SnapshotRecord",
    "simulate",
    "exploration_noise",
    "impulse_responses",
    "refine_grid",
    "save_trajectory_csv",
]

#: Default number of integration substeps per coarse sampling interval.
DEFAULT_SUBSTEPS = 10


@dataclass(frozen=True)
class LtiSystem:
    """A continuous-time LTI model ``xdot = A x + B u``.

    Parameters
    ----------
    A : (n, n) ndarray
        State matrix.  Must be Hurwitz, unless ``semistable_eigvec`` is
        given, in which case exactly one eigenvalue may sit at zero with
        that eigenvector and all others must be strictly stable.
    B : (n, m) ndarray
        Input matrix.
    semistable_eigvec : (n,) ndarray, optional
        Known eigenvector of the single zero eigenvalue (e.g. the all-ones
        vector of a consensus network).
    """

    A: np.ndarray
    B: np.ndarray
    semistable_eigvec: np.ndarray | None = None

    def __post_init__(self):
        A = check_square(np.asarray(self.A, dtype=float), "A")
        B = as_matrix(self.B, "B")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        eigs = np.linalg.eigvals(A)
        if self.semistable_eigvec is None:
            if eigs.real.max() >= 0:
                raise ValueError(
                    "A must be Hurwitz (declare semistable_eigvec for a "
                    f"semi-stable system); max Re eig = {eigs.real.max():g}"
                )
        else:
            v = as_vector(self.semistable_eigvec, "semistable_eigvec", A.shape[0])
            object.__setattr__(self, "semistable_eigvec", v)
            scale = np.linalg.norm(A) * np.linalg.norm(v)
            if np.linalg.norm(A @ v) > 1e-10 * scale:
                raise ValueError("semistable_eigvec is not in the kernel of A")
            near_zero = np.abs(eigs) <= 1e-8 * max(1.0, np.abs(eigs).max())
            if near_zero.sum() != 1:
                raise ValueError(
                    f"expected exactly one zero eigenvalue, found {near_zero.sum()}"
                )
            if eigs[~near_zero].real.max(initial=-1.0) >= 0:
                raise ValueError("all eigenvalues besides the zero mode must be stable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def to_json(self, path) -> None:
        doc = {
            "n": self.n,
            "m": self.m,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
        }
        if self.semistable_eigvec is not None:
            doc["v"] = self.semistable_eigvec.tolist()
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def from_json(cls, path) -> "LtiSystem":
        doc = json.loads(Path(path).read_text())
        A = np.asarray(doc["A"], dtype=float)
        B = np.asarray(doc["B"], dtype=float)
        if A.shape != (doc["n"], doc["n"]) or B.shape != (doc["n"], doc["m"]):
            raise ValueError("matrix shapes disagree with declared n, m")
        v = np.asarray(doc["v"], dtype=float) if "v" in doc else None
        return cls(A, B, semistable_eigvec=v)


@dataclass(frozen=True)
class SignalGenerator:
    """Multisine exploration signal, zero outside its active window.

    Each active channel carries its own frequency set
    ``u_i(t) = amplitude * sum_k sin(frequencies[i, k] * t)`` for
    ``t_start <= t < t_end`` and is identically zero outside.  Channels
    not listed in ``channels`` stay silent.  Construction is fully
    determined by the frequency array, so two generators built from the
    same seed are bitwise identical.
    """

    amplitude: float
    frequencies: np.ndarray  # (n_active_channels, num_sines)
    window: tuple[float, float]
    num_inputs: int = 1
    channels: tuple[int, ...] | None = None  # None = all inputs active
    seed: int | None = None

    def __post_init__(self):
        freqs = np.atleast_2d(np.asarray(self.frequencies, dtype=float))
        object.__setattr__(self, "frequencies", freqs)
        t0, t1 = self.window
        if not t1 > t0:
            raise ValueError(f"empty active window {self.window}")
        object.__setattr__(self, "window", (float(t0), float(t1)))
        chans = self.channels
        if chans is None:
            chans = tuple(range(self.num_inputs))
        else:
            chans = tuple(int(c) for c in chans)
            if any(c < 0 or c >= self.num_inputs for c in chans):
                raise ValueError("channel index out of range")
        object.__setattr__(self, "channels", chans)
        if freqs.shape[0] != len(chans):
            raise ValueError(
                f"need one frequency row per active channel "
                f"({len(chans)}), got {freqs.shape[0]}"
            )

    def __call__(self, t) -> np.ndarray:
        """Evaluate the signal; returns shape (m,) for scalar t, (m, T) for arrays."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        u = np.zeros((self.num_inputs, t_arr.size))
        t0, t1 = self.window
        active = (t_arr >= t0) & (t_arr < t1)
        if np.any(active):
            # (channels, sines, times) -> sum over sines
            phases = self.frequencies[:, :, None] * t_arr[None, None, active]
            vals = self.amplitude * np.sin(phases).sum(axis=1)
            for row, chan in enumerate(self.channels):
                u[chan, active] = vals[row]
        return u[:, 0] if np.isscalar(t) or np.ndim(t) == 0 else u


def exploration_noise(
    num_sines: int,
    amplitude: float,
    freq_range: tuple[float, float],
    window: tuple[float, float],
    seed: int,
    num_inputs: int = 1,
    channels: tuple[int, ...] | None = None,
) -> SignalGenerator:
    """Draw a seeded multisine exploration signal.

    Frequencies are sampled uniformly from ``freq_range``, independently
    for every active channel; identical frequency sets on two channels
    would make the input contributions to the regressor matrix linearly
    dependent and defeat the excitation rank condition.
    """
    if num_sines < 1:
        raise ValueError("num_sines must be >= 1")
    w_lo, w_hi = freq_range
    if not w_lo < w_hi:
        raise ValueError(f"invalid frequency range {freq_range}")
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    n_active = num_inputs if channels is None else len(channels)
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(w_lo, w_hi, size=(n_active, num_sines))
    return SignalGenerator(
        amplitude=float(amplitude),
        frequencies=freqs,
        window=window,
        num_inputs=num_inputs,
        channels=channels,
        seed=seed,
    )


@dataclass(frozen=True)
class SnapshotRecord:
    """States and inputs measured on a fine grid refining coarse samples.

    ``coarse_index[j]`` locates coarse time ``t_j`` inside ``fine_times``,
    so quadrature over a sampling interval is a contiguous slice of the
    fine grid.  Raw snapshots are kept as-is; Kronecker products are
    formed later, only at the (possibly reduced) working dimension.
    """

    coarse_times: np.ndarray  # (N+1,)
    fine_times: np.ndarray  # (F,)
    states: np.ndarray  # (n, F)
    inputs: np.ndarray  # (m, F)
    x0: np.ndarray  # (n,)
    coarse_index: np.ndarray = field(default=None)  # (N+1,) ints

    def __post_init__(self):
        coarse = check_increasing(self.coarse_times, "coarse_times")
        fine = check_increasing(self.fine_times, "fine_times")
        states = as_matrix(self.states, "states")
        inputs = as_matrix(self.inputs, "inputs")
        x0 = as_vector(self.x0, "x0", states.shape[0])
        if states.shape[1] != fine.size or inputs.shape[1] != fine.size:
            raise ValueError("states/inputs must have one column per fine time")
        idx = self.coarse_index
        if idx is None:
            idx = np.searchsorted(fine, coarse)
        idx = np.asarray(idx, dtype=int)
        if not np.allclose(fine[idx], coarse, rtol=0, atol=1e-12):
            raise ValueError("every coarse time must appear among the fine times")
        if np.any(np.diff(idx) < 1):
            raise ValueError("each coarse interval needs at least 2 fine points")
        if not np.allclose(states[:, 0], x0, rtol=0, atol=1e-12):
            raise ValueError("states column at the first fine time must equal x0")
        object.__setattr__(self, "coarse_times", coarse)
        object.__setattr__(self, "fine_times", fine)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "coarse_index", idx)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_samples(self) -> int:
        """Number N of sampling intervals."""
        return self.coarse_times.size - 1

    def coarse_states(self) -> np.ndarray:
        """States at the coarse sampling instants, shape (n, N+1)."""
        return self.states[:, self.coarse_index]


def refine_grid(coarse_times, substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """Insert ``substeps`` uniform integration steps inside each coarse interval."""
    coarse = check_increasing(coarse_times, "coarse_times")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    pieces = [
        np.linspace(coarse[j], coarse[j + 1], substeps + 1)[:-1]
        for j in range(coarse.size - 1)
    ]
    pieces.append(coarse[-1:])
    return np.concatenate(pieces)


def _rk4(A: np.ndarray, B: np.ndarray, x0: np.ndarray, times: np.ndarray,
         u_grid: np.ndarray, u_mid: np.ndarray) -> np.ndarray:
    """Classical RK4 sweep over ``times`` with inputs sampled on the grid
    and at interval midpoints."""
    n = A.shape[0]
    out = np.empty((n, times.size))
    x = x0.copy()
    out[:, 0] = x
    # input terms are iterate-independent: one matmul instead of per-step matvecs
    bu_grid = B @ u_grid
    bu_mid = B @ u_mid
    # overflow of an unstable step is reported via SimulationError afterwards
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(times.size - 1):
            h = times[i + 1] - times[i]
            bum = bu_mid[:, i]
            k1 = A @ x + bu_grid[:, i]
            k2 = A @ (x + 0.5 * h * k1) + bum
            k3 = A @ (x + 0.5 * h * k2) + bum
            k4 = A @ (x + h * k3) + bu_grid[:, i + 1]
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[:, i + 1] = x
    return out


def simulate(
    sys: LtiSystem,
    signal: SignalGenerator | None,
    x0,
    coarse_times,
    substeps: int = DEFAULT_SUBSTEPS,
) -> SnapshotRecord:
    """Integrate ``xdot = A x + B u(t)`` and record states and inputs.

    Parameters
    ----------
    sys : LtiSystem
        Ground-truth model.
    signal : SignalGenerator or None
        Input signal; ``None`` means zero input.
    x0 : (n,) array_like
        Initial state.
    coarse_times : array_like
        Strictly increasing sampling instants ``t_0 < ... < t_N`` starting
        at the initial time of the run.
    substeps : int
        Fine integration steps per coarse interval.

    Returns
    -------
    SnapshotRecord
    """
    x0 = as_vector(x0, "x0", sys.n)
    fine = refine_grid(coarse_times, substeps)
    coarse = np.asarray(coarse_times, dtype=float)
    if signal is None:
        u_grid = np.zeros((sys.m, fine.size))
        u_mid = np.zeros((sys.m, fine.size - 1))
    else:
        if signal.num_inputs != sys.m:
            raise ValueError(
                f"signal has {signal.num_inputs} channels, system expects {sys.m}"
            )
        u_grid = signal(fine)
        u_mid = signal(0.5 * (fine[:-1] + fine[1:]))
    states = _rk4(sys.A, sys.B, x0, fine, u_grid, u_mid)
    if not np.isfinite(states).all():
        raise SimulationError(
            "integration produced non-finite values; the model appears "
            "unstable or the step size is too large"
        )
    coarse_idx = np.searchsorted(fine, coarse)
    return SnapshotRecord(
        coarse_times=coarse,
        fine_times=fine,
        states=states,
        inputs=u_grid,
        x0=x0,
        coarse_index=coarse_idx,
    )


def impulse_responses(
    sys: LtiSystem,
    directions,
    horizon: float,
    fine_step: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> list[SnapshotRecord]:
    """Zero-input responses from each initial direction.

    An impulse applied through input channel i is equivalent to shifting
    the initial condition by the i-th column of B, so callers wanting
    input-channel impulses pass those columns as directions.  All records
    share the same time grid.
    """
    dirs = [as_vector(d, "direction", sys.n) for d in directions]
    if not dirs:
        raise ValueError("directions must be nonempty")
    if not horizon > 0 or not fine_step > 0:
        raise ValueError("horizon and fine_step must be positive")
    num = max(1, int(round(horizon / (substeps * fine_step))))
    coarse = np.linspace(0.0, num * substeps * fine_step, num + 1)
    return [simulate(sys, None, d, coarse, substeps) for d in dirs]


def save_trajectory_csv(record: SnapshotRecord, path) -> None:
    """Write one row per fine-grid point: ``t,x1,...,xn,u1,...,um``."""
    n, m = record.n, record.m
    header = ["t"] + [f"x{i}" for i in range(1, n + 1)] + [f"u{i}" for i in range(1, m + 1)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, t in enumerate(record.fine_times):
            row = [f"{t:.17g}"]
            row += [f"{v:.17g}" for v in record.states[:, i]]
            row += [f"{v:.17g}" for v in record.inputs[:, i]]
            writer.writerow(row)
