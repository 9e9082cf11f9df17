"""Benchmark systems and end-to-end learning experiments.

Provides the two-area consensus network (first-order agents coupled
through a weighted graph Laplacian, semi-stable along the all-ones
direction), a semi-stable second-order oscillator network, and the sweep
runner that collects one exploration record and learns controllers at a
range of compressed dimensions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from .analysis import (
    epsilon_bound,
    kleinman_riccati,
    lqr_cost,
    lyapunov_solve,
    small_gain_certificate,
    spectrum,
)
from .compression import complement_basis, deflate_semistable, epsilon_hat
from .policy import DEFAULT_KAPPA, DEFAULT_MAX_ITER, LqrWeights, run_preconditioned
from .systems import LtiSystem, exploration_noise, simulate

__all__ = [
    "ConsensusConfig",
    "NoiseConfig",
    "SamplingConfig",
    "SweepRow",
    "ExperimentReport",
    "gen_consensus",
    "gen_oscillator_semistable",
    "collect_case1_record",
    "run_case1",
]

# purpose tags for per-purpose random streams derived from one master seed
_GRAPH_A, _GRAPH_B, _WEIGHTS, _LINKS, _X0, _NOISE, _OSC = range(7)


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose]))


def _int_seed(seed: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed), purpose]).generate_state(1)[0])


@dataclass(frozen=True)
class ConsensusConfig:
    """Two-area consensus network with a handful of weak inter-area links."""

    area_sizes: tuple[int, int] = (30, 120)
    inter_area_links: int = 4
    intra_weight_range: tuple[float, float] = (0.0, 0.5)  # lower bound exclusive
    inter_weight: float = 0.1
    actuated_nodes: tuple[int, ...] = (0, 1)
    alpha: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if min(self.area_sizes) < 3:
            raise ValueError("each area needs at least 3 nodes")
        if self.inter_area_links < 1 or self.inter_area_links > min(self.area_sizes):
            raise ValueError("inter_area_links out of range")
        lo, hi = self.intra_weight_range
        if not (lo >= 0 and hi > lo):
            raise ValueError("invalid intra weight range")
        if self.inter_weight <= 0:
            raise ValueError("inter-area weight must be positive")
        n = sum(self.area_sizes)
        if any(i < 0 or i >= n for i in self.actuated_nodes) or not self.actuated_nodes:
            raise ValueError("actuated node index out of bounds")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class NoiseConfig:
    """Multisine exploration noise for the benchmark runs.

    ``window=None`` keeps the excitation active over the whole sampling
    horizon; the rank condition of the policy-improvement least squares
    needs persistently excited samples, and a short burst followed by
    free decay leaves most regressor rows without input content.
    """

    num_sines: int = 400
    beta: float = 0.05
    freq_range: tuple[float, float] = (-20.0, 20.0)
    window: tuple[float, float] | None = None
    seed: int | None = None  # derived from the experiment seed when None


@dataclass(frozen=True)
class SamplingConfig:
    dt: float = 0.01
    num_samples: int = 2000
    substeps: int = 30


def _consensus_laplacian(cfg: ConsensusConfig) -> np.ndarray:
    n1, n2 = cfg.area_sizes
    n = n1 + n2
    lo, hi = cfg.intra_weight_range
    w_rng = _stream(cfg.seed, _WEIGHTS)
    adj = np.zeros((n, n))
    for offset, size, tag in ((0, n1, _GRAPH_A), (n1, n2, _GRAPH_B)):
        g = nx.barabasi_albert_graph(size, 2, seed=_int_seed(cfg.seed, tag))
        for a, b in g.edges():
            # uniform on (lo, hi]: 1 - random() never returns 0
            w = lo + (hi - lo) * (1.0 - w_rng.random())
            adj[offset + a, offset + b] = w
            adj[offset + b, offset + a] = w
    link_rng = _stream(cfg.seed, _LINKS)
    ends_a = link_rng.choice(n1, size=cfg.inter_area_links, replace=False)
    ends_b = link_rng.choice(n2, size=cfg.inter_area_links, replace=False) + n1
    for a, b in zip(ends_a, ends_b):
        adj[a, b] = cfg.inter_weight
        adj[b, a] = cfg.inter_weight
    graph = nx.from_numpy_array(adj)
    if not nx.is_connected(graph):
        raise ValueError("generated consensus graph is disconnected")
    return np.diag(adj.sum(axis=1)) - adj


def gen_consensus(cfg: ConsensusConfig):
    """Build the consensus benchmark: system, cost weights, initial state.

    The state matrix is the negated weighted graph Laplacian, so the
    all-ones vector spans the single zero mode.  The cost penalizes the
    spread ``alpha * sum_i (x_1 - x_i)^2``, which annihilates that mode,
    with identity input weighting on the actuated nodes.
    """
    L = _consensus_laplacian(cfg)
    n = L.shape[0]
    m = len(cfg.actuated_nodes)
    B = np.zeros((n, m))
    for col, node in enumerate(cfg.actuated_nodes):
        B[node, col] = 1.0
    sys = LtiSystem(A=-L, B=B, semistable_eigvec=np.ones(n))
    M = np.zeros((n, n))
    for i in range(1, n):
        d = np.zeros(n)
        d[0], d[i] = 1.0, -1.0
        M += np.outer(d, d)
    weights = LqrWeights(Q=cfg.alpha * M, R=np.eye(m))
    x0 = _disturbance(sys, cfg.seed)
    return sys, weights, x0


def _disturbance(sys: LtiSystem, seed: int) -> np.ndarray:
    """Seeded unit-norm disturbance with covariance shaped like the
    controllability gramian (the stationary state of the network driven
    by white noise through its input channels), deflated of the zero
    mode.  A disturbance with energy in unreachable directions would
    make the snapshot subspace disagree with the reachable subspace no
    matter how much data is collected."""
    Vbar = complement_basis(sys.semistable_eigvec)
    Ad, Bd = Vbar @ sys.A @ Vbar.T, Vbar @ sys.B
    gram = lyapunov_solve(Ad.T, Bd @ Bd.T)
    w, V = np.linalg.eigh(gram)
    g = _stream(seed, _X0).standard_normal(Ad.shape[0])
    x0d = V @ (np.sqrt(np.clip(w, 0.0, None)) * (V.T @ g))
    x0d /= np.linalg.norm(x0d)
    return Vbar.T @ x0d


def gen_oscillator_semistable(
    k_nodes: int,
    coupling_range: tuple[float, float] = (0.5, 1.5),
    damping_range: tuple[float, float] = (0.2, 0.6),
    actuated: tuple[int, ...] | None = None,
    freq_weight: float = 10.0,
    seed: int = 0,
):
    """Second-order oscillator network with one preserved zero mode.

    Each node carries an angle and a rate; nodes couple through a
    Laplacian on the angles and dissipate through positive per-node
    damping.  Uniformly shifting all angles has no effect on the
    dynamics, so ``v = [1...1, 0...0]`` spans the zero mode.  The cost
    penalizes rate deviations only, hence ``Q v = 0``.
    """
    if k_nodes < 2:
        raise ValueError("need at least 2 nodes")
    rng = _stream(seed, _OSC)
    graph = nx.cycle_graph(k_nodes)
    for _ in range(max(0, k_nodes // 3)):
        a, b = rng.choice(k_nodes, size=2, replace=False)
        graph.add_edge(int(a), int(b))
    adj = np.zeros((k_nodes, k_nodes))
    lo, hi = coupling_range
    for a, b in graph.edges():
        if a == b:
            continue
        w = rng.uniform(lo, hi)
        adj[a, b] = adj[b, a] = w
    L = np.diag(adj.sum(axis=1)) - adj
    d = rng.uniform(damping_range[0], damping_range[1], size=k_nodes)
    k = k_nodes
    A = np.block([[np.zeros((k, k)), np.eye(k)], [-L, -np.diag(d)]])
    if actuated is None:
        actuated = tuple(range(k))
    B = np.zeros((2 * k, len(actuated)))
    for col, node in enumerate(actuated):
        B[k + node, col] = 1.0
    v = np.concatenate([np.ones(k), np.zeros(k)])
    sys = LtiSystem(A=A, B=B, semistable_eigvec=v)
    Q = np.zeros((2 * k, 2 * k))
    Q[k:, k:] = freq_weight * np.eye(k)
    weights = LqrWeights(Q=Q, R=np.eye(len(actuated)))
    x0 = rng.standard_normal(2 * k)
    x0[:k] -= x0[:k].mean()
    x0 /= np.linalg.norm(x0)
    return sys, weights, x0


@dataclass
class SweepRow:
    n_hat: int
    iterations: int
    learn_time_ms: float
    J: float
    eps_hat: float
    eps: float | None = None
    certified: bool | None = None
    converged: bool = False
    rank_satisfied: bool | None = None
    closed_loop_spectrum: list | None = None
    residuals: list | None = None
    gain: list | None = None  # lifted gain, row-major

    def to_dict(self) -> dict:
        return asdict(self)


CSV_HEADER = ["n_hat", "iterations", "learn_time_ms", "J", "eps_hat", "eps", "certified"]


@dataclass
class ExperimentReport:
    """Per-dimension learning outcomes plus model-based references."""

    rows: list = field(default_factory=list)
    j_opt: float = float("nan")
    open_loop_spectrum: list = field(default_factory=list)
    optimal_spectrum: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "j_opt": self.j_opt,
            "open_loop_spectrum": self.open_loop_spectrum,
            "optimal_spectrum": self.optimal_spectrum,
            "provenance": self.provenance,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for r in self.rows:
                writer.writerow(
                    [
                        r.n_hat,
                        r.iterations,
                        f"{r.learn_time_ms:.17g}",
                        f"{r.J:.17g}",
                        f"{r.eps_hat:.17g}",
                        "" if r.eps is None else f"{r.eps:.17g}",
                        "" if r.certified is None else str(bool(r.certified)).lower(),
                    ]
                )

    def row_for(self, n_hat: int) -> SweepRow:
        for r in self.rows:
            if r.n_hat == n_hat:
                return r
        raise KeyError(f"no sweep row for n_hat={n_hat}")

    def knee_row(self, rel_tol: float = 1e-2) -> SweepRow:
        """Smallest dimension whose discarded energy falls below
        ``rel_tol`` of the total snapshot energy."""
        total = self.provenance.get("snapshot_norm")
        if total is None:
            raise ValueError("report lacks snapshot_norm provenance")
        for r in self.rows:
            if r.eps_hat <= rel_tol * total:
                return r
        return self.rows[-1]


def _config_hash(*dicts) -> str:
    blob = json.dumps(dicts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def collect_case1_record(
    cfg: ConsensusConfig,
    noise: NoiseConfig | None = None,
    sampling: SamplingConfig | None = None,
):
    """One exploration run of the consensus benchmark.

    Returns ``(system, weights, x0, record)``; the learning stages all
    reuse this single record.
    """
    noise = noise or NoiseConfig()
    sampling = sampling or SamplingConfig()
    sys, weights, x0 = gen_consensus(cfg)
    noise_seed = noise.seed if noise.seed is not None else _int_seed(cfg.seed, _NOISE)
    window = noise.window
    if window is None:
        window = (0.0, sampling.dt * sampling.num_samples)
    signal = exploration_noise(
        noise.num_sines,
        noise.beta,
        noise.freq_range,
        window,
        seed=noise_seed,
        num_inputs=sys.m,
    )
    coarse = sampling.dt * np.arange(sampling.num_samples + 1)
    record = simulate(sys, signal, x0, coarse, substeps=sampling.substeps)
    return sys, weights, x0, record


def run_case1(
    cfg: ConsensusConfig,
    n_hat_list,
    noise: NoiseConfig | None = None,
    sampling: SamplingConfig | None = None,
    kappa: float = DEFAULT_KAPPA,
    max_iter: int = DEFAULT_MAX_ITER,
    lstsq_cond: float = 1e-6,
    compute_eps: bool = True,
    certify: bool = True,
    parallel: bool = False,
) -> ExperimentReport:
    """Full consensus experiment: collect once, learn per dimension.

    Each row deflates the known zero mode, fits the projection at its
    dimension, runs preconditioned policy iteration, and evaluates the
    exact cost with the true model.  A full-dimension row (``n - 1``
    after deflation) is always included as the uncompressed reference,
    alongside the Riccati-optimal cost.
    """
    noise = noise or NoiseConfig()
    sampling = sampling or SamplingConfig()
    sys, weights, x0, record = collect_case1_record(cfg, noise, sampling)
    n = sys.n
    v = sys.semistable_eigvec
    Vbar = complement_basis(v)
    Ad, Bd = Vbar @ sys.A @ Vbar.T, Vbar @ sys.B
    Qd = Vbar @ weights.Q @ Vbar.T
    sol = kleinman_riccati(Ad, Bd, 0.5 * (Qd + Qd.T), weights.R)
    x0d = Vbar @ x0
    j_opt = float(x0d @ sol.W @ x0d)
    F_opt = sol.F @ Vbar

    n_hats = sorted(set(int(k) for k in n_hat_list) | {n - 1})
    X_norm = float(np.linalg.norm(Vbar @ record.coarse_states()[:, :-1], "fro"))

    def learn_row(n_hat: int) -> SweepRow:
        t0 = time.perf_counter()
        proj = deflate_semistable(record, v, n_hat)
        fit_ms = 1e3 * (time.perf_counter() - t0)
        res = run_preconditioned(
            record, proj, weights, kappa=kappa, max_iter=max_iter,
            rank_policy="warn", lstsq_cond=lstsq_cond,
        )
        learn_ms = fit_ms + res.setup_ms + sum(res.iteration_ms)
        if res.gains and not res.diverged:
            J = lqr_cost(
                sys.A, sys.B, res.lifted_gain, weights.Q, weights.R, x0,
                semistable_vec=v,
            )
            cl_spec = spectrum(sys.A - sys.B @ res.lifted_gain)[:5]
        else:
            J = float("inf")
            cl_spec = None
        eps = None
        cert = None
        if compute_eps:
            eps = epsilon_bound(sys.A, sys.B, x0, proj)
        if certify and res.gains:
            cert = small_gain_certificate(
                sys.A, sys.B, proj, res.gains[-1], x0, eps=eps
            ).certified
        return SweepRow(
            n_hat=n_hat,
            iterations=res.iter_count,
            learn_time_ms=learn_ms,
            J=J,
            eps_hat=epsilon_hat(record, proj),
            eps=eps,
            certified=cert,
            converged=res.converged,
            rank_satisfied=None if res.rank is None else res.rank.satisfied,
            closed_loop_spectrum=(
                None
                if cl_spec is None
                else [[float(e.real), float(e.imag)] for e in cl_spec]
            ),
            residuals=[float(r) for r in res.residuals],
            gain=None if res.lifted_gain is None else res.lifted_gain.tolist(),
        )

    if parallel:
        with ThreadPoolExecutor() as pool:
            rows = list(pool.map(learn_row, n_hats))
    else:
        rows = [learn_row(k) for k in n_hats]
    rows.sort(key=lambda r: r.n_hat)

    provenance = {
        "seed": cfg.seed,
        "config_hash": _config_hash(asdict(cfg), asdict(noise), asdict(sampling),
                                    {"kappa": kappa, "max_iter": max_iter,
                                     "lstsq_cond": lstsq_cond}),
        "kappa": kappa,
        "max_iter": max_iter,
        "noise": asdict(noise),
        "sampling": asdict(sampling),
        "snapshot_norm": X_norm,
        "n": n,
    }
    open_spec = spectrum(sys.A)[:5]
    opt_spec = spectrum(sys.A - sys.B @ F_opt)[:5]
    return ExperimentReport(
        rows=rows,
        j_opt=j_opt,
        open_loop_spectrum=[[float(e.real), float(e.imag)] for e in open_spec],
        optimal_spectrum=[[float(e.real), float(e.imag)] for e in opt_spec],
        provenance=provenance,
    )
