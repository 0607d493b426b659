"""Benchmark harness: timed runs, medians, speed-ups and CSV records.

Every experiment spawns one SPMD group per ``(algo, P)`` cell and times the
algorithm body on rank 0 between two group barriers, so thread start-up and
input generation stay outside the measurement. Inputs depend only on
``(seed, rep)`` so all P values of a cell see the same data.
"""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .comm import Communicator, spawn_group
from .kernels import KeyedShard, bitonic_sort, parallel_nearly_sort
from .models import (
    BearingModel,
    BearingParams,
    EconModel,
    StudentTParams,
    StudentTTarget,
)
from .resample import CapacityError, ResampleConfig, WeightShard, mvr_ncopies, redistribute
from .samplers import MHConfig, run_mh, run_sir_pf, run_smc_sampler

CSV_HEADER = ("experiment", "algo", "N", "M", "P", "T", "D", "seed", "rep", "wall_time_s", "resamples", "estimate", "rmse")
# columns that legitimately vary between identical runs
TIMING_COLUMNS = ("wall_time_s",)
# experiments whose run length is set from measured speed-ups
DERIVED_COLUMNS = {"vs-mh-accuracy": ("T", "resamples", "estimate", "rmse")}

SORT_ALGOS = ("NS", "BS", "BS+MS")
REDISTRIBUTE_BENCH_ALGOS = ("NR", "BR", "CR")
PF_MODELS = ("pf-econ", "pf-bearing")


@dataclass
class RunRecord:
    """One timed observation. ``wall_time_s`` is NaN for a run that did not complete."""

    experiment: str
    algo: str
    N: int
    M: int
    P: int
    T: int = 0
    D: int = 0
    seed: int = 0
    rep: int = 0
    wall_time_s: float = math.nan
    resamples: int = 0
    estimate: np.ndarray = field(default_factory=lambda: np.empty(0))
    rmse: float = math.nan

    def __post_init__(self):
        self.estimate = np.atleast_1d(np.asarray(self.estimate, dtype=np.float64))

    @property
    def completed(self) -> bool:
        return math.isfinite(self.wall_time_s)

    def row(self) -> list[str]:
        return [
            self.experiment,
            self.algo,
            str(self.N),
            str(self.M),
            str(self.P),
            str(self.T),
            str(self.D),
            str(self.seed),
            str(self.rep),
            _fmt(self.wall_time_s),
            str(self.resamples),
            ";".join(repr(float(v)) for v in self.estimate),
            _fmt(self.rmse),
        ]


def _fmt(v: float) -> str:
    return "" if not math.isfinite(v) else repr(float(v))


def _parse(v: str) -> float:
    return math.nan if v == "" else float(v)


def emit_csv(records: Iterable[RunRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.row())
    return path


def stable_rows(path: str | Path) -> list[tuple[str, ...]]:
    """CSV rows with timing and timing-derived fields blanked, for reproducibility checks."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    out = [tuple(rows[0])]
    for row in rows[1:]:
        d = dict(zip(CSV_HEADER, row))
        for col in TIMING_COLUMNS + DERIVED_COLUMNS.get(d["experiment"], ()):
            d[col] = ""
        out.append(tuple(d[c] for c in CSV_HEADER))
    return out


def read_csv(path: str | Path) -> list[RunRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        out = []
        for row in reader:
            d = dict(zip(CSV_HEADER, row))
            out.append(
                RunRecord(
                    d["experiment"],
                    d["algo"],
                    int(d["N"]),
                    int(d["M"]),
                    int(d["P"]),
                    int(d["T"]),
                    int(d["D"]),
                    int(d["seed"]),
                    int(d["rep"]),
                    _parse(d["wall_time_s"]),
                    int(d["resamples"]),
                    np.array([float(v) for v in d["estimate"].split(";") if v]),
                    _parse(d["rmse"]),
                )
            )
    return out


# ---------------------------------------------------------------- summaries


def median(values: Sequence[float]) -> float:
    return statistics.median(values)


def summarise(records: Iterable[RunRecord]) -> list[dict[str, Any]]:
    """Median wall time per cell and speed-up against the P=1 cell.

    A cell is ``(experiment, algo, N, M, T, D, P)``; only completed runs
    enter the median. ``speedup`` is NaN when the cell has no P=1 baseline.
    """
    cells: dict[tuple, list[float]] = {}
    for r in records:
        key = (r.experiment, r.algo, r.N, r.M, r.T, r.D, r.P)
        cells.setdefault(key, [])
        if r.completed:
            cells[key].append(r.wall_time_s)
    out = []
    for key in sorted(cells):
        times = cells[key]
        med = median(times) if times else math.nan
        base = cells.get(key[:-1] + (1,))
        base_med = median(base) if base else math.nan
        row = dict(zip(("experiment", "algo", "N", "M", "T", "D", "P"), key))
        row.update(reps=len(times), median_s=med, speedup=base_med / med if times and base else math.nan)
        if key[-1] == 1 and times:
            row["speedup"] = 1.0
        out.append(row)
    return out


def bootstrap_support(
    a: Sequence[float], b: Sequence[float], n_boot: int = 20, seed: int = 0, relation: Callable[[float, float], bool] = lambda x, y: x <= y
) -> int:
    """Number of bootstrap resamples in which ``relation(median(a*), median(b*))`` holds."""
    rng = np.random.default_rng(seed)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    hits = 0
    for _ in range(n_boot):
        ma = np.median(rng.choice(a, len(a)))
        mb = np.median(rng.choice(b, len(b)))
        hits += bool(relation(ma, mb))
    return hits


# ------------------------------------------------------------------ timing


def _barrier(comm: Communicator) -> None:
    comm.allreduce_sum(np.zeros(1))


def _timed(comm: Communicator, fn: Callable[[], Any]) -> tuple[float, Any]:
    _barrier(comm)
    t0 = time.perf_counter()
    out = fn()
    _barrier(comm)
    return time.perf_counter() - t0, out


def _slice(comm: Communicator, a: np.ndarray) -> np.ndarray:
    n = len(a) // comm.size
    return a[comm.rank * n : (comm.rank + 1) * n]


# --------------------------------------------------------- sort/redistribute


def gaussian_ncopies(N: int, M: int, seed: int, rep: int) -> tuple[np.ndarray, np.ndarray]:
    """Counts from MVR on ``|Gaussian|`` weights, and Gaussian particles."""
    rng = np.random.default_rng([seed, rep])
    w = np.abs(rng.standard_normal(N))
    x = rng.standard_normal((N, M))
    u = float(rng.random())
    ncopies = spawn_group(1, lambda comm: mvr_ncopies(comm, WeightShard(w / w.sum(), normalised=True), N, u=u))[0]
    return ncopies, x


def _sort_body(comm: Communicator, algo: str, shard: KeyedShard) -> KeyedShard:
    if algo == "NS":
        return parallel_nearly_sort(comm, shard)
    if algo == "BS":
        return bitonic_sort(comm, shard, "ascending", "bitonic")
    if algo == "BS+MS":
        return bitonic_sort(comm, shard, "ascending", "mergesort")
    raise ValueError(f"unknown sort {algo!r}")


def _redistribute_body(comm: Communicator, algo: str, shard: KeyedShard, capacity: int | None):
    return redistribute(comm, shard, ResampleConfig(len(shard) * comm.size, redistribute_algo=algo, capacity=capacity))


def _kernel_rank(comm, body, algo, inputs, extra):
    # untimed warm-up so compilation and first-touch costs stay out of rep 0
    try:
        body(comm, algo, KeyedShard(_slice(comm, inputs[0][0]), _slice(comm, inputs[0][1])), *extra)
    except CapacityError:
        pass
    times = []
    for ncopies, x in inputs:
        shard = KeyedShard(_slice(comm, ncopies), _slice(comm, x))
        try:
            dt, _ = _timed(comm, lambda: body(comm, algo, shard, *extra))
        except CapacityError:
            dt = math.nan
        times.append(dt)
    return times


def _bench_kernel(experiment, body, algos, N, P_list, reps, seed, M, extra=()) -> list[RunRecord]:
    if reps < 1:
        raise ValueError("reps must be positive")
    inputs = [gaussian_ncopies(N, M, seed, rep) for rep in range(reps)]
    records = []
    for algo in algos:
        for P in P_list:
            times = spawn_group(P, _kernel_rank, body, algo, inputs, extra)[0]
            for rep, dt in enumerate(times):
                records.append(RunRecord(experiment, algo, N, M, P, seed=seed, rep=rep, wall_time_s=dt))
    return records


def bench_sort(N: int, P_list: Sequence[int], reps: int = 20, seed: int = 0, algos: Sequence[str] = SORT_ALGOS, M: int = 1) -> list[RunRecord]:
    """Time parallel Nearly Sort against the bitonic sorts (plain and with local mergesort)."""
    return _bench_kernel("sort", _sort_body, algos, N, P_list, reps, seed, M)


def bench_redistribute(
    N: int,
    P_list: Sequence[int],
    reps: int = 20,
    seed: int = 0,
    algos: Sequence[str] = REDISTRIBUTE_BENCH_ALGOS,
    M: int = 1,
    capacity: int | None = None,
) -> list[RunRecord]:
    """Time the parallel redistribute variants; C-R capacity failures become missing points."""
    return _bench_kernel("redistribute", _redistribute_body, algos, N, P_list, reps, seed, M, (capacity,))


# ----------------------------------------------------------------- samplers


def make_model(name: str, D: int = 1, nu: float = 5.0, mu: float = 3.0, eps: float = 0.5):
    if name == "pf-econ":
        return EconModel()
    if name == "pf-bearing":
        return BearingModel(BearingParams(D=D))
    if name == "smcs":
        return StudentTTarget(StudentTParams(nu=nu, mu=mu, eps=eps))
    raise ValueError(f"unknown model {name!r}")


def _sampler_rank(comm, name, model, cfg, T, seeds, measurements):
    # untimed warm-up, see _kernel_rank
    if name == "smcs":
        run_smc_sampler(comm, model, cfg, min(T, 2), seeds[0])
    else:
        run_sir_pf(comm, model, cfg, min(T, 2), seeds[0], measurements=measurements[0])
    out = []
    for seed, ys in zip(seeds, measurements):
        if name == "smcs":
            fn = lambda: run_smc_sampler(comm, model, cfg, T, seed)  # noqa: E731
        else:
            fn = lambda: run_sir_pf(comm, model, cfg, T, seed, measurements=ys)  # noqa: E731
        dt, res = _timed(comm, fn)
        out.append((dt, res))
    return out


def _sampler_estimate(name, model, res, truth):
    if name == "smcs":
        est = res.f_hat
        rmse = float(np.sqrt(np.mean((est - model.truth) ** 2)))
        return est, rmse
    est = res.estimates[-1]
    if name == "pf-bearing":
        err = res.estimates[:, [0, 2]] - truth[:, [0, 2]]
    else:
        err = res.estimates - truth
    return est, float(np.sqrt(np.mean(err**2)))


def bench_sampler(
    name: str,
    N: int,
    P_list: Sequence[int],
    T: int = 100,
    reps: int = 20,
    seed: int = 0,
    worst_case: bool = True,
    D: int = 1,
    nu: float = 5.0,
    mu: float = 3.0,
    eps: float = 0.5,
    algo: str = "NR",
    shares: dict | None = None,
) -> list[RunRecord]:
    """Time full PF or SMCS runs; ``worst_case`` sets the ESS threshold to ``N``.

    Rep ``k`` uses seed ``seed + k``. PF RMSE is taken against the simulated
    state trajectory (position only for bearing tracking), SMCS RMSE against
    the target mean. If ``shares`` is a dict it receives the importance
    sampling share of rank 0's time per ``P``.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    model = make_model(name, D, nu, mu, eps)
    cfg = ResampleConfig(N, threshold=N if worst_case else None, redistribute_algo=algo)
    seeds = [seed + k for k in range(reps)]
    truths, measurements = [], []
    for s in seeds:
        if name == "smcs":
            truths.append(None)
            measurements.append(None)
        else:
            states, ys = model.simulate(T, np.random.default_rng([s, 7]))
            truths.append(states)
            measurements.append(ys)
    M = model.M
    label = {"pf-econ": "PF-econ", "pf-bearing": "PF-bearing", "smcs": "SMCS-student-t"}[name]
    records = []
    for P in P_list:
        runs = spawn_group(P, _sampler_rank, name, model, cfg, T, seeds, measurements)[0]
        is_time = total = 0.0
        for rep, ((dt, res), truth) in enumerate(zip(runs, truths)):
            est, rmse = _sampler_estimate(name, model, res, truth)
            records.append(
                RunRecord(name, f"{label}-{algo}", N, M, P, T, getattr(model, "D", 0), seeds[rep], rep, dt, res.resamples, est, rmse)
            )
            is_time += res.timings.importance
            total += res.timings.importance + res.timings.resampling + res.timings.other
        if shares is not None:
            shares[P] = is_time / total if total > 0 else math.nan
    return records


def bench_worst_case(name: str, N: int, P_list: Sequence[int], T: int = 100, reps: int = 20, seed: int = 0, **kw) -> list[RunRecord]:
    """Sampler runs with ``N* = N`` so that every iteration resamples."""
    return bench_sampler(name, N, P_list, T, reps, seed, worst_case=True, **kw)


def bench_multisensor(
    D_list: Sequence[int], N: int, P_list: Sequence[int], T: int = 100, reps: int = 20, seed: int = 0, worst_case: bool = True
) -> tuple[list[RunRecord], list[dict[str, Any]]]:
    """Bearing-tracking runs for each sensor count ``D``.

    Returns the records and one summary row per ``D`` with the speed-up at
    the largest P and the importance-sampling share of run time at P=2
    (or the smallest P present if 2 is absent).
    """
    records, table = [], []
    share_P = 2 if 2 in P_list else min(P_list)
    for D in D_list:
        if D < 1:
            raise ValueError("need D >= 1")
        shares: dict[int, float] = {}
        recs = bench_sampler("pf-bearing", N, P_list, T, reps, seed, worst_case=worst_case, D=D, shares=shares)
        records += recs
        summary = {(r["P"]): r for r in summarise(recs)}
        P_max = max(P_list)
        table.append(dict(D=D, P=P_max, speedup=summary[P_max]["speedup"], is_share_P=share_P, is_share=shares[share_P]))
    return records, table


# ------------------------------------------------------------ SMCS vs MH


@dataclass
class MHComparison:
    """Outcome of the equal-workload and equal-time comparison."""

    N: int
    T_SMC: int
    T_accuracy: int
    t_mh: float
    t_smcs: dict[int, float]
    su: dict[int, float]
    T_MH: int
    T_smcs: dict[int, int]
    rmse_mh: float
    rmse_smcs: dict[int, float]
    records: list[RunRecord]

    @staticmethod
    def ideal_ratio(P: int) -> float:
        return 1.0 / math.sqrt(P)

    def table(self) -> list[dict[str, Any]]:
        return [
            dict(
                P=P,
                su=self.su[P],
                T_smcs=self.T_smcs.get(P),
                rmse_smcs=self.rmse_smcs.get(P, math.nan),
                rmse_mh=self.rmse_mh,
                ratio=self.rmse_smcs.get(P, math.nan) / self.rmse_mh,
                ideal=self.ideal_ratio(P),
            )
            for P in sorted(self.su)
        ]


def _smcs_timing_rank(comm, model, cfg, T, seeds):
    run_smc_sampler(comm, model, cfg, min(T, 2), seeds[0])
    return [_timed(comm, lambda s=s: run_smc_sampler(comm, model, cfg, T, s)) for s in seeds]


def compare_mh(
    N: int = 1024,
    T_SMC: int = 100,
    P_list: Sequence[int] = (1, 2, 4, 8),
    seed: int = 0,
    reps: int = 10,
    timing_reps: int = 3,
    T_SMC_accuracy: int | None = None,
    nu: float = 5.0,
    mu: float = 3.0,
    eps: float = 0.5,
    tau: int | None = None,
) -> MHComparison:
    """Compare SMCS against single-chain MH on the Student-t target.

    Phase 1 times MH for ``N * T_SMC`` steps and SMCS for ``T_SMC``
    iterations on each P (median of ``timing_reps``); their ratio is the
    inter-task speed-up ``SU_P``. Phase 2 gives MH ``N * T' * SU_1`` steps
    and SMCS ``round(T' * SU_P)`` iterations, with ``T' = T_SMC_accuracy``
    (defaults to ``T_SMC``), and reports RMSE over ``reps`` seeds.
    ``tau`` is the MH burn-in in steps (default: a tenth of the chain).
    """
    P_list = sorted(set(P_list) | {1})
    model = StudentTTarget(StudentTParams(nu=nu, mu=mu, eps=eps))
    cfg = ResampleConfig(N)
    records: list[RunRecord] = []
    x0 = np.array([model.init_mean])

    def mh(T, s):
        cfg_mh = MHConfig(T, tau=None if tau is None else min(tau, T - 1), eps=eps)
        t0 = time.perf_counter()
        res = run_mh(model.log_target_point, x0, cfg_mh, s)
        return time.perf_counter() - t0, res

    T_eq = N * T_SMC
    mh(min(T_eq, 1000), seed)
    t_runs = [mh(T_eq, seed + k) for k in range(timing_reps)]
    t_mh = median([dt for dt, _ in t_runs])
    for k, (dt, res) in enumerate(t_runs):
        records.append(RunRecord("vs-mh-timing", "MH", N, 1, 1, T_eq, 0, seed + k, k, dt, 0, res.mean, abs(res.mean[0] - mu)))
    t_smcs, su = {}, {}
    for P in P_list:
        runs = spawn_group(P, _smcs_timing_rank, model, cfg, T_SMC, [seed + k for k in range(timing_reps)])[0]
        t_smcs[P] = median([dt for dt, _ in runs])
        su[P] = t_mh / t_smcs[P]
        for k, (dt, res) in enumerate(runs):
            records.append(
                RunRecord("vs-mh-timing", "SMCS", N, 1, P, T_SMC, 0, seed + k, k, dt, res.resamples, res.f_hat, abs(res.f_hat[0] - mu))
            )

    T_acc = T_SMC if T_SMC_accuracy is None else T_SMC_accuracy
    T_MH = int(round(N * T_acc * su[1]))
    seeds = [seed + 1000 + k for k in range(reps)]
    errs = []
    for k, s in enumerate(seeds):
        dt, res = mh(T_MH, s)
        errs.append(res.mean[0] - mu)
        records.append(RunRecord("vs-mh-accuracy", "MH", N, 1, 1, T_MH, 0, s, k, dt, 0, res.mean, abs(errs[-1])))
    rmse_mh = float(np.sqrt(np.mean(np.square(errs))))
    T_smcs, rmse_smcs = {}, {}
    for P in P_list:
        T_P = max(1, int(round(T_acc * su[P])))
        T_smcs[P] = T_P
        runs = spawn_group(P, _smcs_timing_rank, model, cfg, T_P, seeds)[0]
        e = []
        for k, (dt, res) in enumerate(runs):
            e.append(res.f_hat[0] - mu)
            records.append(RunRecord("vs-mh-accuracy", "SMCS", N, 1, P, T_P, 0, seeds[k], k, dt, res.resamples, res.f_hat, abs(e[-1])))
        rmse_smcs[P] = float(np.sqrt(np.mean(np.square(e))))
    return MHComparison(N, T_SMC, T_acc, t_mh, t_smcs, su, T_MH, T_smcs, rmse_mh, rmse_smcs, records)
