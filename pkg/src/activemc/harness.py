"""Experiment driver: data ingestion, policy comparison, summaries and result files."""

import csv
import json
import math
import time
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .exceptions import DomainError
from .maxent import maxent_run, uniform_run
from .nuclear import complete_nuclear_norm
from .smg import ObservationSet, SMGModel, sample_smg

TRACE_COLUMNS = ("policy", "replication", "step", "indices", "error")
SUMMARY_COLUMNS = ("policy", "step", "n", "mean", "q25", "q75")
TIMING_COLUMNS = ("policy", "replication", "step", "wall_time")


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Centered complete matrix plus the offset and the originally observed mask."""

    matrix: np.ndarray
    offset: float
    observed: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def raw(self):
        return self.matrix + self.offset

    def submatrix(self, m1, m2):
        """Rows and columns with the most originally observed cells (ties by index)."""
        if m1 > self.shape[0] or m2 > self.shape[1]:
            raise DomainError(f"dataset is {self.shape}, cannot select {m1}x{m2}")
        rows = np.sort(np.argsort(-self.observed.sum(axis=1), kind="stable")[:m1])
        cols = np.sort(np.argsort(-self.observed.sum(axis=0), kind="stable")[:m2])
        return self.matrix[np.ix_(rows, cols)].copy()


def load_csv_dataset(path, lam=None):
    """Read ``row,col,value`` (1-based) into a centered, completed dense matrix.

    The observed-entry mean is subtracted and kept as ``offset``; cells absent
    from the file are filled by nuclear-norm completion of the centered values.
    """
    path = Path(path)
    entries = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["row", "col", "value"]:
            raise ValueError(f"{path}:1: expected header 'row,col,value', got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(rec)}")
            try:
                i, j, y = int(rec[0]), int(rec[1]), float(rec[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {rec}") from None
            if i < 1 or j < 1 or not math.isfinite(y):
                raise ValueError(f"{path}:{lineno}: indices must be >= 1 and value finite")
            if (i, j) in entries:
                raise ValueError(
                    f"{path}:{lineno}: duplicate cell ({i}, {j}), first seen on line "
                    f"{entries[(i, j)][1]}"
                )
            entries[(i, j)] = (y, lineno)
    if not entries:
        raise ValueError(f"{path}: no data rows")
    m1 = max(i for i, _ in entries)
    m2 = max(j for _, j in entries)
    idx = np.array([(i - 1, j - 1) for i, j in entries], dtype=np.intp)
    vals = np.array([v[0] for v in entries.values()])
    offset = float(vals.mean())
    observed = np.zeros((m1, m2), dtype=bool)
    observed[idx[:, 0], idx[:, 1]] = True
    mat = np.zeros((m1, m2))
    mat[idx[:, 0], idx[:, 1]] = vals - offset
    if not observed.all():
        obs = ObservationSet(idx, vals - offset, 0.0, (m1, m2))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            x_hat = complete_nuclear_norm(obs, lam=lam).x_hat
        mat = np.where(observed, mat, x_hat)
    return Dataset(mat, offset, observed)


def write_csv_dataset(matrix, path, offset=0.0):
    """Write every cell of ``matrix + offset`` as ``row,col,value`` (17 significant digits)."""
    matrix = np.asarray(matrix, dtype=float) + offset
    with open(path, "w") as fh:
        fh.write("row,col,value\n")
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                fh.write(f"{i + 1},{j + 1},{matrix[i, j]:.17g}\n")
    return Path(path)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _policy_code(policy):
    return zlib.crc32(policy.encode())


def ground_truth(config, replication, dataset=None):
    """Synthetic SMG draw, or the dataset submatrix, for one replication."""
    if dataset is not None:
        return dataset.submatrix(config.m1, config.m2)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, replication, 1]))
    model = SMGModel.random(config.m1, config.m2, config.true_rank, config.sigma2, rng)
    return sample_smg(model, rng)


def frobenius_error(x, obs, lam=None):
    """``||X - X_hat||_F`` with ``X_hat`` the nuclear-norm completion of ``obs``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        x_hat = complete_nuclear_norm(obs, lam=lam).x_hat
    return float(np.linalg.norm(x - x_hat))


def run_policy(config, policy, replication, x):
    """One policy on one ground truth; returns ``(trace rows, timing rows)``."""
    ss = np.random.SeedSequence([config.seed, replication, 2, _policy_code(policy)])
    design_ss, noise_ss = ss.spawn(2)
    rng = np.random.default_rng(design_ss)
    noise = np.random.default_rng(noise_ss)
    sd = math.sqrt(config.eta2)

    def oracle(i, j):
        return x[i, j] + sd * noise.standard_normal()

    stamps = []

    def evaluate(obs):
        err = frobenius_error(x, obs, config.lam)
        stamps.append(time.perf_counter())
        return err

    start = time.perf_counter()
    if policy == "uniform":
        trace = uniform_run(config, oracle, rng, balanced_start=False, evaluate=evaluate)
    elif policy == "balanced-then-uniform":
        trace = uniform_run(config, oracle, rng, balanced_start=True, evaluate=evaluate)
    else:
        mode = policy[len("maxent-"):]
        trace = maxent_run(config, oracle, mode, rng, evaluate=evaluate)
    rows, timing = [], []
    for rec, stamp in zip(trace.batches, stamps):
        rows.append({
            "policy": policy,
            "replication": replication,
            "step": rec.step,
            "indices": ";".join(f"{i + 1}:{j + 1}" for i, j in rec.indices),
            "error": rec.error,
        })
        timing.append({"policy": policy, "replication": replication, "step": rec.step,
                       "wall_time": stamp - start})
    return rows, timing


def _replication(args):
    config, rep, dataset = args
    x = ground_truth(config, rep, dataset)
    rows, timing = [], []
    for policy in config.policies:
        r, t = run_policy(config, policy, rep, x)
        rows.extend(r)
        timing.extend(t)
    return rows, timing


def run_policy_comparison(config, n_jobs=1, return_timing=False):
    """Every policy on a shared ground truth per replication.

    Trace rows carry the Frobenius error of a nuclear-norm refit after the
    initial design and after each batch.  Results are ordered by replication
    then policy regardless of ``n_jobs``.
    """
    dataset = load_csv_dataset(config.dataset, config.lam) if config.dataset else None
    jobs = [(config, rep, dataset) for rep in range(config.replications)]
    if n_jobs == 1:
        results = [_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_replication, jobs))
    rows = [r for res in results for r in res[0]]
    timing = [t for res in results for t in res[1]]
    if return_timing:
        return rows, timing
    return rows


def summarize(rows):
    """Mean and 25th/75th percentiles (type-7, linear interpolation) per policy and step."""
    groups = {}
    for r in rows:
        groups.setdefault((r["policy"], int(r["step"])), []).append(float(r["error"]))
    out = []
    for (policy, step), errs in sorted(groups.items()):
        e = np.asarray(errs)
        q25, q75 = np.quantile(e, [0.25, 0.75], method="linear")
        out.append({"policy": policy, "step": step, "n": len(e), "mean": float(e.mean()),
                    "q25": float(q25), "q75": float(q75)})
    return out


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_table(path, columns, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_results(rows, summary, path, config=None, timing=None):
    """Write ``trace.csv``, ``summary.csv`` and ``config.json`` (plus ``timing.csv``).

    Wall times go to a separate file so ``trace.csv`` is a pure function of
    the config and seed.
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create results directory {path}: {exc}") from exc
    _write_table(path / "trace.csv", TRACE_COLUMNS, rows)
    _write_table(path / "summary.csv", SUMMARY_COLUMNS, summary)
    cfg = config.to_dict() if isinstance(config, ExperimentConfig) else (config or {})
    with open(path / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
    if timing is not None:
        _write_table(path / "timing.csv", TIMING_COLUMNS, timing)
    return path


def read_trace(path):
    """Load ``trace.csv`` back into row dictionaries."""
    with open(path, newline="") as fh:
        rows = []
        for r in csv.DictReader(fh):
            rows.append({"policy": r["policy"], "replication": int(r["replication"]),
                         "step": int(r["step"]), "indices": r["indices"],
                         "error": float(r["error"])})
    return rows


def read_summary(path):
    with open(path, newline="") as fh:
        return [{"policy": r["policy"], "step": int(r["step"]), "n": int(r["n"]),
                 "mean": float(r["mean"]), "q25": float(r["q25"]), "q75": float(r["q75"])}
                for r in csv.DictReader(fh)]


def final_errors(rows):
    """``{policy: array of final-step errors, one per replication}``."""
    last = {}
    for r in rows:
        key = (r["policy"], r["replication"])
        if key not in last or r["step"] > last[key][0]:
            last[key] = (r["step"], r["error"])
    out = {}
    for (policy, _), (_, err) in sorted(last.items()):
        out.setdefault(policy, []).append(err)
    return {k: np.asarray(v) for k, v in out.items()}
