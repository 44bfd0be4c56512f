"""Command-line interface, file formats and replicate orchestration.

Subcommands::

    safeglasso simulate   toy or EMG-like datasets (CSV) with truth (JSON)
    safeglasso fit        selection + refit, one result JSON per dataset
    safeglasso predict    predictions of a stored fit at new rows
    safeglasso conformal  split or rank-one-out bands (CSV)
    safeglasso evaluate   selection metrics per replicate and aggregated
    safeglasso surface    fitted coefficient surfaces on a grid (CSV)

Dataset CSV: header ``y,z,x1_1,...,x1_R,...,xK_1,...,xK_R``, one row per
instance.  An optional sidecar grid file lists one ``s`` value per line; without
it the grid is uniform on ``[-delta, 0]`` when ``--delta`` is given and on
``[0, 1]`` otherwise.  Predictor labels in every artifact are one based.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

import argparse
import csv
import dataclasses
import datetime
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .basis import BasisSpec, make_basis
from .conformal import conformal_pair
from .design import FunctionalDataset
from .errors import ConfigurationError, DataError, DomainError, NumericalError
from .metrics import TruthSpec, aggregate_reports, coverage_stats, selection_metrics
from .selection import SafeAlgorithm, SafeOptions, evaluate_surface, safe_select
from .simgen import (NoiseConfig, ToyConfig, gen_emg_like, gen_mimic, gen_toy,
                     mimic_surfaces)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

__all__ = [
    "ExperimentConfig",
    "write_dataset_csv",
    "read_dataset_csv",
    "read_grid",
    "write_grid",
    "result_to_dict",
    "write_result",
    "load_model",
    "main",
]


# ---------------------------------------------------------------------------
# configuration


@dataclasses.dataclass
class ExperimentConfig:
    """Every tunable of the command line, serializable in canonical JSON form."""

    # data
    generator: str = "toy"
    n: int = 500
    k: int = 10
    r: int = 100
    c: float = 0.0
    snr: float = 5.0
    theta: float = 1.0
    kappa: float = 0.9
    delta: int = None
    z_domain: tuple = (-1.0, 1.0)
    n_new: int = 0
    # model
    l_basis: int = 15
    m_basis: int = 7
    folds: int = 5
    d_exponent: float = 1.0
    n_lambda: int = 100
    lambda_min_ratio: float = None
    phi_exponents: tuple = (-4.0, -2.0, 0.0, 2.0, 4.0)
    one_se: bool = False
    semi_adaptive: bool = False
    # experiment
    alpha: float = 0.05
    method: str = "split"
    seed: int = 0
    replicates: int = 1
    workers: int = None

    def validate(self):
        if self.generator not in ("toy", "emg"):
            raise ConfigurationError(f"unknown generator {self.generator!r}")
        if self.method not in ("split", "roo"):
            raise ConfigurationError(f"unknown conformal method {self.method!r}")
        for name in ("n", "k", "r", "l_basis", "m_basis", "folds", "n_lambda", "replicates"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.delta is not None and self.delta < 1:
            raise ConfigurationError("delta must be positive")
        if len(self.z_domain) != 2 or not self.z_domain[0] < self.z_domain[1]:
            raise ConfigurationError("z_domain must be an increasing pair")
        if self.workers is not None and self.workers < 1:
            raise ConfigurationError("workers must be positive")
        return self

    def options(self):
        return SafeOptions(n_lambda=self.n_lambda, lambda_min_ratio=self.lambda_min_ratio,
                           phi_exponents=tuple(self.phi_exponents), folds=self.folds,
                           d_exponent=self.d_exponent, one_se=self.one_se,
                           semi_adaptive=self.semi_adaptive)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["z_domain"] = [float(v) for v in self.z_domain]
        d["phi_exponents"] = [float(v) for v in self.phi_exponents]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("z_domain", "phi_exponents"):
            if key in d and d[key] is not None:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d).validate()


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# datasets


def _fmt(v):
    return repr(float(v))


def write_dataset_csv(ds, path):
    """Wide-form CSV with full round-trip float precision."""
    K, N, R = ds.X.shape
    header = ["y", "z"] + [f"x{k + 1}_{r + 1}" for k in range(K) for r in range(R)]
    flat = ds.X.transpose(1, 0, 2).reshape(N, K * R)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(N):
            w.writerow([_fmt(ds.y[i]), _fmt(ds.z[i])] + [_fmt(v) for v in flat[i]])


def write_grid(s_grid, path):
    with open(path, "w") as fh:
        fh.writelines(_fmt(v) + "\n" for v in s_grid)


def read_grid(path):
    vals = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                vals.append(float(line))
            except ValueError as exc:
                raise DataError(f"{path}: line {line_no}: not a number: {line!r}") from exc
    return np.asarray(vals)


_XCOL = re.compile(r"^x(\d+)_(\d+)$")


def _parse_header(header, path):
    if len(header) < 3 or header[0] != "y" or header[1] != "z":
        raise DataError(f"{path}: header must start with 'y,z' followed by predictor columns")
    pairs = []
    for j, name in enumerate(header[2:], start=3):
        m = _XCOL.match(name)
        if not m:
            raise DataError(f"{path}: column {j}: bad predictor column name {name!r}")
        pairs.append((int(m.group(1)), int(m.group(2))))
    K = max(p[0] for p in pairs)
    R = max(p[1] for p in pairs)
    expected = [(k, r) for k in range(1, K + 1) for r in range(1, R + 1)]
    if pairs != expected:
        raise DataError(f"{path}: predictor columns must be x1_1..x1_R, ..., xK_1..xK_R in order")
    return K, R


def read_dataset_csv(path, grid_path=None, delta=None):
    """Load a dataset; schema problems are reported with row and column numbers."""
    path = str(path)
    try:
        fh = open(path, newline="")
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {path}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise DataError(f"{path}: empty file") from exc
        K, R = _parse_header(header, path)
        width = len(header)
        rows = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}: row {row_no}: expected {width} columns, got {len(row)}")
            vals = np.empty(width)
            for j, cell in enumerate(row):
                try:
                    vals[j] = float(cell)
                except ValueError as exc:
                    raise DataError(f"{path}: row {row_no}, column {j + 1} ({header[j]}): "
                                    f"not a number: {cell!r}") from exc
                if not np.isfinite(vals[j]):
                    raise DataError(f"{path}: row {row_no}, column {j + 1} ({header[j]}): "
                                    f"non-finite value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.vstack(rows)
    N = data.shape[0]
    X = data[:, 2:].reshape(N, K, R).transpose(1, 0, 2)
    if grid_path is not None:
        s_grid = read_grid(grid_path)
        if s_grid.size != R:
            raise DataError(f"{grid_path}: {s_grid.size} grid values for R={R} columns")
    elif delta is not None:
        s_grid = np.linspace(-float(delta), 0.0, R)
    else:
        s_grid = np.linspace(0.0, 1.0, R)
    return FunctionalDataset(data[:, 0], data[:, 1], X, s_grid)


def _sidecar(data_path, suffix):
    p = Path(data_path)
    return p.with_name(p.stem + suffix)


def _grid_for(data_path, explicit=None):
    if explicit:
        return explicit
    side = _sidecar(data_path, ".grid")
    return str(side) if side.exists() else None


# ---------------------------------------------------------------------------
# results


def _clean(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    if isinstance(v, (np.floating,)):
        return _clean(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    return v


def _tuning(t):
    if t is None:
        return None
    return _clean({"lambda": t.lam, "phi1": t.phi1, "phi2": t.phi2, "cv_error": t.cv_error})


def _basis_dict(basis):
    sp = basis.spec
    return {"lo": sp.domain_lo, "hi": sp.domain_hi, "num_basis": sp.num_basis,
            "order": sp.spline_order}


def result_to_dict(result, config, data_path=None):
    """JSON-ready record of a fitted :class:`SelectionResult` (one-based labels)."""
    one = lambda ks: [int(k) + 1 for k in ks]  # noqa: E731
    return _clean({
        "schema_version": SCHEMA_VERSION,
        "mode": "non-varying" if result.M == 1 else "varying",
        "data": str(data_path) if data_path is not None else None,
        "seed": config.seed,
        "config": config.to_dict(),
        "names": list(result.names),
        "L": result.L,
        "M": result.M,
        "basis_s": _basis_dict(result.basis_s),
        "basis_z": _basis_dict(result.basis_z),
        "stage1_set": one(result.stage1_set),
        "stage2_set": one(result.stage2_set),
        "initial_tuning": _tuning(result.initial_tuning),
        "stage1_tuning": _tuning(result.stage1_tuning),
        "stage2_tuning": _tuning(result.stage2_tuning),
        "post_tuning": _tuning(result.post_tuning),
        "intercept": result.intercept,
        "coefficients": {str(k + 1): result.final_B[k].tolist() for k in sorted(result.final_B)},
        "fitted": result.fitted.tolist(),
        "weights": result.weights,
        "cv_table": result.cv_table,
        "timestamp": {
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "runtime_seconds": result.runtime,
        },
    })


def write_result(record, path):
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1, allow_nan=False)
        fh.write("\n")


class StoredModel:
    """Prediction-only view of a result JSON."""

    def __init__(self, record):
        if record.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported result schema {record.get('schema_version')!r}")
        self.record = record
        bs, bz = record["basis_s"], record["basis_z"]
        self.basis_s = make_basis(BasisSpec(bs["lo"], bs["hi"], bs["num_basis"], bs["order"]))
        self.basis_z = make_basis(BasisSpec(bz["lo"], bz["hi"], bz["num_basis"], bz["order"]))
        self.intercept = float(record["intercept"])
        self.final_B = {int(k) - 1: np.asarray(v, dtype=float)
                        for k, v in record["coefficients"].items()}

    def predict(self, ds):
        from .design import assemble_design

        if not self.final_B:
            return np.full(ds.n, self.intercept)
        groups = sorted(self.final_B)
        if max(groups) >= ds.k:
            raise DataError(f"model uses predictor {max(groups) + 1} but data has K={ds.k}")
        design = assemble_design(ds.select_groups(groups), self.basis_s, self.basis_z,
                                 clamp_z=True)
        beta = np.concatenate([self.final_B[k].ravel() for k in groups])
        return self.intercept + design.W @ beta


def load_model(path):
    try:
        with open(path) as fh:
            return StoredModel(json.load(fh))
    except FileNotFoundError as exc:
        raise DataError(f"result file not found: {path}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{path}: malformed result file: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def _bases(ds, cfg):
    lo, hi = float(ds.s_grid[0]), float(ds.s_grid[-1])
    if not hi > lo:
        raise DataError("the s grid needs at least two distinct points")
    basis_s = make_basis(BasisSpec(lo, hi, cfg.l_basis))
    basis_z = make_basis(BasisSpec(cfg.z_domain[0], cfg.z_domain[1], cfg.m_basis,
                                   1 if cfg.m_basis == 1 else 4))
    return basis_s, basis_z


def _simulate_one(cfg, seed):
    if cfg.generator == "toy":
        ds, truth = gen_toy(ToyConfig(N=cfg.n + cfg.n_new, K=cfg.k, R=cfg.r, C=cfg.c,
                                      snr=cfg.snr, seed=seed))
        info = {"generator": "toy", "active": [k + 1 for k in truth.active], "K": cfg.k,
                "C": cfg.c, "snr": cfg.snr, "sigma2": truth.sigma2,
                "realized_snr": truth.realized_snr, "mu": truth.mu}
    else:
        delta = cfg.delta or 40
        pool = gen_emg_like(T=cfg.n + cfg.n_new + delta, K=cfg.k, delta=delta, seed=seed)
        surfaces = mimic_surfaces(delta)
        if max(surfaces) >= cfg.k:
            raise ConfigurationError("the EMG-like generator needs k >= 12")
        ds, extra = gen_mimic(surfaces, pool, NoiseConfig(cfg.theta, cfg.kappa, 1.0, seed),
                              snr=cfg.snr)
        info = {"generator": "emg", "active": [k + 1 for k in sorted(surfaces)], "K": cfg.k,
                "snr": cfg.snr, "theta": cfg.theta, "kappa": cfg.kappa, "delta": delta,
                "sigma_h2": extra["noise"].sigma_h2, "realized_snr": extra["realized_snr"],
                "mu": extra["mu"]}
    info["seed"] = seed
    return ds, info


def cmd_simulate(cfg, out):
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for rep in range(cfg.replicates):
        seed = cfg.seed + rep
        ds, info = _simulate_one(cfg, seed)
        stem = f"{cfg.generator}_seed{seed}"
        train = ds.subset(np.arange(cfg.n))
        write_dataset_csv(train, out / f"{stem}.csv")
        write_grid(ds.s_grid, out / f"{stem}.grid")
        if cfg.n_new:
            write_dataset_csv(ds.subset(np.arange(cfg.n, cfg.n + cfg.n_new)),
                              out / f"{stem}.new.csv")
            write_grid(ds.s_grid, out / f"{stem}.new.grid")
        info["mu"] = np.asarray(info["mu"])[: cfg.n]
        with open(out / f"{stem}.truth.json", "w") as fh:
            json.dump(_clean(info), fh, indent=1, sort_keys=True)
            fh.write("\n")
        print(f"seed {seed}: realized SNR {info['realized_snr']:.4g} -> {out / stem}.csv")
        written.append(out / f"{stem}.csv")
    return written


def _fit_job(args):
    data_path, grid_path, cfg_dict, out_dir = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    ds = read_dataset_csv(data_path, grid_path, cfg.delta)
    basis_s, basis_z = _bases(ds, cfg)
    result = safe_select(ds, basis_s, basis_z, cfg.options())
    record = result_to_dict(result, cfg, data_path)
    path = Path(out_dir) / (Path(data_path).stem + ".result.json")
    write_result(record, path)
    return str(path), record["stage2_set"]


def _pool(cfg, n_jobs):
    workers = cfg.workers or os.cpu_count() or 1
    return min(workers, n_jobs)


def cmd_fit(cfg, data_paths, out, grid=None):
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(str(p), _grid_for(p, grid), cfg.to_dict(), str(out)) for p in data_paths]
    workers = _pool(cfg, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            done = list(ex.map(_fit_job, jobs))
    else:
        done = [_fit_job(j) for j in jobs]
    for path, sel in done:
        print(f"{path}: selected {sel}")
    return [p for p, _ in done]


def cmd_predict(cfg, result_path, data_path, out, grid=None):
    model = load_model(result_path)
    ds = read_dataset_csv(data_path, _grid_for(data_path, grid), cfg.delta)
    pred = model.predict(ds)
    out.mkdir(parents=True, exist_ok=True)
    path = out / (Path(data_path).stem + ".predictions.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "prediction"])
        for i, v in enumerate(pred, 1):
            w.writerow([i, _fmt(v)])
    print(path)
    return path


def write_band_csv(band, path, y_true=None):
    with open(path, "w", newline="") as fh:
        fh.write(f"# method={band.method} alpha={band.alpha!r} seed={band.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "center", "lower", "upper"])
        for i in range(len(band)):
            w.writerow([i + 1, _fmt(band.centers[i]), _fmt(band.lower[i]), _fmt(band.upper[i])])


def cmd_conformal(cfg, data_path, out, new_data=None, grid=None):
    ds = read_dataset_csv(data_path, _grid_for(data_path, grid), cfg.delta)
    new_ds = None
    if cfg.method == "split":
        if new_data is None:
            raise ConfigurationError("split bands need --new-data with the target rows")
        new_ds = read_dataset_csv(new_data, _grid_for(new_data), cfg.delta)
    basis_s, basis_z = _bases(ds, cfg)
    bands = conformal_pair(ds, new_ds, [cfg.alpha], cfg.seed,
                           SafeAlgorithm(basis_s, basis_z, cfg.options()))[cfg.alpha]
    band = bands[cfg.method]
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{Path(data_path).stem}.{cfg.method}.bands.csv"
    write_band_csv(band, path)
    y_ref = new_ds.y if cfg.method == "split" else ds.y
    cov, width, se = coverage_stats(band, y_ref)
    print(f"{path}: coverage {cov:.4f} (se {se:.4f}), mean width {width:.4g}")
    return path, cov


def cmd_evaluate(cfg, result_paths, out, truth_path=None):
    missing = [str(p) for p in result_paths if not Path(p).exists()]
    records = []
    for p in result_paths:
        if str(p) in missing:
            continue
        with open(p) as fh:
            records.append(json.load(fh))
    truths = []
    for p, rec in zip([p for p in result_paths if str(p) not in missing], records):
        tp = truth_path
        if tp is None and rec.get("data"):
            tp = _sidecar(rec["data"], ".truth.json")
        if tp is None or not Path(tp).exists():
            missing.append(f"truth for {p}")
            continue
        with open(tp) as fh:
            truths.append(json.load(fh))
    if missing:
        raise DataError("missing replicate files: " + ", ".join(missing))
    if not records:
        raise DataError("no result files given")
    rows = []
    reports = []
    for p, rec, tr in zip(result_paths, records, truths):
        spec = TruthSpec(int(tr["K"]), frozenset(k - 1 for k in tr["active"]))
        rep = selection_metrics([k - 1 for k in rec["stage2_set"]], spec)
        reports.append(rep)
        row = {"result": str(p), "seed": rec.get("seed")}
        row.update(rep.to_dict())
        rows.append(row)
    agg = aggregate_reports(reports)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.json", "w") as fh:
        json.dump(_clean({"per_replicate": rows, "aggregate": agg}), fh, indent=1)
        fh.write("\n")
    keys = ["result", "seed", "size", "sp", "tpr", "fpr"]
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([row[k] for k in keys])
    # table layout: percentages for SP/TPR/FPR, plain size
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "replicates", "SP", "SP_sd", "size", "size_sd", "TPR", "TPR_sd",
                    "FPR", "FPR_sd"])
        line = ["SAFE-gLASSO", len(rows)]
        for key, scale in (("sp", 100.0), ("size", 1.0), ("tpr", 100.0), ("fpr", 100.0)):
            m, sd = agg[key]["mean"], agg[key]["sd"]
            line += [_fmt(m * scale), "" if sd is None else _fmt(sd * scale)]
        w.writerow(line)
    print(f"{len(rows)} replicates: TPR {100 * agg['tpr']['mean']:.1f}%, "
          f"FPR {100 * agg['fpr']['mean']:.1f}%, size {agg['size']['mean']:.2f}")
    return agg


def cmd_surface(cfg, result_path, out, n_s=50, n_z=50, groups=None):
    model = load_model(result_path)
    s_lo, s_hi = model.basis_s.domain
    z_lo, z_hi = model.basis_z.domain
    s_pts = np.linspace(s_lo, s_hi, n_s)
    z_pts = np.linspace(z_lo, z_hi, n_z)
    ks = sorted(model.final_B) if not groups else [g - 1 for g in groups]
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in ks:
        if k not in model.final_B:
            raise DataError(f"predictor {k + 1} is not in the fitted model")
        surf = evaluate_surface(model.final_B[k], model.basis_s, model.basis_z, s_pts, z_pts)
        path = out / f"{Path(result_path).stem}.surface_x{k + 1}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "z", "gamma"])
            for i, s in enumerate(s_pts):
                for j, z in enumerate(z_pts):
                    w.writerow([_fmt(s), _fmt(z), _fmt(surf[i, j])])
        paths.append(path)
        print(path)
    return paths


# ---------------------------------------------------------------------------
# argument parsing


def _common(p):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--delta", type=int, help="history length; grid on [-delta, 0]")
    p.add_argument("--grid", help="sidecar grid file (one s value per line)")


def _model_flags(p):
    p.add_argument("--l-basis", dest="l_basis", type=int)
    p.add_argument("--m-basis", dest="m_basis", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--d-exponent", dest="d_exponent", type=float)
    p.add_argument("--n-lambda", dest="n_lambda", type=int)
    p.add_argument("--one-se", dest="one_se", action="store_true", default=None)
    p.add_argument("--semi-adaptive", dest="semi_adaptive", action="store_true", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="safeglasso", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate datasets")
    _common(p)
    p.add_argument("--generator", choices=("toy", "emg"))
    p.add_argument("--replicates", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--c", type=float)
    p.add_argument("--snr", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--n-new", dest="n_new", type=int)

    p = sub.add_parser("fit", help="selection and refit")
    _common(p)
    _model_flags(p)
    p.add_argument("--data", nargs="+", required=True)

    p = sub.add_parser("predict", help="predict from a result file")
    _common(p)
    p.add_argument("--result", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("conformal", help="prediction bands")
    _common(p)
    _model_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--new-data", dest="new_data")
    p.add_argument("--alpha", type=float)
    p.add_argument("--method", choices=("split", "roo"))

    p = sub.add_parser("evaluate", help="selection metrics over replicates")
    _common(p)
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--truth")
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("surface", help="coefficient surfaces as CSV grids")
    _common(p)
    p.add_argument("--result", required=True)
    p.add_argument("--n-s", dest="n_s", type=int, default=50)
    p.add_argument("--n-z", dest="n_z", type=int, default=50)
    p.add_argument("--group", type=int, nargs="*")
    return parser


def _config_from_args(args):
    base = _load_config(args.config) if args.config else {}
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for name, value in vars(args).items():
        if name in names and value is not None:
            base[name] = value
    return ExperimentConfig.from_dict(base)


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    cfg = _config_from_args(args)
    out = Path(args.out)
    if args.command == "simulate":
        cmd_simulate(cfg, out)
    elif args.command == "fit":
        cmd_fit(cfg, args.data, out, args.grid)
    elif args.command == "predict":
        cmd_predict(cfg, args.result, args.data, out, args.grid)
    elif args.command == "conformal":
        cmd_conformal(cfg, args.data, out, args.new_data, args.grid)
    elif args.command == "evaluate":
        cmd_evaluate(cfg, args.results, out, args.truth)
    elif args.command == "surface":
        cmd_surface(cfg, args.result, out, args.n_s, args.n_z, args.group)
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
