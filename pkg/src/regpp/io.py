"""Serialization of datasets, models, warps and results; run configuration.

Formats
-------
Datasets are JSON lines.  The first line is a header
``{"format": "regpp-dataset", "version": 1, "C": <type count>}``; every
further line is one sequence
``{"seq_id": str, "T": float, "events": [{"t": float, "c": int}, ...]}``
with an optional ``"covariate"``.  Type indices are 0-based.

Results are a single JSON document.  CSV exports start with ``#`` comment
lines describing the columns and the provenance (config hash and seed).

Floats are written with Python's shortest round-trip representation, so
every value reloads bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .core import EventSequence, HawkesParams, ModelSpec, PoissonBumpModel
from .errors import DataFormatError, DomainError, FormatVersionError
from .register import RegistrationResult
from .warp import PiecewiseLinearWarp

DATASET_FORMAT = "regpp-dataset"
RESULT_FORMAT = "regpp-result"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# datasets


def _check_version(version, what: str, where: str):
    if not isinstance(version, int):
        raise DataFormatError(f"{where}: {what} version must be an integer, got {version!r}")
    if version > FORMAT_VERSION:
        raise FormatVersionError(f"{where}: {what} format version {version} is newer than "
                                 f"the supported version {FORMAT_VERSION}")


def save_dataset(seqs, path, num_types: int | None = None) -> None:
    seqs = list(seqs)
    if num_types is None:
        num_types = 1 + max((int(s.types.max()) for s in seqs if len(s)), default=0)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"format": DATASET_FORMAT, "version": FORMAT_VERSION, "C": int(num_types)}) + "\n")
        for s in seqs:
            record = {"seq_id": s.seq_id, "T": s.horizon,
                      "events": [{"t": float(t), "c": int(c)} for t, c in zip(s.times, s.types)]}
            if s.covariate is not None:
                record["covariate"] = float(s.covariate)
            fh.write(json.dumps(record) + "\n")


def _as_float(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DataFormatError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _as_type(value, where):
    if isinstance(value, bool) or not isinstance(value, int):
        raise DataFormatError(f"{where}: type index must be an integer, got {value!r}")
    return value


def load_dataset(path):
    """Read and validate a dataset.

    Returns
    -------
    seqs : list of EventSequence
    meta : dict
        The header record (``"C"``, ``"format"``, ``"version"``).

    Raises
    ------
    DataFormatError
        On malformed JSON (with the line number) or any invariant violation
        (naming the sequence).  Nothing is sorted or repaired.
    """
    seqs, meta, seen = [], None, set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON ({err.msg})") from err
            if not isinstance(record, dict):
                raise DataFormatError(f"{path}:{lineno}: expected a JSON object")
            if meta is None:
                if record.get("format") != DATASET_FORMAT:
                    raise DataFormatError(f"{path}:{lineno}: missing dataset header")
                _check_version(record.get("version"), "dataset", f"{path}:{lineno}")
                C = record.get("C")
                if isinstance(C, bool) or not isinstance(C, int) or C < 1:
                    raise DataFormatError(f"{path}:{lineno}: header field C must be a positive integer")
                meta = record
                continue
            seqs.append(_parse_sequence(record, meta["C"], f"{path}:{lineno}", seen))
    if meta is None:
        raise DataFormatError(f"{path}: empty file, no dataset header")
    return seqs, meta


def _parse_sequence(record, C, where, seen):
    unknown = set(record) - {"seq_id", "T", "events", "covariate"}
    if unknown:
        raise DataFormatError(f"{where}: unknown fields {sorted(unknown)}")
    sid = record.get("seq_id")
    if not isinstance(sid, str):
        raise DataFormatError(f"{where}: seq_id must be a string")
    where = f"{where} (sequence {sid!r})"
    if sid in seen:
        raise DataFormatError(f"{where}: duplicate seq_id")
    seen.add(sid)
    T = _as_float(record.get("T"), where)
    events = record.get("events")
    if not isinstance(events, list):
        raise DataFormatError(f"{where}: events must be a list")
    times, types = [], []
    for k, ev in enumerate(events):
        if not isinstance(ev, dict) or set(ev) != {"t", "c"}:
            raise DataFormatError(f"{where}: event {k} must be an object with fields t and c")
        times.append(_as_float(ev["t"], f"{where} event {k}"))
        c = _as_type(ev["c"], f"{where} event {k}")
        if not 0 <= c < C:
            raise DataFormatError(f"{where}: event {k} has type {c} outside 0..{C - 1}")
        types.append(c)
    cov = record.get("covariate")
    if cov is not None:
        cov = _as_float(cov, where)
    try:
        return EventSequence(np.array(times, dtype=float), np.array(types, dtype=np.int64), T, sid, cov)
    except DomainError as err:
        raise DataFormatError(f"{where}: {err}") from err


# ---------------------------------------------------------------------------
# models, warps, results


def model_to_dict(model: ModelSpec) -> dict:
    if isinstance(model, HawkesParams):
        return {"family": "hawkes", "mu": model.mu.tolist(), "phi": model.phi.tolist(), "decay": model.decay}
    return {"family": "poisson", "onsets": model.onsets.tolist(), "decays": model.decays.tolist(),
            "amplitudes": model.amplitudes.tolist(), "period": model.period}


def model_from_dict(data: dict) -> ModelSpec:
    try:
        if data["family"] == "hawkes":
            return HawkesParams(data["mu"], data["phi"], data["decay"])
        if data["family"] == "poisson":
            return PoissonBumpModel(data["onsets"], data["decays"], data["amplitudes"], data.get("period"))
    except (KeyError, TypeError, DomainError) as err:
        raise DataFormatError(f"invalid model record: {err}") from err
    raise DataFormatError(f"unknown model family {data.get('family')!r}")


def save_model(model: ModelSpec, path, metadata: dict | None = None) -> None:
    doc = {"format": "regpp-model", "version": FORMAT_VERSION, "model": model_to_dict(model),
           "metadata": metadata or {}}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> ModelSpec:
    doc = _read_json(path)
    _check_version(doc.get("version"), "model", str(path))
    return model_from_dict(doc.get("model", {}))


def save_warps(warps, path, seq_ids=None) -> None:
    warps = list(warps)
    doc = {"format": "regpp-warps", "version": FORMAT_VERSION,
           "seq_ids": list(seq_ids) if seq_ids is not None else None,
           "warps": [w.to_dict() for w in warps]}
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_warps(path):
    doc = _read_json(path)
    _check_version(doc.get("version"), "warps", str(path))
    try:
        return [PiecewiseLinearWarp.from_dict(w) for w in doc["warps"]]
    except (KeyError, TypeError, DomainError) as err:
        raise DataFormatError(f"{path}: invalid warp record: {err}") from err


def _read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DataFormatError(f"{path}:{err.lineno}: invalid JSON ({err.msg})") from err
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: expected a JSON object")
    return doc


def save_result(result: RegistrationResult, path, metadata: dict | None = None) -> None:
    """Write a result as JSON (timings are not stored, keeping files reproducible)."""
    doc = {"format": RESULT_FORMAT, "version": FORMAT_VERSION,
           "model": model_to_dict(result.model),
           "unwarps": [u.to_dict() for u in result.unwarps],
           "seq_ids": list(result.seq_ids),
           "trace": [float(x) for x in result.trace],
           "metadata": metadata or {}}
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_result(path) -> RegistrationResult:
    doc = _read_json(path)
    if doc.get("format") != RESULT_FORMAT:
        raise DataFormatError(f"{path}: not a registration result")
    _check_version(doc.get("version"), "result", str(path))
    try:
        unwarps = tuple(PiecewiseLinearWarp.from_dict(u) for u in doc["unwarps"])
        return RegistrationResult(model_from_dict(doc["model"]), unwarps,
                                  np.array(doc["trace"], dtype=float), (), tuple(doc.get("seq_ids", ())))
    except (KeyError, TypeError, DomainError) as err:
        raise DataFormatError(f"{path}: invalid result record: {err}") from err


# ---------------------------------------------------------------------------
# CSV exports


def provenance_lines(config_hash: str | None = None, seed: int | None = None) -> list:
    lines = []
    if config_hash is not None:
        lines.append(f"config_sha256={config_hash}")
    if seed is not None:
        lines.append(f"seed={seed}")
    return lines


def write_csv(path, columns, rows, comments=(), trailer=()) -> None:
    """Headered CSV with leading (and optional trailing) ``#`` comment lines."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
        for line in trailer:
            fh.write(f"# {line}\n")


def read_csv(path):
    """Column names and data rows of a CSV written by :func:`write_csv`."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def emit_trace_csv(result: RegistrationResult, path, config_hash=None, seed=None) -> None:
    write_csv(path, ["iteration", "loss"], [(k, float(x)) for k, x in enumerate(result.trace)],
              ["columns: iteration (0 = initial fit with identity unwarps), loss (regularized NLL)"]
              + provenance_lines(config_hash, seed))


def emit_warp_curve_csv(warp: PiecewiseLinearWarp, path, points: int = 200, config_hash=None, seed=None) -> None:
    grid = np.linspace(0.0, warp.horizon, points)
    write_csv(path, ["s", "W"], zip(grid, np.interp(grid, warp.landmarks, warp.knots)),
              ["columns: s (time), W (warp value at s)"] + provenance_lines(config_hash, seed))


def emit_distortion_table_csv(table, path, config_hash=None, seed=None) -> None:
    write_csv(path, ["distortion", "relative_error"], zip(table.distortions, table.errors),
              ["columns: distortion (max |W(t) - t| / T), relative_error (plain MLE on warped data)"]
              + provenance_lines(config_hash, seed),
              trailer=[f"pearson={table.pearson!r}", f"kendall={table.kendall!r}"])


# ---------------------------------------------------------------------------
# run configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSettings(_Strict):
    """Model family and structure; parameter values act as ground truth for simulation."""

    family: Literal["hawkes", "poisson"] = "hawkes"
    num_types: int = Field(1, ge=1)
    decay: float = Field(1.0, gt=0)
    mu: Optional[list[float]] = None
    phi: Optional[list[list[float]]] = None
    truth_seed: int = 0
    spectral_radius: float = Field(0.8, gt=0, lt=1)
    onsets: Optional[list[float]] = None
    bump_decays: Optional[list[float]] = None
    amplitudes: Optional[list[float]] = None
    num_bumps: int = Field(5, ge=1)
    background: float = Field(0.05, ge=0)


class RegistrationSettings(_Strict):
    num_landmarks: int = Field(20, ge=2)
    gamma: float = Field(0.01, ge=0)
    outer_iters: int = Field(7, ge=1)
    update_mode: Literal["parallel", "sequential"] = "parallel"
    mle_max_iters: int = Field(15, ge=1)
    mle_tol: float = Field(1e-6, gt=0)
    exact_compensator: bool = True
    inner_rounds: int = Field(5, ge=1)
    pg_iters: int = Field(200, ge=1)
    surrogate: Literal["exact", "frozen"] = "exact"
    regularizer: Literal["coefficient", "integral"] = "coefficient"


class DataSettings(_Strict):
    num_sequences: int = Field(200, ge=1)
    horizon: float = Field(100.0, gt=0)
    warp_basis: int = Field(10, ge=3)
    train_fraction: float = Field(0.5, gt=0, lt=1)
    warp_resolution: int = Field(200, ge=1)
    identity_warps: bool = False


class ExperimentSettings(_Strict):
    trials: int = Field(50, ge=2)
    sequences: int = Field(40, ge=1)
    strengths: list[float] = [0.0, 0.25, 0.5, 0.75, 1.0]
    seeds: int = Field(5, ge=1)
    train_sizes: list[int] = [40]
    stitch: list[int] = [1]
    gammas: list[float] = [1e-3, 1e-2, 1e-1, 1.0, 10.0]
    landmarks: list[int] = [5, 10, 20, 50, 100]
    bootstrap_replicates: int = Field(50, ge=2)


class RunConfig(_Strict):
    """Everything a CLI run needs besides the seed; unknown keys are rejected."""

    model: ModelSettings = ModelSettings()
    registration: RegistrationSettings = RegistrationSettings()
    data: DataSettings = DataSettings()
    experiment: ExperimentSettings = ExperimentSettings()
    dataset: Optional[str] = None
    test_dataset: Optional[str] = None
    result: Optional[str] = None
    truth: Optional[str] = None
    stitch_k: int = Field(0, ge=0)


def load_config(path) -> RunConfig:
    try:
        return RunConfig.model_validate(_read_json(path))
    except ValidationError as err:
        raise DataFormatError(f"{path}: invalid configuration:\n{err}") from err


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON form of the configuration."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
