"""Config-file experiment harness: parse a JSON spec, run repeats, write CSVs.

A spec file fully determines every output byte: the dataset seed is shared by
all repeats (same data), while the model, mechanism, and minibatch seeds are
offset by the repeat index so repeats are independent runs of the same task.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import VerticalDataset, load_dataset_csv, make_synthetic
from .errors import SpecError
from .pbm import PbmParams
from .vfl import MODES, Seeds, TrainRecord, TrainTrace, VflConfig, run_experiment

__all__ = [
    "SPEC_FORMAT_VERSION",
    "TRACE_COLUMNS",
    "SyntheticSource",
    "CsvSource",
    "ExperimentSpec",
    "parse_spec",
    "parse_spec_file",
    "serialize_spec",
    "load_dataset",
    "vfl_config_for_repeat",
    "write_trace_csv",
    "read_trace_csv",
    "RunResult",
    "run_spec",
]

SPEC_FORMAT_VERSION = 1

TRACE_COLUMNS = (
    "iter",
    "epoch",
    "loss",
    "train_acc",
    "test_acc",
    "up_bits",
    "down_bits",
    "cum_bits",
    "eps_feat_alpha2",
    "eps_sample_alpha2",
)

_SUMMARY_METRICS = (
    "final_loss",
    "final_train_acc",
    "final_test_acc",
    "total_bits",
    "eps_feat_alpha2",
    "eps_sample_alpha2",
)


@dataclass(frozen=True)
class SyntheticSource:
    """Generate the dataset in-process from the spec's data seed."""

    n_train: int
    n_test: int
    n_features: int
    classes: int
    class_sep: float


@dataclass(frozen=True)
class CsvSource:
    """Load a pre-partitioned dataset from CSV files plus a party sidecar."""

    train_path: str
    test_path: str
    parties_path: str


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a training run needs, as read from a spec file."""

    name: str
    mode: str
    parties: int
    embed_dim: int
    batch: int
    iters: int
    eta: float
    hidden: tuple[int, ...]
    quantizer: PbmParams
    seeds: Seeds
    dataset: SyntheticSource | CsvSource
    eval_every: int = 10
    repeats: int = 1
    output_dir: str = "out"
    float_bits: int = 32
    ldp_sigma: float | None = None


class _Cursor:
    """Tracks the JSON path while pulling typed fields out of parsed JSON."""

    def __init__(self, obj: Any, source: str, path: str = "") -> None:
        self.obj = obj
        self.source = source
        self.path = path

    def fail(self, message: str) -> SpecError:
        where = self.path or "<root>"
        return SpecError(f"{self.source}: {where}: {message}")

    def child(self, key: str) -> "_Cursor":
        sub = f"{self.path}.{key}" if self.path else key
        return _Cursor(self.obj[key], self.source, sub)

    def mapping(self) -> dict:
        if not isinstance(self.obj, dict):
            raise self.fail(f"expected an object, got {type(self.obj).__name__}")
        return self.obj

    def require(self, key: str) -> "_Cursor":
        if key not in self.mapping():
            raise self.fail(f"missing required key {key!r}")
        return self.child(key)

    def reject_unknown(self, allowed: set[str]) -> None:
        unknown = sorted(set(self.mapping()) - allowed)
        if unknown:
            raise self.fail(f"unknown keys {unknown}; allowed: {sorted(allowed)}")

    def as_int(self) -> int:
        if not isinstance(self.obj, int) or isinstance(self.obj, bool):
            raise self.fail(f"expected an integer, got {self.obj!r}")
        return self.obj

    def as_number(self) -> float:
        if isinstance(self.obj, bool) or not isinstance(self.obj, (int, float)):
            raise self.fail(f"expected a number, got {self.obj!r}")
        return float(self.obj)

    def as_str(self) -> str:
        if not isinstance(self.obj, str):
            raise self.fail(f"expected a string, got {self.obj!r}")
        return self.obj

    def as_int_list(self) -> tuple[int, ...]:
        if not isinstance(self.obj, list) or any(
            not isinstance(v, int) or isinstance(v, bool) for v in self.obj
        ):
            raise self.fail(f"expected a list of integers, got {self.obj!r}")
        return tuple(self.obj)


def _parse_dataset(cur: _Cursor) -> SyntheticSource | CsvSource:
    mapping = cur.mapping()
    if set(mapping) == {"synthetic"}:
        sub = cur.child("synthetic")
        sub.reject_unknown({"n_train", "n_test", "n_features", "classes", "class_sep"})
        return SyntheticSource(
            n_train=sub.require("n_train").as_int(),
            n_test=sub.require("n_test").as_int(),
            n_features=sub.require("n_features").as_int(),
            classes=sub.require("classes").as_int(),
            class_sep=sub.require("class_sep").as_number(),
        )
    if set(mapping) == {"csv"}:
        sub = cur.child("csv")
        sub.reject_unknown({"train_path", "test_path", "parties_path"})
        return CsvSource(
            train_path=sub.require("train_path").as_str(),
            test_path=sub.require("test_path").as_str(),
            parties_path=sub.require("parties_path").as_str(),
        )
    raise cur.fail(
        f"expected exactly one of 'synthetic' or 'csv', got keys {sorted(mapping)}"
    )


def parse_spec(text: str, source: str = "<spec>") -> ExperimentSpec:
    """Parse and validate a JSON experiment spec; errors name the JSON path."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    root = _Cursor(obj, source)
    root.reject_unknown(
        {
            "version", "name", "mode", "parties", "embed_dim", "batch", "iters",
            "eta", "hidden", "quantizer", "seeds", "dataset", "eval_every",
            "repeats", "output_dir", "float_bits", "ldp_sigma",
        }
    )
    version = root.require("version").as_int()
    if version != SPEC_FORMAT_VERSION:
        raise root.child("version").fail(
            f"unsupported spec version {version}; this build reads version {SPEC_FORMAT_VERSION}"
        )
    mode = root.require("mode").as_str()
    if mode not in MODES:
        raise root.child("mode").fail(f"mode must be one of {list(MODES)}, got {mode!r}")

    quant = root.require("quantizer")
    quant.reject_unknown({"trials", "beta", "bound"})
    quant_map = quant.mapping()
    try:
        quantizer = PbmParams(
            trials=quant.require("trials").as_int(),
            beta=quant.require("beta").as_number(),
            bound=quant.child("bound").as_number() if "bound" in quant_map else 1.0,
        )
    except ValueError as exc:
        raise quant.fail(str(exc)) from exc

    seeds_cur = root.require("seeds")
    seeds_cur.reject_unknown({"data", "model", "mechanism", "minibatch"})
    try:
        seeds = Seeds(
            data=seeds_cur.require("data").as_int(),
            model=seeds_cur.require("model").as_int(),
            mechanism=seeds_cur.require("mechanism").as_int(),
            minibatch=seeds_cur.require("minibatch").as_int(),
        )
    except ValueError as exc:
        raise seeds_cur.fail(str(exc)) from exc

    mapping = root.mapping()
    spec = ExperimentSpec(
        name=root.require("name").as_str(),
        mode=mode,
        parties=root.require("parties").as_int(),
        embed_dim=root.require("embed_dim").as_int(),
        batch=root.require("batch").as_int(),
        iters=root.require("iters").as_int(),
        eta=root.require("eta").as_number(),
        hidden=root.require("hidden").as_int_list(),
        quantizer=quantizer,
        seeds=seeds,
        dataset=_parse_dataset(root.require("dataset")),
        eval_every=root.child("eval_every").as_int() if "eval_every" in mapping else 10,
        repeats=root.child("repeats").as_int() if "repeats" in mapping else 1,
        output_dir=root.child("output_dir").as_str() if "output_dir" in mapping else "out",
        float_bits=root.child("float_bits").as_int() if "float_bits" in mapping else 32,
        ldp_sigma=(
            root.child("ldp_sigma").as_number() if mapping.get("ldp_sigma") is not None else None
        ),
    )
    if spec.repeats < 1:
        raise root.child("repeats").fail(f"repeats must be >= 1, got {spec.repeats}")
    if spec.eval_every < 1:
        raise root.child("eval_every").fail(f"eval_every must be >= 1, got {spec.eval_every}")
    if not spec.name:
        raise root.child("name").fail("name must be non-empty")
    # Build a config once so VflConfig's own validation anchors to the file.
    try:
        vfl_config_for_repeat(spec, 0)
    except ValueError as exc:
        raise SpecError(f"{source}: {exc}") from exc
    return spec


def parse_spec_file(path: str | Path) -> ExperimentSpec:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError as exc:
        raise SpecError(f"spec file not found: {p}") from exc
    return parse_spec(text, source=str(p))


def serialize_spec(spec: ExperimentSpec) -> str:
    """Emit a spec as JSON text; parse(serialize(spec)) == spec."""
    if isinstance(spec.dataset, SyntheticSource):
        dataset: dict[str, Any] = {"synthetic": asdict(spec.dataset)}
    else:
        dataset = {"csv": asdict(spec.dataset)}
    obj: dict[str, Any] = {
        "version": SPEC_FORMAT_VERSION,
        "name": spec.name,
        "mode": spec.mode,
        "parties": spec.parties,
        "embed_dim": spec.embed_dim,
        "batch": spec.batch,
        "iters": spec.iters,
        "eta": spec.eta,
        "hidden": list(spec.hidden),
        "quantizer": {
            "trials": spec.quantizer.trials,
            "beta": spec.quantizer.beta,
            "bound": spec.quantizer.bound,
        },
        "seeds": asdict(spec.seeds),
        "dataset": dataset,
        "eval_every": spec.eval_every,
        "repeats": spec.repeats,
        "output_dir": spec.output_dir,
        "float_bits": spec.float_bits,
    }
    if spec.ldp_sigma is not None:
        obj["ldp_sigma"] = spec.ldp_sigma
    return json.dumps(obj, indent=2) + "\n"


def load_dataset(spec: ExperimentSpec) -> VerticalDataset:
    """Materialize the dataset a spec names, validating the party count."""
    if isinstance(spec.dataset, SyntheticSource):
        src = spec.dataset
        data = make_synthetic(
            n_train=src.n_train,
            n_test=src.n_test,
            n_features=src.n_features,
            classes=src.classes,
            parties=spec.parties,
            seed=spec.seeds.data,
            class_sep=src.class_sep,
        )
    else:
        try:
            data = load_dataset_csv(
                spec.dataset.train_path, spec.dataset.test_path, spec.dataset.parties_path
            )
        except FileNotFoundError as exc:
            raise SpecError(f"dataset file not found: {exc.filename}") from exc
        except ValueError as exc:
            raise SpecError(str(exc)) from exc
    if data.parties != spec.parties:
        raise SpecError(
            f"spec declares {spec.parties} parties but dataset has {data.parties}"
        )
    return data


def vfl_config_for_repeat(spec: ExperimentSpec, repeat: int) -> VflConfig:
    """The training config for repeat r: fresh model/mechanism/minibatch seeds."""
    if not 0 <= repeat < spec.repeats:
        raise ValueError(f"repeat {repeat} outside [0, {spec.repeats})")
    s = spec.seeds
    return VflConfig(
        parties=spec.parties,
        embed_dim=spec.embed_dim,
        batch=spec.batch,
        iters=spec.iters,
        eta=spec.eta,
        mode=spec.mode,  # type: ignore[arg-type]
        pbm=spec.quantizer,
        seeds=Seeds(s.data, s.model + repeat, s.mechanism + repeat, s.minibatch + repeat),
        hidden=spec.hidden,
        float_bits=spec.float_bits,
        ldp_sigma=spec.ldp_sigma,
    )


def _cell(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_trace_csv(trace: TrainTrace, path: str | Path) -> None:
    """Serialize a trace with the fixed column set; floats keep full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in trace.records:
            writer.writerow(
                [
                    str(r.iteration),
                    repr(r.epoch),
                    repr(r.loss),
                    _cell(r.train_acc),
                    _cell(r.test_acc),
                    str(r.up_bits),
                    str(r.down_bits),
                    str(r.cum_bits),
                    _cell(r.eps_feat_alpha2),
                    _cell(r.eps_sample_alpha2),
                ]
            )


def read_trace_csv(path: str | Path) -> TrainTrace:
    """Parse a trace CSV back into records (wall time is not serialized)."""
    trace = TrainTrace()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(TRACE_COLUMNS):
            raise SpecError(f"{path}: unexpected trace header {header}")
        for row in reader:
            (it, epoch, loss, tr_acc, te_acc, up, down, cum, e_feat, e_sample) = row
            trace.records.append(
                TrainRecord(
                    iteration=int(it),
                    epoch=float(epoch),
                    loss=float(loss),
                    train_acc=float(tr_acc) if tr_acc else None,
                    test_acc=float(te_acc) if te_acc else None,
                    up_bits=int(up),
                    down_bits=int(down),
                    cum_bits=int(cum),
                    eps_feat_alpha2=float(e_feat) if e_feat else None,
                    eps_sample_alpha2=float(e_sample) if e_sample else None,
                )
            )
    return trace


@dataclass
class RunResult:
    """Outputs of one spec execution: in-memory traces plus file locations."""

    spec: ExperimentSpec
    traces: list[TrainTrace]
    trace_paths: list[Path]
    summary_path: Path
    summary: dict[str, tuple[float | None, float | None]] = field(default_factory=dict)


def _final_metrics(trace: TrainTrace) -> dict[str, float | None]:
    if not trace.records:
        return {name: None for name in _SUMMARY_METRICS}
    last = trace.final
    return {
        "final_loss": last.loss,
        "final_train_acc": last.train_acc,
        "final_test_acc": last.test_acc,
        "total_bits": float(last.cum_bits),
        "eps_feat_alpha2": last.eps_feat_alpha2,
        "eps_sample_alpha2": last.eps_sample_alpha2,
    }


def _summarize(traces: list[TrainTrace]) -> dict[str, tuple[float | None, float | None]]:
    """Mean and population standard deviation of final metrics over repeats."""
    per_run = [_final_metrics(t) for t in traces]
    out: dict[str, tuple[float | None, float | None]] = {}
    for name in _SUMMARY_METRICS:
        values = [m[name] for m in per_run]
        if any(v is None for v in values):
            out[name] = (None, None)
        else:
            arr = np.array(values, dtype=np.float64)
            out[name] = (float(arr.mean()), float(arr.std()))
    return out


def run_spec(spec: ExperimentSpec, output_dir: str | Path | None = None) -> RunResult:
    """Run every repeat, write one trace CSV per repeat plus a summary CSV."""
    data = load_dataset(spec)
    out_dir = Path(output_dir) if output_dir is not None else Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces: list[TrainTrace] = []
    trace_paths: list[Path] = []
    for r in range(spec.repeats):
        trace = run_experiment(
            vfl_config_for_repeat(spec, r), data, eval_every=spec.eval_every
        )
        path = out_dir / f"{spec.name}_trace_{r}.csv"
        write_trace_csv(trace, path)
        traces.append(trace)
        trace_paths.append(path)
    summary = _summarize(traces)
    summary_path = out_dir / f"{spec.name}_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "mean", "std"])
        for name in _SUMMARY_METRICS:
            mean, std = summary[name]
            writer.writerow([name, _cell(mean), _cell(std)])
    return RunResult(
        spec=spec,
        traces=traces,
        trace_paths=trace_paths,
        summary_path=summary_path,
        summary=summary,
    )
