"""Cross-database and fused-dataset experiment drivers."""
from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ArrayData, DatasetManifest, fuse, materialize
from .metrics import EvalReport, class_swap, evaluate_report, far, frr, predictions_from_probs
from .model import Model, ModelConfig, build_model, checkpoint_bytes
from .tensor import Prng, derive_seed
from .trainer import TrainLog, fit

log = logging.getLogger(__name__)

FUSE_SEED_KEY = 1_000_003


def write_atomic(path, content: str | bytes) -> None:
    """Write via ``<path>.partial`` and rename, so readers never see half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_bytes(content.encode("utf-8") if isinstance(content, str) else content)
    os.replace(tmp, path)


def eval_split(manifest: DatasetManifest) -> str:
    """Held-out split used for scoring: ``test`` when present, otherwise ``val``."""
    return "test" if manifest.has_split("test") else "val"


def evaluate_model(m: Model, data: ArrayData) -> tuple[EvalReport, np.ndarray]:
    probs = m.predict_proba(data.images)
    return evaluate_report(predictions_from_probs(probs), data.labels), probs


class _Loader:
    """Decodes each (manifest, split) once."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self._cache: dict[tuple[int, str], ArrayData] = {}

    def __call__(self, manifest: DatasetManifest, split: str) -> ArrayData:
        key = (id(manifest), split)
        if key not in self._cache:
            self._cache[key] = materialize(manifest.split(split), self.cfg.input_h, self.cfg.input_w)
        return self._cache[key]


def train_on(manifest: DatasetManifest, cfg: ModelConfig, seed: int, load=None) -> tuple[Model, TrainLog]:
    load = load or _Loader(cfg)
    p = Prng(seed)
    model = build_model(cfg, p)
    return fit(model, load(manifest, "train"), load(manifest, "val"), p)


@dataclass
class CrossEvalMatrix:
    train_names: list[str]
    eval_names: list[str]
    cells: dict[tuple[str, str], EvalReport]
    logs: dict[str, TrainLog] = field(default_factory=dict)

    @property
    def hter_grid(self) -> np.ndarray:
        return np.array([[self.cells[(t, e)].hter for e in self.eval_names] for t in self.train_names])


def _check_names(datasets: list[DatasetManifest]) -> None:
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ValueError(f"dataset names must be unique, got {names}")


def run_cross_eval(datasets: list[DatasetManifest], cfg: ModelConfig, seed: int, out_dir=None) -> CrossEvalMatrix:
    """Train a fresh model per dataset and score it on every dataset's held-out split.

    Run ``i`` is seeded with ``derive_seed(seed, i)``.
    """
    if not datasets:
        raise ValueError("cross evaluation needs at least one dataset")
    _check_names(datasets)
    load = _Loader(cfg)
    names = [d.name for d in datasets]
    cells: dict[tuple[str, str], EvalReport] = {}
    logs: dict[str, TrainLog] = {}
    for i, train_ds in enumerate(datasets):
        model, trainlog = train_on(train_ds, cfg, derive_seed(seed, i), load)
        logs[train_ds.name] = trainlog
        log.info("trained on %s: %d epochs (%s)", train_ds.name, len(trainlog.records), trainlog.stop_reason)
        for eval_ds in datasets:
            cells[(train_ds.name, eval_ds.name)], _ = evaluate_model(model, load(eval_ds, eval_split(eval_ds)))
        if out_dir is not None:
            out = Path(out_dir)
            write_atomic(out / f"trainlog_{train_ds.name}.csv", trainlog.to_csv())
            write_atomic(out / f"model_{train_ds.name}.atkn", checkpoint_bytes(model))
    matrix = CrossEvalMatrix(names, names, cells, logs)
    if out_dir is not None:
        text, csv_text = render_matrix(matrix)
        write_atomic(Path(out_dir) / "matrix.txt", text)
        write_atomic(Path(out_dir) / "matrix.csv", csv_text)
    return matrix


def run_fused(datasets: list[DatasetManifest], cfg: ModelConfig, seed: int, out_dir=None) -> tuple[dict[str, EvalReport], TrainLog]:
    """Train once on the fused train splits and report per source dataset."""
    if len(datasets) < 2:
        raise ValueError("fused protocol needs at least two datasets")
    _check_names(datasets)
    fused = fuse(datasets, derive_seed(seed, FUSE_SEED_KEY))
    load = _Loader(cfg)
    model, trainlog = train_on(fused, cfg, derive_seed(seed, 0), load)
    reports = {}
    for ds in datasets:
        reports[ds.name], _ = evaluate_model(model, load(ds, eval_split(ds)))
    if out_dir is not None:
        out = Path(out_dir)
        write_atomic(out / "trainlog_fused.csv", trainlog.to_csv())
        write_atomic(out / "model_fused.atkn", checkpoint_bytes(model))
        write_atomic(out / "fused.txt", render_reports(reports))
        write_atomic(out / "fused.csv", reports_csv({("fused", k): v for k, v in reports.items()}))
    return reports, trainlog


# ------------------------------------------------------------------ rendering

CSV_HEADER = "train,eval,class,precision,recall,f1,far,frr,hter"


def _class_rows(r: EvalReport):
    swapped = class_swap(r.confusion)
    yield "bonafide", r.bonafide, r.far, r.frr
    yield "attack", r.attack, far(swapped), frr(swapped)


def reports_csv(cells: dict[tuple[str, str], EvalReport]) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for (t, e), r in cells.items():
        for cls, cm, fa, fr in _class_rows(r):
            buf.write(f"{t},{e},{cls},{cm.precision:.6f},{cm.recall:.6f},{cm.f1:.6f},{fa:.6f},{fr:.6f},{r.hter:.6f}\n")
    return buf.getvalue()


def _block(title: str, r: EvalReport) -> str:
    rows = list(_class_rows(r))
    lines = [title, f"  {'':<10}{'bonafide':>10}{'attack':>10}"]
    for label, get in (("precision", lambda x: x[1].precision), ("recall", lambda x: x[1].recall),
                       ("f1", lambda x: x[1].f1), ("FAR", lambda x: x[2]), ("FRR", lambda x: x[3])):
        lines.append(f"  {label:<10}" + "".join(f"{get(row):>10.3f}" for row in rows))
    lines.append(f"  {'HTER':<10}{r.hter:>20.3f}")
    return "\n".join(lines)


def render_reports(reports: dict[str, EvalReport]) -> str:
    return "\n\n".join(_block(f"eval={name}", r) for name, r in reports.items()) + "\n"


def render_matrix(m: CrossEvalMatrix) -> tuple[str, str]:
    """Table-style text (one block per cell plus an HTER grid) and flat CSV."""
    missing = [(t, e) for t in m.train_names for e in m.eval_names if (t, e) not in m.cells]
    if missing:
        raise ValueError(f"matrix incomplete, missing {missing}")
    ordered = {(t, e): m.cells[(t, e)] for t in m.train_names for e in m.eval_names}
    blocks = [_block(f"train={t} eval={e}", r) for (t, e), r in ordered.items()]
    corner = "train\\eval"
    width = max(len(n) for n in m.eval_names + m.train_names + [corner]) + 2
    grid = [f"{corner:<{width}}" + "".join(f"{e:>{width}}" for e in m.eval_names)]
    for t, row in zip(m.train_names, m.hter_grid):
        grid.append(f"{t:<{width}}" + "".join(f"{h:>{width}.3f}" for h in row))
    text = "\n\n".join(blocks) + "\n\nHTER\n" + "\n".join(grid) + "\n"
    return text, reports_csv(ordered)
