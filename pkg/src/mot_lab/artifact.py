"""Run-artifact file formats: trajectory CSV, JSON state dumps, manifests.

All floating-point values are serialized with Python's shortest
round-trip repr, so files parse back to bitwise-identical values and
reruns of a deterministic recipe produce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Corpus, Sample
from .model import ExpertParams, GatingParams, ModelState
from .signals import SignalDictionary
from .training import TrainRecord

FORMAT_VERSION = "1"

TRAJECTORY_HEADER = "epoch,stage,expert_loss,router_loss,routed_counts,mean_margin,mean_pvv"


def fmt_float(x: float) -> str:
    return repr(float(x))


def trajectory_rows(records: Iterable[TrainRecord]) -> Iterable[str]:
    for r in records:
        counts = "|".join(str(int(c)) for c in r.routed_counts)
        yield ",".join(
            [
                str(r.epoch),
                r.stage,
                fmt_float(r.expert_loss),
                fmt_float(r.router_loss),
                counts,
                fmt_float(r.mean_margin),
                fmt_float(r.mean_pvv),
            ]
        )


def write_trajectory_csv(path: str | Path, records: Sequence[TrainRecord]) -> Path:
    path = Path(path)
    lines = [TRAJECTORY_HEADER, *trajectory_rows(records)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_trajectory_csv(path: str | Path) -> list[TrainRecord]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != TRAJECTORY_HEADER:
        raise ValueError(f"{path}: not a trajectory CSV (bad header)")
    records = []
    for line in lines[1:]:
        epoch, stage, el, rl, counts, margin, pvv = line.split(",")
        records.append(
            TrainRecord(
                epoch=int(epoch),
                stage=stage,
                expert_loss=float(el),
                router_loss=float(rl),
                routed_counts=np.array([int(c) for c in counts.split("|")]),
                mean_margin=float(margin),
                mean_pvv=float(pvv),
            )
        )
    return records


# --------------------------------------------------------------------------
# JSON state serialization
# --------------------------------------------------------------------------


def dictionary_to_jsonable(d: SignalDictionary) -> dict:
    return {
        "dim": d.dim,
        "num_classes": d.num_classes,
        "class_signals": d.class_signals.tolist(),
        "cls_signals": d.cls_signals.tolist(),
    }


def dictionary_from_jsonable(obj: dict) -> SignalDictionary:
    return SignalDictionary(
        dim=obj["dim"],
        num_classes=obj["num_classes"],
        class_signals=np.array(obj["class_signals"]),
        cls_signals=np.array(obj["cls_signals"]),
    )


def sample_to_jsonable(s: Sample) -> dict:
    return {
        "tokens": s.tokens.tolist(),
        "label": s.label,
        "class_index": s.class_index,
        "distractor_index": s.distractor_index,
        "distractor_sign": s.distractor_sign,
        "pos_class": s.pos_class,
        "pos_signal": s.pos_signal,
        "pos_distractor": s.pos_distractor,
        "noise_std": s.noise_std,
    }


def sample_from_jsonable(obj: dict) -> Sample:
    return Sample(
        tokens=np.array(obj["tokens"]),
        label=obj["label"],
        class_index=obj["class_index"],
        distractor_index=obj["distractor_index"],
        distractor_sign=obj["distractor_sign"],
        pos_class=obj["pos_class"],
        pos_signal=obj["pos_signal"],
        pos_distractor=obj["pos_distractor"],
        noise_std=obj["noise_std"],
    )


def corpus_to_jsonable(c: Corpus) -> dict:
    return {
        "seed": c.seed,
        "dictionary": dictionary_to_jsonable(c.dictionary),
        "samples": [sample_to_jsonable(s) for s in c.samples],
    }


def corpus_from_jsonable(obj: dict) -> Corpus:
    return Corpus(
        samples=[sample_from_jsonable(s) for s in obj["samples"]],
        dictionary=dictionary_from_jsonable(obj["dictionary"]),
        seed=obj["seed"],
    )


def model_to_jsonable(m: ModelState) -> dict:
    return {
        "epoch": m.epoch,
        "theta": m.gating.theta.tolist(),
        "experts": [{"w": e.w.tolist(), "w_kq": e.w_kq.tolist()} for e in m.experts],
    }


def model_from_jsonable(obj: dict) -> ModelState:
    return ModelState(
        gating=GatingParams(theta=np.array(obj["theta"])),
        experts=[ExpertParams(w=np.array(e["w"]), w_kq=np.array(e["w_kq"])) for e in obj["experts"]],
        epoch=obj["epoch"],
    )


def write_json(path: str | Path, obj: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))
    return path


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# --------------------------------------------------------------------------
# Run manifest
# --------------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path: str | Path, files: Sequence[Path], root: str | Path) -> Path:
    """Line-oriented manifest: relative path, tab, sha256 checksum."""
    path = Path(path)
    root = Path(root)
    lines = [f"{Path(f).relative_to(root).as_posix()}\t{sha256_file(f)}" for f in sorted(files)]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_run_artifact(
    path: str | Path,
    *,
    config_echo: dict,
    seeds: Sequence[int],
    referenced_files: Sequence[str | Path],
    base_dir: str | Path,
) -> Path:
    """Top-level run descriptor; every referenced file must already exist."""
    base = Path(base_dir)
    rel_paths = []
    for f in referenced_files:
        fp = Path(f)
        if not fp.exists():
            raise FileNotFoundError(f"run artifact references missing file: {fp}")
        rel_paths.append(fp.relative_to(base).as_posix())
    return write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "config": config_echo,
            "seeds": list(seeds),
            "files": sorted(rel_paths),
        },
    )
