"""Gesture dataset containers and the on-disk CSV/manifest format.

A dataset directory holds `manifest.json` plus one CSV per instance:

  video: frame,<kp>_x,<kp>_y,<kp>_conf ...   (one row per frame; empty
         cells mark a missing keypoint)
  wifi:  pair,sample,r,alpha_z,el,angle_unit (one row per pair/sample;
         angle_unit is "rad" or "deg" per row)
  accel: t,ax,ay,az                          (20 Hz)

Floats are written with repr so load(save(d)) reproduces values exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import features as ft

MODALITIES = ("video", "wifi", "accel")


class DatasetError(ValueError):
    """Raised for schema violations; messages carry row/column coordinates."""


@dataclass
class AccelTrace:
    times: np.ndarray
    accel: np.ndarray  # (3, M)


@dataclass
class GestureInstance:
    instance_id: str
    class_id: str | None  # None in the unlabeled domain
    user_id: int
    modality: str
    data: object  # list[KeypointFrame] | (P,200,3) ndarray | AccelTrace


@dataclass
class GestureDataset:
    modality: str
    instances: list[GestureInstance] = field(default_factory=list)

    def class_ids(self) -> set[str]:
        return {i.class_id for i in self.instances if i.class_id is not None}

    def by_class(self) -> dict[str, list[GestureInstance]]:
        out: dict[str, list[GestureInstance]] = {}
        for inst in self.instances:
            out.setdefault(inst.class_id, []).append(inst)
        return out


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_video_csv(path: FsPath, frames) -> None:
    header = ["frame"]
    for name in ft.KEYPOINT_NAMES:
        header += [f"{name}_x", f"{name}_y", f"{name}_conf"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, frame in enumerate(frames):
            row = [str(i)]
            for name in ft.KEYPOINT_NAMES:
                kp = frame.get(name)
                row += ["", "", ""] if kp is None else [_fmt(kp.x), _fmt(kp.y), _fmt(kp.conf)]
            writer.writerow(row)


def _read_video_csv(path: FsPath):
    frames = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        want = 1 + 3 * len(ft.KEYPOINT_NAMES)
        if header is None or len(header) != want:
            raise DatasetError(f"{path}: header has {len(header or [])} columns, expected {want}")
        for rownum, row in enumerate(reader, start=2):
            if len(row) != want:
                raise DatasetError(f"{path}: row {rownum} has {len(row)} columns, expected {want}")
            frame = ft.KeypointFrame()
            for j, name in enumerate(ft.KEYPOINT_NAMES):
                cells = row[1 + 3 * j : 4 + 3 * j]
                if all(c == "" for c in cells):
                    continue
                if any(c == "" for c in cells):
                    raise DatasetError(f"{path}: row {rownum}, keypoint {name}: partial cells")
                try:
                    frame.set(name, float(cells[0]), float(cells[1]), float(cells[2]))
                except ValueError as exc:
                    raise DatasetError(f"{path}: row {rownum}, keypoint {name}: {exc}") from None
            frames.append(frame)
    if not frames:
        raise DatasetError(f"{path}: no frames")
    return frames


def _write_wifi_csv(path: FsPath, obs: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "sample", "r", "alpha_z", "el", "angle_unit"])
        for p in range(obs.shape[0]):
            for t in range(obs.shape[1]):
                writer.writerow(
                    [str(p), str(t), _fmt(obs[p, t, 0]), _fmt(obs[p, t, 1]), _fmt(obs[p, t, 2]), "rad"]
                )


def _read_wifi_csv(path: FsPath) -> np.ndarray:
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["pair", "sample", "r", "alpha_z", "el", "angle_unit"]:
            raise DatasetError(f"{path}: unexpected wifi header {header}")
        for rownum, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise DatasetError(f"{path}: row {rownum} has {len(row)} columns, expected 6")
            try:
                p, t = int(row[0]), int(row[1])
                r, az, el = float(row[2]), float(row[3]), float(row[4])
            except ValueError as exc:
                raise DatasetError(f"{path}: row {rownum}: {exc}") from None
            unit = row[5]
            if unit == "deg":
                az, el = math.radians(az), math.radians(el)
            elif unit != "rad":
                raise DatasetError(f"{path}: row {rownum}, column angle_unit: unknown unit {unit!r}")
            rows[(p, t)] = (r, az, el)
    if not rows:
        raise DatasetError(f"{path}: no samples")
    n_pairs = max(p for p, _ in rows) + 1
    n_samples = max(t for _, t in rows) + 1
    if len(rows) != n_pairs * n_samples:
        raise DatasetError(
            f"{path}: expected {n_pairs}x{n_samples} grid, found {len(rows)} rows"
        )
    obs = np.empty((n_pairs, n_samples, 3))
    for (p, t), vals in rows.items():
        obs[p, t] = vals
    return obs


def _write_accel_csv(path: FsPath, trace: AccelTrace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "ax", "ay", "az"])
        for i in range(trace.accel.shape[1]):
            writer.writerow(
                [_fmt(trace.times[i])] + [_fmt(trace.accel[ch, i]) for ch in range(3)]
            )


def _read_accel_csv(path: FsPath) -> AccelTrace:
    times, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "ax", "ay", "az"]:
            raise DatasetError(f"{path}: unexpected accel header {header}")
        for rownum, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DatasetError(f"{path}: row {rownum} has {len(row)} columns, expected 4")
            try:
                times.append(float(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DatasetError(f"{path}: row {rownum}: {exc}") from None
    if len(times) < 4:
        raise DatasetError(f"{path}: need at least 4 accel samples")
    times = np.asarray(times)
    dt = np.diff(times)
    if not np.allclose(dt, 1.0 / ft.ACCEL_RATE_HZ, atol=1e-6):
        raise DatasetError(f"{path}: samples are not uniform at {ft.ACCEL_RATE_HZ} Hz")
    return AccelTrace(times, np.asarray(rows).T)


def save_dataset(dataset: GestureDataset, dirpath) -> None:
    """Write manifest.json plus one CSV per instance into `dirpath`."""
    root = FsPath(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"modality": dataset.modality, "instances": []}
    for inst in dataset.instances:
        fname = f"{inst.instance_id}.csv"
        manifest["instances"].append(
            {
                "instance_id": inst.instance_id,
                "class_id": inst.class_id,
                "user_id": inst.user_id,
                "file": fname,
            }
        )
        fpath = root / fname
        if dataset.modality == "video":
            _write_video_csv(fpath, inst.data)
        elif dataset.modality == "wifi":
            _write_wifi_csv(fpath, inst.data)
        elif dataset.modality == "accel":
            _write_accel_csv(fpath, inst.data)
        else:
            raise DatasetError(f"unknown modality {dataset.modality!r}")
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_dataset(dirpath, modality: str) -> GestureDataset:
    """Load a dataset directory; validates schemas and file references."""
    if modality not in MODALITIES:
        raise DatasetError(f"unknown modality {modality!r}")
    root = FsPath(dirpath)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DatasetError(f"{root}: no manifest.json")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("modality") != modality:
        raise DatasetError(
            f"{mpath}: manifest is for {manifest.get('modality')!r}, not {modality!r}"
        )
    readers = {"video": _read_video_csv, "wifi": _read_wifi_csv, "accel": _read_accel_csv}
    dataset = GestureDataset(modality)
    for entry in manifest["instances"]:
        fpath = root / entry["file"]
        if not fpath.exists():
            raise DatasetError(
                f"instance {entry['instance_id']}: missing file {entry['file']}"
            )
        dataset.instances.append(
            GestureInstance(
                instance_id=entry["instance_id"],
                class_id=entry["class_id"],
                user_id=int(entry["user_id"]),
                modality=modality,
                data=readers[modality](fpath),
            )
        )
    return dataset
