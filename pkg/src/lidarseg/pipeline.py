"""Stage functions tying the modules into a file-based pipeline.

Each stage reads its predecessors' artifacts from the configured paths,
recomputes whatever cheap intermediates it needs (range images are
re-projected rather than serialized), and writes one artifact. All stages
are deterministic for a fixed config.
"""

from __future__ import annotations

import dataclasses
import json
import os
from collections import Counter, defaultdict

import numpy as np

from . import UNKNOWN_LABEL, class_label
from .config import PipelineConfig
from .net import ClassifierParams, load, save
from .rangeproj import RangeImage, project, write_pgm
from .samples import Sample, crop_cuboid, is_valid, rasterize, read_sample_store, \
    write_sample_store
from .scene import PointFrame, SceneTruth, generate_scene, read_frames, \
    read_truth, simulate_scene, write_frames, write_truth
from .segmentation import Segment, read_segments, region_grow, write_segments
from .store import AnnotationStore, read_annotations
from .tracking import associate, build_tracks, read_constraints, read_tracks, \
    write_constraints, write_tracks
from .training import SampleBank, TrainConfig, predict_batch, train, \
    write_loss_history


def filter_ground(frame: PointFrame, ground_z: float,
                  margin: float) -> PointFrame:
    """Drop points within margin of the flat ground plane."""
    keep = np.abs(frame.xyz[:, 2] - ground_z) > margin
    return PointFrame(frame.frame_index, frame.timestamp, frame.sensor_pose,
                      frame.xyz[keep], frame.intensity[keep],
                      frame.object_id[keep])


def project_frame(cfg: PipelineConfig,
                  frame: PointFrame) -> tuple[PointFrame, RangeImage, int]:
    """Optional ground filter, then projection. Returns the frame actually
    projected so point indices stay consistent with the image."""
    if cfg.pipeline.ground_filter:
        frame = filter_ground(frame, cfg.ground_z(), cfg.pipeline.ground_margin)
    image, dropped = project(frame, cfg.grid, cfg.ground_z())
    return frame, image, dropped


def run_synth(cfg: PipelineConfig) -> dict:
    truth = generate_scene(cfg.scene, cfg.sensor)
    frames = simulate_scene(truth, cfg.sensor)
    write_truth(cfg.path("truth"), truth)
    write_frames(cfg.path("frames"), frames)
    return {
        "frames": len(frames),
        "objects": len(truth.objects),
        "points": int(sum(len(f.xyz) for f in frames)),
        "truth_path": cfg.path("truth"),
        "frames_path": cfg.path("frames"),
    }


def run_project(cfg: PipelineConfig, frame_index: int,
                pgm_path: str | None) -> dict:
    frames = read_frames(cfg.path("frames"))
    matches = [f for f in frames if f.frame_index == frame_index]
    if not matches:
        raise ValueError(f"frame {frame_index} not in {cfg.path('frames')}")
    frame, image, dropped = project_frame(cfg, matches[0])
    if pgm_path:
        write_pgm(pgm_path, image)
    return {
        "frame_index": frame_index,
        "points": len(frame.xyz),
        "occupied": image.occupied_count(),
        "dropped": dropped,
        "collisions": len(frame.xyz) - dropped - image.occupied_count(),
        "pgm_path": pgm_path,
    }


def run_segment(cfg: PipelineConfig) -> dict:
    frames = read_frames(cfg.path("frames"))
    all_segments: list[Segment] = []
    for frame in frames:
        _, image, _ = project_frame(cfg, frame)
        all_segments.extend(region_grow(image, cfg.segmentation))
    write_segments(cfg.path("segments"), all_segments)
    return {
        "frames": len(frames),
        "segments": len(all_segments),
        "segments_path": cfg.path("segments"),
    }


def _segments_by_frame(segments: list[Segment]) -> dict[int, list[Segment]]:
    grouped: dict[int, list[Segment]] = defaultdict(list)
    for s in segments:
        grouped[s.frame_index].append(s)
    return grouped


def _segment_true_object(segment: Segment, frame: PointFrame) -> int:
    """Majority object id among member points; -1 when ground/none wins."""
    ids = frame.object_id[np.asarray(segment.point_indices, dtype=np.int64)]
    counts = Counter(int(i) for i in ids)
    top = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
    return top[0]


def run_samples(cfg: PipelineConfig, with_truth: bool) -> dict:
    frames = {f.frame_index: f for f in read_frames(cfg.path("frames"))}
    segments = read_segments(cfg.path("segments"))
    truth: SceneTruth | None = None
    object_class: dict[int, int] = {}
    if with_truth:
        truth = read_truth(cfg.path("truth"))
        object_class = {o.object_id: class_label(o.class_name)
                        for o in truth.objects}

    samples: list[Sample] = []
    truth_rows: list[dict] = []
    skipped = 0
    next_id = 0
    for frame_index in sorted(_segments_by_frame(segments)):
        frame = frames.get(frame_index)
        if frame is None:
            raise ValueError(f"segment references missing frame {frame_index}")
        projected, image, _ = project_frame(cfg, frame)
        for segment in sorted(_segments_by_frame(segments)[frame_index],
                              key=lambda s: s.segment_id):
            if not is_valid(segment, cfg.sample):
                skipped += 1
                continue
            crop = crop_cuboid(projected, segment, cfg.sample)
            sample = rasterize(crop, segment, image, cfg.sample)
            sample.sample_id = next_id
            next_id += 1
            samples.append(sample)
            if with_truth:
                obj = _segment_true_object(segment, projected)
                label = object_class.get(obj, UNKNOWN_LABEL)
                truth_rows.append({"sample_id": sample.sample_id,
                                   "label": label, "true_object_id": obj})
    write_sample_store(cfg.path("samples_bin"), cfg.path("samples_index"),
                       samples)
    if with_truth:
        with open(cfg.path("sample_truth"), "w", encoding="utf-8") as fh:
            for row in truth_rows:
                fh.write(json.dumps(row) + "\n")
    return {
        "samples": len(samples),
        "skipped_segments": skipped,
        "samples_bin": cfg.path("samples_bin"),
        "samples_index": cfg.path("samples_index"),
        "sample_truth": cfg.path("sample_truth") if with_truth else None,
    }


def _sample_id_map(cfg: PipelineConfig) -> dict[tuple[int, int], int]:
    with open(cfg.path("samples_index"), "r", encoding="utf-8") as fh:
        index = json.load(fh)
    return {(r["frame_index"], r["segment_id"]): r["sample_id"]
            for r in index["records"]}


def run_track(cfg: PipelineConfig) -> dict:
    frames = read_frames(cfg.path("frames"))
    by_frame = _segments_by_frame(read_segments(cfg.path("segments")))
    sample_ids = _sample_id_map(cfg)

    projected: dict[int, PointFrame] = {}
    for frame in frames:
        if cfg.pipeline.ground_filter:
            projected[frame.frame_index] = filter_ground(
                frame, cfg.ground_z(), cfg.pipeline.ground_margin)
        else:
            projected[frame.frame_index] = frame

    frame_list = sorted(projected)
    associations: dict[int, list[tuple[int, int]]] = {}
    for prev_idx, curr_idx in zip(frame_list, frame_list[1:]):
        associations[curr_idx] = associate(
            projected[prev_idx], by_frame.get(prev_idx, []),
            projected[curr_idx], by_frame.get(curr_idx, []), cfg.assoc)

    frame_segments = [(idx, [s.segment_id for s in by_frame.get(idx, [])])
                      for idx in frame_list]
    tracks = build_tracks(frame_segments, associations, sample_ids)
    write_tracks(cfg.path("tracks"), tracks)
    lengths = [len(t.members) for t in tracks]
    return {
        "tracks": len(tracks),
        "longest": max(lengths) if lengths else 0,
        "associations": sum(len(v) for v in associations.values()),
        "tracks_path": cfg.path("tracks"),
    }


def _read_sample_truth(cfg: PipelineConfig) -> dict[int, dict]:
    rows = {}
    with open(cfg.path("sample_truth"), "r", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            rows[row["sample_id"]] = row
    return rows


def auto_confirm_tracks(store: AnnotationStore,
                        sample_truth: dict[int, dict]) -> dict:
    """Decide every pending track from ground truth, deterministically.

    The label is the class of the most common true object among the
    track's member samples; tracks with no member samples are discarded.
    Timestamps are fixed at 0.0 so reruns are byte-identical.
    """
    confirmed = discarded = 0
    for track in store.tracks_by_status("pending"):
        member_objs = []
        for m in track.active_members():
            if m.sample_id is not None and m.sample_id in sample_truth:
                member_objs.append(sample_truth[m.sample_id])
        if not member_objs:
            store.discard_track(track.track_id, timestamp=0.0)
            discarded += 1
            continue
        counts = Counter(r["true_object_id"] for r in member_objs)
        top_obj = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]
        label = next(r["label"] for r in member_objs
                     if r["true_object_id"] == top_obj)
        store.apply_track_label(track.track_id, label, timestamp=0.0)
        confirmed += 1
    return {"confirmed": confirmed, "discarded": discarded}


def run_constraints(cfg: PipelineConfig, use_truth: bool) -> dict:
    # tracks.jsonl is immutable tracker output; decisions live in the
    # audit log and are replayed onto a fresh copy on every load.
    tracks = read_tracks(cfg.path("tracks"))
    decided = {}
    if use_truth:
        store = AnnotationStore(tracks)
        decided = auto_confirm_tracks(store, _read_sample_truth(cfg))
        store.save(cfg.path("annotations"), cfg.path("audit"))
    elif os.path.exists(cfg.path("audit")):
        store = AnnotationStore.load(tracks, cfg.path("annotations"),
                                     cfg.path("audit"))
    else:
        store = AnnotationStore(tracks)
    constraints = store.eligible_constraints()
    write_constraints(cfg.path("constraints"), constraints)
    return {
        "constraints": len(constraints),
        "constraints_path": cfg.path("constraints"),
        **decided,
    }


def _load_bank(cfg: PipelineConfig, arch=None) -> tuple[SampleBank, list[Sample]]:
    samples = read_sample_store(cfg.path("samples_bin"),
                                cfg.path("samples_index"))
    return SampleBank(samples, arch), samples


def run_train(cfg: PipelineConfig, mode: str | None,
              initial_path: str | None) -> dict:
    train_cfg = (dataclasses.replace(cfg.train, mode=mode) if mode
                 else cfg.train)
    initial: ClassifierParams | None = None
    if initial_path:
        initial = load(initial_path)
    bank, _ = _load_bank(cfg, initial.arch if initial else None)

    labeled = []
    try:
        labeled = [(r.sample_id, r.label)
                   for r in read_annotations(cfg.path("annotations"))]
    except FileNotFoundError:
        if train_cfg.mode != "unsupervised":
            raise
    try:
        constraints = read_constraints(cfg.path("constraints"))
    except FileNotFoundError:
        constraints = []

    params, history = train(bank, labeled, constraints, train_cfg,
                            initial_params=initial)
    save(cfg.path("params"), params)
    write_loss_history(cfg.path("loss_history"), history)
    return {
        "mode": train_cfg.mode,
        "steps": len(history),
        "labeled": len(labeled),
        "constraints": len(constraints),
        "final_total_loss": history[-1].total_loss if history else None,
        "params_path": cfg.path("params"),
        "loss_path": cfg.path("loss_history"),
    }


def run_eval(cfg: PipelineConfig, params_path: str | None) -> dict:
    from .evaluation import evaluate, report_to_dict, write_report, \
        write_report_csv

    params = load(params_path or cfg.path("params"))
    bank, _ = _load_bank(cfg, params.arch)
    truth_rows = _read_sample_truth(cfg)
    ids = sorted(truth_rows)
    missing = [sid for sid in ids if sid not in bank]
    if missing:
        raise ValueError(f"sample_truth references samples missing from the "
                         f"store: {missing[:5]}")
    probs = predict_batch(params, bank, ids)
    predicted = list(probs.argmax(axis=1) + 1)
    truth_labels = [truth_rows[sid]["label"] for sid in ids]
    report = evaluate(predicted, truth_labels)
    write_report(cfg.path("report"), report)
    write_report_csv(cfg.path("report_csv"), report)
    return {
        "samples": len(ids),
        "macro_f": report.macro_f,
        "macro_f_with_unknown": report.macro_f_with_unknown,
        "accuracy": report.accuracy,
        "report_path": cfg.path("report"),
        **{f"f_{c.name}": c.f_measure for c in report.per_class},
    }
