"""HTTP service backing the annotation frontend.

Reads are snapshots of the in-memory store; every mutation goes through
the store's single-writer lock and is flushed to the annotation and audit
files before the response, so a crash never loses a confirmed decision.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from pydantic import BaseModel
from PIL import Image

from . import NUM_CLASSES
from .config import PipelineConfig
from .net import ClassifierParams, load
from .samples import Sample, read_sample_store
from .store import (
    AlreadyDecidedError,
    AlreadyLabeledError,
    AnchorBudget,
    AnnotationStore,
    UnknownTrackError,
)
from .tracking import Track, read_tracks
from .training import SampleBank, predict_batch

_CHANNELS = {"height": 0, "range": 1, "intensity": 2}


@dataclass
class ServiceState:
    store: AnnotationStore
    samples: dict[int, Sample]
    annotations_path: str
    audit_path: str
    budget: AnchorBudget = field(default_factory=AnchorBudget)
    params: ClassifierParams | None = None
    frontend_dir: str | None = None
    _predictions: dict[int, np.ndarray] | None = None

    def persist(self) -> None:
        self.store.save(self.annotations_path, self.audit_path)

    def predictions(self) -> dict[int, np.ndarray]:
        """Classifier probabilities per sample, computed once."""
        if self.params is None:
            raise HTTPException(
                status_code=409,
                detail="no classifier parameters configured; train first")
        if self._predictions is None:
            bank = SampleBank(self.samples.values(), self.params.arch)
            ids = bank.ids()
            probs = predict_batch(self.params, bank, ids)
            self._predictions = {sid: probs[k] for k, sid in enumerate(ids)}
        return self._predictions


def build_state(cfg: PipelineConfig) -> ServiceState:
    tracks_path = cfg.path("tracks")
    if not os.path.exists(tracks_path):
        raise FileNotFoundError(f"track file not found: {tracks_path}")
    annotations = cfg.path("annotations")
    audit = cfg.path("audit")
    if os.path.exists(audit):
        store = AnnotationStore.load(read_tracks(tracks_path),
                                     annotations, audit)
    else:
        store = AnnotationStore(read_tracks(tracks_path))
    samples = {}
    if os.path.exists(cfg.path("samples_bin")):
        for s in read_sample_store(cfg.path("samples_bin"),
                                   cfg.path("samples_index")):
            samples[s.sample_id] = s
    params = None
    if os.path.exists(cfg.path("params")):
        params = load(cfg.path("params"))
    return ServiceState(store=store, samples=samples,
                        annotations_path=annotations, audit_path=audit,
                        budget=cfg.anchor_budget, params=params,
                        frontend_dir=cfg.frontend_dir)


class LabelBody(BaseModel):
    label: int


class TruncateBody(BaseModel):
    at_index: int


class ConfirmBody(BaseModel):
    label: int
    override: bool = False


def _track_view(state: ServiceState, track: Track) -> dict:
    thumb = None
    for m in track.members:
        if m.sample_id is not None and m.sample_id in state.samples:
            thumb = f"/api/samples/{m.sample_id}/render?channel=composite"
            break
    return {
        "track_id": track.track_id,
        "status": track.status,
        "label": track.label,
        "length": len(track.members),
        "truncated_at": track.truncated_at,
        "first_frame": track.members[0].frame_index if track.members else None,
        "thumbnail": thumb,
        "members": [
            {"frame_index": m.frame_index, "segment_id": m.segment_id,
             "sample_id": m.sample_id}
            for m in track.members
        ],
    }


def _check_label(label: int) -> None:
    if not 1 <= label <= NUM_CLASSES:
        raise HTTPException(status_code=422,
                            detail=f"label must be in 1..{NUM_CLASSES}")


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="lidarseg annotation service")

    @app.get("/api/tracks")
    def list_tracks(status: str | None = Query(default=None),
                    page: int = Query(default=0, ge=0),
                    page_size: int = Query(default=50, ge=1, le=500)) -> dict:
        if status is not None and status not in ("pending", "confirmed",
                                                 "discarded"):
            raise HTTPException(status_code=422,
                                detail=f"unknown status '{status}'")
        tracks = state.store.tracks_by_status(status)
        start = page * page_size
        return {
            "total": len(tracks),
            "page": page,
            "page_size": page_size,
            "tracks": [_track_view(state, t)
                       for t in tracks[start:start + page_size]],
        }

    @app.get("/api/tracks/{track_id}")
    def get_track(track_id: int) -> dict:
        try:
            return _track_view(state, state.store.track(track_id))
        except UnknownTrackError:
            raise HTTPException(status_code=404,
                                detail=f"no track {track_id}")

    @app.post("/api/tracks/{track_id}/label")
    def label_track(track_id: int, body: LabelBody) -> dict:
        _check_label(body.label)
        try:
            records = state.store.apply_track_label(track_id, body.label)
        except UnknownTrackError:
            raise HTTPException(status_code=404, detail=f"no track {track_id}")
        except AlreadyDecidedError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        state.persist()
        view = _track_view(state, state.store.track(track_id))
        view["created_annotations"] = len(records)
        return view

    @app.post("/api/tracks/{track_id}/truncate")
    def truncate_track(track_id: int, body: TruncateBody) -> dict:
        try:
            track = state.store.truncate_track(track_id, body.at_index)
        except UnknownTrackError:
            raise HTTPException(status_code=404, detail=f"no track {track_id}")
        except AlreadyDecidedError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        state.persist()
        return _track_view(state, track)

    @app.post("/api/tracks/{track_id}/discard")
    def discard_track(track_id: int) -> dict:
        try:
            track = state.store.discard_track(track_id)
        except UnknownTrackError:
            raise HTTPException(status_code=404, detail=f"no track {track_id}")
        except AlreadyDecidedError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        state.persist()
        return _track_view(state, track)

    @app.get("/api/samples/{sample_id}/render")
    def render_sample(sample_id: int,
                      channel: str = Query(default="composite")) -> Response:
        sample = state.samples.get(sample_id)
        if sample is None:
            raise HTTPException(status_code=404,
                                detail=f"no sample {sample_id}")
        if channel == "composite":
            rgb = np.stack([sample.channels[0], sample.channels[1],
                            sample.channels[2]], axis=-1)
            image = Image.fromarray(rgb, mode="RGB")
        elif channel in _CHANNELS:
            image = Image.fromarray(sample.channels[_CHANNELS[channel]],
                                    mode="L")
        else:
            raise HTTPException(
                status_code=422,
                detail="channel must be height|range|intensity|composite")
        buf = io.BytesIO()
        image.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/api/anchors/candidates")
    def anchor_candidates() -> dict:
        candidates = state.store.select_anchor_candidates(
            state.predictions(), state.budget)
        confirmed = {k: 0 for k in range(1, NUM_CLASSES + 1)}
        for _, rec in state.store.records.items():
            if rec.source == "anchor":
                confirmed[rec.label] += 1
        return {
            "budget": {"per_class": state.budget.per_class,
                       "unknown": state.budget.unknown},
            "confirmed": confirmed,
            "classes": {
                str(label): [
                    {"sample_id": c.sample_id, "label": c.label,
                     "confidence": c.confidence,
                     "render": f"/api/samples/{c.sample_id}/render"
                               f"?channel=composite"}
                    for c in pool
                ]
                for label, pool in candidates.items()
            },
        }

    @app.post("/api/anchors/{sample_id}/confirm")
    def confirm_anchor(sample_id: int, body: ConfirmBody) -> dict:
        _check_label(body.label)
        if sample_id not in state.samples:
            raise HTTPException(status_code=404,
                                detail=f"no sample {sample_id}")
        try:
            rec = state.store.confirm_anchor(sample_id, body.label,
                                             override=body.override)
        except AlreadyLabeledError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        state.persist()
        return {"sample_id": rec.sample_id, "label": rec.label,
                "source": rec.source, "timestamp": rec.timestamp}

    @app.post("/api/anchors/{sample_id}/reject")
    def reject_anchor(sample_id: int) -> dict:
        if sample_id not in state.samples:
            raise HTTPException(status_code=404,
                                detail=f"no sample {sample_id}")
        state.store.reject_anchor(sample_id)
        state.persist()
        return {"sample_id": sample_id, "rejected": True}

    @app.get("/api/progress")
    def progress() -> dict:
        by_status = {s: len(state.store.tracks_by_status(s))
                     for s in ("pending", "confirmed", "discarded")}
        return {
            "tracks": by_status,
            "annotations": len(state.store.records),
            "eligible_constraints": len(state.store.eligible_constraints()),
            "rejected_anchors": len(state.store.rejected_anchors),
        }

    if state.frontend_dir and os.path.isdir(state.frontend_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=state.frontend_dir, html=True),
                  name="frontend")

    return app
