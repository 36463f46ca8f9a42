"""Annotation store: operator decisions over tracks and anchor samples.

The store is the single writer for annotation state. Every mutation
appends an event to an audit log with a monotone sequence number; the
record set is the materialized last-write-wins view per sample. Track
decisions fan out to sample records; anchor confirmations label single
samples picked from ranked candidate lists under a per-class budget.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import NUM_CLASSES, UNKNOWN_LABEL
from .tracking import Constraint, Track, TrackStateError, constraints_from_track


class UnknownTrackError(KeyError):
    pass


class UnknownSampleError(KeyError):
    pass


class AlreadyDecidedError(RuntimeError):
    """The track already carries a terminal decision."""


class AlreadyLabeledError(RuntimeError):
    """The sample already has a record and override was not requested."""


@dataclass
class AnnotationRecord:
    sample_id: int
    label: int
    source: str  # "track_label" | "anchor"
    timestamp: float


@dataclass
class AnchorBudget:
    per_class: int = 20   # proposals per named class
    unknown: int = 100    # proposals for the catch-all class

    def limit_for(self, label: int) -> int:
        return self.unknown if label == UNKNOWN_LABEL else self.per_class


@dataclass
class AnchorCandidate:
    sample_id: int
    label: int        # predicted class the proposal is filed under
    confidence: float  # predicted probability of that class


class AnnotationStore:
    """Holds tracks plus the annotation records derived from decisions."""

    def __init__(self, tracks: list[Track] | None = None):
        self._tracks: dict[int, Track] = {}
        for t in tracks or []:
            if t.track_id in self._tracks:
                raise ValueError(f"duplicate track id {t.track_id}")
            self._tracks[t.track_id] = t
        self.records: dict[int, AnnotationRecord] = {}
        self.audit: list[dict] = []
        self.rejected_anchors: set[int] = set()
        self._lock = threading.Lock()

    # -- queries ------------------------------------------------------------

    def track(self, track_id: int) -> Track:
        t = self._tracks.get(track_id)
        if t is None:
            raise UnknownTrackError(f"no track {track_id}")
        return t

    def tracks_by_status(self, status: str | None = None) -> list[Track]:
        out = sorted(self._tracks.values(), key=lambda t: t.track_id)
        if status is None:
            return out
        return [t for t in out if t.status == status]

    def labeled_samples(self) -> list[tuple[int, int]]:
        """(sample_id, label) for every current record, id-sorted."""
        return [(sid, rec.label) for sid, rec in sorted(self.records.items())]

    def eligible_constraints(self) -> list[Constraint]:
        """Must-link pairs from every confirmed, non-unknown track."""
        out: list[Constraint] = []
        for t in self.tracks_by_status():
            if t.status == "confirmed" and t.label is not None \
                    and t.label != UNKNOWN_LABEL:
                out.extend(constraints_from_track(t))
        return out

    # -- mutations ----------------------------------------------------------

    def _append_audit(self, event: str, payload: dict) -> None:
        self.audit.append({"seq": len(self.audit), "event": event, **payload})

    def apply_track_label(self, track_id: int, label: int,
                          timestamp: float | None = None) -> list[AnnotationRecord]:
        """Confirm a pending track; every surviving member sample gets a record."""
        if not 1 <= label <= NUM_CLASSES:
            raise ValueError(f"label must be in 1..{NUM_CLASSES}, got {label}")
        with self._lock:
            t = self.track(track_id)
            if t.status != "pending":
                raise AlreadyDecidedError(f"track {track_id} is {t.status}")
            ts = time.time() if timestamp is None else timestamp
            t.status = "confirmed"
            t.label = label
            created = []
            for member in t.active_members():
                if member.sample_id is None:
                    continue
                rec = AnnotationRecord(member.sample_id, label, "track_label", ts)
                self.records[member.sample_id] = rec
                created.append(rec)
            self._append_audit("track_label", {
                "track_id": track_id, "label": label, "timestamp": ts,
                "sample_ids": [r.sample_id for r in created]})
            return created

    def truncate_track(self, track_id: int, at_index: int,
                       timestamp: float | None = None) -> Track:
        """Cut members at/after at_index; truncating at 0 discards the track."""
        with self._lock:
            t = self.track(track_id)
            if t.status != "pending":
                raise AlreadyDecidedError(f"track {track_id} is {t.status}")
            if not 0 <= at_index <= len(t.members):
                raise ValueError(
                    f"truncate index {at_index} outside 0..{len(t.members)}")
            ts = time.time() if timestamp is None else timestamp
            if at_index == 0:
                t.status = "discarded"
                t.truncated_at = 0
                self._append_audit("discard", {"track_id": track_id,
                                               "timestamp": ts, "via": "truncate"})
            else:
                t.truncated_at = at_index
                self._append_audit("truncate", {"track_id": track_id,
                                                "at_index": at_index,
                                                "timestamp": ts})
            return t

    def discard_track(self, track_id: int,
                      timestamp: float | None = None) -> Track:
        with self._lock:
            t = self.track(track_id)
            if t.status != "pending":
                raise AlreadyDecidedError(f"track {track_id} is {t.status}")
            ts = time.time() if timestamp is None else timestamp
            t.status = "discarded"
            self._append_audit("discard", {"track_id": track_id, "timestamp": ts})
            return t

    def select_anchor_candidates(self, predictions: dict[int, np.ndarray],
                                 budget: AnchorBudget) -> dict[int, list[AnchorCandidate]]:
        """Rank unlabeled samples by predicted-class confidence, per class.

        predictions: sample_id -> probability vector. A sample is proposed
        only under its argmax class; already-labeled and rejected samples
        are skipped. Classes with few confident samples simply yield
        shorter lists.
        """
        pools: dict[int, list[AnchorCandidate]] = {k: [] for k in
                                                   range(1, NUM_CLASSES + 1)}
        for sample_id in sorted(predictions):
            if sample_id in self.records or sample_id in self.rejected_anchors:
                continue
            probs = np.asarray(predictions[sample_id], dtype=float)
            label = int(np.argmax(probs)) + 1
            pools[label].append(AnchorCandidate(sample_id, label,
                                                float(probs[label - 1])))
        out: dict[int, list[AnchorCandidate]] = {}
        for label, pool in pools.items():
            pool.sort(key=lambda c: (-c.confidence, c.sample_id))
            out[label] = pool[: budget.limit_for(label)]
        return out

    def confirm_anchor(self, sample_id: int, label: int, override: bool = False,
                       timestamp: float | None = None) -> AnnotationRecord:
        """Label one sample. Track-labeled samples need override=True."""
        if not 1 <= label <= NUM_CLASSES:
            raise ValueError(f"label must be in 1..{NUM_CLASSES}, got {label}")
        with self._lock:
            if sample_id in self.records and not override:
                raise AlreadyLabeledError(f"sample {sample_id} already labeled")
            ts = time.time() if timestamp is None else timestamp
            rec = AnnotationRecord(sample_id, label, "anchor", ts)
            self.records[sample_id] = rec
            self._append_audit("anchor_confirm", {
                "sample_id": sample_id, "label": label, "timestamp": ts,
                "override": override})
            return rec

    def reject_anchor(self, sample_id: int,
                      timestamp: float | None = None) -> None:
        """Drop a proposal; the sample will not be proposed again."""
        with self._lock:
            ts = time.time() if timestamp is None else timestamp
            self.rejected_anchors.add(sample_id)
            self._append_audit("anchor_reject", {"sample_id": sample_id,
                                                 "timestamp": ts})

    # -- persistence ----------------------------------------------------------

    def save(self, annotations_path: str, audit_path: str) -> None:
        with self._lock:
            with open(annotations_path, "w", encoding="utf-8") as fh:
                for sid in sorted(self.records):
                    rec = self.records[sid]
                    fh.write(json.dumps({
                        "sample_id": rec.sample_id, "label": rec.label,
                        "source": rec.source, "timestamp": rec.timestamp}) + "\n")
            with open(audit_path, "w", encoding="utf-8") as fh:
                for event in self.audit:
                    fh.write(json.dumps(event) + "\n")

    @staticmethod
    def load(tracks: list[Track], annotations_path: str,
             audit_path: str) -> "AnnotationStore":
        """Rebuild a store by replaying the audit log over pristine tracks."""
        store = AnnotationStore(tracks)
        with open(audit_path, "r", encoding="utf-8") as fh:
            events = [json.loads(line) for line in fh if line.strip()]
        for expect, event in enumerate(events):
            if event["seq"] != expect:
                raise ValueError(f"audit log gap at seq {event['seq']}")
            kind = event["event"]
            ts = event.get("timestamp")
            if kind == "track_label":
                store.apply_track_label(event["track_id"], event["label"], ts)
            elif kind == "truncate":
                store.truncate_track(event["track_id"], event["at_index"], ts)
            elif kind == "discard":
                track = store._tracks.get(event["track_id"])
                if event.get("via") == "truncate":
                    store.truncate_track(event["track_id"], 0, ts)
                else:
                    store.discard_track(event["track_id"], ts)
            elif kind == "anchor_confirm":
                store.confirm_anchor(event["sample_id"], event["label"],
                                     event.get("override", False), ts)
            elif kind == "anchor_reject":
                store.reject_anchor(event["sample_id"], ts)
            else:
                raise ValueError(f"unknown audit event '{kind}'")
        # The annotations file is a materialized view; verify it agrees.
        with open(annotations_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                rec = store.records.get(d["sample_id"])
                if rec is None or rec.label != d["label"]:
                    raise ValueError(
                        f"annotations file disagrees with audit replay for "
                        f"sample {d['sample_id']}")
        return store


def read_annotations(path: str) -> list[AnnotationRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                d = json.loads(line)
                out.append(AnnotationRecord(int(d["sample_id"]), int(d["label"]),
                                            d["source"], float(d["timestamp"])))
    return out
