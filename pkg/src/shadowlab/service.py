"""Pairwise rating service for the user study.

Serves blinded image pairs per rater, records forced-choice votes in an
append-only CSV (flushed before the response), and exports the win
matrix.  All state derives from the study definition plus the vote log,
so restarting the process resumes every rater mid-study.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from itertools import combinations
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse, Response

from .ranking import PairwiseMatrix, VOTE_FIELDS, matrix_to_csv, read_votes_csv


class StudyError(ValueError):
    """Raised for malformed or incomplete study definitions."""


@dataclass(frozen=True)
class StudyPair:
    image: str
    method_a: str
    method_b: str

    @property
    def key(self) -> tuple:
        return (self.image, self.method_a, self.method_b)


@dataclass(frozen=True)
class StudyDefinition:
    """Methods with output directories, image ids, and the derived pairs.

    Every image id forms all unordered method pairs, mirroring the study
    protocol of picking two results of the same composite at a time.
    """

    name: str
    methods: tuple
    method_dirs: dict
    images: tuple
    composites: Path

    @property
    def pairs(self) -> list[StudyPair]:
        out = []
        for image in self.images:
            for a, b in combinations(self.methods, 2):
                out.append(StudyPair(image, a, b))
        return out

    def image_path(self, method: str, image: str) -> Path:
        return self.method_dirs[method] / f"{image}.png"

    def composite_path(self, image: str) -> Path:
        return self.composites / f"{image}.png"


def load_study(path) -> StudyDefinition:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise StudyError(f"study file not found: {path}")
    except json.JSONDecodeError as exc:
        raise StudyError(f"{path}: not valid JSON ({exc})")
    unknown = set(doc) - {"name", "methods", "images", "composites"}
    if unknown:
        raise StudyError(f"{path}: unknown study keys: {sorted(unknown)}")
    methods_doc = doc.get("methods", [])
    if len(methods_doc) < 2:
        raise StudyError("study needs at least two methods")
    names = []
    dirs = {}
    for entry in methods_doc:
        if set(entry) != {"name", "dir"}:
            raise StudyError(f"method entries need exactly name and dir, got {sorted(entry)}")
        if entry["name"] in dirs:
            raise StudyError(f"duplicate method name {entry['name']!r}")
        names.append(entry["name"])
        dirs[entry["name"]] = Path(entry["dir"])
    images = doc.get("images", [])
    if not images:
        raise StudyError("study needs at least one image id")
    if len(set(images)) != len(images):
        raise StudyError("duplicate image ids in study")
    if "composites" not in doc:
        raise StudyError("study needs a composites directory")
    study = StudyDefinition(
        name=doc.get("name", path.stem),
        methods=tuple(names),
        method_dirs=dirs,
        images=tuple(images),
        composites=Path(doc["composites"]),
    )
    missing = []
    for image in study.images:
        if not study.composite_path(image).is_file():
            missing.append(str(study.composite_path(image)))
        for m in study.methods:
            if not study.image_path(m, image).is_file():
                missing.append(str(study.image_path(m, image)))
    if missing:
        raise StudyError("missing study images: " + ", ".join(missing))
    return study


def _pair_id(study: str, rater: str, pair: StudyPair) -> str:
    raw = "|".join((study, rater, pair.image, pair.method_a, pair.method_b))
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def _rater_order(study: StudyDefinition, rater: str) -> list[StudyPair]:
    pairs = study.pairs
    digest = hashlib.sha256(f"{study.name}|order|{rater}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    order = list(range(len(pairs)))
    rng.shuffle(order)
    return [pairs[i] for i in order]


def _flipped(study: StudyDefinition, rater: str, pair: StudyPair) -> bool:
    digest = hashlib.sha256(
        f"{study.name}|side|{rater}|{'|'.join(pair.key)}".encode()).digest()
    return bool(digest[0] & 1)


class _State:
    def __init__(self, study: StudyDefinition, votes_path: Path):
        self.study = study
        self.votes_path = Path(votes_path)
        self.lock = threading.Lock()
        self.voted: set[tuple] = set()          # (rater, pair key)
        self.served: dict[str, tuple] = {}      # pair_id -> (rater, StudyPair)
        self.votes: list[dict] = []
        self.hashes: dict[str, Path] = {}
        for image in study.images:
            for p in [study.composite_path(image)] + [
                    study.image_path(m, image) for m in study.methods]:
                self.hashes[self._content_hash(p)] = p
        if self.votes_path.exists():
            for row in read_votes_csv(self.votes_path):
                pair = StudyPair(row["image"], row["methodA"], row["methodB"])
                self.voted.add((row["rater"], pair.key))
                self.served[_pair_id(study.name, row["rater"], pair)] = (row["rater"], pair)
                self.votes.append(row)
        else:
            self.votes_path.parent.mkdir(parents=True, exist_ok=True)
            with self.votes_path.open("w", newline="") as fh:
                csv.writer(fh).writerow(VOTE_FIELDS)

    @staticmethod
    def _content_hash(path: Path) -> str:
        return hashlib.sha256(path.read_bytes()).hexdigest()[:16]

    def url_for(self, path: Path) -> str:
        return f"/img/{self._content_hash(path)}.png"

    def append_vote(self, row: dict):
        with self.votes_path.open("a", newline="") as fh:
            csv.writer(fh).writerow([row[k] for k in VOTE_FIELDS])
            fh.flush()
            os.fsync(fh.fileno())
        self.votes.append(row)


def build_app(study_path, votes_path) -> FastAPI:
    study = load_study(study_path)
    state = _State(study, Path(votes_path))
    app = FastAPI(title=f"rating study: {study.name}")

    @app.get("/api/pair")
    def next_pair(rater: str):
        if not rater:
            return JSONResponse({"error": "rater id required"}, status_code=422)
        with state.lock:
            for pair in _rater_order(study, rater):
                if (rater, pair.key) in state.voted:
                    continue
                pid = _pair_id(study.name, rater, pair)
                state.served[pid] = (rater, pair)
                left, right = pair.method_a, pair.method_b
                if _flipped(study, rater, pair):
                    left, right = right, left
                return {
                    "pair_id": pid,
                    "image_a_url": state.url_for(study.image_path(left, pair.image)),
                    "image_b_url": state.url_for(study.image_path(right, pair.image)),
                    "composite_url": state.url_for(study.composite_path(pair.image)),
                }
        return Response(status_code=204)

    @app.post("/api/vote")
    def vote(body: dict):
        missing = {"pair_id", "choice", "rater"} - set(body)
        if missing:
            return JSONResponse({"error": f"missing fields: {sorted(missing)}"}, status_code=422)
        if body["choice"] not in ("a", "b"):
            return JSONResponse({"error": "choice must be 'a' or 'b'"}, status_code=422)
        with state.lock:
            entry = state.served.get(body["pair_id"])
            if entry is None or entry[0] != body["rater"]:
                return JSONResponse({"error": "unknown pair for this rater"}, status_code=404)
            rater, pair = entry
            if (rater, pair.key) in state.voted:
                return JSONResponse({"error": "pair already voted"}, status_code=409)
            chose_left = body["choice"] == "a"
            if _flipped(study, rater, pair):
                chose_left = not chose_left
            winner = "A" if chose_left else "B"
            row = {
                "rater": rater,
                "image": pair.image,
                "methodA": pair.method_a,
                "methodB": pair.method_b,
                "winner": winner,
                "ts": datetime.now(timezone.utc).isoformat(),
            }
            state.append_vote(row)
            state.voted.add((rater, pair.key))
        return {"ok": True}

    @app.get("/api/export")
    def export():
        with state.lock:
            if not state.votes:
                return Response(status_code=204)
            counts = np.zeros((len(study.methods), len(study.methods)), dtype=np.int64)
            index = {m: i for i, m in enumerate(study.methods)}
            for row in state.votes:
                a, b = index[row["methodA"]], index[row["methodB"]]
                if row["winner"] == "A":
                    counts[a, b] += 1
                else:
                    counts[b, a] += 1
            matrix = PairwiseMatrix(study.methods, counts)
        return PlainTextResponse(matrix_to_csv(matrix), media_type="text/csv")

    @app.get("/img/{name}")
    def image(name: str):
        if not name.endswith(".png"):
            return JSONResponse({"error": "not found"}, status_code=404)
        path = state.hashes.get(name[:-4])
        if path is None:
            return JSONResponse({"error": "not found"}, status_code=404)
        return FileResponse(path, media_type="image/png")

    app.state.study = study
    app.state.votes_path = state.votes_path
    return app
