"""HNTT study service: the human-judgment side of the Turing-test lab.

Builds A/B trial sets from a trajectory corpus (goal-matched pairs, sides
randomized), walks each participant through them in a per-session random
order behind a consent gate, collects judgments into an append-only record
store, and exports ground truth for evalkit.

The HTTP surface (see create_app):

    POST /studies                      create a study from a config
    POST /studies/{sid}/sessions       start a participant session
    GET  /sessions/{tok}/trials/{k}    k-th trial in this session's order
    GET  /replays/{vid}                trajectory + map JSON for animation
    GET  /replays/{vid}/frames/{t}     first-person PNG frame at tick t
    POST /sessions/{tok}/judgments     submit one A/B judgment
    GET  /studies/{sid}/export         ground truth, sources revealed

Replays are delivered as trajectory JSON and animated client-side; the
frame endpoint exists as a rendering-parity fallback, not a video store.
Client-facing payloads never carry source identities, generator ids, or
trajectory ids; the export endpoint is the single place sources appear.
"""

import hashlib
import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Tuple

import numpy as np

from .corpus import read_corpus
from .evalkit import aggregate_judgments
from .images import png_bytes
from .navsim import default_map, load_map, map_to_text, render_frame
from .policies import SOURCES

QUESTION = "Which video is more likely to be human?"
LIKERT_LEVELS = 5
LIKERT_LABELS = {
    1: "extremely certain",
    2: "somewhat certain",
    3: "neutral",
    4: "somewhat uncertain",
    5: "extremely uncertain",
}

# Table 2 condition blocks: (source pair, trial count)
STUDY_1_BLOCKS = [(("human", "hybrid_agent"), 6),
                  (("symbolic_agent", "hybrid_agent"), 4)]
STUDY_2_BLOCKS = [(("human", "symbolic_agent"), 6),
                  (("symbolic_agent", "hybrid_agent"), 4)]


class ServiceError(Exception):
    status = 400


class ValidationError(ServiceError):
    status = 400


class NotFoundError(ServiceError):
    status = 404


class ConflictError(ServiceError):
    status = 409


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def condition_for(pair) -> str:
    return "human-agent" if "human" in pair else "hybrid-symbolic"


@dataclass
class StudyConfig:
    blocks: List[Tuple[Tuple[str, str], int]]
    study_id: Optional[str] = None
    likert_levels: int = LIKERT_LEVELS

    @classmethod
    def study_1(cls, study_id=None):
        return cls(blocks=list(STUDY_1_BLOCKS), study_id=study_id)

    @classmethod
    def study_2(cls, study_id=None):
        return cls(blocks=list(STUDY_2_BLOCKS), study_id=study_id)

    def validate(self):
        if not self.blocks:
            raise ValidationError("config has no condition blocks")
        for pair, count in self.blocks:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise ValidationError(f"invalid source pair {pair!r}")
            for src in pair:
                if src not in SOURCES:
                    raise ValidationError(f"unknown source {src!r}")
            if count <= 0:
                raise ValidationError(f"non-positive trial count {count}")
        if self.likert_levels < 2:
            raise ValidationError("likert scale needs at least 2 levels")
        return self

    def to_json(self) -> dict:
        return {"blocks": [[list(pair), count] for pair, count in self.blocks],
                "study_id": self.study_id,
                "likert_levels": self.likert_levels}

    @classmethod
    def from_json(cls, blob: dict):
        return cls(blocks=[(tuple(pair), int(count))
                           for pair, count in blob["blocks"]],
                   study_id=blob.get("study_id"),
                   likert_levels=int(blob.get("likert_levels", LIKERT_LEVELS)))


@dataclass
class Trial:
    trial_id: str
    video_a: str
    video_b: str
    goal_index: int
    source_a: str              # hidden from clients until export
    source_b: str
    condition: str

    def client_view(self) -> dict:
        return {"trial_id": self.trial_id,
                "video_a": self.video_a,
                "video_b": self.video_b}

    def truth_row(self) -> dict:
        return {"trial_id": self.trial_id,
                "video_a": self.video_a, "video_b": self.video_b,
                "source_a": self.source_a, "source_b": self.source_b,
                "condition": self.condition}

    def to_json(self) -> dict:
        blob = self.truth_row()
        blob["goal_index"] = self.goal_index
        return blob

    @classmethod
    def from_json(cls, blob: dict):
        return cls(trial_id=blob["trial_id"], video_a=blob["video_a"],
                   video_b=blob["video_b"], goal_index=int(blob["goal_index"]),
                   source_a=blob["source_a"], source_b=blob["source_b"],
                   condition=blob["condition"])


@dataclass
class Study:
    study_id: str
    config: StudyConfig
    seed: int
    trials: List[Trial]
    videos: Dict[str, str]     # opaque video id -> trajectory id, server-only
    created_at: str

    def definition(self) -> dict:
        """The deterministic part, used to detect conflicting re-creates."""
        return {"config": self.config.to_json(), "seed": self.seed,
                "trials": [t.to_json() for t in self.trials],
                "videos": self.videos}

    def to_json(self) -> dict:
        blob = self.definition()
        blob.update({"study_id": self.study_id, "created_at": self.created_at})
        return blob

    @classmethod
    def from_json(cls, blob: dict):
        return cls(study_id=blob["study_id"],
                   config=StudyConfig.from_json(blob["config"]),
                   seed=int(blob["seed"]),
                   trials=[Trial.from_json(t) for t in blob["trials"]],
                   videos=dict(blob["videos"]),
                   created_at=blob["created_at"])


@dataclass
class Session:
    session_id: str            # opaque token, the only participant identity
    study_id: str
    order: List[int]           # permutation over the study's trial indices
    consent_at: str
    familiarity: dict = field(default_factory=dict)
    created_at: str = ""

    def to_json(self) -> dict:
        return {"session_id": self.session_id, "study_id": self.study_id,
                "order": list(self.order), "consent_at": self.consent_at,
                "familiarity": self.familiarity, "created_at": self.created_at}

    @classmethod
    def from_json(cls, blob: dict):
        return cls(session_id=blob["session_id"], study_id=blob["study_id"],
                   order=[int(i) for i in blob["order"]],
                   consent_at=blob["consent_at"],
                   familiarity=blob.get("familiarity", {}),
                   created_at=blob.get("created_at", ""))


@dataclass
class JudgmentRecord:
    session_id: str
    trial_id: str
    choice: str                # "A" | "B"
    uncertainty: int           # 1..likert_levels
    rationale: str
    submitted_at: str

    def payload(self) -> tuple:
        """The participant-supplied part; duplicates must match on this."""
        return (self.choice, self.uncertainty, self.rationale)

    def truth_row(self) -> dict:
        return {"trial_id": self.trial_id, "choice": self.choice,
                "uncertainty": self.uncertainty}

    def to_json(self) -> dict:
        return {"session_id": self.session_id, "trial_id": self.trial_id,
                "choice": self.choice, "uncertainty": self.uncertainty,
                "rationale": self.rationale, "submitted_at": self.submitted_at}

    @classmethod
    def from_json(cls, blob: dict):
        return cls(session_id=blob["session_id"], trial_id=blob["trial_id"],
                   choice=blob["choice"], uncertainty=int(blob["uncertainty"]),
                   rationale=blob.get("rationale", ""),
                   submitted_at=blob["submitted_at"])


def _default_study_id(config: StudyConfig, seed: int) -> str:
    digest = hashlib.sha256(
        json.dumps([config.to_json(), seed], sort_keys=True).encode())
    return f"study-{digest.hexdigest()[:8]}"


class StudyService:
    """Study state over a read-only corpus plus an append-only record store.

    All mutations are serialized through one lock and written to JSON Lines
    files under data_dir before touching memory, so a restart rebuilds the
    exact state by replaying the files. Reads are lock-free; study
    definitions are immutable once created.
    """

    def __init__(self, corpus_root: str, data_dir: str, spec=None):
        self.manifest, self.trajectories = read_corpus(corpus_root)
        if spec is None:
            map_path = os.path.join(corpus_root, "map.txt")
            spec = load_map(map_path) if os.path.exists(map_path) \
                else default_map()
        self.spec = spec
        self._map_text = map_to_text(spec)
        self.data_dir = data_dir
        self.studies: Dict[str, Study] = {}
        self.sessions: Dict[str, Session] = {}
        self.judgments: Dict[tuple, JudgmentRecord] = {}
        self.videos: Dict[str, str] = {}
        self._lock = threading.Lock()
        os.makedirs(data_dir, exist_ok=True)
        self._replay_log()

    # -- persistence --------------------------------------------------------

    def _path(self, name: str) -> str:
        return os.path.join(self.data_dir, f"{name}.jsonl")

    def _append(self, name: str, row: dict):
        with open(self._path(name), "a") as fp:
            fp.write(json.dumps(row, sort_keys=True) + "\n")
            fp.flush()
            os.fsync(fp.fileno())

    def _rows(self, name: str):
        path = self._path(name)
        if not os.path.exists(path):
            return
        with open(path) as fp:
            for line in fp:
                if line.strip():
                    yield json.loads(line)

    def _replay_log(self):
        for row in self._rows("studies"):
            study = Study.from_json(row)
            self.studies[study.study_id] = study
            self.videos.update(study.videos)
        for row in self._rows("sessions"):
            session = Session.from_json(row)
            self.sessions[session.session_id] = session
        for row in self._rows("judgments"):
            record = JudgmentRecord.from_json(row)
            self.judgments[(record.session_id, record.trial_id)] = record

    # -- operations ----------------------------------------------------------

    def create_study(self, config: StudyConfig, seed: int = 0):
        """Sample goal-matched trial pairs; returns (study, created).

        Videos are drawn uniformly without replacement from the test split,
        so no trajectory appears twice in one study. Re-creating an existing
        study id with the identical definition is a no-op; a differing
        definition is a conflict.
        """
        config.validate()
        study_id = config.study_id or _default_study_id(config, seed)
        with self._lock:
            if study_id in self.studies:
                existing = self.studies[study_id]
                candidate = self._build_study(study_id, config, seed)
                if existing.definition() == candidate.definition():
                    return existing, False
                raise ConflictError(
                    f"study {study_id!r} exists with a different definition")
            study = self._build_study(study_id, config, seed)
            self._append("studies", study.to_json())
            self.studies[study_id] = study
            self.videos.update(study.videos)
            return study, True

    def _build_study(self, study_id: str, config: StudyConfig,
                     seed: int) -> Study:
        rng = np.random.default_rng([int(seed), 0x484e5454])
        used = set()
        picked_raw = []
        for pair, count in config.blocks:
            src_a, src_b = pair
            candidates = []
            for goal in sorted(self.manifest.goal_matched):
                row = self.manifest.goal_matched[goal]
                for ta in sorted(row.get(src_a, [])):
                    for tb in sorted(row.get(src_b, [])):
                        candidates.append((goal, ta, tb))
            order = rng.permutation(len(candidates))
            picked = 0
            for idx in order:
                if picked == count:
                    break
                goal, ta, tb = candidates[int(idx)]
                if ta in used or tb in used:
                    continue
                used.update((ta, tb))
                picked_raw.append((goal, ta, tb, pair))
                picked += 1
            if picked < count:
                raise ValidationError(
                    f"insufficient goal-matched test pairs for {src_a} vs "
                    f"{src_b}: needed {count}, found {picked}")
        # opaque ids assigned in shuffled order so numbering leaks nothing
        chosen = sorted(used)
        perm = rng.permutation(len(chosen))
        videos = {f"{study_id}-v{i:03d}": chosen[int(p)]
                  for i, p in enumerate(perm)}
        vid_of = {tid: vid for vid, tid in videos.items()}
        trials = []
        for k, (goal, ta, tb, pair) in enumerate(picked_raw):
            sides = [(ta, pair[0]), (tb, pair[1])]
            if rng.integers(0, 2):
                sides.reverse()
            (a, src_a), (b, src_b) = sides
            trials.append(Trial(
                trial_id=f"{study_id}-t{k:02d}",
                video_a=vid_of[a], video_b=vid_of[b], goal_index=goal,
                source_a=src_a, source_b=src_b,
                condition=condition_for(pair)))
        return Study(study_id=study_id, config=config, seed=int(seed),
                     trials=trials, videos=videos, created_at=_now())

    def start_session(self, study_id: str, consent: bool = False,
                      familiarity: Optional[dict] = None) -> Session:
        """Issue an opaque participant token with a fresh trial permutation.

        Consent must be acknowledged up front; without it no token exists,
        so every trial and judgment endpoint refuses the participant.
        """
        study = self._study(study_id)
        if not consent:
            raise ValidationError("consent must be acknowledged to start")
        with self._lock:
            session_id = uuid.uuid4().hex[:12]
            while session_id in self.sessions:
                session_id = uuid.uuid4().hex[:12]
            order = np.random.default_rng().permutation(len(study.trials))
            session = Session(session_id=session_id, study_id=study_id,
                              order=[int(i) for i in order], consent_at=_now(),
                              familiarity=dict(familiarity or {}),
                              created_at=_now())
            self._append("sessions", session.to_json())
            self.sessions[session_id] = session
            return session

    def submit_judgment(self, session_id: str, trial_id: str, choice: str,
                        uncertainty: int, rationale: str = ""):
        """Record one A/B judgment; returns (record, created).

        Exact duplicates are idempotent; a differing answer for an already
        judged trial is a conflict. Records hit the append-only store
        before memory, so acknowledged judgments survive restarts.
        """
        session = self._session(session_id)
        study = self.studies[session.study_id]
        if not any(t.trial_id == trial_id for t in study.trials):
            raise NotFoundError(f"unknown trial {trial_id!r} for this session")
        if choice not in ("A", "B"):
            raise ValidationError(f"choice must be 'A' or 'B', got {choice!r}")
        levels = study.config.likert_levels
        if not isinstance(uncertainty, int) or not 1 <= uncertainty <= levels:
            raise ValidationError(
                f"uncertainty must be an integer in 1..{levels}")
        record = JudgmentRecord(session_id=session_id, trial_id=trial_id,
                                choice=choice, uncertainty=uncertainty,
                                rationale=str(rationale or ""),
                                submitted_at=_now())
        with self._lock:
            key = (session_id, trial_id)
            existing = self.judgments.get(key)
            if existing is not None:
                if existing.payload() == record.payload():
                    return existing, False
                raise ConflictError(
                    f"trial {trial_id!r} already judged with a different "
                    f"answer")
            self._append("judgments", record.to_json())
            self.judgments[key] = record
            return record, True

    def export_ground_truth(self, study_id: str) -> dict:
        """Reveal sources and aggregate judgments into ground truth."""
        study = self._study(study_id)
        records = [r for r in self.judgments.values()
                   if self.sessions[r.session_id].study_id == study_id]
        if not records:
            raise ConflictError(f"no judgments recorded for {study_id!r}")
        truth = aggregate_judgments([t.truth_row() for t in study.trials],
                                    [r.truth_row() for r in records])
        trial_by_id = {t.trial_id: t for t in study.trials}
        participants = []
        for session_id in sorted({r.session_id for r in records}):
            rows = [r for r in records if r.session_id == session_id]
            correct = scored = 0
            for r in rows:
                trial = trial_by_id[r.trial_id]
                if trial.condition != "human-agent":
                    continue
                human_side = "A" if trial.source_a == "human" else "B"
                correct += int(r.choice == human_side)
                scored += 1
            participants.append({
                "session_id": session_id,
                "n_judged": len(rows),
                "human_agent_accuracy": correct / scored if scored else None,
                "mean_uncertainty": float(np.mean(
                    [r.uncertainty for r in rows])),
            })
        return {
            "study_id": study_id,
            "exported_at": _now(),
            "n_sessions": len(participants),
            "trials": [vars(t).copy() for t in truth.trials],
            "participants": participants,
            "judgments": [r.to_json() for r in records],
        }

    # -- participant-facing reads -------------------------------------------

    def session_view(self, session: Session) -> dict:
        study = self.studies[session.study_id]
        return {
            "session_id": session.session_id,
            "study_id": session.study_id,
            "n_trials": len(study.trials),
            "question": QUESTION,
            "likert_levels": study.config.likert_levels,
            "likert_labels": LIKERT_LABELS
            if study.config.likert_levels == LIKERT_LEVELS else {},
        }

    def trial_view(self, session_id: str, k: int) -> dict:
        session = self._session(session_id)
        study = self.studies[session.study_id]
        if not 0 <= k < len(study.trials):
            raise NotFoundError(
                f"trial index {k} out of range 0..{len(study.trials) - 1}")
        trial = study.trials[session.order[k]]
        answered = {tid for (sid, tid) in self.judgments
                    if sid == session_id}
        view = trial.client_view()
        view.update({
            "index": k,
            "n_trials": len(study.trials),
            "question": QUESTION,
            "likert_levels": study.config.likert_levels,
            "answered": trial.trial_id in answered,
            "progress": {"judged": len(answered),
                         "total": len(study.trials)},
        })
        return view

    def replay_view(self, video_id: str) -> dict:
        traj = self._video(video_id)
        self._append("replays", {"video_id": video_id, "kind": "trajectory",
                                 "at": _now()})
        pose = traj.spawn_pose
        return {
            "video_id": video_id,
            "n_steps": len(traj.steps),
            "outcome": traj.outcome,
            "goal_xy": [float(traj.goal_xy[0]), float(traj.goal_xy[1])],
            "goal_radius": float(self.spec.goal_radius),
            "spawn": {"x": float(pose.position[0]),
                      "y": float(pose.position[1]),
                      "z": float(pose.position[2]),
                      "heading": float(pose.heading)},
            "steps": [{"t": s.t,
                       "x": float(s.pose.position[0]),
                       "y": float(s.pose.position[1]),
                       "z": float(s.pose.position[2]),
                       "heading": float(s.pose.heading),
                       "action": int(s.action)} for s in traj.steps],
            "map_text": self._map_text,
        }

    def frame_png(self, video_id: str, t: int) -> bytes:
        """First-person frame at tick t; t=0 is the spawn pose."""
        traj = self._video(video_id)
        if not 0 <= t <= len(traj.steps):
            raise NotFoundError(
                f"tick {t} out of range 0..{len(traj.steps)}")
        pose = traj.spawn_pose if t == 0 else traj.steps[t - 1].pose
        self._append("replays", {"video_id": video_id, "kind": "frame",
                                 "t": int(t), "at": _now()})
        return png_bytes(render_frame(self.spec, pose, goal_xy=traj.goal_xy))

    # -- lookups -------------------------------------------------------------

    def _study(self, study_id: str) -> Study:
        try:
            return self.studies[study_id]
        except KeyError:
            raise NotFoundError(f"unknown study {study_id!r}") from None

    def _session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise NotFoundError(f"unknown session {session_id!r}") from None

    def _video(self, video_id: str):
        try:
            return self.trajectories[self.videos[video_id]]
        except KeyError:
            raise NotFoundError(f"unknown video {video_id!r}") from None


# ---------------------------------------------------------------------------
# HTTP layer


def create_app(service: StudyService):
    from fastapi import FastAPI
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse, Response
    from pydantic import BaseModel

    class StudyRequest(BaseModel):
        study: Optional[int] = None          # 1 or 2: Table 2 presets
        blocks: Optional[List[Tuple[Tuple[str, str], int]]] = None
        study_id: Optional[str] = None
        likert_levels: int = LIKERT_LEVELS
        seed: int = 0

    class SessionRequest(BaseModel):
        consent: bool = False
        familiarity: dict = {}

    class JudgmentRequest(BaseModel):
        trial_id: str
        choice: str
        uncertainty: int
        rationale: str = ""

    app = FastAPI(title="navtt HNTT service")
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def _service_error(request, exc):
        return JSONResponse(status_code=exc.status,
                            content={"detail": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request, exc):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.post("/studies")
    def create_study(req: StudyRequest):
        if req.blocks is not None:
            config = StudyConfig(blocks=[(tuple(p), c) for p, c in req.blocks],
                                 study_id=req.study_id,
                                 likert_levels=req.likert_levels)
        elif req.study == 1:
            config = StudyConfig.study_1(req.study_id)
        elif req.study == 2:
            config = StudyConfig.study_2(req.study_id)
        else:
            raise ValidationError("request needs study=1|2 or explicit blocks")
        study, created = service.create_study(config, seed=req.seed)
        return {"study_id": study.study_id, "n_trials": len(study.trials),
                "created": created}

    @app.post("/studies/{study_id}/sessions")
    def start_session(study_id: str, req: SessionRequest):
        session = service.start_session(study_id, consent=req.consent,
                                        familiarity=req.familiarity)
        return service.session_view(session)

    @app.get("/sessions/{session_id}/trials/{k}")
    def get_trial(session_id: str, k: int):
        return service.trial_view(session_id, k)

    @app.get("/replays/{video_id}")
    def get_replay(video_id: str):
        return service.replay_view(video_id)

    @app.get("/replays/{video_id}/frames/{t}")
    def get_frame(video_id: str, t: int):
        return Response(content=service.frame_png(video_id, t),
                        media_type="image/png")

    @app.post("/sessions/{session_id}/judgments")
    def submit_judgment(session_id: str, req: JudgmentRequest):
        record, created = service.submit_judgment(
            session_id, req.trial_id, req.choice, req.uncertainty,
            rationale=req.rationale)
        session = service.sessions[session_id]
        study = service.studies[session.study_id]
        judged = sum(1 for (sid, _) in service.judgments if sid == session_id)
        return {"stored": True, "duplicate": not created,
                "progress": {"judged": judged, "total": len(study.trials)}}

    @app.get("/studies/{study_id}/export")
    def export(study_id: str):
        return service.export_ground_truth(study_id)

    return app


def build_app(corpus_root: str, data_dir: str):
    """Convenience wrapper: load the corpus and wire the app in one call."""
    return create_app(StudyService(corpus_root, data_dir))
