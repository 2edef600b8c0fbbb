"""Blinded listening-test service.

Serves randomized, unlabeled clip playlists per rater and persists 0-100
scores to an append-only journal (fsync before acknowledging). Raters
only ever see opaque tokens; condition names and file paths stay on the
server until the admin export de-blinds them.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import urlparse

ADMIN_TOKEN_ENV = "DECRACKLE_ADMIN_TOKEN"


@dataclass(frozen=True)
class StudyDefinition:
    """Items x conditions with audio paths; conditions are never shown."""

    study_id: str
    conditions: tuple
    items: tuple  # of (item_id, {condition: wav path})
    include_clean_reference: bool = False
    seed: int = 0

    @classmethod
    def from_json_file(cls, path) -> "StudyDefinition":
        raw = json.loads(Path(path).read_text())
        items = []
        for item in raw["items"]:
            items.append((item["item_id"], dict(item["audio"])))
        study = cls(
            study_id=raw["study_id"],
            conditions=tuple(raw["conditions"]),
            items=tuple(items),
            include_clean_reference=raw.get("include_clean_reference", False),
            seed=raw.get("seed", 0),
        )
        study.validate()
        return study

    def validate(self):
        if not self.items:
            raise ValueError("study has no items")
        for item_id, audio in self.items:
            missing = set(self.conditions) - set(audio)
            if missing:
                raise ValueError(f"item {item_id} lacks conditions: {sorted(missing)}")


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode())
        h.update(b"\x00")
    return h.hexdigest()


@dataclass
class Session:
    session_id: str
    rater_id: str
    playlist: list  # of tokens
    rated: set = field(default_factory=set)

    def first_unrated(self) -> int:
        for i, token in enumerate(self.playlist):
            if token not in self.rated:
                return i
        return len(self.playlist)


class RatingStudyService:
    """In-process core: sessions, blinded playlists, durable ratings."""

    def __init__(self, study: StudyDefinition, data_dir):
        study.validate()
        self.study = study
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.journal_path = self.data_dir / f"{study.study_id}.ratings.jsonl"
        self._lock = threading.Lock()
        self._sessions = {}
        # token -> (item_id, condition, path); deterministic and opaque
        self._tokens = {}
        for item_id, audio in study.items:
            for cond in study.conditions:
                token = _digest(study.study_id, study.seed, item_id, cond, "token")
                self._tokens[token] = (item_id, cond, audio[cond])
        self._ratings = {}  # token-per-rater key -> record dict
        self._replay_journal()

    # -- persistence --------------------------------------------------------

    def _replay_journal(self):
        if not self.journal_path.exists():
            return
        with open(self.journal_path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._ratings[(rec["rater_id"], rec["token"])] = rec

    def _append_durable(self, rec: dict):
        with open(self.journal_path, "a") as fh:
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # -- sessions -----------------------------------------------------------

    def create_session(self, rater_id: str) -> Session:
        if not rater_id:
            raise ValueError("rater_id required")
        with self._lock:
            session_id = _digest(self.study.study_id, self.study.seed,
                                 rater_id, "session")[:32]
            if session_id in self._sessions:
                session = self._sessions[session_id]
            else:
                rng_seed = int(
                    _digest(self.study.seed, self.study.study_id, rater_id)[:16], 16
                )
                import numpy as np

                order = np.random.default_rng(rng_seed).permutation(
                    len(self._tokens)
                )
                tokens = sorted(self._tokens)
                playlist = [tokens[i] for i in order]
                session = Session(session_id, rater_id, playlist)
                for (rater, token) in self._ratings:
                    if rater == rater_id:
                        session.rated.add(token)
                self._sessions[session_id] = session
            if session.first_unrated() >= len(session.playlist):
                raise PermissionError(f"rater {rater_id} already completed the study")
            return session

    def get_session(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise KeyError("unknown or expired session")
        return session

    def playlist_entry(self, session: Session, index: int) -> dict:
        if not 0 <= index < len(session.playlist):
            raise IndexError(f"playlist index {index} out of range")
        token = session.playlist[index]
        return {
            "token": token,
            "position": index,
            "total": len(session.playlist),
            "rated": token in session.rated,
        }

    def audio_bytes(self, token: str) -> bytes:
        if token not in self._tokens:
            raise KeyError("unknown clip token")
        _, _, path = self._tokens[token]
        return Path(path).read_bytes()

    def submit_rating(self, session_id: str, token: str, score) -> dict:
        session = self.get_session(session_id)
        if token not in self._tokens or token not in session.playlist:
            raise KeyError("unknown clip token")
        if not isinstance(score, int) or isinstance(score, bool) or not 0 <= score <= 100:
            raise ValueError(f"score must be an integer in [0, 100], got {score!r}")
        with self._lock:
            key = (session.rater_id, token)
            if key in self._ratings:
                raise FileExistsError("this clip was already rated in this session")
            item_id, condition, _ = self._tokens[token]
            rec = {
                "session_id": session_id,
                "rater_id": session.rater_id,
                "item_id": item_id,
                "condition": condition,
                "score": score,
                "timestamp": time.time(),
                "token": token,
            }
            self._append_durable(rec)
            self._ratings[key] = rec
            session.rated.add(token)
        return {"ok": True, "position": session.first_unrated()}

    # -- export -------------------------------------------------------------

    def export_records(self) -> list:
        """De-blinded rating records for the evaluation pipeline."""
        with self._lock:
            records = sorted(
                self._ratings.values(),
                key=lambda r: (r["rater_id"], r["item_id"], r["condition"]),
            )
        return [
            {k: r[k] for k in
             ("session_id", "rater_id", "item_id", "condition", "score", "timestamp")}
            for r in records
        ]

    def missing_triples(self) -> list:
        """(rater, item, condition) combinations not yet rated, over every
        rater who has started a session or submitted a rating."""
        raters = {s.rater_id for s in self._sessions.values()}
        raters |= {r["rater_id"] for r in self._ratings.values()}
        have = {(r["rater_id"], r["item_id"], r["condition"])
                for r in self._ratings.values()}
        missing = []
        for rater in sorted(raters):
            for item_id, _ in self.study.items:
                for cond in self.study.conditions:
                    if (rater, item_id, cond) not in have:
                        missing.append(
                            {"rater_id": rater, "item_id": item_id, "condition": cond}
                        )
        return missing


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    service: RatingStudyService = None
    ui_dir: Path | None = None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    # -- helpers ------------------------------------------------------------

    def _send_json(self, payload, status=HTTPStatus.OK):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status, message):
        self._send_json({"error": message}, status=status)

    def _read_json(self):
        length = int(self.headers.get("Content-Length", 0))
        if length == 0:
            return {}
        return json.loads(self.rfile.read(length).decode())

    # -- routing ------------------------------------------------------------

    def do_POST(self):
        path = urlparse(self.path).path
        try:
            if path == "/api/sessions":
                body = self._read_json()
                study_id = body.get("study_id")
                if study_id != self.service.study.study_id:
                    return self._send_error_json(HTTPStatus.NOT_FOUND,
                                                 f"unknown study {study_id!r}")
                session = self.service.create_session(body.get("rater_id", ""))
                return self._send_json(
                    {
                        "session_id": session.session_id,
                        "total": len(session.playlist),
                        "position": session.first_unrated(),
                    }
                )
            if path == "/api/ratings":
                body = self._read_json()
                ack = self.service.submit_rating(
                    body.get("session_id", ""), body.get("token", ""),
                    body.get("score"),
                )
                return self._send_json(ack)
            return self._send_error_json(HTTPStatus.NOT_FOUND, "no such endpoint")
        except PermissionError as exc:
            return self._send_error_json(HTTPStatus.CONFLICT, str(exc))
        except FileExistsError as exc:
            return self._send_error_json(HTTPStatus.CONFLICT, str(exc))
        except KeyError as exc:
            return self._send_error_json(HTTPStatus.UNAUTHORIZED, str(exc.args[0]))
        except (ValueError, IndexError) as exc:
            return self._send_error_json(HTTPStatus.BAD_REQUEST, str(exc))

    def do_GET(self):
        parsed = urlparse(self.path)
        path = parsed.path
        try:
            if path.startswith("/api/sessions/"):
                parts = path.split("/")
                # /api/sessions/<sid> or /api/sessions/<sid>/entries/<idx>
                session = self.service.get_session(parts[3])
                if len(parts) == 4:
                    return self._send_json(
                        {
                            "session_id": session.session_id,
                            "total": len(session.playlist),
                            "position": session.first_unrated(),
                        }
                    )
                if len(parts) == 6 and parts[4] == "entries":
                    entry = self.service.playlist_entry(session, int(parts[5]))
                    return self._send_json(entry)
                return self._send_error_json(HTTPStatus.NOT_FOUND, "no such endpoint")
            if path.startswith("/api/audio/"):
                token = path.rsplit("/", 1)[1]
                data = self.service.audio_bytes(token)
                self.send_response(HTTPStatus.OK)
                self.send_header("Content-Type", "audio/wav")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
                return None
            if path == "/api/export":
                admin = os.environ.get(ADMIN_TOKEN_ENV, "")
                given = self.headers.get("X-Admin-Token", "")
                if not admin or given != admin:
                    return self._send_error_json(HTTPStatus.UNAUTHORIZED,
                                                 "admin token required")
                records = self.service.export_records()
                body = "".join(json.dumps(r) + "\n" for r in records).encode()
                missing = self.service.missing_triples()
                self.send_response(HTTPStatus.OK)
                self.send_header("Content-Type", "application/jsonl")
                self.send_header("Content-Length", str(len(body)))
                self.send_header("X-Missing-Triples", str(len(missing)))
                self.end_headers()
                self.wfile.write(body)
                return None
            if path == "/api/export/status":
                admin = os.environ.get(ADMIN_TOKEN_ENV, "")
                if not admin or self.headers.get("X-Admin-Token", "") != admin:
                    return self._send_error_json(HTTPStatus.UNAUTHORIZED,
                                                 "admin token required")
                return self._send_json({"missing": self.service.missing_triples()})
            return self._serve_static(path)
        except KeyError as exc:
            if "session" in str(exc.args[0]):
                return self._send_error_json(HTTPStatus.UNAUTHORIZED, str(exc.args[0]))
            return self._send_error_json(HTTPStatus.NOT_FOUND, str(exc.args[0]))
        except IndexError as exc:
            return self._send_error_json(HTTPStatus.NOT_FOUND, str(exc))
        except ValueError as exc:
            return self._send_error_json(HTTPStatus.BAD_REQUEST, str(exc))

    def _serve_static(self, path):
        if self.ui_dir is None:
            return self._send_error_json(HTTPStatus.NOT_FOUND, "no UI configured")
        rel = "index.html" if path == "/" else path.lstrip("/")
        target = (self.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            return self._send_error_json(HTTPStatus.NOT_FOUND, "not found")
        types = {".html": "text/html", ".js": "text/javascript", ".css": "text/css"}
        data = target.read_bytes()
        self.send_response(HTTPStatus.OK)
        self.send_header("Content-Type", types.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def serve(study: StudyDefinition, data_dir, port: int = 0, ui_dir=None):
    """Returns a started ThreadingHTTPServer (call .shutdown() to stop)."""
    handler = type(
        "BoundHandler", (_Handler,),
        {
            "service": RatingStudyService(study, data_dir),
            "ui_dir": Path(ui_dir) if ui_dir else None,
        },
    )
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="decrackle-ratings", description="Blinded listening-test service"
    )
    parser.add_argument("--study", required=True, help="study definition JSON")
    parser.add_argument("--data-dir", required=True)
    parser.add_argument("--port", type=int, default=8173)
    parser.add_argument("--ui-dir", default=None,
                        help="directory with the built web frontend")
    args = parser.parse_args(argv)
    study = StudyDefinition.from_json_file(args.study)
    server = serve(study, args.data_dir, port=args.port, ui_dir=args.ui_dir)
    host, port = server.server_address
    print(f"rating service for study {study.study_id!r} on http://{host}:{port}/",
          flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    import sys

    sys.exit(main())
