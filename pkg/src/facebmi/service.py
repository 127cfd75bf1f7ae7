"""HTTP inference service with a per-user prediction history.

    POST /predict           multipart ``image`` (+ optional ``user_id``) -> {bmi, category, model_id}
    GET  /history/{user_id} -> [{user_id, timestamp, bmi, category, model_id}, ...]

Errors are ``{"error_code", "message"}`` with codes FTE (422), BAD_IMAGE
(400), NO_MODEL (503) and STORE_DOWN (503); a model whose output is not a
positive finite BMI answers BAD_PREDICTION (500). There is no authentication;
``user_id`` is whatever the caller sends.
"""
from __future__ import annotations

import argparse
import logging
import sqlite3
import threading
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .dataset import BmiCategory, categorize_bmi
from .exceptions import DomainError, FaceBMIError, ImageReadError
from .inference import InferencePipeline, NoFaceError

log = logging.getLogger(__name__)


class StoreError(FaceBMIError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    user_id: str
    timestamp: str  # ISO-8601 UTC, microsecond precision
    bmi: float
    category: BmiCategory
    model_id: str

    def __post_init__(self):
        if not self.user_id:
            raise ValueError("user_id must be non-empty")
        if not self.bmi > 0:
            raise ValueError("bmi must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["category"] = self.category.value
        return d


class HistoryStore:
    """SQLite-backed prediction log; writes are serialized through one lock."""

    SCHEMA = (
        "CREATE TABLE IF NOT EXISTS predictions ("
        " id INTEGER PRIMARY KEY AUTOINCREMENT, user_id TEXT NOT NULL, ts INTEGER NOT NULL,"
        " bmi REAL NOT NULL, category TEXT NOT NULL, model_id TEXT NOT NULL)"
    )

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        try:
            with self._connect() as con:
                con.execute(self.SCHEMA)
                con.execute("CREATE INDEX IF NOT EXISTS by_user ON predictions (user_id, ts)")
        except sqlite3.Error as exc:
            raise StoreError(f"cannot open history store {self.path}: {exc}") from exc

    def _connect(self) -> sqlite3.Connection:
        return sqlite3.connect(self.path, timeout=10)

    @staticmethod
    def _iso(ts_us: int) -> str:
        return datetime.fromtimestamp(ts_us / 1e6, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")

    def log(self, user_id: str, bmi: float, model_id: str, ts_us: int | None = None) -> PredictionRecord:
        """Append one record; timestamps are made strictly increasing per user."""
        if not user_id:
            raise ValueError("user_id must be non-empty")
        category = categorize_bmi(bmi)
        ts = int(time.time() * 1e6) if ts_us is None else int(ts_us)
        try:
            with self._lock, self._connect() as con:
                (last,) = con.execute("SELECT MAX(ts) FROM predictions WHERE user_id = ?", (user_id,)).fetchone()
                if last is not None and ts <= last:
                    ts = last + 1
                con.execute(
                    "INSERT INTO predictions (user_id, ts, bmi, category, model_id) VALUES (?, ?, ?, ?, ?)",
                    (user_id, ts, float(bmi), category.value, model_id),
                )
        except sqlite3.Error as exc:
            raise StoreError(f"history store unavailable: {exc}") from exc
        return PredictionRecord(user_id, self._iso(ts), float(bmi), category, model_id)

    def history(self, user_id: str) -> list[PredictionRecord]:
        try:
            with self._connect() as con:
                rows = con.execute(
                    "SELECT user_id, ts, bmi, category, model_id FROM predictions WHERE user_id = ? ORDER BY ts, id",
                    (user_id,),
                ).fetchall()
        except sqlite3.Error as exc:
            raise StoreError(f"history store unavailable: {exc}") from exc
        return [PredictionRecord(u, self._iso(ts), b, BmiCategory(c), m) for u, ts, b, c, m in rows]


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error_code": code, "message": message})


def create_app(model_path: str | Path | None = None, store_path: str | Path = "history.sqlite3",
               detector: str | None = None, weights_dir: str | Path | None = None,
               pipeline: InferencePipeline | None = None) -> FastAPI:
    """Build the app. A model that fails to load leaves the service up, answering NO_MODEL."""
    app = FastAPI(title="facebmi")
    state = {"pipeline": pipeline, "model_error": None, "store": None, "store_error": None}
    if pipeline is None and model_path is not None:
        try:
            state["pipeline"] = InferencePipeline.from_model(model_path, detector, weights_dir)
        except (FaceBMIError, OSError, ValueError) as exc:
            state["model_error"] = str(exc)
            log.error("model %s not loaded: %s", model_path, exc)
    if state["pipeline"] is not None:
        p = state["pipeline"].predictor
        if p.kind != "custom_cnn" and p.features.backbone != "stub":
            _ = p._computer.net  # load weights before serving concurrent requests
    try:
        state["store"] = HistoryStore(store_path)
    except StoreError as exc:
        state["store_error"] = str(exc)
        log.error("%s", exc)
    app.state.bmi = state

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return _error(400, "BAD_IMAGE", f"malformed request: {exc.errors()}")

    @app.post("/predict")
    def predict(image: UploadFile = File(...), user_id: str | None = Form(None)):
        pipe = state["pipeline"]
        if pipe is None:
            return _error(503, "NO_MODEL", state["model_error"] or "no model loaded")
        data = image.file.read()
        try:
            bmi = pipe.predict_image(data)
        except ImageReadError as exc:
            return _error(400, "BAD_IMAGE", str(exc))
        except NoFaceError as exc:
            return _error(422, "FTE", str(exc))
        except ValueError as exc:
            return _error(500, "BAD_PREDICTION", str(exc))
        try:
            category = categorize_bmi(bmi)
        except DomainError as exc:
            return _error(500, "BAD_PREDICTION", f"model produced an unusable BMI: {exc}")
        model_id = pipe.predictor.model_id
        if user_id:
            store = state["store"]
            if store is None:
                return _error(503, "STORE_DOWN", state["store_error"] or "history store unavailable")
            try:
                store.log(user_id, bmi, model_id)
            except StoreError as exc:
                return _error(503, "STORE_DOWN", str(exc))
        return {"bmi": bmi, "category": category.value, "model_id": model_id}

    @app.get("/history/{user_id}")
    def history(user_id: str):
        store = state["store"]
        if store is None:
            return _error(503, "STORE_DOWN", state["store_error"] or "history store unavailable")
        try:
            return [r.to_dict() for r in store.history(user_id)]
        except StoreError as exc:
            return _error(503, "STORE_DOWN", str(exc))

    return app


def build_parser(parser: argparse.ArgumentParser | None = None) -> argparse.ArgumentParser:
    parser = parser or argparse.ArgumentParser(prog="bmi-serve", description="BMI inference HTTP service")
    parser.add_argument("--model", required=True, help=".bmimodel file to serve")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--store", default="history.sqlite3", help="SQLite history file")
    parser.add_argument("--detector", default=None, help="detector model (default: the one used in training)")
    parser.add_argument("--weights-dir", default=None)
    return parser


def serve(args: argparse.Namespace) -> int:
    import uvicorn

    app = create_app(args.model, args.store, args.detector, args.weights_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO)
    return serve(build_parser().parse_args(argv))


if __name__ == "__main__":
    raise SystemExit(main())
