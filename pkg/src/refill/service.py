"""HTTP session service for interactive proposal editing.

A session is a directory: uploaded inputs, a manifest, and immutable artifact
files. The heavy stages (matching, homographies, refinement, confidences) run
once per (inputs, config) in a background thread; fusion parameters (toggles,
temperature, fallback floor) are re-applied on demand from cached float
intermediates, which is what keeps the toggle loop interactive.

Artifact naming: stage artifacts keep canonical names (``proposal_i``,
``refined_i``, ``confidence_i``, ``preview_i``, ``fill``); fusion artifacts
are written once per fuse revision (``result_r2``, ``weight_1_r2``, ...) and
the canonical names (``result``, ``weight_i``, ``weight_g``) always resolve
to the latest revision, so stored files never change after being written.
"""

from __future__ import annotations

import hashlib
import io
import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Form, HTTPException, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from PIL import Image as PILImage

from .core import (InvalidConfigError, PipelineConfig, RefillError,
                   composite_hole, save_image)
from .fusion import fuse_proposals, softmax_fusion_weights, weights_summary
from .pipeline import run_pipeline


def _decode_image(data: bytes, name: str) -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as e:
        raise HTTPException(422, f"{name} is not a decodable image: {e}")


def _decode_mask(data: bytes) -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("L"))
    except Exception as e:
        raise HTTPException(422, f"mask is not a decodable image: {e}")
    return (arr >= 128).astype(np.float64)


class Session:
    """Bookkeeping for one session directory; mutation is lock-guarded."""

    def __init__(self, root: Path, sid: str):
        self.id = sid
        self.dir = root / sid
        self.lock = threading.Lock()
        self.state = "pending"
        self.cfg = PipelineConfig()
        self.epoch = 1
        self.revision = 0
        self.degraded = False
        self.notes: list = []
        self.n_proposals = 0
        self.index: dict = {}        # canonical artifact name -> file name
        self.stage: dict | None = None   # float intermediates for fusion

    # -- persistence --------------------------------------------------------

    def manifest(self) -> dict:
        return {
            "id": self.id, "state": self.state, "epoch": self.epoch,
            "revision": self.revision, "degraded": self.degraded,
            "notes": self.notes, "n_proposals": self.n_proposals,
            "config": self.cfg.to_dict(), "artifacts": self.index,
        }

    def save_manifest(self) -> None:
        (self.dir / "manifest.json").write_text(
            json.dumps(self.manifest(), indent=2))

    @classmethod
    def load(cls, root: Path, sid: str) -> "Session":
        s = cls(root, sid)
        m = json.loads((s.dir / "manifest.json").read_text())
        s.state = m["state"]
        s.epoch = m["epoch"]
        s.revision = m["revision"]
        s.degraded = m["degraded"]
        s.notes = m["notes"]
        s.n_proposals = m["n_proposals"]
        s.cfg = PipelineConfig.from_json(json.dumps(m["config"]))
        s.index = m["artifacts"]
        return s

    # -- stage data ---------------------------------------------------------

    def stage_path(self, epoch: int) -> Path:
        return self.dir / f"stage_e{epoch}.npz"

    def load_stage(self) -> dict:
        """Fusion inputs for the current epoch (disk-backed after restart)."""
        if self.stage is not None and self.stage["epoch"] == self.epoch:
            return self.stage
        path = self.stage_path(self.epoch)
        if not path.exists():
            raise HTTPException(409, "proposals are not ready yet")
        z = np.load(path)
        self.stage = {
            "epoch": self.epoch,
            "refined": [z[f"refined_{k}"] for k in range(int(z["n"]))],
            "confidences": [z[f"conf_{k}"] for k in range(int(z["n"]))],
            "fill": z["fill"], "tm": z["tm"], "mask": z["mask"],
        }
        return self.stage

    def save_stage(self, stage: dict) -> None:
        arrays = {"n": np.int64(len(stage["refined"])), "fill": stage["fill"],
                  "tm": stage["tm"], "mask": stage["mask"]}
        for k, (r, c) in enumerate(zip(stage["refined"], stage["confidences"])):
            arrays[f"refined_{k}"] = r
            arrays[f"conf_{k}"] = c
        np.savez(self.stage_path(stage["epoch"]), **arrays)

    # -- artifact files -----------------------------------------------------

    def art_dir(self) -> Path:
        d = self.dir / "artifacts"
        d.mkdir(exist_ok=True)
        return d

    def write_artifact(self, canonical: str, file_stem: str, img) -> None:
        """Write (once) and point the canonical name at the new file."""
        path = self.art_dir() / f"{file_stem}.png"
        if not path.exists():
            save_image(path, np.asarray(img))
        self.index[canonical] = path.name

    def resolve_artifact(self, name: str) -> Path | None:
        if name in self.index:
            return self.art_dir() / self.index[name]
        for ext in (".png", ".json"):
            direct = self.art_dir() / f"{name}{ext}"
            if direct.exists():
                return direct
        return None


class SessionStore:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        self.sessions: dict[str, Session] = {}
        for mdir in sorted(self.root.glob("*/manifest.json")):
            sid = mdir.parent.name
            try:
                self.sessions[sid] = Session.load(self.root, sid)
            except Exception:
                continue
        # sessions interrupted mid-compute resume on startup
        for s in self.sessions.values():
            if s.state == "pending":
                threading.Thread(target=compute_stages, args=(s,),
                                 daemon=True).start()

    def get(self, sid: str) -> Session:
        with self.lock:
            s = self.sessions.get(sid)
        if s is None:
            raise HTTPException(404, "unknown session")
        return s

    def create(self) -> Session:
        sid = uuid.uuid4().hex[:12]
        s = Session(self.root, sid)
        s.dir.mkdir(parents=True)
        (s.dir / "inputs").mkdir()
        with self.lock:
            self.sessions[sid] = s
        return s

    def drop(self, sid: str) -> None:
        with self.lock:
            s = self.sessions.pop(sid, None)
        if s is None:
            raise HTTPException(404, "unknown session")
        import shutil

        shutil.rmtree(s.dir, ignore_errors=True)


# ---------------------------------------------------------------------------
# stage computation


def _load_inputs(s: Session):
    from .core import load_hole_mask, load_image

    inputs = s.dir / "inputs"
    target = load_image(inputs / "target.png")
    mask = load_hole_mask(inputs / f"mask_e{s.epoch}.png")
    source = load_image(inputs / "source.png")
    return target, mask, source


def compute_stages(s: Session) -> None:
    """Heavy stages + initial fusion; commits only if the epoch is unchanged."""
    epoch = s.epoch
    try:
        target, mask, source = _load_inputs(s)
        result = run_pipeline(target, mask, source, s.cfg)
    except (RefillError, OSError) as e:
        with s.lock:
            if s.epoch != epoch:
                return
            s.state = "fused"
            s.degraded = True
            s.notes = [f"pipeline failed: {e}"]
            s.save_manifest()
        return

    stage = {
        "epoch": epoch,
        "refined": [p.refined for p in result.proposals],
        "confidences": [p.confidence for p in result.proposals],
        "fill": result.fill, "tm": result.target_masked, "mask": result.hole,
    }
    with s.lock:
        if s.epoch != epoch:
            return      # a mask replacement superseded this computation
        s.save_stage(stage)
        s.stage = stage
        s.n_proposals = len(result.proposals)
        s.degraded = result.degraded
        s.notes = list(result.notes)
        pre = f"e{epoch}_"
        for k, p in enumerate(result.proposals):
            s.write_artifact(f"proposal_{p.index}", pre + f"proposal_{p.index}",
                             p.warped)
            s.write_artifact(f"refined_{p.index}", pre + f"refined_{p.index}",
                             p.refined)
            s.write_artifact(f"confidence_{p.index}",
                             pre + f"confidence_{p.index}", p.confidence)
            from .fusion import merge_with_fill

            _, preview = merge_with_fill(p.refined, result.fill, p.confidence,
                                         result.hole, result.target_masked)
            s.write_artifact(f"preview_{p.index}", pre + f"preview_{p.index}",
                             preview)
        s.write_artifact("fill", pre + "fill", result.fill)
        s.state = "proposed"
        _commit_fusion(s, result.weights,
                       result.merged, result.composite)
        s.save_manifest()


def _commit_fusion(s: Session, weights, merged, composite) -> None:
    """Write one fusion revision and repoint canonical names (lock held)."""
    s.revision += 1
    rev = f"e{s.epoch}_r{s.revision}"
    for k in range(weights.proposal_weights.shape[0]):
        i = k + 1
        s.write_artifact(f"weight_{i}", f"{rev}_weight_{i}",
                         weights.proposal_weights[k])
    s.write_artifact("weight_g", f"{rev}_weight_g", weights.fallback)
    s.write_artifact("result", f"{rev}_result", composite)
    summary = {"revision": s.revision,
               "summary": weights_summary(weights, s.load_stage()["mask"])}
    spath = s.art_dir() / f"{rev}_summary.json"
    if not spath.exists():
        spath.write_text(json.dumps(summary, indent=2))
    s.index["summary"] = spath.name
    s.state = "fused"


# ---------------------------------------------------------------------------
# app


def create_app(store_dir) -> FastAPI:
    app = FastAPI(title="refill session service")
    store = SessionStore(store_dir)
    app.state.store = store

    @app.get("/health")
    def health():
        return {"status": "ok", "sessions": len(store.sessions)}

    @app.post("/sessions", status_code=201)
    async def create_session(target: UploadFile, mask: UploadFile,
                             source: UploadFile, config: str | None = Form(None)):
        cfg = PipelineConfig()
        if config:
            try:
                cfg = PipelineConfig.from_json(config)
            except InvalidConfigError as e:
                raise HTTPException(422, str(e))
        t = _decode_image(await target.read(), "target")
        m = _decode_mask(await mask.read())
        src = _decode_image(await source.read(), "source")
        if m.shape != t.shape[:2]:
            raise HTTPException(422, "mask dimensions do not match target")
        if src.shape != t.shape:
            raise HTTPException(422, "source dimensions do not match target")
        s = store.create()
        s.cfg = cfg
        inputs = s.dir / "inputs"
        save_image(inputs / "target.png", t)
        save_image(inputs / "source.png", src)
        save_image(inputs / f"mask_e{s.epoch}.png", m)
        (inputs / "config.json").write_text(cfg.to_json())
        s.save_manifest()
        threading.Thread(target=compute_stages, args=(s,), daemon=True).start()
        return {"id": s.id, "state": s.state}

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        s = store.get(sid)
        with s.lock:
            return s.manifest()

    @app.get("/sessions/{sid}/artifacts/{name}")
    def get_artifact(sid: str, name: str):
        s = store.get(sid)
        with s.lock:
            path = s.resolve_artifact(name)
        if path is None or not path.exists():
            raise HTTPException(404, "unknown artifact")
        media = "application/json" if path.suffix == ".json" else "image/png"
        data = path.read_bytes()
        # content-based ETag: a re-fuse that reproduces the same bytes under a
        # new revision file still compares equal to the original
        etag = '"' + hashlib.md5(data).hexdigest() + '"'
        return Response(content=data, media_type=media,
                        headers={"ETag": etag})

    @app.post("/sessions/{sid}/mask")
    async def replace_mask(sid: str, request: Request):
        s = store.get(sid)
        ctype = request.headers.get("content-type", "")
        if "image/png" not in ctype and "octet-stream" not in ctype:
            raise HTTPException(422, "mask body must be a PNG upload")
        m = _decode_mask(await request.body())
        from .core import load_image

        target = load_image(s.dir / "inputs" / "target.png")
        if m.shape != target.shape[:2]:
            raise HTTPException(422, "mask dimensions do not match target")
        with s.lock:
            s.epoch += 1
            s.state = "pending"
            s.revision = 0
            s.index = {}
            s.stage = None
            save_image(s.dir / "inputs" / f"mask_e{s.epoch}.png", m)
            s.save_manifest()
        threading.Thread(target=compute_stages, args=(s,), daemon=True).start()
        return {"id": s.id, "state": "pending", "epoch": s.epoch}

    @app.post("/sessions/{sid}/fuse")
    async def fuse(sid: str, request: Request):
        s = store.get(sid)
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(422, "fuse body must be a JSON object")
        if not isinstance(body, dict):
            raise HTTPException(422, "fuse body must be a JSON object")
        with s.lock:
            if s.state == "pending":
                raise HTTPException(409, "proposals are not ready yet")
            stage = s.load_stage()
            n = len(stage["refined"])
            enabled = _parse_toggles(body.get("toggles"), n)
            tau = float(body.get("tau", s.cfg.softmax_temperature))
            gamma = float(body.get("gamma", s.cfg.fallback_floor))
            if tau <= 0 or gamma <= 0:
                raise HTTPException(422, "tau and gamma must be positive")
            if n == 0:
                composite = composite_hole(stage["tm"], stage["fill"],
                                           stage["mask"])
                from .fusion import FusionWeights

                h, w = stage["mask"].shape
                weights = FusionWeights(np.zeros((0, h, w)), np.ones((h, w)))
                merged = stage["fill"]
            else:
                weights = softmax_fusion_weights(stage["confidences"], enabled,
                                                 tau, gamma)
                merged, composite = fuse_proposals(
                    weights, stage["refined"], stage["fill"], stage["tm"],
                    stage["mask"])
            _commit_fusion(s, weights, merged, composite)
            s.save_manifest()
            return {"result": "result", "revision": s.revision,
                    "result_file": s.index["result"], "state": s.state}

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str):
        store.drop(sid)
        return JSONResponse(status_code=204, content=None)

    return app


def _parse_toggles(raw, n: int) -> list:
    if raw is None:
        return [True] * n
    if isinstance(raw, dict):
        enabled = [True] * n
        for key, val in raw.items():
            try:
                i = int(key)
            except (TypeError, ValueError):
                raise HTTPException(422, f"toggle key {key!r} is not an id")
            if not 1 <= i <= n:
                raise HTTPException(422, f"toggle id {i} out of range 1..{n}")
            enabled[i - 1] = bool(val)
        return enabled
    if isinstance(raw, list):
        if len(raw) != n:
            raise HTTPException(422, f"expected {n} toggles, got {len(raw)}")
        return [bool(v) for v in raw]
    raise HTTPException(422, "toggles must be a list or {id: bool} object")
