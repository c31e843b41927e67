"""FastAPI service wrapping the detection pipeline.

All heavy lifting happens in the core package; endpoints validate with
pydantic, run the deterministic core functions synchronously (desk scale)
and return JSON-safe payloads. Binary checkpoints travel base64-encoded.
"""

import os
import tempfile

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__, metrics, runner, scenes, schemas, training
from .config import parse_config, serialize_config
from .errors import AcceptanceError, NumericalError, ValidationError
from .model import DetectionModel
from .nncore import checkpoint as ckpt

import json


def _parse(config_dict):
    return parse_config(json.dumps(config_dict))


def create_app():
    app = FastAPI(title="lcfusion", version=__version__)

    @app.exception_handler(ValidationError)
    async def _validation(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content=schemas.ErrorBody(
            error_type="validation", message=str(exc)).model_dump())

    @app.exception_handler(NumericalError)
    async def _numerical(request: Request, exc: NumericalError):
        return JSONResponse(status_code=500, content=schemas.ErrorBody(
            error_type="numerical", message=str(exc)).model_dump())

    @app.exception_handler(AcceptanceError)
    async def _acceptance(request: Request, exc: AcceptanceError):
        return JSONResponse(status_code=500, content=schemas.ErrorBody(
            error_type="acceptance", message=str(exc)).model_dump())

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/config/validate", response_model=schemas.ConfigResponse)
    def validate_config(req: schemas.ConfigRequest):
        cfg = _parse(req.config)
        return schemas.ConfigResponse(config=cfg.model_dump(),
                                      canonical_json=serialize_config(cfg))

    @app.post("/scenes/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        cfg = _parse(req.config)
        out = []
        for scene in runner.generate_scenes(cfg, count=req.count, first_id=req.scene_id):
            out.append(schemas.SceneDoc(doc=scenes.scene_to_doc(scene),
                                        filename=runner.scene_filename(scene.scene_id)))
        return schemas.GenerateResponse(scenes=out)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        cfg = _parse(req.config)
        scene_list = [scenes.scene_from_doc(d) for d in req.scenes]
        resume = None
        if req.resume_checkpoint_b64:
            resume = ckpt.loads(schemas.decode_blob(req.resume_checkpoint_b64))
        _, losses, blob = runner.do_train(cfg, scene_list, resume_records=resume)
        return schemas.TrainResponse(
            checkpoint_b64=schemas.encode_blob(blob),
            losses=[schemas.LossPoint(step=s, total=t, focal=f, l1=l)
                    for s, t, f, l in losses],
            losses_csv=training.losses_csv(losses))

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        cfg = _parse(req.config)
        scene_list = [scenes.scene_from_doc(d) for d in req.scenes]
        records = ckpt.loads(schemas.decode_blob(req.checkpoint_b64))
        report, map_value, _ = runner.do_evaluate(cfg, scene_list, records)
        return schemas.EvaluateResponse(report=report, map_score=map_value)

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(req: schemas.PredictRequest):
        cfg = _parse(req.config)
        scene = scenes.scene_from_doc(req.scene)
        model = DetectionModel(cfg)
        model.load_state(ckpt.loads(schemas.decode_blob(req.checkpoint_b64)))
        dets = [d for d in model.detections(scene) if d.score >= req.min_score]
        return schemas.PredictResponse(detections=[
            schemas.Detection(center=d.center, size=d.size, yaw=d.yaw,
                              class_id=d.class_id, score=d.score) for d in dets])

    @app.post("/ablate", response_model=schemas.AblateResponse)
    def ablate(req: schemas.AblateRequest):
        cfg = _parse(req.config)
        scene_list = [scenes.scene_from_doc(d) for d in req.scenes]
        with tempfile.TemporaryDirectory() as ckpt_dir:
            for name, blob64 in req.checkpoints_b64.items():
                with open(os.path.join(ckpt_dir, f"variant_{name}.ckpt"), "wb") as f:
                    f.write(schemas.decode_blob(blob64))
            report, rows = runner.do_ablate(cfg, scene_list, ckpt_dir,
                                            train_missing=req.train_missing)
            blobs = {}
            for fname in sorted(os.listdir(ckpt_dir)):
                name = fname[len("variant_"):-len(".ckpt")]
                with open(os.path.join(ckpt_dir, fname), "rb") as f:
                    blobs[name] = schemas.encode_blob(f.read())
        return schemas.AblateResponse(
            report=report,
            rows=[schemas.AblateRow(variant=n, map_score=v) for n, v in rows],
            checkpoints_b64=blobs)

    @app.post("/gradcheck", response_model=schemas.GradcheckResponse)
    def gradcheck(req: schemas.GradcheckRequest):
        results = runner.run_gradcheck(op=req.op, n_seeds=req.n_seeds)
        return schemas.GradcheckResponse(
            results=[schemas.GradcheckResult(**r) for r in results],
            report=runner.gradcheck_report(results),
            all_passed=all(r["passed"] for r in results))

    @app.post("/selftest", response_model=schemas.SelftestResponse)
    def selftest():
        results = runner.run_selftest()
        return schemas.SelftestResponse(
            results=[schemas.SelftestResult(**r) for r in results],
            report=runner.selftest_report(results),
            all_passed=all(r["passed"] for r in results))

    return app


app = create_app()
