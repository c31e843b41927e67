"""Orchestration shared by the service endpoints and the CLI.

Everything here is deterministic given the config seeds: scene generation,
training, evaluation, the ablation table, the gradient-check suite and the
selftest oracle suites.
"""

import os

import numpy as np

from . import fusion, geom, head, lidar, metrics, nncore, oracles, scenes, training
from .config import scene_spec
from .errors import AcceptanceError, ValidationError
from .model import DetectionModel
from .nncore import checkpoint as ckpt

GRAD_TOLERANCE = 1e-5
ORACLE_TOLERANCE = 1e-12
MASS_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# scene data


def generate_scenes(cfg, count=None, first_id=0):
    spec = scene_spec(cfg)
    grid = cfg.grid.to_grid()
    n = cfg.dataset.n_scenes if count is None else count
    return [scenes.gen_scene(cfg.dataset.seed, spec, grid, scene_id=first_id + i)
            for i in range(n)]


def scene_filename(scene_id):
    return f"scene_{scene_id:04d}.json"


def write_scenes(out_dir, scene_list):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for s in scene_list:
        path = os.path.join(out_dir, scene_filename(s.scene_id))
        scenes.save_scene(path, s)
        paths.append(path)
    return paths


def read_scenes(data_dir):
    names = sorted(n for n in os.listdir(data_dir)
                   if n.startswith("scene_") and n.endswith(".json"))
    if not names:
        raise ValidationError(f"no scene files in {data_dir}")
    return [scenes.load_scene(os.path.join(data_dir, n)) for n in names]


# ---------------------------------------------------------------------------
# train / evaluate / ablate


def do_train(cfg, scene_list, resume_records=None):
    """Train and return (model, losses, checkpoint bytes)."""
    model = DetectionModel(cfg)
    start_step = 0
    opt_state = None
    if resume_records is not None:
        model.load_state(resume_records)
        opt_state = training.optimizer_state_from_records(resume_records, list(model.params))
        if opt_state is not None:
            start_step = opt_state[2]
    losses, opt = training.train(model, scene_list, cfg.training, cfg.head,
                                 start_step=start_step, opt_state=opt_state)
    records = model.state_records()
    records.update(training.optimizer_records(opt))
    return model, losses, ckpt.dumps(records)


def do_evaluate(cfg, scene_list, records):
    """Evaluate a checkpoint; returns (report text, mAP, detection sets)."""
    model = DetectionModel(cfg)
    model.load_state(records)
    sets = []
    for s in scene_list:
        dets = model.detections(s)
        sets.append(metrics.DetectionSet(dets, s.boxes, s.scene_id))
    class_ids = list(range(cfg.head.num_classes))
    report = metrics.render_report(sets, class_ids)
    return report, metrics.map_score(sets, class_ids), sets


def ablation_variants(cfg):
    """Ordered (name, config) variants mirroring the ablation axes."""
    variants = []
    for k in cfg.ablation.k_values:
        variants.append((f"k{k}", cfg.model_copy(
            update={"fusion": cfg.fusion.model_copy(update={"k_neighbors": k})})))
    if cfg.ablation.distance_prior:
        for flag in (False, True):
            variants.append((f"distance_prior_{'on' if flag else 'off'}",
                             cfg.model_copy(update={
                                 "fusion": cfg.fusion.model_copy(update={"distance_prior": flag})})))
    if cfg.ablation.adaptive_weighting:
        for flag in (False, True):
            variants.append((f"adaptive_weighting_{'on' if flag else 'off'}",
                             cfg.model_copy(update={
                                 "fusion": cfg.fusion.model_copy(update={"adaptive_weighting": flag})})))
    if cfg.ablation.module_rows:
        rows = [
            ("modules_baseline", dict(enable_vem=False, enable_iem=False, enable_unified=False)),
            ("modules_vem", dict(enable_vem=True, enable_iem=False, enable_unified=False)),
            ("modules_iem_unified", dict(enable_vem=False, enable_iem=True, enable_unified=True)),
            ("modules_vem_unified", dict(enable_vem=True, enable_iem=False, enable_unified=True)),
            ("modules_all", dict(enable_vem=True, enable_iem=True, enable_unified=True)),
        ]
        for name, flags in rows:
            variants.append((name, cfg.model_copy(update={
                "fusion": cfg.fusion.model_copy(update=flags)})))
    return variants


def do_ablate(cfg, scene_list, ckpt_dir, train_missing=False):
    """Evaluate every ablation variant; returns (report text, rows).

    Expects one trained checkpoint per variant in ckpt_dir (same seed and
    step budget); with train_missing=True absent ones are trained first.
    """
    os.makedirs(ckpt_dir, exist_ok=True)
    rows = []
    for name, vcfg in ablation_variants(cfg):
        path = os.path.join(ckpt_dir, f"variant_{name}.ckpt")
        if not os.path.exists(path):
            if not train_missing:
                raise ValidationError(f"ablate: missing variant checkpoint {path}")
            _, _, blob = do_train(vcfg, scene_list)
            with open(path, "wb") as f:
                f.write(blob)
        records = ckpt.load(path)
        _, map_value, _ = do_evaluate(vcfg, scene_list, records)
        rows.append((name, map_value))
    lines = ["ablation-report v1"]
    for name, value in rows:
        lines.append(f"variant {name} map={value!r}")
    return "\n".join(lines) + "\n", rows


# ---------------------------------------------------------------------------
# gradient-check suite


def _proj(t, rng):
    """Random linear functional making any tensor a scalar objective."""
    return nncore.sum_all(nncore.mul(t, nncore.Tensor(rng.standard_normal(t.data.shape))))


def _p(name, shape, rng, scale=0.5):
    return nncore.Parameter(name, rng.uniform(-scale, scale, size=shape))


def _build_linear(seed):
    rng = np.random.default_rng(seed)
    x = _p("x", (3, 4), rng)
    w = _p("w", (4, 5), rng)
    b = _p("b", (5,), rng)
    return lambda: _proj(nncore.linear(x.tensor, w.tensor, b.tensor),
                         np.random.default_rng(seed + 1)), [x, w, b]


def _build_conv2d(seed):
    rng = np.random.default_rng(seed)
    x = _p("x", (2, 5, 5), rng)
    k = _p("k", (3, 2, 3, 3), rng)
    b = _p("b", (3,), rng)
    return lambda: _proj(nncore.conv2d(x.tensor, k.tensor, b.tensor, stride=1, padding=1),
                         np.random.default_rng(seed + 1)), [x, k, b]


def _build_conv3d(seed):
    rng = np.random.default_rng(seed)
    x = _p("x", (2, 4, 4, 3), rng)
    k = _p("k", (2, 2, 3, 3, 3), rng)
    b = _p("b", (2,), rng)
    return lambda: _proj(nncore.conv3d(x.tensor, k.tensor, b.tensor, stride=1, padding=1),
                         np.random.default_rng(seed + 1)), [x, k, b]


def _build_softmax(seed):
    rng = np.random.default_rng(seed)
    x = _p("x", (3, 5), rng, 1.5)
    return lambda: _proj(nncore.softmax(x.tensor, axis=1),
                         np.random.default_rng(seed + 1)), [x]


def _build_relu(seed):
    rng = np.random.default_rng(seed)
    x = _p("x", (4, 4), rng, 1.0)
    return lambda: _proj(nncore.relu(x.tensor), np.random.default_rng(seed + 1)), [x]


def _build_sigmoid(seed):
    rng = np.random.default_rng(seed)
    x = _p("x", (4, 4), rng, 2.0)
    return lambda: _proj(nncore.sigmoid(x.tensor), np.random.default_rng(seed + 1)), [x]


def _build_attention(seed):
    rng = np.random.default_rng(seed)
    q = _p("q", (3, 4), rng)
    k = _p("k", (5, 4), rng)
    v = _p("v", (5, 4), rng)
    return lambda: _proj(nncore.attention(q.tensor, k.tensor, v.tensor),
                         np.random.default_rng(seed + 1)), [q, k, v]


def _micro_fcfg(**kw):
    base = dict(k_neighbors=3, depth_bins=3, depth_min=1.0, depth_max=5.0,
                c2d=2, c3d=3, c_depth=2)
    base.update(kw)
    return fusion.FusionConfig(**base)


def _build_iem(seed):
    rng = np.random.default_rng(seed)
    cfg = _micro_fcfg(c2d=3)
    feats = _p("feats", (3, 4, 4), rng)
    depth = lidar.DepthMap(rng.uniform(1.0, 5.0, (4, 4)), np.ones((4, 4), dtype=bool))
    params = fusion.IemParams(
        depth_k1=_p("dk1", (2, 1, 3, 3), rng), depth_b1=_p("db1", (2,), rng),
        depth_k2=_p("dk2", (2, 2, 1, 1), rng), depth_b2=_p("db2", (2,), rng),
        fuse_k=_p("fk", (3, 5, 3, 3), rng), fuse_b=_p("fb", (3,), rng))
    plist = [feats, params.depth_k1, params.depth_b1, params.depth_k2,
             params.depth_b2, params.fuse_k, params.fuse_b]

    def f():
        camf = fusion.CameraFeatures(feats.tensor, 1)
        out = fusion.iem_enhance(camf, depth, params, cfg)
        return _proj(out.features, np.random.default_rng(seed + 1))

    return f, plist


def _vem_fixture(seed):
    rng = np.random.default_rng(seed)
    cfg = _micro_fcfg()
    grid = geom.GridSpec((-2, -2, 2), (2, 2, 4), (1, 1, 1))
    cam = geom.CameraModel(np.array([[4.0, 0, 4], [0, 4.0, 4], [0, 0, 1]]), np.eye(4), (8, 8))
    keys = [(0, 0, 0), (1, 2, 1), (2, 1, 0), (3, 3, 1), (2, 2, 1)]
    vox = _p("vox", (len(keys), 3), rng)
    camfeat = _p("camfeat", (2, 4, 4), rng)
    w = _p("w", (2, 3), rng)
    b = _p("b", (3,), rng)
    return cfg, grid, cam, keys, vox, camfeat, w, b


def _build_vem(seed):
    cfg, grid, cam, keys, vox, camfeat, w, b = _vem_fixture(seed)

    def f():
        svg = lidar.SparseVoxelGrid(grid, keys, vox.tensor)
        camf = fusion.CameraFeatures(camfeat.tensor, 2)
        out = fusion.vem_enhance(svg, [(cam, camf)], w, b, cfg)
        return _proj(out.features, np.random.default_rng(seed + 1))

    return f, [vox, camfeat, w, b]


def _build_lift_splat(seed):
    rng = np.random.default_rng(seed)
    cfg = _micro_fcfg()
    grid = geom.GridSpec((-3, -3, 0), (3, 3, 6), (1.5, 1.5, 1.5))
    cam = geom.CameraModel(np.array([[2.0, 0, 2], [0, 2.0, 2], [0, 0, 1]]), np.eye(4), (4, 4))
    feats = _p("feats", (2, 2, 2), rng)
    dk = _p("dk", (3, 2, 1, 1), rng)
    db = _p("db", (3,), rng)

    def f():
        camf = fusion.CameraFeatures(feats.tensor, 2)
        dense, _ = fusion.lift_splat(camf, cam, grid, dk, db, cfg)
        return _proj(dense, np.random.default_rng(seed + 1))

    return f, [feats, dk, db]


def _ufuse_params(rng, c3d, c2d):
    return fusion.UFuseParams(
        proj_k=_p("pk", (c3d, c2d, 1, 1, 1), rng), proj_b=_p("pb", (c3d,), rng),
        gate_a_k=_p("gak", (c3d, c3d, 1, 1, 1), rng), gate_a_b=_p("gab", (c3d,), rng),
        gate_b_k=_p("gbk", (c3d, c3d, 1, 1, 1), rng), gate_b_b=_p("gbb", (c3d,), rng),
        gate_c_k=_p("gck", (1, 2 * c3d, 1, 1, 1), rng), gate_c_b=_p("gcb", (1,), rng),
        concat_k=_p("ck", (c3d, 2 * c3d, 1, 1, 1), rng), concat_b=_p("cb", (c3d,), rng))


def _build_unified_fuse(seed):
    rng = np.random.default_rng(seed)
    cfg = _micro_fcfg(c3d=2)
    f_sel = _p("fsel", (2, 3, 3, 2), rng)
    f_spc = _p("fspc", (2, 3, 3, 2), rng)
    params = _ufuse_params(rng, 2, 2)
    plist = [f_sel, f_spc, params.proj_k, params.proj_b, params.gate_a_k, params.gate_a_b,
             params.gate_b_k, params.gate_b_b, params.gate_c_k, params.gate_c_b]

    def f():
        out = fusion.unified_fuse(f_sel.tensor, f_spc.tensor, params, cfg)
        return _proj(out, np.random.default_rng(seed + 1))

    return f, plist


def _build_bev_encode(seed):
    rng = np.random.default_rng(seed)
    bev = _p("bev", (2, 4, 4), rng)
    k1 = _p("k1", (2, 2, 3, 3), rng)
    b1 = _p("b1", (2,), rng)
    k2 = _p("k2", (2, 2, 3, 3), rng)
    b2 = _p("b2", (2,), rng)
    return lambda: _proj(fusion.bev_encode(bev.tensor, k1, b1, k2, b2),
                         np.random.default_rng(seed + 1)), [bev, k1, b1, k2, b2]


def _decode_fixture(seed, d=4, nq=3, cb=3, nx=2, ny=2):
    rng = np.random.default_rng(seed)

    def attn(prefix):
        return head.AttentionParams(
            wq=_p(f"{prefix}.wq", (d, d), rng), bq=_p(f"{prefix}.bq", (d,), rng),
            wk=_p(f"{prefix}.wk", (d, d), rng), bk=_p(f"{prefix}.bk", (d,), rng),
            wv=_p(f"{prefix}.wv", (d, d), rng), bv=_p(f"{prefix}.bv", (d,), rng),
            wo=_p(f"{prefix}.wo", (d, d), rng), bo=_p(f"{prefix}.bo", (d,), rng))

    params = head.DecodeParams(
        key_k=_p("keyk", (d, cb, 1, 1), rng), key_b=_p("keyb", (d,), rng),
        self_attn=attn("s"), cross_attn=attn("c"),
        ffn_w1=_p("fw1", (d, 6), rng), ffn_b1=_p("fb1", (6,), rng),
        ffn_w2=_p("fw2", (6, d), rng), ffn_b2=_p("fb2", (d,), rng))
    queries = _p("queries", (nq, d), rng)
    bev = _p("bev", (cb, nx, ny), rng)
    plist = [queries, bev, params.key_k, params.key_b,
             params.self_attn.wq, params.self_attn.bq, params.self_attn.wk, params.self_attn.bk,
             params.self_attn.wv, params.self_attn.bv, params.self_attn.wo, params.self_attn.bo,
             params.cross_attn.wq, params.cross_attn.bq, params.cross_attn.wk, params.cross_attn.bk,
             params.cross_attn.wv, params.cross_attn.bv, params.cross_attn.wo, params.cross_attn.bo,
             params.ffn_w1, params.ffn_b1, params.ffn_w2, params.ffn_b2]
    return params, queries, bev, plist


def _build_decode(seed):
    params, queries, bev, plist = _decode_fixture(seed)

    def f():
        out = head.decode(head.QuerySet(queries.tensor), bev.tensor, params)
        return _proj(out, np.random.default_rng(seed + 1))

    return f, plist


def _build_predict(seed):
    rng = np.random.default_rng(seed)
    grid = geom.GridSpec((-16, -16, -1), (16, 16, 3), (2, 2, 1))
    decoded = _p("decoded", (3, 4), rng)
    params = head.PredictParams(
        cls_w1=_p("cw1", (4, 5), rng), cls_b1=_p("cb1", (5,), rng),
        cls_w2=_p("cw2", (5, 4), rng), cls_b2=_p("cb2", (4,), rng),
        box_w1=_p("bw1", (4, 5), rng), box_b1=_p("bb1", (5,), rng),
        box_w2=_p("bw2", (5, 8), rng), box_b2=_p("bb2", (8,), rng))
    plist = [decoded, params.cls_w1, params.cls_b1, params.cls_w2, params.cls_b2,
             params.box_w1, params.box_b1, params.box_w2, params.box_b2]

    def f():
        logits, boxes = head.predict(decoded.tensor, params, grid)
        r1 = np.random.default_rng(seed + 1)
        return nncore.add(_proj(logits, r1), _proj(boxes, r1))

    return f, plist


def _build_focal(seed):
    rng = np.random.default_rng(seed)
    logits = _p("logits", (4, 4), rng, 1.5)
    targets = np.random.default_rng(seed + 2).integers(0, 4, size=4)

    def f():
        probs = nncore.softmax(logits.tensor, axis=1)
        return head.focal_loss(probs, targets, 3)

    return f, [logits]


def _build_l1(seed):
    rng = np.random.default_rng(seed)
    boxes = _p("boxes", (4, 8), rng, 2.0)
    gt = np.random.default_rng(seed + 2).uniform(-2, 2, (2, 8))
    return lambda: head.l1_box_loss(boxes.tensor, gt, [0, 2]), [boxes]


GRAD_SUITE = {
    "linear": _build_linear,
    "conv2d": _build_conv2d,
    "conv3d": _build_conv3d,
    "softmax": _build_softmax,
    "relu": _build_relu,
    "sigmoid": _build_sigmoid,
    "attention": _build_attention,
    "iem_enhance": _build_iem,
    "vem_enhance": _build_vem,
    "lift_splat": _build_lift_splat,
    "unified_fuse": _build_unified_fuse,
    "bev_encode": _build_bev_encode,
    "decode": _build_decode,
    "predict": _build_predict,
    "focal_loss": _build_focal,
    "l1_box_loss": _build_l1,
}


def run_gradcheck(op=None, n_seeds=10, tolerance=GRAD_TOLERANCE):
    """Gradient suite: every differentiable op against finite differences."""
    names = [op] if op else list(GRAD_SUITE)
    for name in names:
        if name not in GRAD_SUITE:
            raise ValidationError(f"gradcheck: unknown op '{name}' "
                                  f"(choose from {', '.join(GRAD_SUITE)})")
    results = []
    for name in names:
        worst = 0.0
        for seed in range(n_seeds):
            f, params = GRAD_SUITE[name](1000 + seed)
            worst = max(worst, nncore.grad_check(f, params))
        results.append({"op": name, "max_rel_err": worst,
                        "tolerance": tolerance, "passed": worst <= tolerance})
    return results


def gradcheck_report(results):
    lines = ["gradcheck-report v1"]
    for r in results:
        status = "pass" if r["passed"] else "FAIL"
        lines.append(f"op {r['op']} max_rel_err={r['max_rel_err']:.3e} "
                     f"tol={r['tolerance']:.0e} {status}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# selftest oracle suites


def _check_conv_oracles():
    rng = np.random.default_rng(7)
    for _ in range(3):
        x = rng.standard_normal((2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        fast = nncore.conv2d(nncore.Tensor(x), nncore.Tensor(k), nncore.Tensor(b), 1, 1).data
        slow = oracles.conv2d_loops(x, k, b, 1, 1)
        if np.abs(fast - slow).max() > ORACLE_TOLERANCE:
            return False, f"conv2d deviates {np.abs(fast - slow).max():.2e}"
        x3 = rng.standard_normal((2, 4, 4, 3))
        k3 = rng.standard_normal((2, 2, 3, 3, 3))
        b3 = rng.standard_normal(2)
        fast3 = nncore.conv3d(nncore.Tensor(x3), nncore.Tensor(k3), nncore.Tensor(b3), 1, 1).data
        slow3 = oracles.conv3d_loops(x3, k3, b3, 1, 1)
        if np.abs(fast3 - slow3).max() > ORACLE_TOLERANCE:
            return False, f"conv3d deviates {np.abs(fast3 - slow3).max():.2e}"
    return True, "conv2d/conv3d match loop-nest oracle within 1e-12"


def _check_attention_oracle():
    rng = np.random.default_rng(11)
    q = rng.standard_normal((3, 4))
    k = rng.standard_normal((5, 4))
    v = rng.standard_normal((5, 4))
    fast = nncore.attention(nncore.Tensor(q), nncore.Tensor(k), nncore.Tensor(v)).data
    slow = oracles.attention_loops(q, k, v)
    err = np.abs(fast - slow).max()
    return err <= ORACLE_TOLERANCE, f"attention max deviation {err:.2e}"


def _check_hungarian_oracle():
    rng = np.random.default_rng(13)
    for n in range(1, 6):
        for _ in range(20):
            cost = rng.uniform(0, 10, (n, n + rng.integers(0, 3)))
            cols = head.hungarian(cost)
            total = float(cost[np.arange(n), cols].sum())
            _, best = oracles.hungarian_brute(cost)
            if abs(total - best) > 0:
                return False, f"hungarian suboptimal at n={n}: {total} vs {best}"
    return True, "hungarian equals factorial brute force on 100 instances"


def _check_ap_oracle():
    rng = np.random.default_rng(17)
    for _ in range(20):
        n_gt = int(rng.integers(1, 5))
        n_pred = int(rng.integers(0, 8))
        gts = [head.Box3D((rng.uniform(-5, 5), rng.uniform(-5, 5), 0.5), (1, 1, 1), 0.0, 0)
               for _ in range(n_gt)]
        preds = [head.Box3D((rng.uniform(-5, 5), rng.uniform(-5, 5), 0.5), (1, 1, 1), 0.0, 0,
                            float(rng.uniform(0, 1))) for _ in range(n_pred)]
        ds = metrics.DetectionSet(preds, gts, 0)
        for thr in (1.0, 2.0):
            got = metrics.ap_at_threshold([ds], 0, thr)
            records = oracles.match_greedy(
                [(p.score, i, 0, p.center[0], p.center[1]) for i, p in enumerate(preds)],
                [(0, g.center[0], g.center[1]) for g in gts], thr)
            want = oracles.ap_reference(records, n_gt)
            if abs(got - want) > 1e-12:
                return False, f"ap deviates: {got} vs {want}"
    return True, "average precision equals brute-force PR oracle on 40 instances"


def _check_depth_fill_oracle():
    rng = np.random.default_rng(19)
    for _ in range(10):
        mask = rng.random((8, 8)) < 0.15
        if not mask.any():
            mask[0, 0] = True
        values = np.where(mask, rng.uniform(1, 9, (8, 8)), 0.0)
        got = lidar.complete_depth(lidar.DepthMap(values, mask)).values
        want = oracles.nearest_seed_fill(values, mask)
        if not np.array_equal(got, want):
            return False, "depth completion deviates from nearest-seed scan"
    return True, "depth completion matches nearest-seed brute force exactly"


def _check_splat_oracle():
    rng = np.random.default_rng(23)
    cfg = fusion.FusionConfig(depth_bins=3, depth_min=1.0, depth_max=5.0, c2d=2)
    grid = geom.GridSpec((-3, -3, 0), (3, 3, 6), (1.5, 1.5, 1.5))
    cam = geom.CameraModel(np.array([[2.0, 0, 2], [0, 2.0, 2], [0, 0, 1]]), np.eye(4), (4, 4))
    feats = rng.uniform(0.1, 1.0, (2, 2, 2))
    dk = nncore.Parameter("dk", rng.standard_normal((3, 2, 1, 1)))
    db = nncore.Parameter("db", rng.standard_normal(3))
    camf = fusion.CameraFeatures(nncore.Tensor(feats), 2)
    dense, dropped = fusion.lift_splat(camf, cam, grid, dk, db, cfg)
    logits = nncore.conv2d(nncore.Tensor(feats), dk.tensor, db.tensor).data
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    probs = e / e.sum(axis=0, keepdims=True)
    want, want_dropped = oracles.splat_accumulate(feats, probs, cam, grid, 2,
                                                  fusion.depth_bin_centers(cfg))
    err = np.abs(dense.data - want).max()
    if err > ORACLE_TOLERANCE:
        return False, f"splat deviates {err:.2e}"
    total_emitted = float((probs * np.abs(feats).sum(axis=0)[None]).sum())
    balance = abs(np.abs(dense.data).sum() + dropped - total_emitted)
    if balance > MASS_TOLERANCE or abs(dropped - want_dropped) > MASS_TOLERANCE:
        return False, f"splat mass imbalance {balance:.2e}"
    return True, "lift-splat matches scatter oracle and conserves mass"


def _check_softmax_values():
    got = nncore.softmax(nncore.Tensor([1.0, 0.5, 0.25]), axis=0).data
    # mpmath softmax([1, 0.5, 0.25]) at 60 digits, rounded to float64
    want = np.array([0.48102426325336967, 0.29175596372884977, 0.2272197730177806])
    if np.abs(got - want).max() > 1e-12:
        return False, "softmax drifts from high-precision oracle values"
    shifted = nncore.softmax(nncore.Tensor([3.0, 2.5, 2.25]), axis=0).data
    if np.abs(got - shifted).max() > 1e-12:
        return False, "softmax not shift invariant"
    return True, "softmax matches high-precision values and is shift invariant"


def _check_geometry_roundtrip():
    cam = geom.CameraModel(np.array([[100.0, 0, 64], [0, 100.0, 32], [0, 0, 1]]),
                           np.eye(4), (64, 128))
    rng = np.random.default_rng(29)
    for _ in range(200):
        u = rng.uniform(0, 127.999)
        v = rng.uniform(0, 63.999)
        d = rng.uniform(0.5, 40)
        p = geom.unproject_pixel(u, v, d, cam)
        u2, v2, d2, ok = geom.project_point(p, cam)
        if not ok or max(abs(u2 - u), abs(v2 - v), abs(d2 - d)) > 1e-9:
            return False, "projection round trip exceeded 1e-9"
    return True, "project/unproject round trip within 1e-9 on 200 samples"


def _check_checkpoint_roundtrip():
    rng = np.random.default_rng(31)
    records = {"a.w": rng.standard_normal((3, 4)), "b": rng.standard_normal(5),
               "_meta.step": np.array([7.0])}
    blob = ckpt.dumps(records)
    back = ckpt.loads(blob)
    same = all(np.array_equal(records[k], back[k]) for k in records) and \
        list(records) == list(back)
    return same, "checkpoint byte round trip preserves records"


SELFTEST_SUITE = [
    ("conv_oracles", _check_conv_oracles),
    ("attention_oracle", _check_attention_oracle),
    ("hungarian_oracle", _check_hungarian_oracle),
    ("average_precision_oracle", _check_ap_oracle),
    ("depth_completion_oracle", _check_depth_fill_oracle),
    ("lift_splat_oracle", _check_splat_oracle),
    ("softmax_values", _check_softmax_values),
    ("geometry_roundtrip", _check_geometry_roundtrip),
    ("checkpoint_roundtrip", _check_checkpoint_roundtrip),
]


def run_selftest():
    results = []
    for name, fn in SELFTEST_SUITE:
        ok, detail = fn()
        results.append({"name": name, "passed": bool(ok), "detail": detail})
    return results


def selftest_report(results):
    lines = ["selftest-report v1"]
    for r in results:
        lines.append(f"check {r['name']} {'pass' if r['passed'] else 'FAIL'} - {r['detail']}")
    overall = all(r["passed"] for r in results)
    lines.append(f"overall {'pass' if overall else 'FAIL'}")
    return "\n".join(lines) + "\n"


def require_all_passed(results, what):
    failed = [r for r in results if not r["passed"]]
    if failed:
        names = ", ".join(r.get("name", r.get("op", "?")) for r in failed)
        raise AcceptanceError(f"{what}: failed checks: {names}")
