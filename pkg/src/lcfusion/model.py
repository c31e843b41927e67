"""Full detection model: parameter registry, per-scene caching and the
forward pipeline in its fixed stage order.

Stage order: voxelize -> camera stem -> sparse depth -> depth completion ->
image enhancement -> voxel enhancement -> lift-splat -> unified fusion ->
BEV collapse -> BEV encode -> query decode -> predict. The voxel
enhancement consumes the original (pre-enhancement) camera features; the
lift-splat consumes the enhanced ones.

In debug mode, forward() also returns every named intermediate.
"""

import numpy as np

from . import fusion, geom, head, lidar, nncore
from .errors import ValidationError
from .nncore import checkpoint as ckpt


def _stem_strides(stride):
    if stride == 1:
        return 1, 1
    if stride == 2:
        return 2, 1
    if stride == 4:
        return 2, 2
    raise ValidationError(f"camera stride {stride} unsupported (use 1, 2 or 4)")


class SceneCache:
    """Static per-scene precomputation: everything that does not depend on parameters."""

    def __init__(self, scene, cfg, grid, fcfg):
        self.scene = scene
        self.keys, self.base_feats, self.counts = lidar.pool_points(scene.point_cloud, grid)
        self.image = nncore.Tensor(scene.image)
        stride = cfg.camera.stride
        self.sparse = lidar.sparse_depth(scene.point_cloud, scene.camera, stride)
        if self.sparse.mask.any():
            self.dense = lidar.complete_depth(self.sparse)
        else:
            # empty cloud: no depth seeds to complete, fall back to the far plane
            self.dense = lidar.DepthMap(np.full(self.sparse.values.shape, fcfg.depth_max),
                                        np.ones(self.sparse.values.shape, dtype=bool))
        hf = cfg.camera.image_h // stride
        wf = cfg.camera.image_w // stride
        self.splat_targets = fusion.splat_targets(scene.camera, grid, stride, hf, wf, fcfg)
        self.vem_assignment = None   # filled lazily, needs voxel keys only
        if self.keys:
            probe = lidar.SparseVoxelGrid(grid, self.keys, np.zeros((len(self.keys), fcfg.c3d)))
            camf_probe = fusion.CameraFeatures(nncore.Tensor(np.zeros((fcfg.c2d, hf, wf))), stride)
            self.vem_assignment = fusion.assign_cameras(probe, [(scene.camera, camf_probe)], fcfg)


class DetectionModel:
    """Owns every learnable parameter and runs the pipeline."""

    def __init__(self, cfg, seed=None):
        self.cfg = cfg
        self.grid = cfg.grid.to_grid()
        self.fcfg = cfg.fusion
        seed = cfg.model_seed if seed is None else seed
        f = self.fcfg
        hcfg = cfg.head
        nz = self.grid.dims[2]
        self.cb = f.c3d * nz
        s1, s2 = _stem_strides(cfg.camera.stride)
        self.stem_strides = (s1, s2)
        p = nncore.ParamStore()

        def u(name, shape, fan_in, fan_out):
            return p.add(nncore.uniform_init(name, shape, fan_in, fan_out, seed))

        def z(name, shape):
            return p.add(nncore.zeros_init(name, shape))

        sh = cfg.stem.hidden
        self.voxel_w = u("voxel.embed.w", (4, f.c3d), 4, f.c3d)
        self.voxel_b = z("voxel.embed.b", (f.c3d,))
        self.stem1_k = u("stem.conv1.k", (sh, 3, 3, 3), 3 * 9, sh * 9)
        self.stem1_b = z("stem.conv1.b", (sh,))
        self.stem2_k = u("stem.conv2.k", (f.c2d, sh, 3, 3), sh * 9, f.c2d * 9)
        self.stem2_b = z("stem.conv2.b", (f.c2d,))
        self.iem = fusion.IemParams(
            depth_k1=u("depth.emb1.k", (f.c_depth, 1, 3, 3), 9, f.c_depth * 9),
            depth_b1=z("depth.emb1.b", (f.c_depth,)),
            depth_k2=u("depth.emb2.k", (f.c_depth, f.c_depth, 1, 1), f.c_depth, f.c_depth),
            depth_b2=z("depth.emb2.b", (f.c_depth,)),
            fuse_k=u("iem.fuse.k", (f.c2d, f.c2d + f.c_depth, 3, 3), (f.c2d + f.c_depth) * 9, f.c2d * 9),
            fuse_b=z("iem.fuse.b", (f.c2d,)),
        )
        self.vem_w = u("vem.linear.w", (f.c2d, f.c3d), f.c2d, f.c3d)
        self.vem_b = z("vem.linear.b", (f.c3d,))
        self.lift_k = u("lift.depth.k", (f.depth_bins, f.c2d, 1, 1), f.c2d, f.depth_bins)
        self.lift_b = z("lift.depth.b", (f.depth_bins,))
        self.ufuse = fusion.UFuseParams(
            proj_k=u("ufuse.proj.k", (f.c3d, f.c2d, 1, 1, 1), f.c2d, f.c3d),
            proj_b=z("ufuse.proj.b", (f.c3d,)),
            gate_a_k=u("ufuse.gate_a.k", (f.c3d, f.c3d, 1, 1, 1), f.c3d, f.c3d),
            gate_a_b=z("ufuse.gate_a.b", (f.c3d,)),
            gate_b_k=u("ufuse.gate_b.k", (f.c3d, f.c3d, 1, 1, 1), f.c3d, f.c3d),
            gate_b_b=z("ufuse.gate_b.b", (f.c3d,)),
            gate_c_k=u("ufuse.gate_c.k", (1, 2 * f.c3d, 1, 1, 1), 2 * f.c3d, 1),
            gate_c_b=z("ufuse.gate_c.b", (1,)),
            concat_k=u("ufuse.concat.k", (f.c3d, 2 * f.c3d, 1, 1, 1), 2 * f.c3d, f.c3d),
            concat_b=z("ufuse.concat.b", (f.c3d,)),
        )
        bh = cfg.bev.hidden
        self.bev1_k = u("bev.conv1.k", (bh, self.cb, 3, 3), self.cb * 9, bh * 9)
        self.bev1_b = z("bev.conv1.b", (bh,))
        self.bev2_k = z("bev.conv2.k", (self.cb, bh, 3, 3))   # residual branch starts at identity
        self.bev2_b = z("bev.conv2.b", (self.cb,))
        d = hcfg.model_dim
        self.queries = head.QuerySet(u("head.queries", (hcfg.num_queries, d), d, d).tensor)

        def attn(prefix, zero_out=True):
            return head.AttentionParams(
                wq=u(f"{prefix}.wq", (d, d), d, d), bq=z(f"{prefix}.bq", (d,)),
                wk=u(f"{prefix}.wk", (d, d), d, d), bk=z(f"{prefix}.bk", (d,)),
                wv=u(f"{prefix}.wv", (d, d), d, d), bv=z(f"{prefix}.bv", (d,)),
                wo=z(f"{prefix}.wo", (d, d)) if zero_out else u(f"{prefix}.wo", (d, d), d, d),
                bo=z(f"{prefix}.bo", (d,)),
            )

        fh = hcfg.ffn_hidden
        self.decode_params = head.DecodeParams(
            key_k=u("head.key.k", (d, self.cb, 1, 1), self.cb, d),
            key_b=z("head.key.b", (d,)),
            self_attn=attn("head.self"),
            cross_attn=attn("head.cross"),
            ffn_w1=u("head.ffn.w1", (d, fh), d, fh),
            ffn_b1=z("head.ffn.b1", (fh,)),
            ffn_w2=z("head.ffn.w2", (fh, d)),                # residual branch starts at identity
            ffn_b2=z("head.ffn.b2", (d,)),
        )
        ncls = hcfg.num_classes
        self.predict_params = head.PredictParams(
            cls_w1=u("head.cls.w1", (d, fh), d, fh), cls_b1=z("head.cls.b1", (fh,)),
            cls_w2=u("head.cls.w2", (fh, ncls + 1), fh, ncls + 1), cls_b2=z("head.cls.b2", (ncls + 1,)),
            box_w1=u("head.box.w1", (d, fh), d, fh), box_b1=z("head.box.b1", (fh,)),
            box_w2=u("head.box.w2", (fh, 8), fh, 8), box_b2=z("head.box.b2", (8,)),
        )
        self.params = p

    # -- persistence ---------------------------------------------------------

    def state_records(self):
        return {p.name: p.data for p in self.params}

    def load_state(self, records):
        missing = [p.name for p in self.params if p.name not in records]
        bad = [p.name for p in self.params
               if p.name in records and records[p.name].shape != p.data.shape]
        if missing or bad:
            raise ValidationError(
                "checkpoint/config mismatch; missing parameters: "
                f"{missing}; shape mismatches: {bad}")
        for p in self.params:
            p.tensor.data = records[p.name].astype(np.float64).copy()

    def save(self, path, extra=None):
        records = self.state_records()
        if extra:
            records.update(extra)
        ckpt.save(path, records)

    # -- pipeline ------------------------------------------------------------

    def prepare(self, scene):
        return SceneCache(scene, self.cfg, self.grid, self.fcfg)

    def camera_stem(self, image_tensor):
        # same-padding convs plus subsampling == strided convs at 0, s, 2s, ...
        s1, s2 = self.stem_strides
        h = nncore.conv2d(image_tensor, self.stem1_k.tensor, self.stem1_b.tensor,
                          stride=1, padding=1)
        if s1 > 1:
            h = nncore.subsample2d(h, s1)
        h = nncore.relu(h)
        out = nncore.conv2d(h, self.stem2_k.tensor, self.stem2_b.tensor, stride=1, padding=1)
        if s2 > 1:
            out = nncore.subsample2d(out, s2)
        return fusion.CameraFeatures(nncore.relu(out), self.cfg.camera.stride)

    def forward(self, scene_or_cache, debug=False):
        """Run the pipeline; returns (class logits, boxes, debug dict or None)."""
        cache = scene_or_cache if isinstance(scene_or_cache, SceneCache) else self.prepare(scene_or_cache)
        scene = cache.scene
        f = self.fcfg
        f_l = lidar.SparseVoxelGrid(
            self.grid, cache.keys,
            nncore.linear(nncore.Tensor(cache.base_feats), self.voxel_w.tensor, self.voxel_b.tensor)
            if cache.keys else nncore.Tensor(np.zeros((0, f.c3d))))
        f_c = self.camera_stem(cache.image)
        if f.enable_iem:
            f_spc = fusion.iem_enhance(f_c, cache.dense, self.iem, f)
        else:
            f_spc = f_c
        if f.enable_vem and len(f_l):
            f_sel = fusion.vem_enhance(f_l, [(scene.camera, f_c)], self.vem_w, self.vem_b, f,
                                       assignment=cache.vem_assignment)
        else:
            f_sel = f_l
        lifted, dropped = fusion.lift_splat(f_spc, scene.camera, self.grid,
                                            self.lift_k, self.lift_b, f,
                                            targets=cache.splat_targets)
        sel_dense = fusion.densify(f_sel)
        if f.enable_unified:
            fused = fusion.unified_fuse(sel_dense, lifted, self.ufuse, f)
        else:
            fused = sel_dense
        bev0 = fusion.bev_collapse(fused)
        bev = fusion.bev_encode(bev0, self.bev1_k, self.bev1_b, self.bev2_k, self.bev2_b)
        decoded = head.decode(self.queries, bev, self.decode_params)
        logits, boxes = head.predict(decoded, self.predict_params, self.grid)
        dump = None
        if debug:
            dump = {
                "F_L": f_l,
                "F_C": f_c,
                "D_sparse": cache.sparse,
                "D_dense": cache.dense,
                "F_SpC": f_spc,
                "F_SeL": f_sel,
                "F̂_SpC": lifted,
                "F_f": fused,
                "F_B": bev,
                "dropped_mass": dropped,
            }
        return logits, boxes, dump

    def detections(self, scene_or_cache):
        logits, boxes, _ = self.forward(scene_or_cache)
        return head.boxes_from_predictions(logits.data, boxes.data)
