use nalgebra::{Matrix3, Vector2, Vector3};

use super::{disp_to_depth_derivative, FitConfig, FitState, PyramidMode};
use crate::error::{Error, Result};
use crate::geometry::{object_pose_change, so3, warp_with_derivatives, Intrinsics, PixelCoord, SE3Pose};
use crate::imaging::{
    bilinear_sample, downsample, downsample_adjoint, downsample_adjoint_image, BinaryMask, DepthMap, Image, ImagePyramid,
    Partition,
};
use crate::losses::{appearance_term, pe_vjp, scale_loss, smoothness_with_grad, LossBreakdown};
use crate::objects::{associate, classify_motion, pose_from_cuboid, Association, DetectionSet, Motion, MotionLabel};
use crate::scene::RenderedFrame;

/// One view as seen by the objective. Only the target needs a partition.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub image: Image,
    pub partition: Option<Partition>,
    pub detections: DetectionSet,
}

impl From<&RenderedFrame> for FrameData {
    fn from(f: &RenderedFrame) -> Self {
        Self {
            image: f.image.clone(),
            partition: Some(f.partition.clone()),
            detections: f.detections.clone(),
        }
    }
}

/// An associated object for one source view.
#[derive(Debug, Clone, Copy)]
pub struct ObjectLink {
    /// Index of the detection in the target set; its mask is region `target + 1`.
    pub target: usize,
    /// Position of the detection in the target set, used for offsets.
    pub slot: usize,
    pub source: usize,
    /// Detected source-frame pose `L_s`.
    pub l_s: SE3Pose,
    /// Detected target-frame pose `L_t`, before any offset.
    pub l_t: SE3Pose,
    pub label: Option<MotionLabel>,
}

impl ObjectLink {
    fn l_t_with(&self, offset: &Vector3<f64>) -> SE3Pose {
        SE3Pose::from_translation(*offset).compose(&self.l_t)
    }

    pub fn is_static(&self) -> bool {
        self.label.is_some_and(|l| l.label == Motion::Static)
    }
}

/// Associated objects and their motion labels, per source view.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub links: Vec<Vec<ObjectLink>>,
    /// Target pixels left out of the appearance term in every view.
    pub held_out: Option<BinaryMask>,
}

impl ObjectModel {
    pub fn static_count(&self) -> usize {
        self.links.iter().flatten().filter(|l| l.is_static()).count()
    }
}

/// Gradients in the same layout as [`FitState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub depth: Vec<f64>,
    pub poses: Vec<[f64; 6]>,
    pub objects: Vec<Vector3<f64>>,
}

impl Gradients {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.depth.clone();
        for p in &self.poses {
            v.extend(p);
        }
        for o in &self.objects {
            v.extend(o.iter());
        }
        v
    }

    pub fn depth_norm(&self) -> f64 {
        self.depth.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn pose_norm(&self) -> f64 {
        self.poses.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub gradients: Option<Gradients>,
    /// Full-resolution validity of every target pixel, per source view.
    pub valid: Vec<BinaryMask>,
}

/// Cached per-pixel derivatives of one warped, sampled pixel.
#[derive(Clone, Copy)]
struct PixelCache {
    d_u: [f64; 3],
    d_v: [f64; 3],
    d_depth: Vector2<f64>,
    d_point_t: nalgebra::Matrix3x2<f64>,
    point: Vector3<f64>,
    warp: Warp,
}

struct SynthView {
    recon: Image,
    valid: BinaryMask,
    cache: Vec<Option<PixelCache>>,
}

struct GradAccumulator {
    levels: Vec<Vec<f64>>,
    poses: Vec<[f64; 6]>,
    objects: Vec<Vector3<f64>>,
    free_depth: bool,
    free_pose: bool,
    free_obj: bool,
}

#[derive(Clone, Copy)]
enum Warp {
    Camera,
    Object(usize),
}

/// Fixed inputs of a fit: pyramids, masks and associations.
pub struct Problem {
    k: Intrinsics,
    width: usize,
    height: usize,
    target: FrameData,
    sources: Vec<FrameData>,
    target_pyr: ImagePyramid,
    source_pyrs: Vec<ImagePyramid>,
    partitions: Vec<Partition>,
    masks: Vec<BinaryMask>,
    associations: Vec<Association>,
    gt_depth: Option<DepthMap>,
    num_scales: usize,
}

impl Problem {
    pub fn new(
        k: Intrinsics,
        target: FrameData,
        sources: Vec<FrameData>,
        gt_depth: Option<DepthMap>,
        cfg: &FitConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if sources.is_empty() {
            return Err(Error::Contract("at least one source frame is required".into()));
        }
        let (w, h) = (target.image.width(), target.image.height());
        k.validate_for(w, h)?;
        if sources.iter().any(|s| !s.image.same_shape(&target.image)) {
            return Err(Error::Contract("source images differ from the target in shape".into()));
        }
        let partition = target
            .partition
            .clone()
            .ok_or_else(|| Error::Contract("target frame needs region masks".into()))?;
        if partition.width() != w || partition.height() != h {
            return Err(Error::Contract("target masks differ from the image in size".into()));
        }
        for d in target.detections.detections() {
            if d.index + 1 >= partition.regions() {
                return Err(Error::Contract(format!("target detection {} has no mask region", d.index)));
            }
        }
        if let Some(g) = &gt_depth {
            if g.width() != w || g.height() != h {
                return Err(Error::Contract("ground-truth depth differs from the image in size".into()));
            }
        }
        let n = cfg.weights.num_scales;
        let target_pyr = ImagePyramid::new(&target.image, n)?;
        let source_pyrs = sources
            .iter()
            .map(|s| ImagePyramid::new(&s.image, n))
            .collect::<Result<Vec<_>>>()?;
        let mut partitions = vec![partition];
        for l in 1..n {
            let next = partitions[l - 1].downsample()?;
            partitions.push(next);
        }
        let masks = partitions[0].masks();
        let associations = sources
            .iter()
            .map(|s| associate(&target.detections, &s.detections, cfg.alpha_assoc, cfg.score_threshold))
            .collect();
        Ok(Self {
            k,
            width: w,
            height: h,
            target,
            sources,
            target_pyr,
            source_pyrs,
            partitions,
            masks,
            associations,
            gt_depth,
            num_scales: n,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.k
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn num_target_objects(&self) -> usize {
        self.target.detections.len()
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn gt_depth(&self) -> Option<&DepthMap> {
        self.gt_depth.as_ref()
    }

    pub fn associations(&self) -> &[Association] {
        &self.associations
    }

    pub fn target_image(&self) -> &Image {
        &self.target.image
    }

    /// Mask of region `r` at full resolution.
    pub fn mask(&self, region: usize) -> &BinaryMask {
        &self.masks[region]
    }

    pub fn check_state(&self, state: &FitState) -> Result<()> {
        if state.depth.width() != self.width || state.depth.height() != self.height {
            return Err(Error::Contract("depth parameters differ from the image in size".into()));
        }
        if state.poses.len() != self.sources.len() {
            return Err(Error::Contract("one pose per source frame is required".into()));
        }
        if state.object_offsets.len() != self.target.detections.len() {
            return Err(Error::Contract("one offset per target detection is required".into()));
        }
        Ok(())
    }

    /// Builds the associated-object links and labels each one static or
    /// dynamic under the current depth and camera motion.
    pub fn classify(&self, state: &FitState, cfg: &FitConfig) -> Result<ObjectModel> {
        self.check_state(state)?;
        let depth = state.depth.depth();
        let c = cfg.object_scale;
        let mut links = Vec::with_capacity(self.sources.len());
        for (s, assoc) in self.associations.iter().enumerate() {
            let t_ts = state.poses[s].pose();
            let mut per = Vec::new();
            for m in &assoc.pairs {
                let slot = self
                    .target
                    .detections
                    .detections()
                    .iter()
                    .position(|d| d.index == m.target)
                    .expect("associated target exists");
                let l_t = pose_from_cuboid(self.target.detections.get(m.target).expect("target")).scaled_translation(c);
                let l_s = pose_from_cuboid(self.sources[s].detections.get(m.source).expect("source"))
                    .scaled_translation(c);
                let mut link = ObjectLink {
                    target: m.target,
                    slot,
                    source: m.source,
                    l_s,
                    l_t,
                    label: None,
                };
                let l_t_eff = link.l_t_with(&state.object_offsets[slot]);
                link.label = match classify_motion(
                    m.target,
                    &l_s,
                    &l_t_eff,
                    &t_ts,
                    &depth,
                    &self.k,
                    &self.masks[m.target + 1],
                    cfg.eps_static,
                ) {
                    Ok(l) => Some(l),
                    Err(Error::NoValidPixels(_)) => None,
                    Err(e) => return Err(e),
                };
                // Objects without usable mask pixels are left to the camera warp.
                if link.label.is_some() {
                    per.push(link);
                }
            }
            links.push(per);
        }
        Ok(ObjectModel { links, held_out: None })
    }

    /// Final loss and, when requested, its gradient with respect to the free
    /// parameters (frozen groups report exact zeros).
    pub fn evaluate(&self, state: &FitState, model: &ObjectModel, cfg: &FitConfig, want_grad: bool) -> Result<Evaluation> {
        self.check_state(state)?;
        let w = &cfg.weights;
        let free_depth = want_grad && cfg.free.depth();
        let free_pose = want_grad && cfg.free.pose();
        let free_obj = want_grad && cfg.optimize_object_translation;
        let n_src = self.sources.len();

        let depth0 = state.depth.depth();
        let mut depth_levels = vec![depth0];
        if cfg.pyramid == PyramidMode::Warp {
            for l in 1..self.num_scales {
                let next = depth_levels[l - 1].downsample()?;
                depth_levels.push(next);
            }
        }
        let cams: Vec<SE3Pose> = state.camera_poses();
        let keep = self.keep_levels(model, cfg)?;

        // Pose used for every region of every source view. Objects labelled
        // static are explained by the camera motion like the background.
        let mut region_warps: Vec<Vec<(SE3Pose, Warp)>> = Vec::with_capacity(n_src);
        for s in 0..n_src {
            let mut v = vec![(cams[s], Warp::Camera); self.partitions[0].regions()];
            if cfg.dynamic_warp {
                for (i, link) in model.links[s].iter().enumerate() {
                    if link.is_static() {
                        continue;
                    }
                    let l_t = link.l_t_with(&state.object_offsets[link.slot]);
                    v[link.target + 1] = (object_pose_change(&link.l_s, &l_t), Warp::Object(i));
                }
            }
            region_warps.push(v);
        }

        let mut grads = GradAccumulator {
            levels: depth_levels.iter().map(|d| vec![0.0; d.data().len()]).collect(),
            poses: vec![[0.0; 6]; n_src],
            objects: vec![Vector3::zeros(); state.object_offsets.len()],
            free_depth,
            free_pose,
            free_obj,
        };
        let mut appearance = Vec::with_capacity(self.num_scales);
        let mut full_valid = Vec::new();

        match cfg.pyramid {
            PyramidMode::Warp => {
                for l in 0..self.num_scales {
                    let tgt = self.target_pyr.level(l);
                    let views: Vec<SynthView> = (0..n_src)
                        .map(|s| self.synthesize(l, &depth_levels[l], s, &region_warps[s], keep.get(l)))
                        .collect();
                    let recons: Vec<Image> = views.iter().map(|v| v.recon.clone()).collect();
                    let valids: Vec<BinaryMask> = views.iter().map(|v| v.valid.clone()).collect();
                    let term = appearance_term(tgt, &recons, &valids, w)
                        .map_err(|e| Error::NoValidPixels(format!("level {l}: {e}")))?;
                    appearance.push(term.value);
                    if l == 0 {
                        full_valid = valids;
                    }
                    if !want_grad {
                        continue;
                    }
                    for (s, view) in views.iter().enumerate() {
                        let g_img = pe_vjp(tgt, &recons[s], w, &term.upstream(s))?;
                        self.backprop(l, s, &g_img, view, model, state, &mut grads);
                    }
                }
            }
            PyramidMode::Reconstruction => {
                let views: Vec<SynthView> = (0..n_src)
                    .map(|s| self.synthesize(0, &depth_levels[0], s, &region_warps[s], keep.first()))
                    .collect();
                let mut recons: Vec<Vec<Image>> = vec![views.iter().map(|v| v.recon.clone()).collect()];
                let mut valids: Vec<Vec<BinaryMask>> = vec![views.iter().map(|v| v.valid.clone()).collect()];
                for l in 1..self.num_scales {
                    let r = recons[l - 1].iter().map(downsample).collect::<Result<Vec<_>>>()?;
                    let v = valids[l - 1].iter().map(BinaryMask::downsample_all).collect::<Result<Vec<_>>>()?;
                    recons.push(r);
                    valids.push(v);
                }
                full_valid = valids[0].clone();
                let tgt0 = self.target_pyr.level(0);
                let mut g_imgs: Vec<Image> = (0..n_src).map(|_| Image::zeros(tgt0.width(), tgt0.height(), tgt0.channels())).collect();
                for l in 0..self.num_scales {
                    let tgt = self.target_pyr.level(l);
                    let term = appearance_term(tgt, &recons[l], &valids[l], w)
                        .map_err(|e| Error::NoValidPixels(format!("level {l}: {e}")))?;
                    appearance.push(term.value);
                    if !want_grad {
                        continue;
                    }
                    for s in 0..n_src {
                        let mut g = pe_vjp(tgt, &recons[l][s], w, &term.upstream(s))?;
                        for ll in (0..l).rev() {
                            let fine = self.target_pyr.level(ll);
                            g = downsample_adjoint_image(&g, fine.width(), fine.height());
                        }
                        for (a, b) in g_imgs[s].data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                }
                if want_grad {
                    for (s, view) in views.iter().enumerate() {
                        self.backprop(0, s, &g_imgs[s], view, model, state, &mut grads);
                    }
                }
            }
        }
        let GradAccumulator {
            levels: mut g_levels,
            poses: mut g_pose,
            objects: mut g_obj,
            ..
        } = grads;

        let (smooth, g_smooth) = smoothness_with_grad(&depth_levels[0], &self.target.image, free_depth)?;

        let mut scale_sum = 0.0;
        for s in 0..n_src {
            let pairs: Vec<(SE3Pose, SE3Pose)> = model.links[s]
                .iter()
                .filter(|l| l.is_static())
                .map(|l| (l.l_s, l.l_t_with(&state.object_offsets[l.slot])))
                .collect();
            let sl = scale_loss(&cams[s], &pairs);
            scale_sum += sl.value;
            if sl.present {
                let gscale = w.beta_scale / n_src as f64;
                if free_pose {
                    for a in 0..3 {
                        g_pose[s][3 + a] += gscale * sl.sign[a];
                    }
                }
                if free_obj {
                    // mean_i tran(L_s L_t^-1) = mean_i (t_s - R_s R_t^T (t_t + delta)).
                    let n = sl.pairs as f64;
                    for link in model.links[s].iter().filter(|l| l.is_static()) {
                        let m: Matrix3<f64> = link.l_s.rotation() * link.l_t.rotation().transpose();
                        g_obj[link.slot] += m.transpose() * sl.sign * (gscale / n);
                    }
                }
            }
        }
        let scale = scale_sum / n_src as f64;

        let mut breakdown = LossBreakdown {
            appearance_per_scale: appearance,
            smoothness: smooth,
            scale,
            total: 0.0,
        };
        breakdown.total = breakdown.photometric(w) + w.beta_scale * scale;
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence("loss is not finite".into()));
        }

        let gradients = want_grad.then(|| {
            let mut g_depth = vec![0.0; self.width * self.height];
            if free_depth {
                for l in (1..g_levels.len()).rev() {
                    let (fw, fh) = (depth_levels[l - 1].width(), depth_levels[l - 1].height());
                    let up = downsample_adjoint(&g_levels[l], fw, fh);
                    for (a, b) in g_levels[l - 1].iter_mut().zip(up) {
                        *a += b;
                    }
                }
                for (i, g) in g_depth.iter_mut().enumerate() {
                    let gd = g_levels[0][i] + w.lambda_smooth * g_smooth[i];
                    *g = gd * disp_to_depth_derivative(state.depth.raw()[i]);
                }
            }
            Gradients {
                depth: g_depth,
                poses: g_pose,
                objects: g_obj,
            }
        });
        Ok(Evaluation {
            breakdown,
            gradients,
            valid: full_valid,
        })
    }

    /// Warps every pixel of level `l` into source `s` and samples it.
    /// Per-level masks of the pixels not held out; empty when none are.
    fn keep_levels(&self, model: &ObjectModel, cfg: &FitConfig) -> Result<Vec<BinaryMask>> {
        let Some(held) = &model.held_out else {
            return Ok(Vec::new());
        };
        if (held.width(), held.height()) != (self.width(), self.height()) {
            return Err(Error::Contract("held-out mask does not match the target size".into()));
        }
        let mut levels = vec![BinaryMask::from_fn(held.width(), held.height(), |x, y| !held.get(x, y))];
        if cfg.pyramid == PyramidMode::Warp {
            for l in 1..self.num_scales {
                let next = levels[l - 1].downsample_all()?;
                levels.push(next);
            }
        }
        Ok(levels)
    }

    fn synthesize(
        &self,
        l: usize,
        depth: &DepthMap,
        s: usize,
        warps: &[(SE3Pose, Warp)],
        keep: Option<&BinaryMask>,
    ) -> SynthView {
        let k = self.k.at_level(l);
        let tgt = self.target_pyr.level(l);
        let src = self.source_pyrs[s].level(l);
        let part = &self.partitions[l];
        let (lw, lh, ch) = (tgt.width(), tgt.height(), tgt.channels());
        let mut recon = tgt.clone();
        let mut valid = BinaryMask::new(lw, lh, false);
        let mut cache = vec![None; lw * lh];
        for y in 0..lh {
            for x in 0..lw {
                let (pose, warp) = warps[part.label(x, y) as usize];
                let p = PixelCoord::new(x as f64, y as f64);
                let Ok(wd) = warp_with_derivatives(p, depth.get(x, y), &k, &pose) else {
                    continue;
                };
                let smp = bilinear_sample(src, wd.pixel);
                for c in 0..ch {
                    recon.set(x, y, c, smp.value[c]);
                }
                valid.set(x, y, smp.in_bounds && keep.is_none_or(|m| m.get(x, y)));
                cache[y * lw + x] = Some(PixelCache {
                    d_u: smp.d_u,
                    d_v: smp.d_v,
                    d_depth: wd.d_depth,
                    d_point_t: wd.d_point.transpose(),
                    point: wd.point,
                    warp,
                });
            }
        }
        SynthView { recon, valid, cache }
    }

    /// Chains an image-space gradient of level `l` through the sampling and
    /// warp derivatives into the parameter gradients.
    #[allow(clippy::too_many_arguments)]
    fn backprop(
        &self,
        l: usize,
        s: usize,
        g_img: &Image,
        view: &SynthView,
        model: &ObjectModel,
        state: &FitState,
        acc: &mut GradAccumulator,
    ) {
        let omega = state.poses[s].omega;
        let (lw, ch) = (g_img.width(), g_img.channels());
        for (i, pc) in view.cache.iter().enumerate() {
            let Some(pc) = pc.as_ref() else {
                continue;
            };
            let gpix = g_img.pixel(i % lw, i / lw);
            let mut dq = Vector2::zeros();
            for c in 0..ch {
                dq.x += gpix[c] * pc.d_u[c];
                dq.y += gpix[c] * pc.d_v[c];
            }
            if dq.x == 0.0 && dq.y == 0.0 {
                continue;
            }
            if acc.free_depth {
                acc.levels[l][i] += dq.dot(&pc.d_depth);
            }
            let g_q: Vector3<f64> = pc.d_point_t * dq;
            match pc.warp {
                Warp::Camera if acc.free_pose => {
                    let gw = so3::rotate_point_jacobian(&omega, &pc.point).transpose() * g_q;
                    let gp = &mut acc.poses[s];
                    for a in 0..3 {
                        gp[a] += gw[a];
                        gp[3 + a] += g_q[a];
                    }
                }
                Warp::Object(li) if acc.free_obj => {
                    let link = &model.links[s][li];
                    // Q = R_s R_t^T (P - t_t - delta) + t_s.
                    let m: Matrix3<f64> = link.l_s.rotation() * link.l_t.rotation().transpose();
                    acc.objects[link.slot] -= m.transpose() * g_q;
                }
                _ => {}
            }
        }
    }

    /// Loss as a function of the flattened parameter vector, for
    /// finite-difference checks.
    pub fn loss_at(&self, template: &FitState, model: &ObjectModel, cfg: &FitConfig, v: &[f64]) -> Result<f64> {
        let st = template.with_vec(v)?;
        Ok(self.evaluate(&st, model, cfg, false)?.breakdown.total)
    }
}
