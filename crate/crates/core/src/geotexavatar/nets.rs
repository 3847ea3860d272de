use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bodymodel::{render_positional_maps, ArticulatedBody, Pose};
use crate::difffield::{sigmoid, softplus, Activation, Conv2d, ConvStack, ConvStackTape, FeatureMap, Mat, MlpNet, MlpTape, Params, PosEnc};
use crate::error::{contract, Error, Result};
use crate::geomath::{ImagePlane, Vec3, View};
use crate::io::{get_conv, get_mlp, put_conv, put_mlp, Tensor, TnsrFile};

/// How the warp field sees the pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseEncoderKind {
    /// The flattened joint rotation vector, appended to every point.
    Vector,
    /// A small conv encoder over front/back posed positional maps, sampled
    /// at each point's canonical projection.
    Maps,
}

/// Network sizes of the avatar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvatarArch {
    pub posenc_order: usize,
    pub trunk_width: usize,
    pub trunk_layers: usize,
    /// Hidden width of the geometry and colour heads.
    pub head_width: usize,
    pub warp_width: usize,
    pub warp_layers: usize,
    pub pose_encoder: PoseEncoderKind,
    /// Side of the positional maps fed to the conv pose encoder.
    pub map_size: usize,
    pub map_features: usize,
    /// Density is `density_scale * softplus(raw)`, in 1/m.
    pub density_scale: f64,
    pub seed: u64,
}

impl Default for AvatarArch {
    fn default() -> Self {
        Self {
            posenc_order: 10,
            trunk_width: 128,
            trunk_layers: 4,
            head_width: 64,
            warp_width: 128,
            warp_layers: 3,
            pose_encoder: PoseEncoderKind::Vector,
            map_size: 32,
            map_features: 16,
            density_scale: 50.0,
            seed: 0,
        }
    }
}

impl AvatarArch {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_width == 0 || self.trunk_layers == 0 || self.head_width == 0 {
            return Err(contract("template networks need positive width and depth"));
        }
        if self.warp_width == 0 || self.warp_layers == 0 {
            return Err(contract("warp decoder needs positive width and depth"));
        }
        if self.pose_encoder == PoseEncoderKind::Maps && (self.map_size < 2 || self.map_features == 0) {
            return Err(contract("map encoder needs at least 2x2 maps and one feature"));
        }
        if !(self.density_scale > 0.0 && self.density_scale.is_finite()) {
            return Err(contract("density scale must be positive"));
        }
        Ok(())
    }

    fn map_plane(&self) -> ImagePlane {
        ImagePlane::canonical(self.map_size, self.map_size)
    }
}

/// Shared trunk plus the geometry head (occupancy, density) and colour head.
/// The colour head reads the trunk features concatenated with the encoded
/// template point.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub trunk: MlpNet,
    pub geo: MlpNet,
    pub tex: MlpNet,
}

impl Params for Template {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        self.trunk.visit_params(f);
        self.geo.visit_params(f);
        self.tex.visit_params(f);
    }

    fn param_count(&self) -> usize {
        self.trunk.param_count() + self.geo.param_count() + self.tex.param_count()
    }
}

impl Template {
    pub fn zero_grad(&mut self) {
        self.trunk.zero_grad();
        self.geo.zero_grad();
        self.tex.zero_grad();
    }
}

/// Pose-conditioned canonical-to-template offset decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    pub decoder: MlpNet,
    pub encoder: Option<ConvStack>,
}

impl Params for WarpField {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        self.decoder.visit_params(f);
        if let Some(e) = &mut self.encoder {
            e.visit_params(f);
        }
    }

    fn param_count(&self) -> usize {
        self.decoder.param_count() + self.encoder.as_ref().map_or(0, |e| e.param_count())
    }
}

impl WarpField {
    pub fn zero_grad(&mut self) {
        self.decoder.zero_grad();
        if let Some(e) = &mut self.encoder {
            e.zero_grad();
        }
    }
}

/// Encoder input derived from a pose; computed once per pose.
#[derive(Clone, Debug, PartialEq)]
pub enum PoseInput {
    Vector(Vec<f64>),
    Maps(FeatureMap),
}

/// Field values at a batch of canonical points.
#[derive(Clone, Debug, Default)]
pub struct FieldOutput {
    pub offsets: Vec<Vec3>,
    pub occupancy: Vec<f64>,
    pub density: Vec<f64>,
    /// Present when colours were requested.
    pub colors: Vec<Vec3>,
}

/// Everything [`GeoTexNets::field_backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct FieldTape {
    points: Vec<Vec3>,
    enc_tape: Option<(ConvStackTape, Vec<(f64, f64)>)>,
    warp_tape: MlpTape,
    template_points: Mat,
    trunk_tape: MlpTape,
    geo_tape: MlpTape,
    geo_raw: Mat,
    tex_rows: usize,
    tex_tape: Option<MlpTape>,
}

/// Upstream gradients for [`GeoTexNets::field_backward`]; empty vectors mean zero.
#[derive(Clone, Debug, Default)]
pub struct FieldGrad {
    pub offsets: Vec<Vec3>,
    pub occupancy: Vec<f64>,
    pub density: Vec<f64>,
    pub colors: Vec<Vec3>,
}

/// The avatar: a pose-conditioned warp into template space followed by the
/// template geometry and texture fields.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoTexNets {
    pub arch: AvatarArch,
    pub joints: usize,
    pub posenc: PosEnc,
    pub template: Template,
    pub warp: WarpField,
}

const MAP_CHANNELS: usize = 6;

impl GeoTexNets {
    /// Randomly initialised networks whose warp is exactly zero.
    pub fn new(arch: &AvatarArch, joints: usize) -> Result<Self> {
        arch.validate()?;
        if joints == 0 {
            return Err(contract("the body needs at least one joint"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);
        let posenc = PosEnc::new(arch.posenc_order, 3);
        let w = arch.trunk_width;
        let mut trunk_widths = vec![posenc.output_dim()];
        trunk_widths.extend(std::iter::repeat_n(w, arch.trunk_layers));
        let trunk = MlpNet::random(&trunk_widths, Activation::Relu, Activation::Relu, &mut rng);
        let geo = MlpNet::random(&[w, arch.head_width, 2], Activation::Relu, Activation::None, &mut rng);
        let tex = MlpNet::random(&[w + posenc.output_dim(), arch.head_width, 3], Activation::Relu, Activation::Sigmoid, &mut rng);
        let (cond, encoder) = match arch.pose_encoder {
            PoseEncoderKind::Vector => (3 * joints, None),
            PoseEncoderKind::Maps => {
                let f = arch.map_features;
                let stack = ConvStack {
                    layers: vec![
                        Conv2d::random(MAP_CHANNELS, 16, 3, 1, Activation::Relu, &mut rng),
                        Conv2d::random(16, 16, 3, 1, Activation::Relu, &mut rng),
                        Conv2d::random(16, f, 3, 1, Activation::None, &mut rng),
                    ],
                };
                (f, Some(stack))
            }
        };
        let mut warp_widths = vec![3 + cond];
        warp_widths.extend(std::iter::repeat_n(arch.warp_width, arch.warp_layers));
        warp_widths.push(3);
        let mut decoder = MlpNet::random(&warp_widths, Activation::Relu, Activation::None, &mut rng);
        decoder.zero_final_layer();
        Ok(Self { arch: arch.clone(), joints, posenc, template: Template { trunk, geo, tex }, warp: WarpField { decoder, encoder } })
    }

    pub fn zero_grad(&mut self) {
        self.template.zero_grad();
        self.warp.zero_grad();
    }

    /// Encoder input for `pose`. The map variant stacks the front and back
    /// displacement maps (posed minus rest position) of the body, with the
    /// back map mirrored onto the front pixel grid.
    pub fn pose_input(&self, body: &ArticulatedBody, pose: &Pose) -> Result<PoseInput> {
        pose.validate(self.joints)?;
        if body.joint_count() != self.joints {
            return Err(contract("body joint count does not match the avatar"));
        }
        match self.arch.pose_encoder {
            PoseEncoderKind::Vector => Ok(PoseInput::Vector(pose.vector())),
            PoseEncoderKind::Maps => {
                let plane = self.arch.map_plane();
                let posed = render_positional_maps(body, pose, &plane)?;
                let rest = render_positional_maps(body, &body.rest_pose(), &plane)?;
                let n = self.arch.map_size;
                let mut map = FeatureMap::zeros(n, n, MAP_CHANNELS);
                for row in 0..n {
                    for col in 0..n {
                        let px = map.pixel_mut(row, col);
                        let f = row * n + col;
                        if posed.front.mask[f] {
                            let d = posed.front.values[f] - rest.front.values[f];
                            px[..3].copy_from_slice(d.as_slice());
                        }
                        let b = row * n + (n - 1 - col);
                        if posed.back.mask[b] {
                            let d = posed.back.values[b] - rest.back.values[b];
                            px[3..].copy_from_slice(d.as_slice());
                        }
                    }
                }
                Ok(PoseInput::Maps(map))
            }
        }
    }

    fn check_input(&self, input: &PoseInput) -> Result<()> {
        match (input, self.arch.pose_encoder) {
            (PoseInput::Vector(v), PoseEncoderKind::Vector) if v.len() == 3 * self.joints => Ok(()),
            (PoseInput::Maps(m), PoseEncoderKind::Maps)
                if m.width == self.arch.map_size && m.height == self.arch.map_size && m.channels == MAP_CHANNELS =>
            {
                Ok(())
            }
            _ => Err(contract("pose input does not match the avatar's pose encoder")),
        }
    }

    /// Decoder input rows `[x, condition]` and, for the map encoder, its
    /// forward state and each point's feature-map coordinates.
    fn warp_inputs(&self, points: &[Vec3], input: &PoseInput, record: bool) -> Result<(Mat, Option<(ConvStackTape, Vec<(f64, f64)>)>)> {
        self.check_input(input)?;
        let cond_width = self.warp.decoder.input_width() - 3;
        let mut x = Mat::zeros(points.len(), 3 + cond_width);
        for (r, p) in points.iter().enumerate() {
            x.row_mut(r)[..3].copy_from_slice(p.as_slice());
        }
        match input {
            PoseInput::Vector(v) => {
                for r in 0..points.len() {
                    x.row_mut(r)[3..].copy_from_slice(v);
                }
                Ok((x, None))
            }
            PoseInput::Maps(m) => {
                let enc = self.warp.encoder.as_ref().ok_or_else(|| contract("map encoder is missing"))?;
                let (features, tape) = if record {
                    let (f, t) = enc.forward_tape(m)?;
                    (f, Some(t))
                } else {
                    (enc.forward(m)?, None)
                };
                let plane = self.arch.map_plane();
                let coords: Vec<(f64, f64)> = points.iter().map(|p| plane.project(p, View::Front)).collect();
                for (r, &(px, py)) in coords.iter().enumerate() {
                    features.sample_into(px, py, &mut x.row_mut(r)[3..]);
                }
                Ok((x, tape.map(|t| (t, coords))))
            }
        }
    }

    /// Canonical-to-template offsets `dW(x, pose)`.
    pub fn offsets(&self, points: &[Vec3], input: &PoseInput) -> Result<Vec<Vec3>> {
        let (x, _) = self.warp_inputs(points, input, false)?;
        let d = self.warp.decoder.forward(&x)?;
        Ok(rows3(&d))
    }

    /// `x + dW(x, pose)`.
    pub fn warp_points(&self, points: &[Vec3], input: &PoseInput) -> Result<Vec<Vec3>> {
        let d = self.offsets(points, input)?;
        Ok(points.iter().zip(d).map(|(p, o)| p + o).collect())
    }

    /// Template occupancy, density and (optionally) colour at template-space points.
    pub fn template_fields(&self, template_points: &[Vec3], colors: bool) -> Result<FieldOutput> {
        let x = Mat::from_vec(template_points.len(), 3, template_points.iter().flat_map(|p| [p.x, p.y, p.z]).collect())?;
        let enc = self.posenc.apply_batch(&x)?;
        let h = self.template.trunk.forward(&enc)?;
        let raw = self.template.geo.forward(&h)?;
        let mut out = FieldOutput::default();
        for r in 0..raw.rows() {
            out.occupancy.push(sigmoid(raw.get(r, 0)));
            out.density.push(self.arch.density_scale * softplus(raw.get(r, 1)));
        }
        if colors {
            out.colors = rows3(&self.template.tex.forward(&Mat::hcat(&[&h, &enc])?)?);
        }
        Ok(out)
    }

    /// Occupancy, density, colour and offsets at canonical points, without a tape.
    pub fn field(&self, points: &[Vec3], input: &PoseInput, colors: bool) -> Result<FieldOutput> {
        let offsets = self.offsets(points, input)?;
        let warped: Vec<Vec3> = points.iter().zip(&offsets).map(|(p, o)| p + o).collect();
        let mut out = self.template_fields(&warped, colors)?;
        out.offsets = offsets;
        Ok(out)
    }

    /// Differentiable pass over `points`; colours are evaluated for the last
    /// `color_rows` points only.
    pub fn field_forward(&self, points: &[Vec3], input: &PoseInput, color_rows: usize) -> Result<(FieldOutput, FieldTape)> {
        if color_rows > points.len() {
            return Err(contract("more colour rows than points"));
        }
        let (x, enc_tape) = self.warp_inputs(points, input, true)?;
        let (d, warp_tape) = self.warp.decoder.forward_tape(&x)?;
        let mut t = Mat::zeros(points.len(), 3);
        for (r, p) in points.iter().enumerate() {
            for a in 0..3 {
                t.set(r, a, p[a] + d.get(r, a));
            }
        }
        let enc = self.posenc.apply_batch(&t)?;
        let (h, trunk_tape) = self.template.trunk.forward_tape(&enc)?;
        let (raw, geo_tape) = self.template.geo.forward_tape(&h)?;
        let mut out = FieldOutput { offsets: rows3(&d), ..Default::default() };
        for r in 0..raw.rows() {
            out.occupancy.push(sigmoid(raw.get(r, 0)));
            out.density.push(self.arch.density_scale * softplus(raw.get(r, 1)));
        }
        let tex_tape = if color_rows > 0 {
            let start = points.len() - color_rows;
            let hc = Mat::hcat(&[&h.slice_rows(start, color_rows), &enc.slice_rows(start, color_rows)])?;
            let (c, tape) = self.template.tex.forward_tape(&hc)?;
            out.colors = rows3(&c);
            Some(tape)
        } else {
            None
        };
        Ok((
            out,
            FieldTape {
                points: points.to_vec(),
                enc_tape,
                warp_tape,
                template_points: t,
                trunk_tape,
                geo_tape,
                geo_raw: raw,
                tex_rows: color_rows,
                tex_tape,
            },
        ))
    }

    /// Accumulates parameter gradients. With `train_warp` false the warp
    /// field's gradients are left untouched.
    pub fn field_backward(&mut self, tape: &FieldTape, grad: &FieldGrad, train_warp: bool) -> Result<()> {
        let n = tape.points.len();
        let check = |len: usize, want: usize, what: &str| {
            if len != 0 && len != want {
                Err(contract(format!("{what} gradient has {len} rows, expected {want}")))
            } else {
                Ok(())
            }
        };
        check(grad.offsets.len(), n, "offset")?;
        check(grad.occupancy.len(), n, "occupancy")?;
        check(grad.density.len(), n, "density")?;
        check(grad.colors.len(), tape.tex_rows, "colour")?;
        let mut g_raw = Mat::zeros(n, 2);
        for r in 0..n {
            let z0 = tape.geo_raw.get(r, 0);
            let z1 = tape.geo_raw.get(r, 1);
            if let Some(g) = grad.occupancy.get(r) {
                let s = sigmoid(z0);
                g_raw.set(r, 0, g * s * (1.0 - s));
            }
            if let Some(g) = grad.density.get(r) {
                g_raw.set(r, 1, g * self.arch.density_scale * sigmoid(z1));
            }
        }
        let mut g_h = self.template.geo.backward(&tape.geo_tape, &g_raw)?;
        let mut g_skip = None;
        if let (Some(tex_tape), false) = (&tape.tex_tape, grad.colors.is_empty()) {
            let gc = Mat::from_vec(tape.tex_rows, 3, grad.colors.iter().flat_map(|c| [c.x, c.y, c.z]).collect())?;
            let g_in = self.template.tex.backward(tex_tape, &gc)?;
            let width = g_h.cols();
            let start = n - tape.tex_rows;
            for r in 0..tape.tex_rows {
                for (a, b) in g_h.row_mut(start + r).iter_mut().zip(&g_in.row(r)[..width]) {
                    *a += b;
                }
            }
            g_skip = Some((start, g_in.columns(width, g_in.cols() - width)));
        }
        let mut g_enc = self.template.trunk.backward(&tape.trunk_tape, &g_h)?;
        if !train_warp {
            return Ok(());
        }
        if let Some((start, g)) = g_skip {
            for r in 0..g.rows() {
                for (a, b) in g_enc.row_mut(start + r).iter_mut().zip(g.row(r)) {
                    *a += b;
                }
            }
        }
        let mut g_t = self.posenc.backward(&tape.template_points, &g_enc)?;
        for (r, g) in grad.offsets.iter().enumerate() {
            for a in 0..3 {
                g_t.set(r, a, g_t.get(r, a) + g[a]);
            }
        }
        let g_in = self.warp.decoder.backward(&tape.warp_tape, &g_t)?;
        if let Some((enc_tape, coords)) = &tape.enc_tape {
            let enc = self.warp.encoder.as_mut().ok_or_else(|| contract("map encoder is missing"))?;
            let f = self.arch.map_features;
            let s = self.arch.map_size;
            let mut g_feat = FeatureMap::zeros(s, s, f);
            for (r, &(px, py)) in coords.iter().enumerate() {
                g_feat.scatter_add(px, py, &g_in.row(r)[3..]);
            }
            enc.backward(enc_tape, &g_feat)?;
        }
        Ok(())
    }

    /// Stores the networks and architecture in a tensor file.
    pub fn to_tnsr(&self) -> Result<TnsrFile> {
        let mut f = TnsrFile::new();
        let a = &self.arch;
        let dims = vec![
            a.posenc_order as u32,
            a.trunk_width as u32,
            a.trunk_layers as u32,
            a.head_width as u32,
            a.warp_width as u32,
            a.warp_layers as u32,
            matches!(a.pose_encoder, PoseEncoderKind::Maps) as u32,
            a.map_size as u32,
            a.map_features as u32,
            self.joints as u32,
        ];
        f.insert("arch.dims", Tensor::u32(&[dims.len()], dims)?)?;
        f.insert("arch.density_scale", Tensor::f64(&[1], vec![a.density_scale])?)?;
        f.insert("arch.seed", Tensor::u32(&[2], vec![a.seed as u32, (a.seed >> 32) as u32])?)?;
        put_mlp(&mut f, "trunk", &self.template.trunk)?;
        put_mlp(&mut f, "geo", &self.template.geo)?;
        put_mlp(&mut f, "tex", &self.template.tex)?;
        put_mlp(&mut f, "warp", &self.warp.decoder)?;
        if let Some(e) = &self.warp.encoder {
            put_conv(&mut f, "pose_encoder", e)?;
        }
        Ok(f)
    }

    pub fn from_tnsr(f: &TnsrFile) -> Result<Self> {
        let (d, _) = f.u32("arch.dims")?;
        let (scale, _) = f.f64("arch.density_scale")?;
        let (seed, _) = f.u32("arch.seed")?;
        if d.len() != 10 || scale.len() != 1 || seed.len() != 2 {
            return Err(Error::Format("avatar architecture record is malformed".into()));
        }
        let arch = AvatarArch {
            posenc_order: d[0] as usize,
            trunk_width: d[1] as usize,
            trunk_layers: d[2] as usize,
            head_width: d[3] as usize,
            warp_width: d[4] as usize,
            warp_layers: d[5] as usize,
            pose_encoder: if d[6] == 1 { PoseEncoderKind::Maps } else { PoseEncoderKind::Vector },
            map_size: d[7] as usize,
            map_features: d[8] as usize,
            density_scale: scale[0],
            seed: seed[0] as u64 | (seed[1] as u64) << 32,
        };
        let mut nets = Self::new(&arch, d[9] as usize)?;
        nets.template.trunk = get_mlp(f, "trunk")?;
        nets.template.geo = get_mlp(f, "geo")?;
        nets.template.tex = get_mlp(f, "tex")?;
        nets.warp.decoder = get_mlp(f, "warp")?;
        if nets.warp.encoder.is_some() {
            nets.warp.encoder = Some(get_conv(f, "pose_encoder")?);
        }
        let fresh = Self::new(&arch, d[9] as usize)?;
        if nets.template.param_count() != fresh.template.param_count() || nets.warp.param_count() != fresh.warp.param_count() {
            return Err(Error::Format("avatar networks do not match their architecture".into()));
        }
        Ok(nets)
    }
}

fn rows3(m: &Mat) -> Vec<Vec3> {
    (0..m.rows()).map(|r| Vec3::new(m.get(r, 0), m.get(r, 1), m.get(r, 2))).collect()
}
