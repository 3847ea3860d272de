use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::difffield::{Activation, Conv2d, ConvStack, ConvTape, FeatureMap, Mat, MlpNet, MlpTape, Params, PosEnc};
use crate::error::{contract, Error, Result};
use crate::geomath::{ImagePlane, NormalMap, Vec3, View};
use crate::io::{get_conv, get_mlp, put_conv, put_mlp, Tensor, TnsrFile};

/// Input channels: front normal, front mask, mirrored back normal, back mask.
pub const INPUT_CHANNELS: usize = 8;

/// Stride of each pyramid level; the last level sits at 1/4 resolution.
const STRIDES: [usize; 4] = [1, 2, 1, 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconArch {
    /// Output channels of the four conv levels.
    pub channels: [usize; 4],
    /// Sample every level (hypercolumn) instead of only the last one.
    pub multiscale: bool,
    pub decoder_width: usize,
    pub decoder_layers: usize,
    /// Frequency order of the depth encoding.
    pub z_order: usize,
    pub seed: u64,
}

impl Default for ReconArch {
    fn default() -> Self {
        Self { channels: [16, 32, 64, 64], multiscale: true, decoder_width: 128, decoder_layers: 3, z_order: 4, seed: 0 }
    }
}

impl ReconArch {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.decoder_width == 0 || self.decoder_layers == 0 {
            return Err(contract("reconstruction network widths must be positive"));
        }
        Ok(())
    }

    fn sampled_levels(&self) -> std::ops::Range<usize> {
        if self.multiscale {
            0..4
        } else {
            3..4
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.sampled_levels().map(|l| self.channels[l]).sum()
    }
}

/// Conv feature pyramid `h` over stacked canonical normal maps and the
/// implicit decoder `g(h(pi(x)), x_z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconNets {
    pub arch: ReconArch,
    pub encoder: ConvStack,
    pub decoder: MlpNet,
    zenc: PosEnc,
}

/// Pyramid features of one pair of maps.
#[derive(Clone, Debug)]
pub struct Encoding {
    pub plane: ImagePlane,
    pub levels: Vec<FeatureMap>,
    tapes: Option<Vec<ConvTape>>,
}

/// Decoder pass over a batch of points, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct DecodeTape {
    coords: Vec<Option<(f64, f64)>>,
    mlp: MlpTape,
}

impl Params for ReconNets {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        self.encoder.visit_params(f);
        self.decoder.visit_params(f);
    }

    fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }
}

/// Stacks the front map and the column-mirrored back map (so both share
/// the front image's columns) with their masks.
pub fn stack_maps(front: &NormalMap, back: &NormalMap) -> Result<FeatureMap> {
    if !front.same_size(back) {
        return Err(contract("front and back maps differ in size"));
    }
    let (w, h) = (front.width(), front.height());
    let mut x = FeatureMap::zeros(h, w, INPUT_CHANNELS);
    for row in 0..h {
        for col in 0..w {
            let px = x.pixel_mut(row, col);
            if let Some(n) = front.get(col, row) {
                px[..3].copy_from_slice(n.as_slice());
                px[3] = 1.0;
            }
            if let Some(n) = back.get(w - 1 - col, row) {
                px[4..7].copy_from_slice(n.as_slice());
                px[7] = 1.0;
            }
        }
    }
    Ok(x)
}

impl ReconNets {
    pub fn new(arch: &ReconArch) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);
        let mut inputs = INPUT_CHANNELS;
        let layers = arch
            .channels
            .iter()
            .zip(STRIDES)
            .map(|(&c, s)| {
                let l = Conv2d::random(inputs, c, 3, s, Activation::Relu, &mut rng);
                inputs = c;
                l
            })
            .collect();
        let zenc = PosEnc::new(arch.z_order, 1);
        let mut widths = vec![arch.feature_dim() + zenc.output_dim()];
        widths.extend(std::iter::repeat_n(arch.decoder_width, arch.decoder_layers));
        widths.push(1);
        let decoder = MlpNet::random(&widths, Activation::Relu, Activation::Sigmoid, &mut rng);
        Ok(Self { arch: arch.clone(), encoder: ConvStack { layers }, decoder, zenc })
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }

    fn run_encoder(&self, front: &NormalMap, back: &NormalMap, keep_tape: bool) -> Result<Encoding> {
        let plane = ImagePlane::canonical(front.width(), front.height());
        let mut h = stack_maps(front, back)?;
        let mut levels = Vec::with_capacity(4);
        let mut tapes = Vec::new();
        for layer in &self.encoder.layers {
            if keep_tape {
                let (o, t) = layer.forward_tape(&h)?;
                tapes.push(t);
                h = o;
            } else {
                h = layer.forward(&h)?;
            }
            levels.push(h.clone());
        }
        Ok(Encoding { plane, levels, tapes: keep_tape.then_some(tapes) })
    }

    pub fn encode(&self, front: &NormalMap, back: &NormalMap) -> Result<Encoding> {
        self.run_encoder(front, back, false)
    }

    pub fn encode_tape(&self, front: &NormalMap, back: &NormalMap) -> Result<Encoding> {
        self.run_encoder(front, back, true)
    }

    /// Pixel coordinates of the orthographic front projection, `None`
    /// outside the map window.
    fn project(plane: &ImagePlane, p: &Vec3) -> Option<(f64, f64)> {
        let (c, r) = plane.project(p, View::Front);
        let inside = c >= -0.5 && r >= -0.5 && c <= plane.width as f64 - 0.5 && r <= plane.height as f64 - 0.5;
        inside.then_some((c, r))
    }

    fn decoder_input(&self, enc: &Encoding, pts: &[Vec3]) -> Result<(Mat, Vec<Option<(f64, f64)>>)> {
        let fd = self.arch.feature_dim();
        let zd = self.zenc.output_dim();
        let mut x = Mat::zeros(pts.len(), fd + zd);
        let mut coords = Vec::with_capacity(pts.len());
        for (i, p) in pts.iter().enumerate() {
            let c = Self::project(&enc.plane, p);
            coords.push(c);
            let row = x.row_mut(i);
            if let Some((col, r)) = c {
                let mut off = 0;
                let mut scale = 1.0;
                for (l, level) in enc.levels.iter().enumerate() {
                    scale *= STRIDES[l] as f64;
                    if self.arch.sampled_levels().contains(&l) {
                        level.sample_into(col / scale, r / scale, &mut row[off..off + level.channels]);
                        off += level.channels;
                    }
                }
            }
            row[fd..].copy_from_slice(&self.zenc.apply(&[p.z])?);
        }
        Ok((x, coords))
    }

    #[cfg(test)]
    pub(crate) fn decoder_input_for_test(&self, enc: &Encoding, pts: &[Vec3]) -> (Mat, Vec<Option<(f64, f64)>>) {
        self.decoder_input(enc, pts).unwrap()
    }

    /// Occupancy of each canonical point; points projecting outside the
    /// window get 0.
    pub fn eval(&self, enc: &Encoding, pts: &[Vec3]) -> Result<Vec<f64>> {
        let (x, coords) = self.decoder_input(enc, pts)?;
        let out = self.decoder.forward(&x)?;
        Ok(coords.iter().zip(out.data()).map(|(c, &v)| if c.is_some() { v } else { 0.0 }).collect())
    }

    pub fn eval_tape(&self, enc: &Encoding, pts: &[Vec3]) -> Result<(Vec<f64>, DecodeTape)> {
        let (x, coords) = self.decoder_input(enc, pts)?;
        let (out, mlp) = self.decoder.forward_tape(&x)?;
        let occ = coords.iter().zip(out.data()).map(|(c, &v)| if c.is_some() { v } else { 0.0 }).collect();
        Ok((occ, DecodeTape { coords, mlp }))
    }

    /// Accumulates parameter gradients for `grad = dL/d(occupancy)` through
    /// the decoder and, if `enc` was taped, the conv pyramid.
    pub fn backward(&mut self, enc: &Encoding, tape: &DecodeTape, grad: &[f64]) -> Result<()> {
        if grad.len() != tape.coords.len() {
            return Err(contract("occupancy gradient length does not match the batch"));
        }
        let g: Vec<f64> = tape.coords.iter().zip(grad).map(|(c, &g)| if c.is_some() { g } else { 0.0 }).collect();
        let gx = self.decoder.backward(&tape.mlp, &Mat::from_vec(g.len(), 1, g)?)?;
        let Some(tapes) = &enc.tapes else { return Ok(()) };
        let mut level_grads: Vec<FeatureMap> = enc.levels.iter().map(|l| FeatureMap::zeros(l.height, l.width, l.channels)).collect();
        for (i, c) in tape.coords.iter().enumerate() {
            let Some((col, r)) = *c else { continue };
            let row = gx.row(i);
            let mut off = 0;
            let mut scale = 1.0;
            for (l, lg) in level_grads.iter_mut().enumerate() {
                scale *= STRIDES[l] as f64;
                if self.arch.sampled_levels().contains(&l) {
                    lg.scatter_add(col / scale, r / scale, &row[off..off + lg.channels]);
                    off += lg.channels;
                }
            }
        }
        let mut upstream: Option<FeatureMap> = None;
        for (l, layer) in self.encoder.layers.iter_mut().enumerate().rev() {
            let mut g = std::mem::replace(&mut level_grads[l], FeatureMap::zeros(0, 0, 0));
            if let Some(u) = upstream.take() {
                g.data.iter_mut().zip(&u.data).for_each(|(a, b)| *a += b);
            }
            let down = layer.backward(&tapes[l], &g)?;
            upstream = (l > 0).then_some(down);
        }
        Ok(())
    }

    pub fn to_tnsr(&self) -> Result<TnsrFile> {
        let mut f = TnsrFile::new();
        let a = &self.arch;
        let mut dims: Vec<u32> = a.channels.iter().map(|&c| c as u32).collect();
        dims.extend([a.multiscale as u32, a.decoder_width as u32, a.decoder_layers as u32, a.z_order as u32]);
        f.insert("arch.dims", Tensor::u32(&[dims.len()], dims)?)?;
        f.insert("arch.seed", Tensor::u32(&[2], vec![(a.seed >> 32) as u32, a.seed as u32])?)?;
        put_conv(&mut f, "encoder", &self.encoder)?;
        put_mlp(&mut f, "decoder", &self.decoder)?;
        Ok(f)
    }

    pub fn from_tnsr(f: &TnsrFile) -> Result<Self> {
        let (d, _) = f.u32("arch.dims")?;
        let (s, _) = f.u32("arch.seed")?;
        if d.len() != 8 || s.len() != 2 {
            return Err(Error::Format("reconstruction checkpoint has malformed arch tensors".into()));
        }
        let arch = ReconArch {
            channels: [d[0] as usize, d[1] as usize, d[2] as usize, d[3] as usize],
            multiscale: d[4] != 0,
            decoder_width: d[5] as usize,
            decoder_layers: d[6] as usize,
            z_order: d[7] as usize,
            seed: ((s[0] as u64) << 32) | s[1] as u64,
        };
        let mut nets = Self::new(&arch)?;
        let encoder = get_conv(f, "encoder")?;
        let decoder = get_mlp(f, "decoder")?;
        if encoder.param_count() != nets.encoder.param_count() || decoder.param_count() != nets.decoder.param_count() {
            return Err(Error::Format("reconstruction checkpoint does not match its arch".into()));
        }
        nets.encoder = encoder;
        nets.decoder = decoder;
        Ok(nets)
    }
}

/// `g(h(pi(x)), x_z)` for a single canonical point.
pub fn recon_eval(nets: &ReconNets, front: &NormalMap, back: &NormalMap, x: &Vec3) -> Result<f64> {
    Ok(nets.eval(&nets.encode(front, back)?, std::slice::from_ref(x))?[0])
}
