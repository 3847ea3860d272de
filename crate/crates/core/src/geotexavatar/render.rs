use rand::Rng;

use super::nets::{GeoTexNets, PoseInput};
use crate::bodymodel::{canonicalize_points, ArticulatedBody, Pose};
use crate::error::{contract, Result};
use crate::geomath::Vec3;
use crate::synthcorpus::ROUND_TRIP_TOLERANCE;

/// A posed-space ray clipped to `[near, far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Entry and exit parameters of a ray through an axis-aligned box.
pub fn ray_box(origin: &Vec3, dir: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut u, mut v) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
        if u > v {
            std::mem::swap(&mut u, &mut v);
        }
        t0 = t0.max(u);
        t1 = t1.min(v);
    }
    (t1 > t0.max(0.0)).then_some((t0.max(0.0), t1))
}

/// Stratified sample parameters over `[near, far]` (one jittered sample per
/// bin, bin centres when `rng` is `None`) and their spacings. The last
/// spacing runs to `far`.
pub fn stratified_samples(near: f64, far: f64, count: usize, rng: Option<&mut dyn rand::RngCore>) -> (Vec<f64>, Vec<f64>) {
    let step = (far - near) / count as f64;
    let ts: Vec<f64> = match rng {
        Some(rng) => (0..count).map(|k| near + (k as f64 + rng.random::<f64>()) * step).collect(),
        None => (0..count).map(|k| near + (k as f64 + 0.5) * step).collect(),
    };
    let deltas = (0..count).map(|k| if k + 1 < count { ts[k + 1] - ts[k] } else { far - ts[k] }).collect();
    (ts, deltas)
}

/// Front-to-back alpha compositing: `C = sum_k T_k a_k c_k` with
/// `a_k = 1 - exp(-sigma_k delta_k)`. Returns the colour and the weights `T_k a_k`.
pub fn composite(sigma: &[f64], delta: &[f64], colors: &[Vec3]) -> Result<(Vec3, Vec<f64>)> {
    if sigma.len() != delta.len() || sigma.len() != colors.len() {
        return Err(contract("compositing inputs differ in length"));
    }
    if sigma.iter().any(|s| !(*s >= 0.0)) || delta.iter().any(|d| !(*d >= 0.0)) {
        return Err(contract("densities and spacings must be nonnegative"));
    }
    let mut transmittance = 1.0;
    let mut color = Vec3::zeros();
    let mut weights = Vec::with_capacity(sigma.len());
    for k in 0..sigma.len() {
        let keep = (-sigma[k] * delta[k]).exp();
        let w = transmittance * (1.0 - keep);
        color += colors[k] * w;
        weights.push(w);
        transmittance *= keep;
    }
    Ok((color, weights))
}

/// Gradients of `grad . composite(...)` with respect to densities and colours.
pub fn composite_backward(sigma: &[f64], delta: &[f64], colors: &[Vec3], grad: &Vec3) -> (Vec<f64>, Vec<Vec3>) {
    let n = sigma.len();
    let mut trans = Vec::with_capacity(n + 1);
    let mut t = 1.0;
    trans.push(t);
    for k in 0..n {
        t *= (-sigma[k] * delta[k]).exp();
        trans.push(t);
    }
    let mut g_sigma = vec![0.0; n];
    let mut g_color = vec![Vec3::zeros(); n];
    // Running sum of w_j c_j . grad over j > k.
    let mut behind = 0.0;
    for k in (0..n).rev() {
        let w = trans[k] - trans[k + 1];
        let cg = colors[k].dot(grad);
        g_color[k] = grad * w;
        g_sigma[k] = delta[k] * (trans[k + 1] * cg - behind);
        behind += w * cg;
    }
    (g_sigma, g_color)
}

/// Result of rendering one posed ray through the avatar.
#[derive(Clone, Debug)]
pub struct RenderedRay {
    pub color: Vec3,
    /// Canonical positions of the samples; `None` where inverse skinning
    /// found no consistent canonical point (such samples carry no density).
    pub canonical: Vec<Option<Vec3>>,
    pub weights: Vec<f64>,
}

/// Renders a posed ray at sample parameters `ts` by mapping every sample to
/// canonical space and compositing the avatar's density and colour.
pub fn volume_render(
    nets: &GeoTexNets,
    body: &ArticulatedBody,
    pose: &Pose,
    input: &PoseInput,
    ray: &Ray,
    ts: &[f64],
) -> Result<RenderedRay> {
    if ts.is_empty() || ts.windows(2).any(|w| !(w[1] > w[0])) || ts[0] < ray.near || ts[ts.len() - 1] > ray.far {
        return Err(contract("sample parameters must increase within the ray bounds"));
    }
    let deltas: Vec<f64> = (0..ts.len()).map(|k| if k + 1 < ts.len() { ts[k + 1] - ts[k] } else { ray.far - ts[k] }).collect();
    let posed: Vec<Vec3> = ts.iter().map(|t| ray.at(*t)).collect();
    let canonical = canonicalize_points(body, &body.transforms(pose)?, &posed, ROUND_TRIP_TOLERANCE)?;
    let (sigma, colors) = sample_fields(nets, input, &canonical)?;
    let (color, weights) = composite(&sigma, &deltas, &colors)?;
    Ok(RenderedRay { color, canonical, weights })
}

/// Density and colour at optional canonical samples; missing samples get zero.
pub(crate) fn sample_fields(nets: &GeoTexNets, input: &PoseInput, canonical: &[Option<Vec3>]) -> Result<(Vec<f64>, Vec<Vec3>)> {
    let valid: Vec<Vec3> = canonical.iter().flatten().copied().collect();
    let out = nets.field(&valid, input, true)?;
    let mut sigma = vec![0.0; canonical.len()];
    let mut colors = vec![Vec3::zeros(); canonical.len()];
    let mut k = 0;
    for (i, c) in canonical.iter().enumerate() {
        if c.is_some() {
            sigma[i] = out.density[k];
            colors[i] = out.colors[k];
            k += 1;
        }
    }
    Ok((sigma, colors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_sample_ln2_composite_is_exact() {
        let ln2 = std::f64::consts::LN_2;
        let c1 = Vec3::new(0.2, 0.4, 0.8);
        let c2 = Vec3::new(1.0, 0.5, 0.25);
        let (c, w) = composite(&[ln2, 2.0 * ln2], &[1.0, 0.5], &[c1, c2]).unwrap();
        assert_eq!(w, vec![0.5, 0.25]);
        assert_eq!(c, c1 * 0.5 + c2 * 0.25);
    }

    #[test]
    fn zero_density_renders_black_and_opaque_sample_renders_its_colour() {
        let c = Vec3::new(0.3, 0.6, 0.9);
        assert_eq!(composite(&[0.0; 4], &[0.1; 4], &[c; 4]).unwrap().0, Vec3::zeros());
        let (out, _) = composite(&[1e6, 3.0], &[1.0, 1.0], &[c, Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn compositing_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = 6;
            let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
            let delta: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.3)).collect();
            let colors: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
            let g = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let f = |s: &[f64], c: &[Vec3]| composite(s, &delta, c).unwrap().0.dot(&g);
            let (gs, gc) = composite_backward(&sigma, &delta, &colors, &g);
            let h = 1e-6;
            for k in 0..n {
                let mut p = sigma.clone();
                let mut m = sigma.clone();
                p[k] += h;
                m[k] -= h;
                let fd = (f(&p, &colors) - f(&m, &colors)) / (2.0 * h);
                assert!((fd - gs[k]).abs() <= 1e-7 * fd.abs().max(1.0), "sigma {k}: {fd} vs {}", gs[k]);
                for a in 0..3 {
                    let mut p = colors.clone();
                    let mut m = colors.clone();
                    p[k][a] += h;
                    m[k][a] -= h;
                    let fd = (f(&sigma, &p) - f(&sigma, &m)) / (2.0 * h);
                    assert!((fd - gc[k][a]).abs() <= 1e-7 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn stratified_samples_cover_the_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (ts, ds) = stratified_samples(1.0, 3.0, 8, Some(&mut rng));
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert!(ts[0] >= 1.0 && ts[7] < 3.0);
        assert!((ts[0] + ds.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ray_box_clips_to_entry_and_exit() {
        let (t0, t1) =
            ray_box(&Vec3::new(0.0, 0.0, 3.0), &Vec3::new(0.0, 0.0, -1.0), &Vec3::from([-1.0; 3]), &Vec3::from([1.0; 3])).unwrap();
        assert!((t0 - 2.0).abs() < 1e-12 && (t1 - 4.0).abs() < 1e-12);
        assert!(ray_box(&Vec3::new(2.0, 0.0, 3.0), &Vec3::new(0.0, 0.0, -1.0), &Vec3::from([-1.0; 3]), &Vec3::from([1.0; 3])).is_none());
    }
}
