use super::normalmap::NormalMap;
use super::rotation::Vec3;
use crate::error::{contract, Result};

/// Per-pixel vector field restricted to a mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl Residual {
    pub fn masked_mean(&self) -> Vec3 {
        let (sum, n) =
            self.values.iter().zip(&self.mask).filter(|(_, m)| **m).fold((Vec3::zeros(), 0usize), |(s, n), (v, _)| (s + v, n + 1));
        if n == 0 {
            Vec3::zeros()
        } else {
            sum / n as f64
        }
    }

    /// Cosine similarity of the two fields flattened over pixels valid in both
    /// (and in `region`, if given).
    pub fn cosine_similarity(&self, other: &Residual, region: Option<&[bool]>) -> f64 {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for i in 0..self.values.len() {
            let inside = region.is_none_or(|r| r[i]);
            if inside && self.mask[i] && other.mask[i] {
                ab += self.values[i].dot(&other.values[i]);
                aa += self.values[i].norm_squared();
                bb += other.values[i].norm_squared();
            }
        }
        if aa == 0.0 || bb == 0.0 {
            0.0
        } else {
            ab / (aa.sqrt() * bb.sqrt())
        }
    }
}

/// Separable Gaussian taps for `-r..=r`, normalised to sum 1, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Map minus its mask-normalised Gaussian blur, then minus the masked mean so
/// the residual has no DC component on the mask.
pub fn highpass(map: &NormalMap, sigma: f64) -> Result<Residual> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(contract("blur sigma must be positive"));
    }
    let (w, h) = (map.width(), map.height());
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mask = map.mask();
    let src = map.normals();
    let weight_in: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();

    let pass = |vals: &[Vec3], wts: &[f64], horizontal: bool| {
        let mut ov = vec![Vec3::zeros(); w * h];
        let mut ow = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut sv = Vec3::zeros();
                let mut sw = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let d = t as isize - r;
                    let (xx, yy) = if horizontal { (x as isize + d, y as isize) } else { (x as isize, y as isize + d) };
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let j = yy as usize * w + xx as usize;
                    sv += vals[j] * *kv;
                    sw += wts[j] * kv;
                }
                ov[y * w + x] = sv;
                ow[y * w + x] = sw;
            }
        }
        (ov, ow)
    };
    // invalid pixels hold zeros, so blurring values and weights separately
    // yields the normalised masked blur
    let (v1, w1) = pass(src, &weight_in, true);
    let (v2, w2) = pass(&v1, &w1, false);

    let mut values = vec![Vec3::zeros(); w * h];
    for i in 0..w * h {
        if mask[i] && w2[i] > 0.0 {
            values[i] = src[i] - v2[i] / w2[i];
        }
    }
    let mut res = Residual { width: w, height: h, values, mask: mask.to_vec() };
    let mean = res.masked_mean();
    for (v, m) in res.values.iter_mut().zip(&res.mask) {
        if *m {
            *v -= mean;
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_map_has_zero_residual() {
        let n = Vec3::new(0.2, 0.3, 0.9).normalize();
        let mut mask = vec![true; 20 * 30];
        mask[17] = false;
        let mut vals = vec![n; 20 * 30];
        vals[17] = Vec3::zeros();
        let map = NormalMap::from_parts(20, 30, vals, mask).unwrap();
        let r = highpass(&map, 2.0).unwrap();
        assert!(r.values.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn spike_keeps_one_minus_centre_weight() {
        let (w, h) = (41, 41);
        let mut map = NormalMap::from_parts(w, h, vec![Vec3::z(); w * h], vec![true; w * h]).unwrap();
        map.set(20, 20, Some(Vec3::x()));
        let sigma = 1.5;
        let r = highpass(&map, sigma).unwrap();
        let k = gaussian_kernel(sigma);
        let centre = k[k.len() / 2] * k[k.len() / 2];
        let spike = Vec3::x() - Vec3::z();
        let got = r.values[20 * w + 20];
        assert!((got - spike * (1.0 - centre)).norm() < 1e-3, "{got:?}");
    }

    #[test]
    fn residual_mean_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, h) = (33, 47);
        let vals: Vec<Vec3> = (0..w * h).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0)).collect();
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.7)).collect();
        let map = NormalMap::from_parts(w, h, vals, mask).unwrap();
        let r = highpass(&map, 3.0).unwrap();
        assert!(r.masked_mean().norm() < 1e-3);
        assert!((r.cosine_similarity(&r, None) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let map = NormalMap::invalid(4, 4);
        assert!(highpass(&map, 0.0).is_err());
    }
}
