//! Storing library types as named tensors.

use super::tnsr::{Tensor, TnsrFile};
use crate::difffield::{Activation, Conv2d, ConvStack, Layer, Mat, MlpNet};
use crate::error::{Error, Result};
use crate::geomath::{NormalMap, ScalarGrid, Vec3};

pub fn put_mlp(f: &mut TnsrFile, prefix: &str, net: &MlpNet) -> Result<()> {
    let codes: Vec<u8> = net.layers().iter().map(|l| l.activation.code()).collect();
    f.insert(format!("{prefix}.activations"), Tensor::u8(&[codes.len()], codes)?)?;
    for (k, l) in net.layers().iter().enumerate() {
        f.insert(format!("{prefix}.{k}.weight"), Tensor::f64(&[l.weight.rows(), l.weight.cols()], l.weight.data().to_vec())?)?;
        f.insert(format!("{prefix}.{k}.bias"), Tensor::f64(&[l.bias.len()], l.bias.clone())?)?;
    }
    Ok(())
}

pub fn get_mlp(f: &TnsrFile, prefix: &str) -> Result<MlpNet> {
    let (codes, _) = f.u8(&format!("{prefix}.activations"))?;
    let mut layers = Vec::new();
    for (k, &code) in codes.iter().enumerate() {
        let (w, wd) = f.f64(&format!("{prefix}.{k}.weight"))?;
        let (b, _) = f.f64(&format!("{prefix}.{k}.bias"))?;
        if wd.len() != 2 {
            return Err(Error::Format(format!("{prefix}.{k}.weight is not a matrix")));
        }
        let weight = Mat::from_vec(wd[0], wd[1], w.to_vec())?;
        layers.push(Layer::new(weight, b.to_vec(), Activation::from_code(code)?)?);
    }
    MlpNet::from_layers(layers)
}

pub fn put_conv(f: &mut TnsrFile, prefix: &str, stack: &ConvStack) -> Result<()> {
    let meta: Vec<u32> = stack
        .layers
        .iter()
        .flat_map(|l| [l.in_channels as u32, l.out_channels as u32, l.kernel as u32, l.stride as u32, l.activation.code() as u32])
        .collect();
    f.insert(format!("{prefix}.meta"), Tensor::u32(&[stack.layers.len(), 5], meta)?)?;
    for (k, l) in stack.layers.iter().enumerate() {
        f.insert(format!("{prefix}.{k}.weight"), Tensor::f64(&[l.weight.rows(), l.weight.cols()], l.weight.data().to_vec())?)?;
        f.insert(format!("{prefix}.{k}.bias"), Tensor::f64(&[l.bias.len()], l.bias.clone())?)?;
    }
    Ok(())
}

pub fn get_conv(f: &TnsrFile, prefix: &str) -> Result<ConvStack> {
    let (meta, dims) = f.u32(&format!("{prefix}.meta"))?;
    if dims.len() != 2 || dims[1] != 5 {
        return Err(Error::Format(format!("{prefix}.meta has shape {dims:?}")));
    }
    let mut layers = Vec::new();
    for (k, m) in meta.chunks_exact(5).enumerate() {
        let (w, wd) = f.f64(&format!("{prefix}.{k}.weight"))?;
        let (b, _) = f.f64(&format!("{prefix}.{k}.bias"))?;
        let (cin, cout, kernel) = (m[0] as usize, m[1] as usize, m[2] as usize);
        if wd != [cout, kernel * kernel * cin] || b.len() != cout {
            return Err(Error::Format(format!("{prefix}.{k} has inconsistent shapes")));
        }
        layers.push(Conv2d {
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride: m[3] as usize,
            weight: Mat::from_vec(cout, kernel * kernel * cin, w.to_vec())?,
            bias: b.to_vec(),
            activation: Activation::from_code(m[4] as u8)?,
            grad_weight: Mat::zeros(cout, kernel * kernel * cin),
            grad_bias: vec![0.0; cout],
        });
    }
    Ok(ConvStack { layers })
}

pub fn put_normal_map(f: &mut TnsrFile, name: &str, map: &NormalMap) -> Result<()> {
    let data: Vec<f64> = map.normals().iter().flat_map(|n| [n.x, n.y, n.z]).collect();
    f.insert(format!("{name}.normals"), Tensor::f64(&[map.height(), map.width(), 3], data)?)?;
    let mask: Vec<u8> = map.mask().iter().map(|&m| m as u8).collect();
    f.insert(format!("{name}.mask"), Tensor::u8(&[map.height(), map.width()], mask)?)?;
    Ok(())
}

pub fn get_normal_map(f: &TnsrFile, name: &str) -> Result<NormalMap> {
    let (n, nd) = f.f64(&format!("{name}.normals"))?;
    let (m, md) = f.u8(&format!("{name}.mask"))?;
    if nd.len() != 3 || nd[2] != 3 || md != nd[..2] {
        return Err(Error::Format(format!("normal map {name} has inconsistent shapes")));
    }
    let normals = n.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    NormalMap::from_parts(nd[1], nd[0], normals, m.iter().map(|&v| v != 0).collect())
}

pub fn put_grid(f: &mut TnsrFile, name: &str, g: &ScalarGrid) -> Result<()> {
    let n = g.n();
    f.insert(format!("{name}.values"), Tensor::f64(&[n, n, n], g.values().to_vec())?)?;
    let o = g.origin();
    f.insert(format!("{name}.frame"), Tensor::f64(&[4], vec![o.x, o.y, o.z, g.voxel()])?)?;
    Ok(())
}

pub fn get_grid(f: &TnsrFile, name: &str) -> Result<ScalarGrid> {
    let (v, d) = f.f64(&format!("{name}.values"))?;
    let (fr, _) = f.f64(&format!("{name}.frame"))?;
    if d.len() != 3 || d[0] != d[1] || d[1] != d[2] || fr.len() != 4 {
        return Err(Error::Format(format!("grid {name} has inconsistent shapes")));
    }
    let mut g = ScalarGrid::filled(d[0], Vec3::new(fr[0], fr[1], fr[2]), fr[3], 0.0)?;
    g.values_mut().copy_from_slice(v);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nets_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = MlpNet::random(&[5, 7, 2], Activation::Relu, Activation::Sigmoid, &mut rng);
        let conv = ConvStack {
            layers: vec![Conv2d::random(3, 4, 3, 1, Activation::Relu, &mut rng), Conv2d::random(4, 2, 3, 2, Activation::None, &mut rng)],
        };
        let mut f = TnsrFile::new();
        put_mlp(&mut f, "geo", &net).unwrap();
        put_conv(&mut f, "enc", &conv).unwrap();
        let f = TnsrFile::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(get_mlp(&f, "geo").unwrap(), net);
        assert_eq!(get_conv(&f, "enc").unwrap(), conv);
    }

    #[test]
    fn maps_and_grids_round_trip() {
        let mut m = NormalMap::invalid(3, 2);
        m.set(1, 1, Some(Vec3::new(0.0, 3.0, 4.0)));
        let g = ScalarGrid::from_fn(3, Vec3::new(0.1, 0.2, 0.3), 0.5, |p| p.x * p.y).unwrap();
        let mut f = TnsrFile::new();
        put_normal_map(&mut f, "F", &m).unwrap();
        put_grid(&mut f, "occ", &g).unwrap();
        let f = TnsrFile::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(get_normal_map(&f, "F").unwrap(), m);
        assert_eq!(get_grid(&f, "occ").unwrap(), g);
    }
}
