use super::params::{Init, ParamStore, Params};
use super::{BranchOutput, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

const STREAMS: [(&str, usize); 2] = [("rgb", 3), ("depth", 1)];

pub(crate) fn register(store: &mut ParamStore, cfg: &ModelConfig, init: &mut Init) -> Result<()> {
    let w = &cfg.widths_2d;
    for (stream, cin) in STREAMS {
        let mut c = cin;
        for (i, &wi) in w.iter().enumerate() {
            let p = format!("2d.{stream}.enc{i}");
            store.insert(format!("{p}.down.w"), &[wi, c, 3, 3], init.he(wi * c * 9, c * 9))?;
            store.insert(format!("{p}.down.b"), &[wi], vec![0.0; wi])?;
            store.insert(format!("{p}.conv.w"), &[wi, wi, 3, 3], init.he(wi * wi * 9, wi * 9))?;
            store.insert(format!("{p}.conv.b"), &[wi], vec![0.0; wi])?;
            c = wi;
        }
    }
    let mut c = 2 * w[w.len() - 1];
    for lvl in (0..w.len() - 1).rev() {
        let wl = w[lvl];
        let p = format!("2d.dec{lvl}");
        store.insert(format!("{p}.up.w"), &[c, wl, 3, 3], init.he(c * wl * 9, c * 9 / 4))?;
        store.insert(format!("{p}.up.b"), &[wl], vec![0.0; wl])?;
        store.insert(format!("{p}.conv.w"), &[wl, 3 * wl, 3, 3], init.he(wl * 3 * wl * 9, 3 * wl * 9))?;
        store.insert(format!("{p}.conv.b"), &[wl], vec![0.0; wl])?;
        c = wl;
    }
    let f = cfg.feature_width_2d();
    store.insert("2d.out.w", &[c, f, 3, 3], init.he(c * f * 9, c * 9 / 4))?;
    store.insert("2d.out.b", &[f], vec![0.0; f])?;
    let k = cfg.num_classes;
    for head in ["main", "aux"] {
        store.insert(format!("2d.head.{head}.w"), &[k, f], init.he(k * f, f))?;
        store.insert(format!("2d.head.{head}.b"), &[k], vec![0.0; k])?;
    }
    Ok(())
}

fn conv<T: Elem>(p: &Params<T>, name: &str, x: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let y = x.conv2d(p.get(&format!("{name}.w"))?, stride, 1)?;
    Ok(y.add_channel_bias(p.get(&format!("{name}.b"))?)?.relu())
}

fn up<T: Elem>(p: &Params<T>, name: &str, x: &Tensor<T>, hw: (usize, usize)) -> Result<Tensor<T>> {
    let y = x.conv2d_transpose_to(p.get(&format!("{name}.w"))?, 2, 1, hw)?;
    Ok(y.add_channel_bias(p.get(&format!("{name}.b"))?)?.relu())
}

/// Runs one encoder stream, returning the feature map at every scale
/// (1/2, 1/4, ...).
fn encode<T: Elem>(p: &Params<T>, stream: &str, levels: usize, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let mut feats = Vec::with_capacity(levels);
    let mut x = x.clone();
    for i in 0..levels {
        let d = conv(p, &format!("2d.{stream}.enc{i}.down"), &x, 2)?;
        x = conv(p, &format!("2d.{stream}.enc{i}.conv"), &d, 1)?;
        feats.push(x.clone());
    }
    Ok(feats)
}

/// Dual-encoder U-Net over `image: [B,3,H,W]` and `depth: [B,1,H,W]`, read
/// out at `pixels` as `(batch, row, col)`.
pub(crate) fn forward<T: Elem>(
    p: &Params<T>,
    cfg: &ModelConfig,
    image: &Tensor<T>,
    depth: &Tensor<T>,
    pixels: &[(usize, usize, usize)],
) -> Result<BranchOutput<T>> {
    if image.rank() != 4 || image.shape()[1] != 3 {
        return Err(Error::dim(format!("image must be [B, 3, H, W], got {:?}", image.shape())));
    }
    let (b, h, w) = (image.shape()[0], image.shape()[2], image.shape()[3]);
    if depth.shape() != [b, 1, h, w] {
        return Err(Error::dim(format!(
            "depth map {:?} does not match image {:?}",
            depth.shape(),
            image.shape()
        )));
    }
    let levels = cfg.widths_2d.len();
    let rgb = encode(p, "rgb", levels, image)?;
    let dep = encode(p, "depth", levels, depth)?;
    let mut d = Tensor::concat(&[rgb[levels - 1].clone(), dep[levels - 1].clone()], 1)?;
    for lvl in (0..levels - 1).rev() {
        let hw = (rgb[lvl].shape()[2], rgb[lvl].shape()[3]);
        let u = up(p, &format!("2d.dec{lvl}.up"), &d, hw)?;
        let cat = Tensor::concat(&[u, rgb[lvl].clone(), dep[lvl].clone()], 1)?;
        d = conv(p, &format!("2d.dec{lvl}.conv"), &cat, 1)?;
    }
    let full = up(p, "2d.out", &d, (h, w))?;
    let features = full.gather_pixels(pixels)?;
    super::heads(p, "2d", features)
}
