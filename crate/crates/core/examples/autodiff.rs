//! Reverse-mode gradients through a tiny conv + gather + cross-entropy graph.

use mm2d3d::train::seg_loss;
use mm2d3d::Tensor;

fn main() -> mm2d3d::Result<()> {
    let image = Tensor::<f64>::param(&[1, 2, 4, 4], (0..32).map(|i| (i as f64 * 0.3).sin()).collect())?;
    let kernel = Tensor::<f64>::param(&[3, 2, 3, 3], (0..54).map(|i| (i as f64 * 0.7).cos() * 0.2).collect())?;

    let logits = image.conv2d(&kernel, 1, 1)?.gather_pixels(&[(0, 0, 0), (0, 1, 2), (0, 3, 3)])?;
    let loss = seg_loss(&logits, &[2, 0, 1])?;
    loss.backward()?;

    println!("loss = {:.6}", loss.item());
    let g = kernel.grad().expect("kernel is a leaf");
    println!("dL/dkernel[0..4] = {:?}", &g[..4]);

    // central difference on the first kernel entry
    let h = 1e-5;
    let eval = |delta: f64| -> mm2d3d::Result<f64> {
        let mut k = kernel.to_vec();
        k[0] += delta;
        let k = Tensor::new(&[3, 2, 3, 3], k)?;
        let logits = image.detach().conv2d(&k, 1, 1)?.gather_pixels(&[(0, 0, 0), (0, 1, 2), (0, 3, 3)])?;
        Ok(seg_loss(&logits, &[2, 0, 1])?.item())
    };
    println!("finite difference  = {:.9}", (eval(h)? - eval(-h)?) / (2.0 * h));
    println!("tape gradient      = {:.9}", g[0]);
    Ok(())
}
