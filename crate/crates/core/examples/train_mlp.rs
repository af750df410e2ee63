//! Trains a small MLP on synthetic blobs with plain SGD and checks its
//! analytic gradient against central finite differences.
//!
//! ```text
//! cargo run --release --example train_mlp
//! ```

use fedal::data::{BlobGenerator, Split};
use fedal::fed::evaluate;
use fedal::nn::{sgd_step, Activation, MlpArchitecture, Model};

fn main() -> fedal::Result<()> {
    let blobs = BlobGenerator::new(4, 2, 2.0, 0.4, 1)?;
    let train = blobs.sample(400, 2, Split::Train)?;
    let test = blobs.sample(400, 3, Split::Test)?;
    let arch = MlpArchitecture::new(vec![2, 16, 4], Activation::Tanh, 0.0, 1)?;
    let mut model = Model::init(arch, 7);

    let batch = train.samples();
    let (_, analytic) = model.loss_and_grad(&batch[..20], None)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..model.params().len() {
        let mut probe = model.params().clone();
        probe.as_mut_slice()[i] += h;
        let up = model.with_params(probe.clone())?.loss(&batch[..20], None)?;
        probe.as_mut_slice()[i] -= 2.0 * h;
        let down = model.with_params(probe)?.loss(&batch[..20], None)?;
        let numeric = (up - down) / (2.0 * h);
        let g = analytic.as_slice()[i];
        worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6));
    }
    println!("gradient check over {} parameters: worst relative error {worst:.2e}", model.params().len());

    println!("epoch  loss     test accuracy");
    for epoch in 1..=30 {
        for chunk in batch.chunks(16) {
            let g = model.grad(chunk, None)?;
            model = model.with_params(sgd_step(model.params(), &g, 0.1)?)?;
        }
        if epoch % 5 == 0 {
            println!("{epoch:>5}  {:.4}   {:.4}", model.loss(&batch, None)?, evaluate(&model, &test)?);
        }
    }
    Ok(())
}
