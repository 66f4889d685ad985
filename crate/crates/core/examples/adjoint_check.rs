//! Dot-product test of the forward operator against its adjoint.
//!
//! `cargo run --release --example adjoint_check`

use ndarray::Array2;
use pat_recon::{make_ring, subsample_arc, ForwardOperator, Grid, Result, TimeAxis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = Grid::square(64, 1e-4, 1500.0)?;
    let full = make_ring(0.9 * 32.0 * 1e-4, 256, 270.0, 270.0)?;
    for active in [256, 170, 112] {
        let ring = subsample_arc(&full, active)?;
        let time = TimeAxis::for_ring(&grid, ring.radius)?;
        let op = ForwardOperator::new(grid.clone(), ring, time)?;
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let f: Array2<f64> = Array2::from_shape_simple_fn(op.image_shape(), || StandardNormal.sample(&mut rng));
            let g: Array2<f64> = Array2::from_shape_simple_fn(op.data_shape(), || StandardNormal.sample(&mut rng));
            let lhs = (&op.forward(&f)? * &g).sum();
            let rhs = (&f * &op.adjoint(&g)?).sum();
            let scale = lhs.abs().max(rhs.abs());
            worst = worst.max((lhs - rhs).abs() / scale);
        }
        println!(
            "{active:>3} active ({:.6} deg): worst relative mismatch {worst:.2e}",
            op.ring().coverage_deg()
        );
    }
    Ok(())
}
