//! Gradients of the general bilinear join P = A·W·Bᵀ, checked against
//! central differences.

use jpool::gradcheck::{central_difference, max_relative_error};
use jpool::poolgen::{bilinear_general_bwd, bilinear_general_fwd};
use jpool::tensor::dot;
use jpool::{Matrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> jpool::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // 64 heat maps and 32 channels over a 2x2x2 grid
    let (a, w, b) = (random(&mut rng, 64, 8), random(&mut rng, 8, 8), random(&mut rng, 32, 8));
    let upstream = random(&mut rng, 64, 32);
    let loss = |a: &Matrix, w: &Matrix, b: &Matrix| dot(bilinear_general_fwd(a, w, b).unwrap().data(), upstream.data());
    let (da, dw, db) = bilinear_general_bwd(&upstream, &a, &w, &b)?;
    let fd = |m: &Matrix, f: &dyn Fn(&Matrix) -> f64| {
        central_difference(&m.to_tensor(), 1e-5, |t: &Tensor| f(&Matrix::from_tensor(t).unwrap()))
    };
    println!("dA rel err {:.2e}", max_relative_error(da.data(), fd(&a, &|x| loss(x, &w, &b)).data()));
    println!("dW rel err {:.2e}", max_relative_error(dw.data(), fd(&w, &|x| loss(&a, x, &b)).data()));
    println!("dB rel err {:.2e}", max_relative_error(db.data(), fd(&b, &|x| loss(&a, &w, x)).data()));
    Ok(())
}
