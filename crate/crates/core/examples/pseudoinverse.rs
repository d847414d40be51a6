//! Rank, pseudoinverse and spectrum of a small rank-deficient matrix.

use domlab::numerics::{default_rtol, eigvals, numerical_rank, pinv, singular_values, Matrix};

fn main() {
    let a = Matrix::from_row_slice(3, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0, 0.0, 1.0, 0.0, 1.0]);
    let rtol = default_rtol(3, 4);
    println!("singular values: {:?}", singular_values(&a));
    println!("rank: {}", numerical_rank(&a, rtol));

    let p = pinv(&a, rtol);
    println!("‖A A⁺ A − A‖ = {:.2e}", (&a * &p * &a - &a).norm());
    println!("‖A⁺ A A⁺ − A⁺‖ = {:.2e}", (&p * &a * &p - &p).norm());

    let square = &a * a.transpose();
    println!("eigenvalues of A Aᵀ: {:?}", eigvals(&square).unwrap());
}
