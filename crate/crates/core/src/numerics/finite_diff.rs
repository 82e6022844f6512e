/// Central differences `(f(p + h e_j) - f(p - h e_j)) / 2h` for every coordinate.
///
/// Used as the gradient oracle throughout the test suites; `h = 1e-5` is a
/// good default for `f64` objectives of unit scale.
pub fn finite_diff<F>(mut f: F, p: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite_diff step must be positive");
    let mut q = p.to_vec();
    (0..p.len())
        .map(|j| {
            let orig = q[j];
            q[j] = orig + h;
            let up = f(&q);
            q[j] = orig - h;
            let down = f(&q);
            q[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
