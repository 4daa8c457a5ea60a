use crate::error::{Error, Result};

/// Inverse-frequency class weights `w_c = N / (K_present · n_c)`; absent
/// classes get 0. The sample-weighted mean of the result is 1.
pub fn compute_class_weights(counts: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "class weights need at least one sample".into(),
        ));
    }
    let present = counts.iter().filter(|&&n| n > 0).count() as f64;
    Ok(counts
        .iter()
        .map(|&n| {
            if n == 0 {
                0.0
            } else {
                total as f64 / (present * n as f64)
            }
        })
        .collect())
}
