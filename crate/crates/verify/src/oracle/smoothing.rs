//! Statistics of class-probability maps over a two-region image.

/// Region of each pixel in a `size x size` image split down the middle:
/// `false` left, `true` right.
pub fn right_half(size: usize, index: usize) -> bool {
    index % size >= size / 2
}

/// Variance of every channel within each half, averaged over halves and
/// channels.
pub fn within_region_variance(probs: &[f64], size: usize, k: usize) -> f64 {
    let mut total = 0.0;
    for side in [false, true] {
        for c in 0..k {
            let vals: Vec<f64> = (0..size * size)
                .filter(|&i| right_half(size, i) == side)
                .map(|i| probs[i * k + c])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            total += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        }
    }
    total / (2 * k) as f64
}

/// Largest probability any pixel gives to the class of the other half,
/// where the left half is class 0 and the right half class 1.
pub fn cross_edge_mixing(probs: &[f64], size: usize, k: usize) -> f64 {
    (0..size * size)
        .map(|i| {
            let other = if right_half(size, i) { 0 } else { 1 };
            probs[i * k + other]
        })
        .fold(0.0, f64::max)
}
