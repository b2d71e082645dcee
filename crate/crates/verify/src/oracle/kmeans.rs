//! Lloyd's K-means on plain vectors.

/// One Lloyd iteration: centroids of the incoming partition, then the
/// partition those centroids induce.
#[derive(Clone, Debug, PartialEq)]
pub struct LloydStep {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
}

/// Mean of each cluster; an empty cluster gets the zero vector.
pub fn centroids(points: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            for v in s.iter_mut() {
                *v /= c as f64;
            }
        }
    }
    sums
}

/// Index of the nearest centroid by squared distance; lowest index wins
/// ties.
pub fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn lloyd(points: &[Vec<f64>], init: &[usize], k: usize, iterations: usize) -> Vec<LloydStep> {
    let mut assignment = init.to_vec();
    let mut steps = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let c = centroids(points, &assignment, k);
        assignment = points.iter().map(|p| nearest(p, &c)).collect();
        steps.push(LloydStep {
            centroids: c,
            assignment: assignment.clone(),
        });
    }
    steps
}

/// Sum of squared distances from each point to its centroid.
pub fn inertia(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| p.iter().zip(&centroids[a]).map(|(x, c)| (x - c) * (x - c)).sum::<f64>())
        .sum()
}
