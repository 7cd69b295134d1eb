use super::params::ModelParams;
use super::Real;

/// Global magnitude pruning: masks the `round(fraction * unmasked)` smallest
/// surviving dense weights, ranked across all dense layers. Masks only ever
/// grow; biases and batch-norm parameters are never touched. Ties in
/// magnitude are broken by layer then position. Returns the number of
/// weights newly pruned.
pub fn prune_step<T: Real>(params: &mut ModelParams<T>, fraction: f64) -> usize {
    assert!(
        (0.0..1.0).contains(&fraction),
        "prune fraction {fraction} outside [0, 1)"
    );
    let mut alive: Vec<(T, usize, usize)> = params
        .dense
        .iter()
        .enumerate()
        .flat_map(|(l, d)| {
            d.weights
                .iter()
                .zip(&d.mask)
                .enumerate()
                .filter(|(_, (_, &keep))| keep)
                .map(move |(i, (&w, _))| (w.abs(), l, i))
        })
        .collect();
    let count = (fraction * alive.len() as f64).round() as usize;
    if count == 0 {
        return 0;
    }
    alive.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    for &(_, l, i) in &alive[..count] {
        params.dense[l].mask[i] = false;
        params.dense[l].weights[i] = T::zero();
    }
    count
}
