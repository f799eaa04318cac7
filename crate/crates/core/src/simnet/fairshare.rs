//! Max-min fair bandwidth allocation by progressive filling.

/// Computes the max-min fair rate of every flow.
///
/// `capacities[l]` is the capacity of link `l`; `paths[f]` lists the links
/// flow `f` crosses. The most constrained link (smallest equal share of its
/// remaining capacity) is saturated first, its flows are frozen at that share
/// and the procedure repeats on what is left. Ties go to the lowest link index.
///
/// A flow with an empty path is unconstrained and gets `f64::INFINITY`.
pub fn fair_share_rates(capacities: &[f64], paths: &[Vec<usize>]) -> Vec<f64> {
    let mut remaining = capacities.to_vec();
    let mut unfrozen = vec![0usize; capacities.len()];
    let mut on_link: Vec<Vec<usize>> = vec![Vec::new(); capacities.len()];
    for (f, path) in paths.iter().enumerate() {
        for &l in path {
            unfrozen[l] += 1;
            on_link[l].push(f);
        }
    }

    let mut rates: Vec<Option<f64>> = vec![None; paths.len()];
    for (f, path) in paths.iter().enumerate() {
        if path.is_empty() {
            rates[f] = Some(f64::INFINITY);
        }
    }

    loop {
        let mut best: Option<(usize, f64)> = None;
        for (l, &count) in unfrozen.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let share = remaining[l].max(0.0) / count as f64;
            if best.is_none_or(|(_, s)| share < s) {
                best = Some((l, share));
            }
        }
        let Some((link, share)) = best else { break };
        for &f in &on_link[link] {
            if rates[f].is_some() {
                continue;
            }
            rates[f] = Some(share);
            for &m in &paths[f] {
                remaining[m] -= share;
                unfrozen[m] -= 1;
            }
        }
    }

    rates.into_iter().map(|r| r.unwrap_or(f64::INFINITY)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_split() {
        let r = fair_share_rates(&[425.0], &[vec![0], vec![0]]);
        assert_eq!(r, vec![212.5, 212.5]);
    }

    #[test]
    fn many_clients_on_one_server() {
        let paths = vec![vec![0]; 256];
        let r = fair_share_rates(&[160.0], &paths);
        assert!(r.iter().all(|&x| (x - 0.625).abs() < 1e-12));
    }

    #[test]
    fn bottleneck_along_path() {
        let r = fair_share_rates(&[100.0, 50.0], &[vec![0, 1]]);
        assert_eq!(r, vec![50.0]);
    }

    #[test]
    fn leftover_goes_to_unconstrained_flows() {
        // flow 0 crosses both links; flow 1 only the fat one
        let r = fair_share_rates(&[100.0, 30.0], &[vec![0, 1], vec![0]]);
        assert_eq!(r, vec![30.0, 70.0]);
    }

    #[test]
    fn empty_path_is_unbounded() {
        let r = fair_share_rates(&[10.0], &[vec![], vec![0]]);
        assert!(r[0].is_infinite());
        assert_eq!(r[1], 10.0);
    }
}
