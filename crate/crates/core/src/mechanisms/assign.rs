use serde::{Deserialize, Serialize};

use crate::trace::ModelProfile;

/// Parameter-to-server placement heuristic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// Parameter `i` goes to server `i mod P`.
    #[default]
    TfRoundRobin,
    /// Largest parameter first onto the least loaded server.
    BalancedBytes,
    /// Every parameter split into `P` equal fragments.
    EvenSplit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub ps: usize,
    pub bits: f64,
}

/// Fragments of each parameter, in model order.
pub fn assign_params(profile: &ModelProfile, servers: usize, how: Assignment) -> Vec<Vec<Fragment>> {
    assert!(servers >= 1, "need at least one parameter server");
    let params = profile.params();
    match how {
        Assignment::TfRoundRobin => params
            .iter()
            .enumerate()
            .map(|(i, p)| vec![Fragment { ps: i % servers, bits: p.size }])
            .collect(),
        Assignment::BalancedBytes => {
            let mut order: Vec<usize> = (0..params.len()).collect();
            order.sort_by(|&a, &b| params[b].size.total_cmp(&params[a].size).then(a.cmp(&b)));
            let mut load = vec![0.0f64; servers];
            let mut out = vec![Vec::new(); params.len()];
            for i in order {
                let ps = (0..servers)
                    .min_by(|&a, &b| load[a].total_cmp(&load[b]).then(a.cmp(&b)))
                    .expect("servers >= 1");
                load[ps] += params[i].size;
                out[i].push(Fragment { ps, bits: params[i].size });
            }
            out
        }
        Assignment::EvenSplit => params
            .iter()
            .map(|p| (0..servers).map(|ps| Fragment { ps, bits: p.size / servers as f64 }).collect())
            .collect(),
    }
}

/// Fraction of model bytes held by each server.
pub fn shares(fragments: &[Vec<Fragment>], servers: usize) -> Vec<f64> {
    let mut load = vec![0.0; servers];
    for f in fragments.iter().flatten() {
        load[f.ps] += f.bits;
    }
    let total: f64 = load.iter().sum();
    load.iter().map(|l| l / total).collect()
}
