//! Exact tabular models and dynamic-programming oracles over them.

/// `transitions[s][a]` lists `(probability, next_state, expected_reward)`.
/// Terminal states have no outgoing transitions.
#[derive(Clone, Debug)]
pub struct TabularModel {
    pub n_states: usize,
    pub n_actions: usize,
    pub start: usize,
    pub terminal: Vec<bool>,
    pub transitions: Vec<Vec<Vec<(f64, usize, f64)>>>,
}

impl TabularModel {
    fn q_backup(&self, v: &[f64], s: usize, a: usize, gamma: f64) -> f64 {
        self.transitions[s][a]
            .iter()
            .map(|&(p, s2, r)| {
                let cont = if self.terminal[s2] { 0.0 } else { gamma * v[s2] };
                p * (r + cont)
            })
            .sum()
    }

    /// Optimal state values and action values by value iteration.
    pub fn value_iteration(&self, gamma: f64, tol: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut v = vec![0.0; self.n_states];
        loop {
            let mut delta: f64 = 0.0;
            for s in 0..self.n_states {
                if self.terminal[s] {
                    continue;
                }
                let best = (0..self.n_actions)
                    .map(|a| self.q_backup(&v, s, a, gamma))
                    .fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[s]).abs());
                v[s] = best;
            }
            if delta < tol {
                break;
            }
        }
        let q = (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        if self.terminal[s] {
                            0.0
                        } else {
                            self.q_backup(&v, s, a, gamma)
                        }
                    })
                    .collect()
            })
            .collect();
        (v, q)
    }

    /// Per state, every action within `tol` of the best.
    pub fn optimal_actions(&self, gamma: f64) -> Vec<Vec<usize>> {
        let (_, q) = self.value_iteration(gamma, 1e-12);
        q.iter()
            .map(|qs| {
                let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (0..self.n_actions).filter(|&a| qs[a] >= best - 1e-9).collect()
            })
            .collect()
    }

    /// Greedy optimal policy with lowest-index tie-break.
    pub fn optimal_policy(&self, gamma: f64) -> Vec<usize> {
        self.optimal_actions(gamma)
            .into_iter()
            .map(|acts| acts.first().copied().unwrap_or(0))
            .collect()
    }

    /// Discounted value of a deterministic policy (iterative evaluation).
    pub fn policy_value(&self, policy: &[usize], gamma: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        loop {
            let mut delta: f64 = 0.0;
            for s in 0..self.n_states {
                if self.terminal[s] {
                    continue;
                }
                let nv = self.q_backup(&v, s, policy[s], gamma);
                delta = delta.max((nv - v[s]).abs());
                v[s] = nv;
            }
            if delta < 1e-13 {
                return v;
            }
        }
    }

    /// Expected undiscounted return from the start state of the
    /// epsilon-greedy version of `policy`, truncated at `horizon` steps.
    pub fn epsilon_greedy_return(&self, policy: &[usize], epsilon: f64, horizon: usize) -> f64 {
        // v_k(s): expected return with k steps left
        let mut v = vec![0.0; self.n_states];
        let uniform = epsilon / self.n_actions as f64;
        for _ in 0..horizon {
            let next: Vec<f64> = (0..self.n_states)
                .map(|s| {
                    if self.terminal[s] {
                        return 0.0;
                    }
                    (0..self.n_actions)
                        .map(|a| {
                            let pa = uniform + if a == policy[s] { 1.0 - epsilon } else { 0.0 };
                            pa * self.q_backup(&v, s, a, 1.0)
                        })
                        .sum()
                })
                .collect();
            v = next;
        }
        v[self.start]
    }
}
