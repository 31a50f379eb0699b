use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Bernoulli, Binomial, Distribution};

use super::StateSequence;
use crate::error::{Error, Result};
use crate::model::{sample_dirichlet, sticky_prior_vector};

/// Transition counts `n_jk = #{t : p_{t−1} = j, p_t = k}` and per-state occupancy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    pub n: Vec<Vec<u64>>,
    pub occupancy: Vec<u64>,
}

impl TransitionCounts {
    pub fn zeros(num_states: usize) -> Self {
        Self {
            n: vec![vec![0; num_states]; num_states],
            occupancy: vec![0; num_states],
        }
    }

    pub fn from_states(states: &StateSequence, num_states: usize) -> Result<Self> {
        let mut counts = Self::zeros(num_states);
        let labels = states.labels();
        for (t, &k) in labels.iter().enumerate() {
            if k >= num_states {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    len: num_states,
                });
            }
            counts.occupancy[k] += 1;
            if t > 0 {
                counts.n[labels[t - 1]][k] += 1;
            }
        }
        Ok(counts)
    }

    pub fn num_states(&self) -> usize {
        self.n.len()
    }

    pub fn total(&self) -> u64 {
        self.n.iter().flatten().sum()
    }

    /// Customers in restaurant `j`: `n_j· = Σ_k n_jk`.
    pub fn row_total(&self, j: usize) -> u64 {
        self.n[j].iter().sum()
    }
}

/// Chinese-restaurant-franchise table counts.
///
/// `m` are the raw table counts, `override_w` the number of diagonal tables
/// attributed to the sticky override, and `mbar` the counts that inform `β`
/// (`m` with `override_w` removed from the diagonal).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxiliaryCounts {
    pub m: Vec<Vec<u64>>,
    pub override_w: Vec<u64>,
    pub mbar: Vec<Vec<u64>>,
}

impl AuxiliaryCounts {
    pub fn zeros(num_states: usize) -> Self {
        Self {
            m: vec![vec![0; num_states]; num_states],
            override_w: vec![0; num_states],
            mbar: vec![vec![0; num_states]; num_states],
        }
    }

    pub fn total_tables(&self) -> u64 {
        self.m.iter().flatten().sum()
    }

    pub fn total_override(&self) -> u64 {
        self.override_w.iter().sum()
    }

    /// Column sums `m̄_·k`.
    pub fn mbar_column_sums(&self) -> Vec<u64> {
        let l = self.mbar.len();
        (0..l)
            .map(|k| self.mbar.iter().map(|row| row[k]).sum())
            .collect()
    }
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    Ok(Bernoulli::new(p.clamp(0.0, 1.0))
        .map_err(|e| Error::Domain(e.to_string()))?
        .sample(rng))
}

/// Sample table counts given transition counts, then thin the diagonal with the
/// sticky override variables `w_j ~ Binomial(m_jj, κ / (αβ_j + κ))`.
pub fn sample_auxiliary_counts<R: Rng + ?Sized>(
    counts: &TransitionCounts,
    beta: &[f64],
    alpha: f64,
    kappa: f64,
    rng: &mut R,
) -> Result<AuxiliaryCounts> {
    let l = counts.num_states();
    if beta.len() != l {
        return Err(Error::Invalid(format!(
            "beta has {} entries for {l} states",
            beta.len()
        )));
    }
    let mut aux = AuxiliaryCounts::zeros(l);
    for j in 0..l {
        for (k, &b) in beta.iter().enumerate() {
            let n = counts.n[j][k];
            let conc = alpha * b + if j == k { kappa } else { 0.0 };
            let mut tables = 0;
            for i in 0..n {
                // The first customer always opens a table.
                if i == 0 || bernoulli(conc / (i as f64 + conc), rng)? {
                    tables += 1;
                }
            }
            aux.m[j][k] = tables;
            aux.mbar[j][k] = tables;
        }
        let tables = aux.m[j][j];
        if tables > 0 && kappa > 0.0 {
            let p = kappa / (alpha * beta[j] + kappa);
            let w = Binomial::new(tables, p.clamp(0.0, 1.0))
                .map_err(|e| Error::Domain(e.to_string()))?
                .sample(rng);
            aux.override_w[j] = w;
            aux.mbar[j][j] = tables - w;
        }
    }
    Ok(aux)
}

/// Weak-limit posterior for the global weights:
/// `β ~ Dirichlet(m̄_·1 + γ/L, …, m̄_·L + γ/L)`. The remainder is always 0.
pub fn sample_beta<R: Rng + ?Sized>(
    mbar: &[Vec<u64>],
    gamma: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let l = mbar.len();
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let params: Vec<f64> = (0..l)
        .map(|k| mbar.iter().map(|row| row[k]).sum::<u64>() as f64 + gamma / l as f64)
        .collect();
    Ok((sample_dirichlet(&params, rng)?, 0.0))
}

/// Row `i` of `π` drawn from `Dirichlet(αβ + κeᵢ + nᵢ)`.
pub fn sample_transitions<R: Rng + ?Sized>(
    counts: &TransitionCounts,
    beta: &[f64],
    alpha: f64,
    kappa: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let l = counts.num_states();
    let mut pi = DMatrix::zeros(l, l);
    for i in 0..l {
        let mut params = sticky_prior_vector(alpha, beta, kappa, i)?;
        for (p, n) in params.iter_mut().zip(&counts.n[i]) {
            *p += *n as f64;
        }
        for (k, v) in sample_dirichlet(&params, rng)?.into_iter().enumerate() {
            pi[(i, k)] = v;
        }
    }
    Ok(pi)
}

/// Initial-state distribution drawn from `Dirichlet(αβ + e_{p_1})`.
pub fn sample_initial_dist<R: Rng + ?Sized>(
    first_state: Option<usize>,
    beta: &[f64],
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut params: Vec<f64> = beta.iter().map(|b| alpha * b).collect();
    if let Some(k) = first_state {
        *params.get_mut(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: beta.len(),
        })? += 1.0;
    }
    sample_dirichlet(&params, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counts_with(l: usize, cells: &[(usize, usize, u64)]) -> TransitionCounts {
        let mut c = TransitionCounts::zeros(l);
        for &(j, k, n) in cells {
            c.n[j][k] = n;
        }
        c
    }

    #[test]
    fn counts_from_states() {
        let s = StateSequence::from_labels(vec![0, 0, 1, 2, 2, 0]);
        let c = TransitionCounts::from_states(&s, 3).unwrap();
        assert_eq!(c.total(), 5);
        assert_eq!(c.n[0][0], 1);
        assert_eq!(c.n[2][0], 1);
        assert_eq!(c.occupancy, vec![3, 1, 2]);
        assert!(TransitionCounts::from_states(&s, 2).is_err());
    }

    #[test]
    fn no_customers_no_tables_and_one_customer_one_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = counts_with(3, &[(0, 1, 1), (2, 0, 1)]);
        for _ in 0..100 {
            let aux = sample_auxiliary_counts(&c, &[0.3, 0.3, 0.4], 1.0, 0.0, &mut rng).unwrap();
            assert_eq!(aux.m[0][1], 1);
            assert_eq!(aux.m[2][0], 1);
            assert_eq!(aux.m[1][1], 0);
            assert_eq!(aux.total_tables(), 2);
        }
    }

    #[test]
    fn table_counts_stay_in_bounds_with_override() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = counts_with(2, &[(0, 0, 40), (0, 1, 7), (1, 1, 3)]);
        for _ in 0..500 {
            let aux = sample_auxiliary_counts(&c, &[0.6, 0.4], 2.0, 50.0, &mut rng).unwrap();
            for j in 0..2 {
                for k in 0..2 {
                    let n = c.n[j][k];
                    assert!(aux.m[j][k] >= n.min(1) && aux.m[j][k] <= n);
                    assert!(aux.mbar[j][k] <= aux.m[j][k]);
                    if j != k {
                        assert_eq!(aux.mbar[j][k], aux.m[j][k]);
                    }
                }
                assert_eq!(aux.mbar[j][j] + aux.override_w[j], aux.m[j][j]);
            }
        }
    }

    /// Unsigned Stirling numbers of the first kind, `|s(n, m)|`.
    fn stirling_first(n: usize) -> Vec<f64> {
        let mut row = vec![1.0];
        for i in 0..n {
            let mut next = vec![0.0; row.len() + 1];
            for (m, v) in row.iter().enumerate() {
                next[m + 1] += v;
                next[m] += i as f64 * v;
            }
            row = next;
        }
        row
    }

    #[test]
    fn crt_distribution_matches_stirling_enumeration() {
        // P(m | n, c) = |s(n, m)| c^m Γ(c) / Γ(c + n)
        let conc: f64 = 0.7 * 0.4;
        let n = 3;
        let stirling = stirling_first(n);
        let rising: f64 = (0..n).map(|i| conc + i as f64).product();
        let exact: Vec<f64> = (0..=n)
            .map(|m| stirling[m] * conc.powi(m as i32) / rising)
            .collect();
        assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let c = counts_with(2, &[(0, 1, n as u64)]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000;
        let mut hist = vec![0usize; n + 1];
        for _ in 0..draws {
            let aux = sample_auxiliary_counts(&c, &[0.6, 0.4], 0.7, 5.0, &mut rng).unwrap();
            hist[aux.m[0][1] as usize] += 1;
        }
        for m in 0..=n {
            let freq = hist[m] as f64 / draws as f64;
            assert!(
                (freq - exact[m]).abs() < 0.01,
                "m={m}: {freq} vs {}",
                exact[m]
            );
        }
    }

    #[test]
    fn beta_without_data_is_uniform_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = 4;
        let mbar = vec![vec![0; l]; l];
        let draws = 100_000;
        let mut acc = vec![0.0; l];
        for _ in 0..draws {
            let (b, rem) = sample_beta(&mbar, 1.0, &mut rng).unwrap();
            assert_eq!(rem, 0.0);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for k in 0..l {
                acc[k] += b[k];
            }
        }
        for v in acc {
            assert!((v / draws as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn beta_concentrates_on_heavy_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mbar = vec![vec![0; 5]; 5];
        mbar[2][0] = 1000;
        let (b, _) = sample_beta(&mbar, 0.01, &mut rng).unwrap();
        assert!(b[0] > 0.99);
    }

    #[test]
    fn beta_posterior_mean_matches_dirichlet_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mbar = vec![vec![3, 0, 1], vec![2, 5, 0], vec![0, 0, 1]];
        let gamma = 1.5;
        let params: Vec<f64> = [5.0, 5.0, 2.0].iter().map(|m| m + gamma / 3.0).collect();
        let total: f64 = params.iter().sum();
        let draws = 100_000;
        let mut acc = [0.0; 3];
        for _ in 0..draws {
            let (b, _) = sample_beta(&mbar, gamma, &mut rng).unwrap();
            for k in 0..3 {
                acc[k] += b[k];
            }
        }
        for k in 0..3 {
            let want = params[k] / total;
            let got = acc[k] / draws as f64;
            assert!(((got - want) / want).abs() < 0.01, "k={k}: {got} vs {want}");
        }
    }

    #[test]
    fn huge_kappa_without_data_gives_self_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = TransitionCounts::zeros(4);
        let pi = sample_transitions(&c, &[0.25; 4], 1.0, 1e7, &mut rng).unwrap();
        for i in 0..4 {
            assert!(pi[(i, i)] > 0.999);
            assert!((pi.row(i).sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_kappa_rows_follow_hdp_prior_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let beta = [0.5, 0.3, 0.2];
        let c = TransitionCounts::zeros(3);
        let draws = 50_000;
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..draws {
            acc += sample_transitions(&c, &beta, 2.0, 0.0, &mut rng).unwrap();
        }
        acc /= draws as f64;
        for i in 0..3 {
            for k in 0..3 {
                assert!((acc[(i, k)] - beta[k]).abs() < 0.01);
            }
        }
    }

    #[test]
    fn heavy_counts_dominate_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = counts_with(3, &[(0, 1, 10_000)]);
        let pi = sample_transitions(&c, &[0.4, 0.3, 0.3], 1.0, 100.0, &mut rng).unwrap();
        assert!((pi[(0, 1)] - 1.0).abs() < 0.01);
    }

    #[test]
    fn initial_dist_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = sample_initial_dist(Some(1), &[0.5, 0.5], 1.0, &mut rng).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(sample_initial_dist(Some(5), &[0.5, 0.5], 1.0, &mut rng).is_err());
    }
}
