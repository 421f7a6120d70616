//! Binary logistic regression fitted by maximum likelihood.
//!
//! Fisher scoring (equivalently IRLS for the canonical logit link) with
//! step-halving when an update would lower the log-likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::DesignMatrix;

const P_FLOOR: f64 = 1e-12;
/// Coefficient magnitude beyond which the data are treated as separated.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<Coefficient>,
    pub converged: bool,
    pub iterations: usize,
    pub final_loglik: f64,
    pub separation: bool,
    pub fitted_probs: Vec<f64>,
}

impl FitResult {
    pub fn beta(&self) -> DVector<f64> {
        DVector::from_iterator(self.coefficients.len(), self.coefficients.iter().map(|c| c.value))
    }

    pub fn names(&self) -> Vec<String> {
        self.coefficients.iter().map(|c| c.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|c| c.name == name).map(|c| c.value)
    }

    pub fn predict(&self, design: &DesignMatrix) -> Result<Vec<u8>> {
        if design.columns != self.names() {
            return Err(Error::Shape(format!(
                "fit has columns [{}] but design has [{}]",
                self.names().join(", "),
                design.columns.join(", ")
            )));
        }
        predict(&self.beta(), &design.x)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_shapes(beta: &DVector<f64>, x: &DMatrix<f64>, y: Option<&[u8]>) -> Result<()> {
    if beta.len() != x.ncols() {
        return Err(Error::Shape(format!(
            "{} coefficients for {} columns",
            beta.len(),
            x.ncols()
        )));
    }
    if let Some(y) = y {
        if y.len() != x.nrows() {
            return Err(Error::Shape(format!("{} labels for {} rows", y.len(), x.nrows())));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::Precondition("labels must be 0 or 1".into()));
        }
    }
    Ok(())
}

fn probs(beta: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    (x * beta).map(|z| sigmoid(z).clamp(P_FLOOR, 1.0 - P_FLOOR))
}

/// Log-likelihood `Σ U log p + (1-U) log(1-p)`, with `p` kept away from 0 and 1.
pub fn loglik(beta: &DVector<f64>, x: &DMatrix<f64>, y: &[u8]) -> Result<f64> {
    check_shapes(beta, x, Some(y))?;
    Ok(loglik_unchecked(beta, x, y))
}

fn loglik_unchecked(beta: &DVector<f64>, x: &DMatrix<f64>, y: &[u8]) -> f64 {
    probs(beta, x)
        .iter()
        .zip(y)
        .map(|(&p, &u)| if u == 1 { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

/// Gradient of the log-likelihood, `Xᵀ(y - p)`.
pub fn score(beta: &DVector<f64>, x: &DMatrix<f64>, y: &[u8]) -> Result<DVector<f64>> {
    check_shapes(beta, x, Some(y))?;
    let p = probs(beta, x);
    let resid = DVector::from_iterator(y.len(), y.iter().zip(p.iter()).map(|(&u, &p)| u as f64 - p));
    Ok(x.transpose() * resid)
}

/// 1 iff the fitted probability is strictly above one half.
pub fn predict(beta: &DVector<f64>, x: &DMatrix<f64>) -> Result<Vec<u8>> {
    check_shapes(beta, x, None)?;
    Ok((x * beta).iter().map(|&z| u8::from(sigmoid(z) > 0.5)).collect())
}

/// Columns that are (numerically) linear combinations of earlier ones.
fn dependent_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let n = x.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let col: DVector<f64> = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        // re-orthogonalise once for stability
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-9 * norm.max(1.0) * (n as f64).sqrt() {
            dependent.push(name.clone());
        } else {
            basis.push(r / rn);
        }
    }
    dependent
}

pub fn fit(design: &DesignMatrix) -> Result<FitResult> {
    fit_with(design, FitOptions::default())
}

pub fn fit_with(design: &DesignMatrix, opts: FitOptions) -> Result<FitResult> {
    let x = &design.x;
    let y = &design.labels[..];
    let k = x.ncols();
    check_shapes(&DVector::zeros(k), x, Some(y))?;
    if x.nrows() < k {
        return Err(Error::InsufficientData(format!(
            "{} rows for {k} coefficients",
            x.nrows()
        )));
    }
    let dep = dependent_columns(x, &design.columns);
    if !dep.is_empty() {
        return Err(Error::RankDeficient { columns: dep });
    }

    let mut beta = DVector::zeros(k);
    let mut ll = loglik_unchecked(&beta, x, y);
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let p = probs(&beta, x);
        let w = p.map(|p| p * (1.0 - p));
        let resid = DVector::from_iterator(y.len(), y.iter().zip(p.iter()).map(|(&u, &p)| u as f64 - p));
        let grad = x.transpose() * resid;
        let mut info = DMatrix::zeros(k, k);
        for i in 0..x.nrows() {
            let row = x.row(i);
            info.ger(w[i], &row.transpose(), &row.transpose(), 1.0);
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => info
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Numerical("information matrix is singular".into()))?,
        };

        let mut t = 1.0;
        let mut next = &beta + &step * t;
        let mut next_ll = loglik_unchecked(&next, x, y);
        let mut halvings = 0;
        while next_ll < ll - 1e-12 && halvings < 30 {
            t *= 0.5;
            next = &beta + &step * t;
            next_ll = loglik_unchecked(&next, x, y);
            halvings += 1;
        }
        if !next_ll.is_finite() || next.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("non-finite coefficients during fitting".into()));
        }

        if next.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            separation = true;
            break;
        }
        let delta = (&next - &beta).amax();
        beta = next;
        ll = next_ll;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    if separation {
        tracing::warn!("complete or quasi-complete separation; coefficients diverge");
    } else if !converged {
        tracing::warn!(iterations, "logistic fit did not converge");
    }

    let fitted_probs = probs(&beta, x).iter().copied().collect();
    Ok(FitResult {
        coefficients: design
            .columns
            .iter()
            .zip(beta.iter())
            .map(|(name, &value)| Coefficient {
                name: name.clone(),
                value,
            })
            .collect(),
        converged,
        iterations,
        final_loglik: ll,
        separation,
        fitted_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(cols: &[&str], rows: &[Vec<f64>], y: &[u8]) -> DesignMatrix {
        DesignMatrix::from_rows(cols.iter().map(|s| s.to_string()).collect(), rows, y.to_vec()).unwrap()
    }

    #[test]
    fn intercept_only_matches_log_odds() {
        let y = [1, 1, 1, 0];
        let rows = vec![vec![1.0]; 4];
        let f = fit(&design(&["intercept"], &rows, &y)).unwrap();
        assert!(f.converged);
        assert!((f.coefficients[0].value - 3f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn loglik_at_zero_is_n_log_half() {
        let d = design(&["a", "b"], &[vec![1.0, 2.0], vec![1.0, -1.0], vec![1.0, 0.3]], &[1, 0, 1]);
        let ll = loglik(&DVector::zeros(2), &d.x, &d.labels).unwrap();
        assert!((ll - 3.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loglik_hand_value() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let ll = loglik(&DVector::from_vec(vec![0.0, 1.0]), &x, &[1]).unwrap();
        assert!((ll + 0.126928).abs() < 1e-6, "{ll}");
    }

    #[test]
    fn symmetric_data_has_zero_slope() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for x in [-1.5, 0.2, 0.7, 3.0] {
            for u in [0, 1] {
                rows.push(vec![1.0, x]);
                y.push(u);
            }
        }
        let f = fit(&design(&["intercept", "x"], &rows, &y)).unwrap();
        assert!(f.get("x").unwrap().abs() < 1e-8);
        assert!(f.get("intercept").unwrap().abs() < 1e-8);
    }

    #[test]
    fn predict_logistic_one() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!((sigmoid(1.0) - 0.731_058_6).abs() < 1e-6);
        assert_eq!(predict(&DVector::from_vec(vec![0.0, 1.0]), &x).unwrap(), vec![1]);
    }

    #[test]
    fn predict_checks_layout() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![1.0, ((i * 5) % 7) as f64]).collect();
        let y: Vec<u8> = (0..12).map(|i| u8::from(i % 2 == 0)).collect();
        let f = fit(&design(&["intercept", "x"], &rows, &y)).unwrap();
        let other = design(&["intercept", "z"], &rows, &y);
        assert!(matches!(f.predict(&other), Err(Error::Shape(_))));
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
        let y = [0, 1, 0, 1, 1, 0, 1, 0];
        match fit(&design(&["intercept", "s_App", "s_Tes"], &rows, &y)) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["s_Tes".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64, 0.0]).collect();
        let y = [0, 1, 0, 1, 1, 0];
        assert!(matches!(
            fit(&design(&["intercept", "x", "z"], &rows, &y)),
            Err(Error::RankDeficient { columns }) if columns == vec!["z".to_string()]
        ));
    }

    #[test]
    fn separated_data_is_flagged() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64 - 4.5]).collect();
        let y: Vec<u8> = (0..10).map(|i| u8::from(i >= 5)).collect();
        let f = fit(&design(&["intercept", "x"], &rows, &y)).unwrap();
        assert!(f.separation);
        assert!(!f.converged);
    }

    #[test]
    fn predict_threshold_is_strict() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1e-3, -1e-3]);
        assert_eq!(predict(&DVector::from_element(1, 1.0), &x).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn shape_errors() {
        let x = DMatrix::zeros(3, 2);
        assert!(matches!(predict(&DVector::zeros(3), &x), Err(Error::Shape(_))));
        assert!(matches!(loglik(&DVector::zeros(2), &x, &[1, 0]), Err(Error::Shape(_))));
    }

    #[test]
    fn fit_result_json_round_trip() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, ((i * 7) % 11) as f64]).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i % 3 == 0)).collect();
        let f = fit(&design(&["intercept", "x"], &rows, &y)).unwrap();
        let back: FitResult = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    fn random_problem(seed: u64, n: usize, k: usize) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let true_beta: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let mut r = vec![1.0];
            r.extend((1..k).map(|_| rng.random_range(-2.0..2.0)));
            let z: f64 = r.iter().zip(&true_beta).map(|(a, b)| a * b).sum();
            y.push(u8::from(rng.random::<f64>() < sigmoid(z)));
            rows.push(r);
        }
        let cols: Vec<String> = (0..k).map(|j| format!("c{j}")).collect();
        DesignMatrix::from_rows(cols, &rows, y).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gradient_matches_finite_differences(seed in any::<u64>(), b in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let d = random_problem(seed, 40, 3);
            let beta = DVector::from_vec(b);
            let g = score(&beta, &d.x, &d.labels).unwrap();
            let h = 1e-6;
            for j in 0..3 {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (loglik(&up, &d.x, &d.labels).unwrap() - loglik(&dn, &d.x, &d.labels).unwrap()) / (2.0 * h);
                prop_assert!((g[j] - fd).abs() <= 1e-6 * g[j].abs().max(1.0), "analytic {} vs fd {}", g[j], fd);
            }
        }

        #[test]
        fn fitted_score_vanishes_and_loglik_is_maximal(seed in any::<u64>()) {
            let d = random_problem(seed, 120, 3);
            let f = fit(&d).unwrap();
            prop_assume!(!f.separation);
            prop_assert!(f.converged);
            let g = score(&f.beta(), &d.x, &d.labels).unwrap();
            prop_assert!(g.amax() < 1e-5, "gradient {}", g.amax());
            prop_assert!(f.final_loglik >= loglik(&DVector::zeros(3), &d.x, &d.labels).unwrap());
        }

        #[test]
        fn estimate_is_local_maximum(seed in any::<u64>()) {
            let d = random_problem(seed, 60, 3);
            let f = fit(&d).unwrap();
            prop_assume!(!f.separation);
            let beta = f.beta();
            let best = loglik(&beta, &d.x, &d.labels).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            for _ in 0..100 {
                let dir = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
                let r = rng.random_range(0.0..0.5);
                let probe = &beta + dir.normalize() * r;
                prop_assert!(loglik(&probe, &d.x, &d.labels).unwrap() <= best + 1e-12);
            }
        }

        #[test]
        fn row_permutation_invariance(seed in any::<u64>()) {
            let d = random_problem(seed, 50, 3);
            let f = fit(&d).unwrap();
            prop_assume!(!f.separation);
            let idx: Vec<usize> = (0..50).rev().collect();
            let g = fit(&d.select_rows(&idx)).unwrap();
            for (a, b) in f.coefficients.iter().zip(&g.coefficients) {
                prop_assert!((a.value - b.value).abs() < 1e-10);
            }
        }

        #[test]
        fn column_rescaling(seed in any::<u64>(), c in 0.1f64..10.0) {
            let d = random_problem(seed, 50, 3);
            let f = fit(&d).unwrap();
            prop_assume!(!f.separation);
            let mut scaled = d.clone();
            scaled.x.column_mut(1).scale_mut(c);
            let g = fit(&scaled).unwrap();
            prop_assert!((g.coefficients[1].value * c - f.coefficients[1].value).abs() < 1e-6);
            for (p, q) in f.fitted_probs.iter().zip(&g.fitted_probs) {
                prop_assert!((p - q).abs() < 1e-8);
            }
        }

        #[test]
        fn predictions_are_binary_and_sized(seed in any::<u64>()) {
            let d = random_problem(seed, 30, 2);
            let pred = predict(&DVector::from_vec(vec![0.3, -0.7]), &d.x).unwrap();
            prop_assert_eq!(pred.len(), 30);
            prop_assert!(pred.iter().all(|&v| v <= 1));
        }
    }
}
