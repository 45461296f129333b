//! Residual bounds, concentration sample sizes and CLT intervals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::estimators::{cov_regret, mean, SamplePairs};
use crate::problems::{dot, DecisionOracle, QpInstance};
use crate::{CovMatrix, Error, Result};

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `L * |mean| * sqrt(tr Sigma)` for an `L`-Lipschitz decision map.
pub fn lipschitz_residual_bound(l: f64, mean: &[f64], sigma: &CovMatrix) -> Result<f64> {
    if !(l >= 0.0) {
        return Err(Error::invalid(format!("Lipschitz constant must be >= 0, got {l}")));
    }
    Ok(l * norm(mean) * sigma.trace().sqrt())
}

/// Leading term `(M/2) |mean| tr(Sigma)` of the smooth-map bound. The
/// dropped remainder is `O(|Sigma|_F^{3/2})`.
pub fn smooth_residual_bound(m: f64, mean: &[f64], sigma: &CovMatrix) -> Result<f64> {
    if !(m >= 0.0) {
        return Err(Error::invalid(format!("smoothness constant must be >= 0, got {m}")));
    }
    Ok(0.5 * m * norm(mean) * sigma.trace())
}

/// `L^2 / (2 mu_sc) * tr(Sigma)` for a `mu_sc`-strongly convex objective.
pub fn strongly_convex_residual_bound(l: f64, mu_sc: f64, sigma: &CovMatrix) -> Result<f64> {
    if !(mu_sc > 0.0) {
        return Err(Error::NonpositiveModulus(mu_sc));
    }
    if !(l >= 0.0) {
        return Err(Error::invalid(format!("Lipschitz constant must be >= 0, got {l}")));
    }
    Ok(l * l / (2.0 * mu_sc) * sigma.trace())
}

/// Leading residual term of the Markowitz QP (`Q = Sigma`):
/// `-lambda / (2 (1 + lambda)^2) * tr(Sigma^2) * mean'Sigma mean / |mean|^2`.
///
/// Under `Sigma -> t Sigma` this scales as `t^3`: `t^2` from the trace and
/// `t` from the Rayleigh quotient. The remainder is `O(|Sigma|^3)`.
pub fn markowitz_residual_term(lambda: f64, sigma: &CovMatrix, mean: &[f64]) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if mean.len() != sigma.dim() {
        return Err(Error::dim("mean and Sigma differ in dimension"));
    }
    let nn = dot(mean, mean);
    if nn == 0.0 {
        return Err(Error::ZeroMean);
    }
    let s = sigma.matrix();
    let tr_s2: f64 = s.iter().map(|v| v * v).sum();
    let m = nalgebra::DVector::from_column_slice(mean);
    let rayleigh = (m.transpose() * s * &m)[(0, 0)] / nn;
    Ok(-lambda / (2.0 * (1.0 + lambda).powi(2)) * tr_s2 * rayleigh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundType {
    Lipschitz,
    Smooth,
    StronglyConvex,
    Markowitz,
}

/// JSON record `{bound_type, value, inputs, truncation_order?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_type: BoundType,
    pub value: f64,
    pub inputs: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_order: Option<String>,
}

/// All bounds whose constants were supplied, with their inputs echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBounds {
    pub lipschitz: Option<f64>,
    pub smooth: Option<f64>,
    pub strongly_convex: Option<f64>,
    pub l: Option<f64>,
    pub m: Option<f64>,
    pub mu_sc: Option<f64>,
    pub mean_norm: f64,
    pub trace_sigma: f64,
}

impl ResidualBounds {
    pub fn compute(
        l: Option<f64>,
        m: Option<f64>,
        mu_sc: Option<f64>,
        mean: &[f64],
        sigma: &CovMatrix,
    ) -> Result<Self> {
        Ok(ResidualBounds {
            lipschitz: l.map(|l| lipschitz_residual_bound(l, mean, sigma)).transpose()?,
            smooth: m.map(|m| smooth_residual_bound(m, mean, sigma)).transpose()?,
            strongly_convex: match (l, mu_sc) {
                (Some(l), Some(mu)) => Some(strongly_convex_residual_bound(l, mu, sigma)?),
                _ => None,
            },
            l,
            m,
            mu_sc,
            mean_norm: norm(mean),
            trace_sigma: sigma.trace(),
        })
    }

    pub fn reports(&self) -> Vec<BoundReport> {
        let mut out = Vec::new();
        let (mn, tr) = (self.mean_norm, self.trace_sigma);
        if let (Some(v), Some(l)) = (self.lipschitz, self.l) {
            out.push(BoundReport {
                bound_type: BoundType::Lipschitz,
                value: v,
                inputs: serde_json::json!({"L": l, "mean_norm": mn, "trace_sigma": tr}),
                truncation_order: None,
            });
        }
        if let (Some(v), Some(m)) = (self.smooth, self.m) {
            out.push(BoundReport {
                bound_type: BoundType::Smooth,
                value: v,
                inputs: serde_json::json!({"M": m, "mean_norm": mn, "trace_sigma": tr}),
                truncation_order: Some("O(|Sigma|_F^{3/2})".into()),
            });
        }
        if let (Some(v), Some(l), Some(mu)) = (self.strongly_convex, self.l, self.mu_sc) {
            out.push(BoundReport {
                bound_type: BoundType::StronglyConvex,
                value: v,
                inputs: serde_json::json!({"L": l, "mu_sc": mu, "trace_sigma": tr}),
                truncation_order: None,
            });
        }
        out
    }
}

/// Smallest `n` with `2 exp(-n eps^2 / (2 (B^2 + L^2 sigma^2))) <= delta`,
/// i.e. `ceil(2 (B^2 + L^2 sigma^2) log(2/delta) / eps^2)`, at least 1.
pub fn concentration_sample_size(
    cost_bound: f64,
    l: f64,
    sigma_sq: f64,
    epsilon: f64,
    delta: f64,
) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    if delta >= 1.0 {
        return Ok(1);
    }
    let v = 2.0 * (cost_bound * cost_bound + l * l * sigma_sq) * (2.0 / delta).ln()
        / (epsilon * epsilon);
    Ok((v.ceil() as usize).max(1))
}

/// `2 exp(-n eps^2 / (2 (B^2 + L^2 sigma^2)))`, not clipped at 1.
pub fn tail_probability(n: usize, epsilon: f64, cost_bound: f64, l: f64, sigma_sq: f64) -> f64 {
    let v = cost_bound * cost_bound + l * l * sigma_sq;
    2.0 * (-(n as f64) * epsilon * epsilon / (2.0 * v)).exp()
}

/// Standard normal quantile by Wichura's AS241 (PPND16), accurate to about
/// 1e-16 relative.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                + 67265.770927008700853)
                * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                + 39307.89580009271061)
                * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
            + 0.24178072517745061177)
            * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Where the decision-map Jacobian `J[i][j] = d pi_i / d c_j` comes from.
#[derive(Debug, Clone)]
pub enum GradientSource<'a> {
    /// `J = 0`, e.g. piecewise-constant LP decisions.
    Zero,
    Matrix(DMatrix<f64>),
    /// `J = -(Q + lambda I)^{-1}` for an unconstrained QP.
    AnalyticQp(&'a QpInstance),
    /// Central differences with step `1e-4 (1 + |cbar|)`.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceForm {
    /// Full delta-method variance with the Jacobian term.
    Delta,
    /// Three-term variance valid when the Jacobian or the mean vanishes.
    Simplified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub half_width: f64,
    pub level: f64,
    pub variance_estimate: f64,
    pub variance_form: VarianceForm,
    pub n: usize,
    /// Set when `n < 30`, where the normal approximation is doubtful.
    pub small_sample: bool,
}

impl ConfidenceInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower() <= x && x <= self.upper()
    }
}

/// Jacobian of `pi` at `c` by central differences.
pub fn finite_difference_jacobian<O: DecisionOracle + ?Sized>(
    oracle: &O,
    c: &[f64],
) -> Result<DMatrix<f64>> {
    let d = c.len();
    let h = 1e-4 * (1.0 + norm(c));
    let mut jac = DMatrix::zeros(d, d);
    let mut x = c.to_vec();
    for j in 0..d {
        x[j] = c[j] + h;
        let up = oracle.solve(&x)?.z;
        x[j] = c[j] - h;
        let down = oracle.solve(&x)?.z;
        x[j] = c[j];
        for i in 0..d {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// CLT interval for regret centered at the covariance estimate.
///
/// The variance is the sample variance of `h_i = c_i'z_i - g'c_i` with
/// `g = pi(cbar) + J' cbar`, the gradient of `mu -> mu'pi(mu)` at `cbar`.
pub fn clt_confidence_interval<O: DecisionOracle + ?Sized>(
    pairs: &SamplePairs,
    oracle: &O,
    grad: &GradientSource<'_>,
    level: f64,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if n < 30 {
        log::warn!("CLT interval with only {n} samples; normal approximation may be poor");
    }
    let d = pairs.dim();
    let cbar = pairs.costs.column_means();
    let at_mean = oracle.solve(&cbar)?.z;
    let jac = match grad {
        GradientSource::Zero => None,
        GradientSource::Matrix(m) => {
            if m.shape() != (d, d) {
                return Err(Error::dim(format!("Jacobian must be {d}x{d}")));
            }
            Some(m.clone())
        }
        GradientSource::AnalyticQp(qp) => Some(-qp.inverse_hessian()?),
        GradientSource::FiniteDifference => Some(finite_difference_jacobian(oracle, &cbar)?),
    };
    let scale = pairs.costs.as_slice().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mean_vanishes = norm(&cbar) <= 1e-12 * (1.0 + scale);
    let jac = jac.filter(|j| j.amax() > 0.0 && !mean_vanishes);

    let (variance, form) = match jac {
        Some(j) => {
            let jt_c = j.transpose() * nalgebra::DVector::from_column_slice(&cbar);
            let g: Vec<f64> = (0..d).map(|k| at_mean[k] + jt_c[k]).collect();
            let h: Vec<f64> = pairs.iter().map(|(c, z)| dot(c, z) - dot(&g, c)).collect();
            (sample_var(&h), VarianceForm::Delta)
        }
        None => {
            // Var(c'z) + Var(c'pi(cbar)) - 2 Cov(c'z, c'pi(cbar))
            let a: Vec<f64> = pairs.iter().map(|(c, z)| dot(c, z)).collect();
            let b: Vec<f64> = pairs.costs.rows().map(|c| dot(c, &at_mean)).collect();
            let v = sample_var(&a) + sample_var(&b) - 2.0 * sample_cov(&a, &b);
            (v.max(0.0), VarianceForm::Simplified)
        }
    };
    let z = normal_quantile(0.5 + level / 2.0);
    Ok(ConfidenceInterval {
        center: cov_regret(pairs).value,
        half_width: z * (variance / n as f64).sqrt(),
        level,
        variance_estimate: variance,
        variance_form: form,
        n,
        small_sample: n < 30,
    })
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    s / (a.len() - 1) as f64
}

fn sample_var(a: &[f64]) -> f64 {
    sample_cov(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::MeanMode;
    use crate::prob::SampleMatrix;
    use crate::problems::KnapsackInstance;

    fn diag(v: &[f64]) -> CovMatrix {
        CovMatrix::diagonal(v).unwrap()
    }

    #[test]
    fn lipschitz_examples() {
        let s = diag(&[1.0, 3.0]);
        assert_eq!(lipschitz_residual_bound(0.0, &[3.0, 0.0], &s).unwrap(), 0.0);
        assert_eq!(lipschitz_residual_bound(2.0, &[3.0, 0.0], &s).unwrap(), 12.0);
        assert_eq!(lipschitz_residual_bound(2.0, &[0.0, 0.0], &s).unwrap(), 0.0);
    }

    #[test]
    fn smooth_examples() {
        let s = diag(&[1.0, 2.0]);
        assert_eq!(smooth_residual_bound(0.0, &[2.0, 0.0], &s).unwrap(), 0.0);
        assert_eq!(smooth_residual_bound(1.0, &[2.0, 0.0], &s).unwrap(), 3.0);
        let t = smooth_residual_bound(1.0, &[2.0, 0.0], &s.scaled(4.0).unwrap()).unwrap();
        assert!((t - 12.0).abs() < 1e-12);
    }

    #[test]
    fn strongly_convex_examples() {
        let s = diag(&[1.0]);
        assert_eq!(strongly_convex_residual_bound(0.0, 1.0, &s).unwrap(), 0.0);
        assert_eq!(strongly_convex_residual_bound(2.0, 1.0, &s).unwrap(), 2.0);
        assert_eq!(strongly_convex_residual_bound(2.0, 2.0, &s).unwrap(), 1.0);
        assert!(matches!(
            strongly_convex_residual_bound(2.0, 0.0, &s),
            Err(Error::NonpositiveModulus(_))
        ));
    }

    #[test]
    fn markowitz_examples() {
        let s = CovMatrix::identity(2);
        assert_eq!(markowitz_residual_term(0.0, &s, &[1.0, 2.0]).unwrap(), 0.0);
        assert!((markowitz_residual_term(1.0, &s, &[1.0, 2.0]).unwrap() + 0.25).abs() < 1e-15);
        assert!(matches!(
            markowitz_residual_term(1.0, &s, &[0.0, 0.0]),
            Err(Error::ZeroMean)
        ));
    }

    #[test]
    fn markowitz_scales_cubically() {
        let s = CovMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let mu = [1.0, -0.5];
        let base = markowitz_residual_term(1.0, &s, &mu).unwrap();
        let half = markowitz_residual_term(1.0, &s.scaled(0.5).unwrap(), &mu).unwrap();
        assert!((half / base - 0.125).abs() < 1e-12);
    }

    #[test]
    fn sample_size_examples() {
        assert_eq!(concentration_sample_size(1.0, 0.0, 1.0, 0.1, 0.05).unwrap(), 738);
        let a = concentration_sample_size(1.0, 0.5, 2.0, 0.1, 0.05).unwrap();
        let b = concentration_sample_size(1.0, 0.5, 2.0, 0.2, 0.05).unwrap();
        assert!(b * 4 >= a && b * 4 <= a + 4);
        assert_eq!(concentration_sample_size(1.0, 0.0, 1.0, 0.1, 1.0).unwrap(), 1);
        assert!(concentration_sample_size(1.0, 0.0, 1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn tail_probability_inverts_sample_size() {
        let n = concentration_sample_size(2.0, 1.0, 0.5, 0.3, 0.01).unwrap();
        assert!(tail_probability(n, 0.3, 2.0, 1.0, 0.5) <= 0.01);
        assert!(tail_probability(n - 1, 0.3, 2.0, 1.0, 0.5) > 0.01);
    }

    #[test]
    fn quantiles() {
        assert_eq!(normal_quantile(0.5), 0.0);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!((normal_quantile(0.995) - 2.5758293035489004).abs() < 1e-9);
        assert!((normal_quantile(0.025) + 1.959963984540054).abs() < 1e-9);
        assert!((normal_quantile(1e-10) + 6.361340902404056).abs() < 1e-9);
    }

    #[test]
    fn constant_decisions_give_symmetric_interval() {
        // values far above capacity pressure: every item always taken
        let k = KnapsackInstance::new(vec![1.0, 1.0], 10.0).unwrap();
        let costs = SampleMatrix::from_rows(&[[-1.0, -2.0], [-1.5, -2.5], [-0.5, -3.0]]).unwrap();
        let z = SampleMatrix::from_rows(&[[1.0, 1.0]; 3]).unwrap();
        let pairs = SamplePairs::new(costs, z, MeanMode::Estimated).unwrap();
        let ci = clt_confidence_interval(&pairs, &k, &GradientSource::Zero, 0.95).unwrap();
        assert_eq!(ci.variance_form, VarianceForm::Simplified);
        assert!(ci.variance_estimate.abs() < 1e-12);
        assert_eq!(ci.center, 0.0);
        assert!((ci.lower() + ci.upper()).abs() < 1e-12);
        assert!(ci.small_sample);
    }
}
