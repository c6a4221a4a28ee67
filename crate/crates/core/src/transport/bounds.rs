use super::{em_exact_assignment, MomentVector, NoiseVector, SampleSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute slack allowed in `lower ≤ exact ≤ upper`.
pub const SANDWICH_SLACK: f64 = 1e-9;

/// A bound value with its labeled components.
#[derive(Clone, Debug, PartialEq)]
pub struct Breakdown<T> {
    pub value: T,
    pub terms: Vec<(String, T)>,
}

fn l2_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

/// Moment upper bound `Σσ_a² + Σσ_b² + ‖μ_a − μ_b‖ + 2`.
pub fn upper_bound_thm1<T: Scalar>(ma: &MomentVector<T>, mb: &MomentVector<T>) -> Result<Breakdown<T>> {
    if ma.d() != mb.d() {
        return Err(Error::dim("upper_bound_thm1", format!("dimensions {} and {}", ma.d(), mb.d())));
    }
    let finite = |m: &MomentVector<T>| m.mean.iter().chain(&m.var).all(|v| v.is_finite());
    if !finite(ma) || !finite(mb) {
        return Err(Error::Contract("upper bound needs finite first and second moments".into()));
    }
    let var_a: T = ma.var.iter().copied().sum();
    let var_b: T = mb.var.iter().copied().sum();
    let shift = l2_diff(&ma.mean, &mb.mean);
    let two = T::of(2.0);
    Ok(Breakdown {
        value: var_a + var_b + shift + two,
        terms: vec![
            ("sum_var_a".into(), var_a),
            ("sum_var_b".into(), var_b),
            ("mean_shift".into(), shift),
            ("constant".into(), two),
        ],
    })
}

/// Upper bound for normalized outputs whose moments are `(ε_μ, 1 + ε_σ²)`.
pub fn upper_bound_noisy<T: Scalar>(na: &NoiseVector<T>, nb: &NoiseVector<T>, d: usize) -> Result<T> {
    if na.d() != d || nb.d() != d {
        return Err(Error::dim("upper_bound_noisy", format!("noise lengths {} and {} for d = {d}", na.d(), nb.d())));
    }
    let var_noise: T = na.eps_var.iter().chain(&nb.eps_var).copied().sum();
    Ok(var_noise + T::of(2.0 * d as f64) + l2_diff(&na.eps_mu, &nb.eps_mu) + T::of(2.0))
}

/// Parameters of the clipped-power 1-Lipschitz probe `f_{p,C}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzProbe<T> {
    pub p: u32,
    pub c: T,
    pub d: usize,
    /// Half-width of a box containing both supports.
    pub c0: Option<T>,
}

impl<T: Scalar> LipschitzProbe<T> {
    pub fn new(p: u32, c: T, d: usize, c0: Option<T>) -> Result<Self> {
        if p < 2 {
            return Err(Error::Contract(format!("probe power must be at least 2, got {p}")));
        }
        if !(c > T::zero()) || d == 0 {
            return Err(Error::Contract(format!("probe needs C > 0 and d ≥ 1, got C = {c}, d = {d}")));
        }
        if let Some(c0) = c0 {
            if c > c0 {
                return Err(Error::Contract(format!("probe C = {c} exceeds support half-width {c0}")));
            }
        }
        Ok(LipschitzProbe { p, c, d, c0 })
    }

    /// `C = C0 =` the largest absolute coordinate over both sets (1 when all are zero).
    pub fn tightest(p: u32, a: &SampleSet<T>, b: &SampleSet<T>) -> Result<Self> {
        let m = a.max_abs().max(b.max_abs());
        let c = if m > T::zero() { m } else { T::one() };
        Self::new(p, c, a.d(), Some(c))
    }
}

fn powi<T: Scalar>(x: T, p: u32) -> T {
    x.powi(p as i32)
}

/// `f_{p,C}(x) = (Σ_{|xᵢ|≤C} xᵢᵖ + Σ_{xᵢ<−C} (−C)ᵖ + Σ_{xᵢ>C} Cᵖ) / (p·Cᵖ⁻¹·√d)`.
pub fn f_pc_eval<T: Scalar>(x: &[T], probe: &LipschitzProbe<T>) -> Result<T> {
    if x.len() != probe.d {
        return Err(Error::dim("f_pc_eval", format!("{} coordinates for probe of dimension {}", x.len(), probe.d)));
    }
    let c = probe.c;
    let sum: T = x.iter().map(|&v| powi(v.max(-c).min(c), probe.p)).sum();
    let scale = T::of(probe.p as f64) * powi(c, probe.p - 1) * T::of(probe.d as f64).sqrt();
    Ok(sum / scale)
}

fn mean_probe<T: Scalar>(s: &SampleSet<T>, probe: &LipschitzProbe<T>) -> Result<T> {
    let total = s.rows().map(|r| f_pc_eval(r, probe)).sum::<Result<T>>()?;
    Ok(total / T::of(s.n() as f64))
}

/// `|E f_{p,C}(a) − E f_{p,C}(b)|`, a lower bound on `W₁(a, b)`.
pub fn lower_bound_thm2<T: Scalar>(a: &SampleSet<T>, b: &SampleSet<T>, probe: &LipschitzProbe<T>) -> Result<T> {
    if a.d() != b.d() {
        return Err(Error::dim("lower_bound_thm2", format!("dimensions {} and {}", a.d(), b.d())));
    }
    Ok((mean_probe(a, probe)? - mean_probe(b, probe)?).abs())
}

/// `|Σ(ε_μ,a² + ε_σ²,a − ε_μ,b² − ε_σ²,b)| / (2·C0·√d)`.
pub fn lower_bound_p2_noise<T: Scalar>(na: &NoiseVector<T>, nb: &NoiseVector<T>, c0: T, d: usize) -> Result<T> {
    if !(c0 > T::zero()) {
        return Err(Error::Contract(format!("support half-width must be positive, got {c0}")));
    }
    if na.d() != d || nb.d() != d || d == 0 {
        return Err(Error::dim("lower_bound_p2_noise", format!("noise lengths {} and {} for d = {d}", na.d(), nb.d())));
    }
    let second = |n: &NoiseVector<T>| n.eps_mu.iter().zip(&n.eps_var).map(|(&m, &v)| m * m + v).sum::<T>();
    let gap = (second(na) - second(nb)).abs();
    Ok(gap / (T::of(2.0) * c0 * T::of(d as f64).sqrt()))
}

/// Which unitization the bound refers to.
#[derive(Clone, Debug, PartialEq)]
pub enum UnitizedMode<T> {
    Vanilla,
    Scalar(T),
    Vector(Vec<T>),
}

/// Constant upper bounds on `W₁` after unitization. With a zero `α` the bound
/// falls back on the mean input norms `(E‖x‖, E‖y‖)`.
pub fn unitized_upper_bound<T: Scalar>(mode: &UnitizedMode<T>, norm_means: Option<(T, T)>) -> Result<T> {
    let in_range = |a: T| a >= T::zero() && a <= T::one();
    let need_norms = |extra: T| {
        norm_means
            .map(|(x, y)| x + y + extra)
            .ok_or_else(|| Error::MissingData("α = 0 needs the mean input norms E‖x‖ and E‖y‖".into()))
    };
    let two = T::of(2.0);
    match mode {
        UnitizedMode::Vanilla => Ok(two),
        UnitizedMode::Scalar(a) if !in_range(*a) => Err(Error::Contract(format!("alpha must lie in [0,1], got {a}"))),
        UnitizedMode::Scalar(a) if *a == T::zero() => need_norms(T::zero()),
        UnitizedMode::Scalar(a) => Ok(two / *a),
        UnitizedMode::Vector(alpha) => {
            if alpha.is_empty() || !alpha.iter().all(|&a| in_range(a)) {
                return Err(Error::Contract("alpha vector must be non-empty with entries in [0,1]".into()));
            }
            let min = alpha.iter().copied().fold(T::infinity(), T::min);
            if min == T::zero() {
                need_norms(two)
            } else {
                Ok(two / min)
            }
        }
    }
}

/// Lower bound `(2⁻ᵖ − 4⁻ᵖ)·√d·C′/p` for the two-uniform-box construction.
pub fn unbounded_example_lower<T: Scalar>(c_prime: T, probe: &LipschitzProbe<T>) -> Result<T> {
    if !(c_prime > T::zero()) {
        return Err(Error::Contract(format!("C′ must be positive, got {c_prime}")));
    }
    let p = probe.p as i32;
    let gap = T::of(2f64.powi(-p) - 4f64.powi(-p));
    Ok(gap * T::of(probe.d as f64).sqrt() * c_prime / T::of(probe.p as f64))
}

/// Lower bound, exact distance and upper bound for one pair of sample sets.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport<T> {
    pub lower: T,
    pub exact: Option<T>,
    pub upper: T,
    pub terms: Vec<(String, T)>,
}

impl<T: Scalar> BoundReport<T> {
    pub fn ordered(&self) -> bool {
        let slack = T::of(SANDWICH_SLACK);
        match self.exact {
            Some(e) => self.lower <= e + slack && e <= self.upper + slack,
            None => self.lower <= self.upper + slack,
        }
    }
}

/// Evaluates the probe lower bound, the assignment oracle and the moment
/// upper bound, failing if they are out of order.
pub fn bound_sandwich<T: Scalar>(a: &SampleSet<T>, b: &SampleSet<T>, probe: &LipschitzProbe<T>) -> Result<BoundReport<T>> {
    let lower = lower_bound_thm2(a, b, probe)?;
    let exact = em_exact_assignment(a, b)?;
    let upper = upper_bound_thm1(&MomentVector::from_samples(a), &MomentVector::from_samples(b))?;
    let mut terms = vec![("probe_p".to_string(), T::of(probe.p as f64)), ("probe_c".to_string(), probe.c)];
    terms.extend(upper.terms);
    let report = BoundReport { lower, exact: Some(exact), upper: upper.value, terms };
    if !report.ordered() {
        return Err(Error::Contract(format!(
            "bound ordering violated: lower {lower}, exact {exact}, upper {}",
            report.upper
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(mean: &[f64], var: &[f64]) -> MomentVector<f64> {
        MomentVector::new(mean.to_vec(), var.to_vec()).unwrap()
    }

    fn nv(mu: &[f64], var: &[f64]) -> NoiseVector<f64> {
        NoiseVector::new(mu.to_vec(), var.to_vec()).unwrap()
    }

    fn probe(p: u32, c: f64, d: usize) -> LipschitzProbe<f64> {
        LipschitzProbe::new(p, c, d, None).unwrap()
    }

    #[test]
    fn thm1_examples() {
        assert_eq!(upper_bound_thm1(&mv(&[0.], &[1.]), &mv(&[0.], &[1.])).unwrap().value, 4.0);
        assert_eq!(upper_bound_thm1(&mv(&[3.], &[0.]), &mv(&[3.], &[0.])).unwrap().value, 2.0);
        let unit = mv(&[0.; 3], &[1.; 3]);
        let b = upper_bound_thm1(&unit, &unit).unwrap();
        assert_eq!(b.value, 8.0);
        assert_eq!(b.terms.len(), 4);
    }

    #[test]
    fn noisy_examples() {
        assert_eq!(upper_bound_noisy::<f64>(&NoiseVector::zeros(5), &NoiseVector::zeros(5), 5).unwrap(), 12.0);
        let v = upper_bound_noisy(&nv(&[0.3], &[0.]), &nv(&[-0.1], &[0.]), 1).unwrap();
        assert!((v - 4.4).abs() < 1e-15);
        let (a, b) = (nv(&[0.3, -0.2], &[0.1, -0.4]), nv(&[0.0, 0.5], &[0.2, 0.3]));
        let direct = upper_bound_thm1(&a.moments(), &b.moments()).unwrap().value;
        assert!((upper_bound_noisy(&a, &b, 2).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn probe_examples() {
        assert_eq!(f_pc_eval(&[0.0], &probe(2, 1.0, 1)).unwrap(), 0.0);
        assert_eq!(f_pc_eval(&[0.5], &probe(2, 1.0, 1)).unwrap(), 0.125);
        assert_eq!(f_pc_eval(&[5.0], &probe(2, 1.0, 1)).unwrap(), 0.5);
        assert_eq!(f_pc_eval(&[-5.0], &probe(3, 1.0, 1)).unwrap(), -1.0 / 3.0);
        assert!(LipschitzProbe::new(1, 1.0, 1, None).is_err());
        assert!(LipschitzProbe::new(2, 2.0, 1, Some(1.0)).is_err());
    }

    #[test]
    fn thm2_examples() {
        let s = |v: f64| SampleSet::from_values(&[v], 0).unwrap();
        let pr = probe(2, 1.0, 1);
        assert_eq!(lower_bound_thm2(&s(0.5), &s(0.5), &pr).unwrap(), 0.0);
        assert_eq!(lower_bound_thm2(&s(0.5), &s(-0.5), &pr).unwrap(), 0.0);
        let lb = lower_bound_thm2(&s(0.5), &s(0.0), &pr).unwrap();
        assert_eq!(lb, 0.125);
        assert!(lb <= super::super::em_exact_1d(&s(0.5), &s(0.0)).unwrap());
    }

    #[test]
    fn eq5_examples() {
        assert_eq!(lower_bound_p2_noise(&NoiseVector::zeros(2), &NoiseVector::zeros(2), 1.0, 2).unwrap(), 0.0);
        let (a, z) = (nv(&[0.], &[0.2]), NoiseVector::zeros(1));
        assert!((lower_bound_p2_noise(&a, &z, 1.0, 1).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(lower_bound_p2_noise(&a, &z, 1.0, 1).unwrap(), lower_bound_p2_noise(&z, &a, 1.0, 1).unwrap());
        assert!(lower_bound_p2_noise(&a, &z, 0.0, 1).is_err());
    }

    #[test]
    fn unitized_examples() {
        assert_eq!(unitized_upper_bound::<f64>(&UnitizedMode::Vanilla, None).unwrap(), 2.0);
        assert_eq!(unitized_upper_bound(&UnitizedMode::Scalar(0.5), None).unwrap(), 4.0);
        assert_eq!(unitized_upper_bound(&UnitizedMode::Vector(vec![0.25, 0.8, 1.0]), None).unwrap(), 8.0);
        assert!(matches!(unitized_upper_bound(&UnitizedMode::Scalar(0.0), None), Err(Error::MissingData(_))));
        assert_eq!(unitized_upper_bound(&UnitizedMode::Scalar(0.0), Some((1.5, 2.0))).unwrap(), 3.5);
        assert_eq!(unitized_upper_bound(&UnitizedMode::Vector(vec![0.0, 1.0]), Some((1.5, 2.0))).unwrap(), 5.5);
        assert!(unitized_upper_bound(&UnitizedMode::Scalar(1.5), None).is_err());
    }

    #[test]
    fn unbounded_examples() {
        assert_eq!(unbounded_example_lower(4.0, &probe(2, 1.0, 1)).unwrap(), 0.375);
        assert_eq!(unbounded_example_lower(8.0, &probe(2, 1.0, 1)).unwrap(), 0.75);
        assert_eq!(unbounded_example_lower(4.0, &probe(2, 1.0, 4)).unwrap(), 0.75);
        assert!(unbounded_example_lower(0.0, &probe(2, 1.0, 1)).is_err());
    }

    #[test]
    fn sandwich_identical_sets() {
        let a = SampleSet::from_rows(&[vec![0., 1.], vec![2., -1.], vec![1., 3.]], 0).unwrap();
        let pr = LipschitzProbe::tightest(2, &a, &a).unwrap();
        let r = bound_sandwich(&a, &a, &pr).unwrap();
        let var: f64 = MomentVector::from_samples(&a).var.iter().sum();
        assert_eq!((r.lower, r.exact), (0.0, Some(0.0)));
        assert!((r.upper - (2.0 * var + 2.0)).abs() < 1e-12);
    }
}
