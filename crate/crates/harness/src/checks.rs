//! Seeded property batteries for the transport bounds and the exact oracles.

use std::path::PathBuf;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulab::data::{synth_appendix_uniform_pair, synth_gaussian_pair, synth_uniform};
use ulab::transport::{
    em_exact_1d, em_exact_assignment, f_pc_eval, lower_bound_thm2, unbounded_example_lower, unitized_upper_bound,
    upper_bound_thm1, BoundReport, UnitizedMode,
};
use ulab::unitization::{default_pole, general_unitize, partial_unitize, vanilla_unitize};
use ulab::{LipschitzProbe, MomentVector, SampleSet};

use crate::config::ExperimentConfig;
use crate::report::{num, CsvSink};

/// One checked inequality `lower ≤ value ≤ upper` (either side optional).
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub instance: usize,
    pub detail: String,
    pub lower: Option<f64>,
    pub value: f64,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl CheckRow {
    fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), num);
        vec![
            self.check.to_string(),
            self.instance.to_string(),
            self.detail.clone(),
            opt(self.lower),
            num(self.value),
            opt(self.upper),
            self.pass.to_string(),
        ]
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckOutcome {
    pub rows: Vec<CheckRow>,
}

impl CheckOutcome {
    pub fn of(&self, check: &str) -> impl Iterator<Item = &CheckRow> + '_ {
        let check = check.to_string();
        self.rows.iter().filter(move |r| r.check == check)
    }

    /// `(passed, total)` for one check name.
    pub fn tally(&self, check: &str) -> (usize, usize) {
        let rows: Vec<_> = self.of(check).collect();
        (rows.iter().filter(|r| r.pass).count(), rows.len())
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    fn write(&self, path: PathBuf) -> Result<(PathBuf, usize)> {
        let mut sink = CsvSink::create(&path, &["check", "instance", "detail", "lower", "value", "upper", "pass"])?;
        for r in &self.rows {
            sink.row(&r.fields())?;
        }
        Ok((path, sink.finish()?))
    }
}

/// Independent stream per check so that changing one battery leaves the others unchanged.
fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag)
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize, d: usize, gaussian: bool) -> Result<(SampleSet, SampleSet, String)> {
    let seed = rng.random();
    if gaussian {
        let delta = rng.random_range(0.0..3.0);
        let ratio = rng.random_range(0.25..4.0);
        let (a, b) = synth_gaussian_pair(n, d, delta, ratio, seed)?;
        Ok((a, b, format!("gaussian d={d} delta={delta:.3} ratio={ratio:.3}")))
    } else {
        let lo = rng.random_range(-2.0..0.0);
        let hi = lo + rng.random_range(0.5..3.0);
        let shift = rng.random_range(-1.0..1.0);
        let a = synth_uniform(n, d, lo, hi, seed)?;
        let b = synth_uniform(n, d, lo + shift, hi + shift, seed.wrapping_add(1))?;
        Ok((a, b, format!("uniform d={d} lo={lo:.3} hi={hi:.3} shift={shift:.3}")))
    }
}

fn sandwich(cfg: &ExperimentConfig, out: &mut Vec<CheckRow>) -> Result<()> {
    let b = &cfg.bounds;
    let mut rng = stream(cfg.seed, 1);
    for i in 0..b.sandwich_instances {
        let d = b.dims[i % b.dims.len()];
        let gaussian = (i / b.dims.len()) % 2 == 0;
        let (sa, sb, detail) = random_pair(&mut rng, b.sample_size, d, gaussian)?;
        let p = 2 + (i % 3) as u32;
        let probe = LipschitzProbe::tightest(p, &sa, &sb)?;
        let report = BoundReport {
            lower: lower_bound_thm2(&sa, &sb, &probe)?,
            exact: Some(em_exact_assignment(&sa, &sb)?),
            upper: upper_bound_thm1(&MomentVector::from_samples(&sa), &MomentVector::from_samples(&sb))?.value,
            terms: Vec::new(),
        };
        out.push(CheckRow {
            check: "sandwich",
            instance: i,
            detail: format!("{detail} p={p}"),
            lower: Some(report.lower),
            value: report.exact.unwrap_or(f64::NAN),
            upper: Some(report.upper),
            pass: report.ordered(),
        });
    }
    Ok(())
}

fn lipschitz(cfg: &ExperimentConfig, out: &mut Vec<CheckRow>) -> Result<()> {
    let b = &cfg.bounds;
    let mut rng = stream(cfg.seed, 2);
    let mut instance = 0;
    for p in [2u32, 3, 4] {
        for c in [0.5, 1.0, 2.0] {
            let mut worst = f64::NEG_INFINITY;
            let mut violations = 0;
            for k in 0..b.lipschitz_pairs {
                let d = b.dims[k % b.dims.len()];
                let probe = LipschitzProbe::new(p, c, d, None)?;
                // spread past ±C so that both the power and the clipped branches are hit
                let mut draw = || (0..d).map(|_| rng.random_range(-3.0 * c..3.0 * c)).collect::<Vec<f64>>();
                let (v, w) = (draw(), draw());
                let gap = (f_pc_eval(&v, &probe)? - f_pc_eval(&w, &probe)?).abs();
                let dist = v.iter().zip(&w).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                let excess = gap - dist;
                worst = worst.max(excess);
                if excess > 1e-12 {
                    violations += 1;
                }
            }
            out.push(CheckRow {
                check: "lipschitz",
                instance,
                detail: format!("p={p} C={c} pairs={} violations={violations}", b.lipschitz_pairs),
                lower: None,
                value: worst,
                upper: Some(1e-12),
                pass: violations == 0,
            });
            instance += 1;
        }
    }
    Ok(())
}

/// Gaussian pair with wide shifts and scales, so raw distances are far above the bounds.
fn spread_pair(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Result<(SampleSet, SampleSet)> {
    let delta = rng.random_range(0.0..10.0);
    let ratio = rng.random_range(0.1..25.0);
    Ok(synth_gaussian_pair(n, d, delta, ratio, rng.random())?)
}

fn unitized(cfg: &ExperimentConfig, out: &mut Vec<CheckRow>) -> Result<()> {
    let b = &cfg.bounds;
    let mut rng = stream(cfg.seed, 3);
    let mut push = |detail: String, instance: usize, exact: f64, bound: f64| {
        out.push(CheckRow {
            check: "unitized",
            instance,
            detail,
            lower: None,
            value: exact,
            upper: Some(bound),
            pass: exact <= bound,
        });
    };
    let mut instance = 0;
    for i in 0..b.unitized_instances {
        let d = b.dims[i % b.dims.len()];
        let (sa, sb) = spread_pair(&mut rng, b.sample_size, d)?;
        let pole = default_pole(d);
        let map = |s: &SampleSet| s.map_rows(|r| vanilla_unitize(r, &pole));
        let exact = em_exact_assignment(&map(&sa)?, &map(&sb)?)?;
        push(format!("vanilla d={d}"), instance, exact, unitized_upper_bound(&UnitizedMode::Vanilla, None)?);
        instance += 1;
    }
    for alpha in [0.25, 0.5, 1.0] {
        for i in 0..b.unitized_instances {
            let d = b.dims[i % b.dims.len()];
            let (sa, sb) = spread_pair(&mut rng, b.sample_size, d)?;
            let pole = default_pole(d);
            let map = |s: &SampleSet| s.map_rows(|r| partial_unitize(r, alpha, &pole));
            let exact = em_exact_assignment(&map(&sa)?, &map(&sb)?)?;
            let bound = unitized_upper_bound(&UnitizedMode::Scalar(alpha), None)?;
            push(format!("scalar alpha={alpha} d={d}"), instance, exact, bound);
            instance += 1;
        }
    }
    for i in 0..b.unitized_instances {
        let d = b.dims[i % b.dims.len()];
        let (sa, sb) = spread_pair(&mut rng, b.sample_size, d)?;
        let alpha: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..=1.0)).collect();
        let map = |s: &SampleSet| s.map_rows(|r| general_unitize(r, &alpha));
        let exact = em_exact_assignment(&map(&sa)?, &map(&sb)?)?;
        let bound = unitized_upper_bound(&UnitizedMode::Vector(alpha.clone()), None)?;
        let min = alpha.iter().copied().fold(f64::INFINITY, f64::min);
        push(format!("vector min_alpha={min:.4} d={d}"), instance, exact, bound);
        instance += 1;
    }
    Ok(())
}

fn unbounded(cfg: &ExperimentConfig, out: &mut Vec<CheckRow>) -> Result<()> {
    let b = &cfg.bounds;
    let mut rng = stream(cfg.seed, 4);
    let mut points = Vec::new();
    for (i, &c) in b.unbounded_c_primes.iter().enumerate() {
        let (sa, sb) = synth_appendix_uniform_pair(c, b.unbounded_dim, b.unbounded_n, rng.random())?;
        let exact = em_exact_assignment(&sa, &sb)?;
        let lower = unbounded_example_lower(c, &LipschitzProbe::new(2, c, b.unbounded_dim, None)?)?;
        out.push(CheckRow {
            check: "unbounded",
            instance: i,
            detail: format!("C'={c} d={} n={}", b.unbounded_dim, b.unbounded_n),
            lower: Some(lower),
            value: exact,
            upper: None,
            pass: exact > lower,
        });
        points.push((c, exact));
    }
    let mut sorted = points.clone();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
    for (i, w) in sorted.windows(2).enumerate() {
        let ((c0, e0), (c1, e1)) = (w[0], w[1]);
        // growth relative to exact proportionality
        let ratio = (e1 / e0) / (c1 / c0);
        out.push(CheckRow {
            check: "unbounded_linearity",
            instance: i,
            detail: format!("C' {c0} -> {c1}"),
            lower: Some(0.8),
            value: ratio,
            upper: Some(1.2),
            pass: (0.8..=1.2).contains(&ratio),
        });
    }
    Ok(())
}

/// Sandwich, Lipschitz, unitized-bound and unbounded-example batteries; writes `bounds.csv`.
pub fn run_bounds(cfg: &ExperimentConfig) -> Result<(CheckOutcome, Vec<(PathBuf, usize)>)> {
    let mut rows = Vec::new();
    sandwich(cfg, &mut rows)?;
    lipschitz(cfg, &mut rows)?;
    unitized(cfg, &mut rows)?;
    unbounded(cfg, &mut rows)?;
    let outcome = CheckOutcome { rows };
    for check in ["sandwich", "lipschitz", "unitized", "unbounded", "unbounded_linearity"] {
        let (ok, n) = outcome.tally(check);
        log::info!("{check}: {ok}/{n} passed");
    }
    let written = outcome.write(cfg.out_dir.join("bounds.csv"))?;
    Ok((outcome, vec![written]))
}

/// Agreement of the two exact oracles, symmetry and the triangle inequality; writes `oracle.csv`.
pub fn run_oracle_check(cfg: &ExperimentConfig) -> Result<(CheckOutcome, Vec<(PathBuf, usize)>)> {
    let b = &cfg.bounds;
    let mut rng = stream(cfg.seed, 5);
    let mut rows = Vec::new();
    for i in 0..b.oracle_instances {
        let (sa, sb, detail) = random_pair(&mut rng, b.sample_size, 1, i % 2 == 0)?;
        let gap = (em_exact_assignment(&sa, &sb)? - em_exact_1d(&sa, &sb)?).abs();
        rows.push(CheckRow {
            check: "assignment_vs_1d",
            instance: i,
            detail,
            lower: None,
            value: gap,
            upper: Some(1e-12),
            pass: gap <= 1e-12,
        });
    }
    for i in 0..b.oracle_instances {
        let d = b.dims[i % b.dims.len()];
        let (sa, sb, detail) = random_pair(&mut rng, b.sample_size, d, i % 2 == 0)?;
        let (ab, ba) = (em_exact_assignment(&sa, &sb)?, em_exact_assignment(&sb, &sa)?);
        rows.push(CheckRow {
            check: "symmetry",
            instance: i,
            detail,
            lower: None,
            value: (ab - ba).abs(),
            upper: Some(0.0),
            pass: ab == ba,
        });
    }
    for i in 0..b.oracle_instances {
        let d = b.dims[i % b.dims.len()];
        let (sa, sb, _) = random_pair(&mut rng, b.sample_size, d, true)?;
        let (_, sc, _) = random_pair(&mut rng, b.sample_size, d, false)?;
        let sc = sc.map_rows(|r| Ok(r.iter().map(|v| v + 0.5).collect()))?;
        let ab = em_exact_assignment(&sa, &sb)?;
        let bc = em_exact_assignment(&sb, &sc)?;
        let ac = em_exact_assignment(&sa, &sc)?;
        let excess = ac - (ab + bc);
        rows.push(CheckRow {
            check: "triangle",
            instance: i,
            detail: format!("d={d}"),
            lower: None,
            value: excess,
            upper: Some(1e-9),
            pass: excess <= 1e-9,
        });
    }
    let outcome = CheckOutcome { rows };
    for check in ["assignment_vs_1d", "symmetry", "triangle"] {
        let (ok, n) = outcome.tally(check);
        log::info!("{check}: {ok}/{n} passed");
    }
    let written = outcome.write(cfg.out_dir.join("oracle.csv"))?;
    Ok((outcome, vec![written]))
}
