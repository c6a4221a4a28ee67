//! Exact Earth-Mover distances between empirical measures and the moment-based
//! bounds that sandwich them.

mod bounds;
mod exact;

pub use bounds::{
    bound_sandwich, f_pc_eval, lower_bound_p2_noise, lower_bound_thm2, unbounded_example_lower, unitized_upper_bound,
    upper_bound_noisy, upper_bound_thm1, Breakdown, BoundReport, LipschitzProbe, UnitizedMode, SANDWICH_SLACK,
};
pub use exact::{em_exact_1d, em_exact_assignment, MAX_ASSIGNMENT_SIZE};

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `n×d` samples from one distribution, tagged with the iteration they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet<T> {
    samples: Tensor<T>,
    pub iteration_tag: i64,
}

impl<T: Scalar> SampleSet<T> {
    pub fn new(samples: Tensor<T>, iteration_tag: i64) -> Result<Self> {
        if samples.rank() != 2 {
            return Err(Error::dim("sample_set", format!("samples must be n×d, got {:?}", samples.shape())));
        }
        if !samples.is_finite() {
            return Err(Error::Contract("sample set contains non-finite values".into()));
        }
        Ok(SampleSet { samples, iteration_tag })
    }

    pub fn from_rows(rows: &[Vec<T>], iteration_tag: i64) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?, iteration_tag)
    }

    /// One-dimensional samples.
    pub fn from_values(values: &[T], iteration_tag: i64) -> Result<Self> {
        Self::new(Tensor::new(vec![values.len(), 1], values.to_vec())?, iteration_tag)
    }

    pub fn n(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.samples.row(i)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.samples.data().chunks(self.d())
    }

    pub fn samples(&self) -> &Tensor<T> {
        &self.samples
    }

    /// Applies `f` to every sample.
    pub fn map_rows(&self, f: impl Fn(&[T]) -> Result<Vec<T>>) -> Result<Self> {
        let rows = self.rows().map(f).collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows, self.iteration_tag)
    }

    /// Largest absolute coordinate.
    pub fn max_abs(&self) -> T {
        self.samples.max_abs()
    }

    /// `# t=<tag>`, a `dim0,dim1,…` header, then one sample per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# t={}", self.iteration_tag)?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record((0..self.d()).map(|j| format!("dim{j}"))).map_err(csv_err)?;
        for row in self.rows() {
            out.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut r: R) -> Result<Self> {
        let mut first = String::new();
        r.read_line(&mut first)?;
        let tag = first
            .trim()
            .strip_prefix("# t=")
            .ok_or_else(|| Error::Format(format!("expected '# t=<iteration>' tag line, got '{}'", first.trim())))?
            .parse::<i64>()
            .map_err(|e| Error::Format(format!("bad iteration tag: {e}")))?;
        let mut reader = csv::Reader::from_reader(r);
        let header = reader.headers().map_err(csv_err)?.clone();
        for (j, h) in header.iter().enumerate() {
            if h != format!("dim{j}") {
                return Err(Error::Format(format!("header column {j} is '{h}', expected 'dim{j}'")));
            }
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_err)?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map(T::of).map_err(|e| Error::Format(format!("bad value '{f}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Format("sample set file has no rows".into()));
        }
        Self::from_rows(&rows, tag)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// First two moments per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentVector<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> MomentVector<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::dim("moments", format!("{} means, {} variances", mean.len(), var.len())));
        }
        if mean.iter().chain(&var).any(|v| !v.is_finite()) || var.iter().any(|&v| v < T::zero()) {
            return Err(Error::Contract("moments must be finite with non-negative variance".into()));
        }
        Ok(MomentVector { mean, var })
    }

    /// Biased (`1/n`) per-coordinate estimates.
    pub fn from_samples(s: &SampleSet<T>) -> Self {
        let (n, d) = (T::of(s.n() as f64), s.d());
        let mut mean = vec![T::zero(); d];
        for row in s.rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![T::zero(); d];
        for row in s.rows() {
            for ((acc, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *acc = *acc + (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v = *v / n);
        MomentVector { mean, var }
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }
}

/// Deviations of normalized moments from `(0, 1)`: the true moments are
/// `μ = ε_μ` and `σ² = 1 + ε_σ²`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseVector<T> {
    pub eps_mu: Vec<T>,
    pub eps_var: Vec<T>,
}

impl<T: Scalar> NoiseVector<T> {
    pub fn new(eps_mu: Vec<T>, eps_var: Vec<T>) -> Result<Self> {
        if eps_mu.len() != eps_var.len() {
            return Err(Error::dim("noise", format!("{} mean terms, {} variance terms", eps_mu.len(), eps_var.len())));
        }
        if eps_var.iter().any(|&e| !(T::one() + e > T::zero())) {
            return Err(Error::Contract("variance noise must keep 1 + ε_σ² positive".into()));
        }
        Ok(NoiseVector { eps_mu, eps_var })
    }

    pub fn zeros(d: usize) -> Self {
        NoiseVector { eps_mu: vec![T::zero(); d], eps_var: vec![T::zero(); d] }
    }

    pub fn d(&self) -> usize {
        self.eps_mu.len()
    }

    /// The moments this noise describes.
    pub fn moments(&self) -> MomentVector<T> {
        MomentVector { mean: self.eps_mu.clone(), var: self.eps_var.iter().map(|&e| T::one() + e).collect() }
    }
}
