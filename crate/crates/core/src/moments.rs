//! Mean, variance, skewness and kurtosis of layer outputs and their stability
//! across training epochs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Variances at or below this leave skewness and kurtosis undefined.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Biased central moments with non-excess kurtosis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments4<T> {
    pub mean: T,
    pub var: T,
    pub skewness: T,
    pub kurtosis: T,
}

fn central<T: Scalar>(values: &[T]) -> Result<(T, T, T, T)> {
    if values.len() < 4 {
        return Err(Error::DegenerateInput(format!("moments need at least 4 values, got {}", values.len())));
    }
    let n = T::of(values.len() as f64);
    let mean = values.iter().copied().sum::<T>() / n;
    let (mut m2, mut m3, mut m4) = (T::zero(), T::zero(), T::zero());
    for &v in values {
        let c = v - mean;
        let c2 = c * c;
        m2 = m2 + c2;
        m3 = m3 + c2 * c;
        m4 = m4 + c2 * c2;
    }
    Ok((mean, m2 / n, m3 / n, m4 / n))
}

/// `m₃ / m₂^{3/2}` and `m₄ / m₂²` over biased central moments `m_k`.
pub fn moments4<T: Scalar>(values: &[T]) -> Result<Moments4<T>> {
    let (mean, m2, m3, m4) = central(values)?;
    if !(m2 > T::of(VARIANCE_FLOOR)) {
        return Err(Error::UndefinedMoment(format!("variance {m2} too small for standardized moments")));
    }
    Ok(Moments4 { mean, var: m2, skewness: m3 / (m2 * m2.sqrt()), kurtosis: m4 / (m2 * m2) })
}

/// Moments of one unit at one epoch; `None` marks an undefined standardized moment.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentRecord {
    pub epoch: usize,
    pub unit: usize,
    pub mean: f64,
    pub var: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

impl MomentRecord {
    pub fn from_values<T: Scalar>(epoch: usize, unit: usize, values: &[T]) -> Result<Self> {
        match moments4(values) {
            Ok(m) => Ok(MomentRecord {
                epoch,
                unit,
                mean: m.mean.as_f64(),
                var: m.var.as_f64(),
                skewness: Some(m.skewness.as_f64()),
                kurtosis: Some(m.kurtosis.as_f64()),
            }),
            Err(Error::UndefinedMoment(_)) => {
                let (mean, var, _, _) = central(values)?;
                Ok(MomentRecord { epoch, unit, mean: mean.as_f64(), var: var.as_f64(), skewness: None, kurtosis: None })
            }
            Err(e) => Err(e),
        }
    }
}

/// Where in a normalization block the outputs are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurePoint {
    /// `x̂`, before `γ, β`.
    PreAffine,
    /// `y`, after `γ, β` and before the activation.
    PostAffine,
}

/// Per-unit moments of column-wise `[N×units]` outputs.
pub fn column_moments<T: Scalar>(outputs: &Tensor<T>, epoch: usize) -> Result<Vec<MomentRecord>> {
    if outputs.rank() != 2 {
        return Err(Error::dim("column_moments", format!("expected [N×units], got {:?}", outputs.shape())));
    }
    let (n, units) = (outputs.shape()[0], outputs.shape()[1]);
    (0..units)
        .map(|u| {
            let col: Vec<T> = (0..n).map(|i| outputs.data()[i * units + u]).collect();
            MomentRecord::from_values(epoch, u, &col)
        })
        .collect()
}

/// Feeds `data [N×d]` through the network in inference mode and records the
/// moments of every unit of block `layer`.
pub fn layer_moment_sweep<T: Scalar>(
    net: &mut Mlp<T>,
    layer: usize,
    data: &Tensor<T>,
    epoch: usize,
    point: MeasurePoint,
) -> Result<Vec<MomentRecord>> {
    const CHUNK: usize = 2048;
    let outputs = match point {
        MeasurePoint::PostAffine => net.layer_outputs(data, layer, CHUNK)?,
        MeasurePoint::PreAffine => net.normalized_outputs(data, layer, CHUNK)?,
    };
    column_moments(&outputs, epoch)
}

/// Population standard deviation across epochs of each moment series of one unit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySummary {
    pub unit: usize,
    pub mean_std: f64,
    pub var_std: f64,
    /// `None` when some epoch left the moment undefined.
    pub skewness_std: Option<f64>,
    pub kurtosis_std: Option<f64>,
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

fn optional_std(xs: &[Option<f64>]) -> Option<f64> {
    let defined: Option<Vec<f64>> = xs.iter().copied().collect();
    defined.map(|v| population_std(&v))
}

pub fn trajectory_stability(records: &[MomentRecord]) -> Result<Vec<TrajectorySummary>> {
    let mut by_unit: BTreeMap<usize, Vec<&MomentRecord>> = BTreeMap::new();
    for r in records {
        by_unit.entry(r.unit).or_default().push(r);
    }
    by_unit
        .into_iter()
        .map(|(unit, mut rs)| {
            rs.sort_by_key(|r| r.epoch);
            if rs.len() < 2 {
                return Err(Error::DegenerateInput(format!("unit {unit} has {} epoch(s); at least 2 needed", rs.len())));
            }
            let series = |f: fn(&MomentRecord) -> f64| population_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            Ok(TrajectorySummary {
                unit,
                mean_std: series(|r| r.mean),
                var_std: series(|r| r.var),
                skewness_std: optional_std(&rs.iter().map(|r| r.skewness).collect::<Vec<_>>()),
                kurtosis_std: optional_std(&rs.iter().map(|r| r.kurtosis).collect::<Vec<_>>()),
            })
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| if v.is_empty() { Err(Error::DegenerateInput("no moment records".into())) } else { Ok(v) })
}

/// Median of the finite values (`None` when there are none).
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { (v[k - 1] + v[k]) / 2.0 })
}
