use crate::channel::ChannelMatrix;
use crate::error::{invalid, shape, Result};

fn same_dims(h: &ChannelMatrix, hat: &ChannelMatrix) -> Result<()> {
    if h.dims() != hat.dims() {
        return Err(shape("metric", format!("{:?} vs {:?}", h.dims(), hat.dims())));
    }
    Ok(())
}

/// `‖h − ĥ‖² / ‖h‖²`.
pub fn nmse(h: &ChannelMatrix, hat: &ChannelMatrix) -> Result<f64> {
    same_dims(h, hat)?;
    let power = h.norm_sqr();
    if power == 0.0 {
        return Err(invalid("NMSE of a zero-norm target"));
    }
    let err: f64 = h.entries().iter().zip(hat.entries()).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(err / power)
}

/// Mean over subcarriers of `|ĥ_mᴴ h_m| / (‖ĥ_m‖ ‖h_m‖)`.
pub fn cosine_corr(h: &ChannelMatrix, hat: &ChannelMatrix) -> Result<f64> {
    same_dims(h, hat)?;
    let n_c = h.n_c();
    let mut total = 0.0;
    for m in 0..n_c {
        let a = h.column(m);
        let b = hat.column(m);
        let na: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
        if na == 0.0 || nb == 0.0 {
            return Err(invalid(format!("zero-norm subcarrier column {m}")));
        }
        let inner: num_complex::Complex64 = a.iter().zip(&b).map(|(x, y)| y.conj() * x).sum();
        // One square root of the product keeps ρ(h, h) exactly 1.
        total += (inner.norm() / (na * nb).sqrt()).min(1.0);
    }
    Ok(total / n_c as f64)
}

fn paired<F>(h: &[ChannelMatrix], hat: &[ChannelMatrix], f: F) -> Result<Vec<f64>>
where
    F: Fn(&ChannelMatrix, &ChannelMatrix) -> Result<f64>,
{
    if h.len() != hat.len() || h.is_empty() {
        return Err(invalid(format!("{} targets for {} estimates", h.len(), hat.len())));
    }
    h.iter().zip(hat).map(|(a, b)| f(a, b)).collect()
}

pub fn nmse_each(h: &[ChannelMatrix], hat: &[ChannelMatrix]) -> Result<Vec<f64>> {
    paired(h, hat, nmse)
}

pub fn cosine_corr_each(h: &[ChannelMatrix], hat: &[ChannelMatrix]) -> Result<Vec<f64>> {
    paired(h, hat, cosine_corr)
}

/// Mean of per-sample ratios.
pub fn nmse_batch(h: &[ChannelMatrix], hat: &[ChannelMatrix]) -> Result<f64> {
    Ok(mean(&nmse_each(h, hat)?))
}

pub fn cosine_corr_batch(h: &[ChannelMatrix], hat: &[ChannelMatrix]) -> Result<f64> {
    Ok(mean(&cosine_corr_each(h, hat)?))
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[k] } else { 0.5 * (s[k - 1] + s[k]) })
}

/// Empirical CDF: one `(value, fraction ≤ value)` pair per distinct value,
/// ascending. Empty input gives an empty curve.
pub fn error_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in s.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    out
}
