use super::dense::Dense;
use super::loss::sigmoid;
use crate::error::{shape_err, Error, Result};

/// Values kept for [`readout_backward`].
#[derive(Clone, Debug)]
pub struct ReadoutCache {
    mean: Vec<f64>,
    summary: Vec<f64>,
    n_rows: usize,
}

impl ReadoutCache {
    pub fn summary(&self) -> &[f64] {
        &self.summary
    }
}

fn check(wr: &Dense, rows: &Dense) -> Result<()> {
    if rows.rows() == 0 {
        return Err(Error::Degenerate("readout over an empty row set".into()));
    }
    if wr.rows() != rows.cols() || wr.cols() != rows.cols() {
        return Err(shape_err(
            "readout",
            format!("rows of width {} with readout weight {:?}", rows.cols(), wr.shape()),
        ));
    }
    Ok(())
}

/// `sigmoid(mean(rows) · wr)`.
pub fn readout(wr: &Dense, rows: &Dense) -> Result<Vec<f64>> {
    Ok(readout_forward(wr, rows)?.summary)
}

pub fn readout_forward(wr: &Dense, rows: &Dense) -> Result<ReadoutCache> {
    check(wr, rows)?;
    let mean = rows.mean_row();
    let summary = wr.vec_mul(&mean).into_iter().map(sigmoid).collect();
    Ok(ReadoutCache {
        mean,
        summary,
        n_rows: rows.rows(),
    })
}

/// Given `d summary`, returns `(d wr, d row)`; every input row receives the
/// same gradient `d row`.
pub fn readout_backward(wr: &Dense, cache: &ReadoutCache, dsummary: &[f64]) -> Result<(Dense, Vec<f64>)> {
    if dsummary.len() != cache.summary.len() {
        return Err(shape_err("readout_backward", "gradient width"));
    }
    let dpre: Vec<f64> = dsummary
        .iter()
        .zip(&cache.summary)
        .map(|(g, s)| g * s * (1.0 - s))
        .collect();
    let d = dpre.len();
    let mut dwr = Dense::zeros(d, d);
    for (i, &m) in cache.mean.iter().enumerate() {
        for (o, &g) in dwr.row_mut(i).iter_mut().zip(&dpre) {
            *o = m * g;
        }
    }
    let n = cache.n_rows as f64;
    let drow = wr.mul_vec(&dpre).into_iter().map(|v| v / n).collect();
    Ok((dwr, drow))
}
