//! Empirical mode decomposition (EMD) and its noise-assisted ensemble
//! variant, used to derive IMF feature channels.

mod emd;
mod spline;

use std::io::Write;

pub use emd::{
    align_imf_count, eemd, emd, median_imf_count, sift, EemdConfig, EmdConfig, ImfBlock, ImfSet,
    SiftOutcome,
};
pub use spline::NaturalSpline;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum<T> {
    pub index: usize,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extrema<T> {
    pub maxima: Vec<Extremum<T>>,
    pub minima: Vec<Extremum<T>>,
}

/// Strict interior extrema by three-point comparison. A flat run that is a
/// peak or trough contributes the midpoint of the run.
pub fn find_extrema<T: Scalar>(x: &[T]) -> Result<Extrema<T>> {
    let n = x.len();
    if n < 3 {
        return Err(Error::SeriesTooShort { len: n, min: 3 });
    }
    let mut out = Extrema {
        maxima: Vec::new(),
        minima: Vec::new(),
    };
    let mut i = 1;
    while i < n - 1 {
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 < n {
            let (left, right, v) = (x[i - 1], x[j + 1], x[i]);
            let mid = (i + j) / 2;
            if v > left && v > right {
                out.maxima.push(Extremum { index: mid, value: x[mid] });
            } else if v < left && v < right {
                out.minima.push(Extremum { index: mid, value: x[mid] });
            }
        }
        i = j + 1;
    }
    Ok(out)
}

/// Natural cubic spline through `extrema`, evaluated on `0..len`.
///
/// The two extrema nearest each boundary are mirrored across it so the
/// spline is anchored beyond both ends of the series.
pub fn envelope<T: Scalar>(len: usize, extrema: &[Extremum<T>]) -> Result<Vec<T>> {
    let m = extrema.len();
    if m < 2 {
        return Err(Error::EnvelopeUndefined { found: m });
    }
    let last = T::from_usize_lossy(len.saturating_sub(1));
    let two = T::lit(2.0);
    let pos = |e: &Extremum<T>| T::from_usize_lossy(e.index);
    let mut xs = Vec::with_capacity(m + 4);
    let mut ys = Vec::with_capacity(m + 4);
    xs.push(-pos(&extrema[1]));
    ys.push(extrema[1].value);
    xs.push(-pos(&extrema[0]));
    ys.push(extrema[0].value);
    for e in extrema {
        xs.push(pos(e));
        ys.push(e.value);
    }
    xs.push(two * last - pos(&extrema[m - 1]));
    ys.push(extrema[m - 1].value);
    xs.push(two * last - pos(&extrema[m - 2]));
    ys.push(extrema[m - 2].value);
    Ok(NaturalSpline::new(&xs, &ys)?.eval_grid(len))
}

/// Writes decompositions as `sensor_id,channel,t0..t{T-1}` rows; channels
/// are named `imf1..imfK` followed by `residual`.
pub fn write_imfs_csv<T: Scalar, W: Write>(
    out: W,
    sensor_ids: &[String],
    sets: &[ImfSet<T>],
) -> Result<()> {
    let len = sets.first().map_or(0, ImfSet::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sensor_id".to_string(), "channel".to_string()];
    header.extend((0..len).map(|t| format!("t{t}")));
    let to_io = |e: csv::Error| Error::io("imf csv", std::io::Error::other(e));
    w.write_record(&header).map_err(to_io)?;
    for (id, set) in sensor_ids.iter().zip(sets) {
        for k in 0..set.k() {
            let mut rec = vec![id.clone(), format!("imf{}", k + 1)];
            rec.extend(set.imf(k).iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(to_io)?;
        }
        let mut rec = vec![id.clone(), "residual".to_string()];
        rec.extend(set.residual.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io("imf csv", e))?;
    Ok(())
}
