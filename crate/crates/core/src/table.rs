//! CSV tables: number formatting and the per-image orientation table.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::so3::UnitQuaternion;

/// Nine significant digits, shortest of fixed and scientific notation
/// (the `%.9g` convention).
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mant), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split {other}"))),
        }
    }
}

/// One row of an orientation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationRecord {
    pub index: usize,
    pub q: UnitQuaternion<f64>,
    pub shift: [f64; 2],
    pub defocus: Option<f64>,
    pub snr_target: Option<f64>,
    pub split: Option<Split>,
}

impl OrientationRecord {
    pub fn new(index: usize, q: UnitQuaternion<f64>, shift: [f64; 2]) -> Self {
        Self {
            index,
            q,
            shift,
            defocus: None,
            snr_target: None,
            split: None,
        }
    }
}

const BASE_COLUMNS: [&str; 7] = ["index", "qw", "qx", "qy", "qz", "shift_x", "shift_y"];

/// Writes `index,qw,qx,qy,qz,shift_x,shift_y`, plus `defocus,snr_target,split`
/// when the first record carries them.
pub fn write_orientations<W: Write>(out: W, rows: &[OrientationRecord]) -> Result<()> {
    let extended = rows.first().is_some_and(|r| r.defocus.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if extended {
        header.extend(["defocus", "snr_target", "split"]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.index.to_string()];
        rec.extend(r.q.to_array().iter().map(|&v| fmt_sig(v)));
        rec.push(fmt_sig(r.shift[0]));
        rec.push(fmt_sig(r.shift[1]));
        if extended {
            rec.push(r.defocus.map(fmt_sig).unwrap_or_default());
            rec.push(r.snr_target.map(fmt_sig).unwrap_or_default());
            rec.push(r.split.map(|s| s.name().to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an orientation table; extra columns are optional. Quaternions are
/// renormalized to absorb the nine-digit rounding.
pub fn read_orientations<R: Read>(input: R) -> Result<Vec<OrientationRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let base: Vec<usize> = BASE_COLUMNS
        .iter()
        .map(|n| col(n).ok_or_else(|| Error::Format(format!("missing column {n}"))))
        .collect::<Result<_>>()?;
    let (c_def, c_snr, c_split) = (col("defocus"), col("snr_target"), col("split"));
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Format("short row".into()))?
                .parse::<f64>()
                .map_err(|e| Error::Format(e.to_string()))
        };
        let opt = |k: Option<usize>| -> Result<Option<f64>> {
            match k.and_then(|k| rec.get(k)) {
                Some(s) if !s.is_empty() => Ok(Some(s.parse::<f64>().map_err(|e| Error::Format(e.to_string()))?)),
                _ => Ok(None),
            }
        };
        let index = rec
            .get(base[0])
            .unwrap_or("")
            .parse::<usize>()
            .map_err(|e| Error::Format(e.to_string()))?;
        let q = UnitQuaternion::normalize([num(base[1])?, num(base[2])?, num(base[3])?, num(base[4])?])?;
        let split = match c_split.and_then(|k| rec.get(k)) {
            Some(s) if !s.is_empty() => Some(s.parse()?),
            _ => None,
        };
        out.push(OrientationRecord {
            index,
            q,
            shift: [num(base[5])?, num(base[6])?],
            defocus: opt(c_def)?,
            snr_target: opt(c_snr)?,
            split,
        });
    }
    Ok(out)
}
