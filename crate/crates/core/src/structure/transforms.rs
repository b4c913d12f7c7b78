//! Decoy transform tables: one rigid ligand placement per line.
//!
//! ```text
//! #euler-zyx-rad
//! model_id  a  b  c  tx  ty  tz
//! ```
//!
//! The rotation is `Rz(a) · Ry(b) · Rx(c)` about the lab origin, followed by
//! the translation, and applies to the ligand of the base complex.

use std::fmt::Write as _;

use super::RigidTransform;
use crate::error::{Error, Result};
use nalgebra::Vector3;

pub const TRANSFORM_HEADER: &str = "#euler-zyx-rad";

#[derive(Clone, Debug, PartialEq)]
pub struct DecoyTransform {
    pub model_id: String,
    pub transform: RigidTransform,
}

pub fn read_transform_table(text: &str) -> Result<Vec<DecoyTransform>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == TRANSFORM_HEADER => {}
        Some((i, _)) => {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("transform table must start with {TRANSFORM_HEADER}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty transform table".into(),
            })
        }
    }
    let mut out: Vec<DecoyTransform> = Vec::new();
    for (i, line) in lines {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 7 {
            return Err(err(format!("expected 7 columns, found {}", cols.len())));
        }
        let mut v = [0.0; 6];
        for (k, s) in cols[1..].iter().enumerate() {
            v[k] = s
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("malformed number {s:?}")))?;
        }
        if out.iter().any(|d| d.model_id == cols[0]) {
            return Err(err(format!("duplicate model id {}", cols[0])));
        }
        out.push(DecoyTransform {
            model_id: cols[0].to_string(),
            transform: RigidTransform::from_euler_zyx(v[0], v[1], v[2], Vector3::new(v[3], v[4], v[5])),
        });
    }
    Ok(out)
}

pub fn write_transform_table(decoys: &[DecoyTransform]) -> String {
    let mut out = format!("{TRANSFORM_HEADER}\n");
    for d in decoys {
        let (a, b, c) = d.transform.euler_zyx();
        let t = d.transform.translation;
        let _ = writeln!(out, "{} {a:.17e} {b:.17e} {c:.17e} {:.17e} {:.17e} {:.17e}", d.model_id, t.x, t.y, t.z);
    }
    out
}
