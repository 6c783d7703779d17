//! Artifact writers: JSON for solver results, CSV for couplings, fields,
//! plans and reports. Files are written to a sibling temporary and renamed.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::quantum_ot::MKResult;

/// Number printed with 17 significant digits in scientific notation.
#[derive(Clone, Copy, Debug)]
pub struct Sci(pub f64);

impl Serialize for Sci {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

#[derive(Serialize)]
pub struct MkJson {
    pub value_sq: Sci,
    pub lambda: Sci,
    pub iterations: usize,
    pub primal_residual: Sci,
    pub dual_residual: Sci,
    pub objective_gap: Sci,
    pub lower_bound: Sci,
    pub padded_value_sq: Sci,
    pub coupling_dim: usize,
}

impl From<&MKResult> for MkJson {
    fn from(r: &MKResult) -> Self {
        MkJson {
            value_sq: Sci(r.value_sq),
            lambda: Sci(r.lambda),
            iterations: r.iterations,
            primal_residual: Sci(r.primal_residual),
            dual_residual: Sci(r.dual_residual),
            objective_gap: Sci(r.objective_gap),
            lower_bound: Sci(r.lower_bound),
            padded_value_sq: Sci(r.padded_value_sq),
            coupling_dim: r.coupling.q.dim(),
        }
    }
}

pub fn mk_result_json(r: &MKResult) -> String {
    let mut s = serde_json::to_string_pretty(&MkJson::from(r)).expect("plain struct serializes");
    s.push('\n');
    s
}

/// `i,j,re,im` rows over every entry, row-major.
pub fn matrix_csv(m: &CMatrix) -> String {
    let mut out = String::from("i,j,re,im\n");
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            let _ = writeln!(out, "{i},{j},{:.16e},{:.16e}", z.re, z.im);
        }
    }
    out
}

/// Writes `bytes` to a temporary file in the target's directory and
/// renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::validation(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::oscillator::{fock_density, OscillatorRep};
    use crate::quantum_ot::{solve_mk, SolverConfig};

    #[test]
    fn json_numbers_have_seventeen_digits() {
        let rep = OscillatorRep::new(6, 1, 1.0).unwrap();
        let g = fock_density(&rep, &[0]).unwrap();
        let res = solve_mk(&g, &g, &rep, &SolverConfig::default()).unwrap();
        let json = mk_result_json(&res);
        assert!(json.contains("\"value_sq\": 2.0000000000000000e0"), "{json}");
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["coupling_dim"], 36);
        assert_eq!(parsed["lambda"].as_f64(), Some(1.0));
    }

    #[test]
    fn non_finite_values_become_null() {
        assert_eq!(serde_json::to_string(&Sci(f64::NAN)).unwrap(), "null");
        assert_eq!(serde_json::to_string(&Sci(-0.25)).unwrap(), "-2.5000000000000000e-1");
    }

    #[test]
    fn matrix_csv_layout() {
        let m = CMatrix::from_fn(2, 2, |i, j| c(i as f64, j as f64));
        let csv = matrix_csv(&m);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2], "0,1,0.0000000000000000e0,1.0000000000000000e0");
    }

    #[test]
    fn atomic_write_replaces_and_reports_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let missing = dir.path().join("no/such/dir/out.csv");
        match write_atomic(&missing, b"x") {
            Err(Error::Io { path, .. }) => assert!(path.to_string_lossy().contains("no/such/dir")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
