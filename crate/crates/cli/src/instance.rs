use std::fs;
use std::path::Path;

use anarchy_sched::{CostMatrix, Error};
use serde::Deserialize;

use crate::Failure;

/// On-disk instance: true times and, optionally, declared times.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub n: usize,
    pub m: usize,
    pub true_times: Vec<Vec<f64>>,
    #[serde(default)]
    pub declared_times: Option<Vec<Vec<f64>>>,
}

pub struct Instance {
    pub truth: CostMatrix<f64>,
    pub declared: CostMatrix<f64>,
}

fn matrix(name: &str, rows: Vec<Vec<f64>>, n: usize, m: usize) -> Result<CostMatrix<f64>, Failure> {
    if rows.len() != n || rows.iter().any(|r| r.len() != m) {
        return Err(Failure::input(format!("{name} must be a {n}x{m} array")));
    }
    if let Some(x) = rows.iter().flatten().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Failure::input(format!("{name} must hold positive finite times, found {x}")));
    }
    Ok(CostMatrix::new(rows)?)
}

impl Instance {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let file: InstanceFile =
            serde_json::from_str(text).map_err(|e| Failure::input(format!("bad instance JSON: {e}")))?;
        if file.n == 0 || file.m == 0 {
            return Err(Failure::input("instance needs n >= 1 and m >= 1".to_string()));
        }
        let truth = matrix("true_times", file.true_times, file.n, file.m)?;
        let declared = match file.declared_times {
            Some(rows) => matrix("declared_times", rows, file.n, file.m)?,
            None => truth.clone(),
        };
        Ok(Instance { truth, declared })
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}
