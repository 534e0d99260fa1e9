use std::fmt::Write as _;

use serde::Serialize;

use pld_accountant::{ErrorBudget, GridSpec, LambdaChoice, PrivacyBound};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridReport {
    #[serde(rename = "L")]
    pub half_width: f64,
    pub n: usize,
}

impl From<GridSpec> for GridReport {
    fn from(g: GridSpec) -> Self {
        Self {
            half_width: g.half_width(),
            n: g.n(),
        }
    }
}

/// One oracle comparison made under `--verify`.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyRecord {
    pub eps: f64,
    pub method: String,
    /// `None` when the oracle was skipped.
    pub reference: Option<f64>,
    pub ok: bool,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub mechanism: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_upper: Option<f64>,
    pub err_total: f64,
    pub err_tail: f64,
    pub err_trunc: f64,
    pub err_period: f64,
    pub lambda: f64,
    pub lambda_clamped: bool,
    pub grid: GridReport,
    pub k: u64,
    pub min_mass: f64,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub verify: Vec<VerifyRecord>,
}

impl Report {
    pub fn new(mechanism: &'static str, budget: ErrorBudget, lambda: LambdaChoice, grid: GridSpec, k: u64) -> Self {
        Self {
            mechanism,
            eps: None,
            delta: None,
            delta_lower: None,
            delta_upper: None,
            eps_lower: None,
            eps_upper: None,
            err_total: budget.total,
            err_tail: budget.tail,
            err_trunc: budget.truncation,
            err_period: budget.periodisation,
            lambda: lambda.lambda,
            lambda_clamped: lambda.clamped,
            grid: grid.into(),
            k,
            min_mass: 0.0,
            wall_ms: 0.0,
            verify: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header line plus one row; empty cells for absent fields.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "mechanism,eps,delta,delta_lower,delta_upper,eps_lower,eps_upper,err_total,err_tail,err_trunc,err_period,lambda,L,n,k,wall_ms\n",
        );
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mechanism,
            cell(self.eps),
            cell(self.delta),
            cell(self.delta_lower),
            cell(self.delta_upper),
            cell(self.eps_lower),
            cell(self.eps_upper),
            self.err_total,
            self.err_tail,
            self.err_trunc,
            self.err_period,
            self.lambda,
            self.grid.half_width,
            self.grid.n,
            self.k,
            self.wall_ms
        );
        out
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvePoint {
    pub eps: f64,
    pub delta_lower: f64,
    pub delta_upper: f64,
}

impl From<&PrivacyBound> for CurvePoint {
    fn from(b: &PrivacyBound) -> Self {
        Self {
            eps: b.eps,
            delta_lower: b.delta_lower,
            delta_upper: b.delta_upper,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveReport {
    pub mechanism: &'static str,
    pub points: Vec<CurvePoint>,
    pub err_total: f64,
    pub lambda: f64,
    pub grid: GridReport,
    pub k: u64,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub verify: Vec<VerifyRecord>,
}

impl CurveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,delta_lower,delta_upper\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.eps, p.delta_lower, p.delta_upper);
        }
        out
    }
}
