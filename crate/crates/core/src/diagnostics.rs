//! Energy functional, dissipation ledger, constraint residuals and decay fits.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::fdtd::{energy_parts, Model, State};
use crate::linalg::{self, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t: f64,
    pub total: f64,
    pub kinetic: Vec<f64>,
    pub electric: f64,
    pub magnetic: f64,
    /// `eps0 c sum A (E_t^2 - E_t g)`: boundary loss rate on Silver-Muller faces.
    pub boundary_flux: f64,
    /// `(1/eps0) sum_s |sqrt(nu_s) J_s / omega_ps|^2`.
    pub dissipation_vol: f64,
}

/// `1/2 |U|_X^2` with its components and the instantaneous loss rates.
/// `g` is the Silver-Muller data (empty for homogeneous).
pub fn energy<T: Scalar>(model: &Model, u: &State<T>, g: &[f64]) -> EnergyReport {
    let (kinetic, electric, magnetic) = energy_parts(model, u);
    let mesh = &model.mesh;
    let mut vol = 0.0;
    for (s, j) in u.j.iter().enumerate() {
        let sp = &model.medium.species[s];
        for i in 0..mesh.n_sites {
            let n2: f64 = (0..3).map(|c| j[3 * i + c].abs2()).sum();
            vol += mesh.site_w[i] * sp.nu[i] * n2 / (sp.omega_p[i] * sp.omega_p[i]);
        }
    }
    vol /= model.eps0();
    let mut bdry = 0.0;
    for (k, entry) in mesh.sm.iter().enumerate() {
        let et = u.e[entry.edge];
        let gv = g.get(k).copied().unwrap_or(0.0);
        bdry += model.eps0() * model.c() * entry.area * (et.abs2() - (et * gv).re());
    }
    EnergyReport {
        t: u.t,
        total: kinetic.iter().sum::<f64>() + electric + magnetic,
        kinetic,
        electric,
        magnetic,
        boundary_flux: bdry,
        dissipation_vol: vol,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub div_b_max: f64,
    /// `max |eps0 div E - sum rho_s|` at interior nodes; `None` without charge tracking.
    pub gauss_max: Option<f64>,
    pub bn_pec_max: f64,
}

pub fn constraint_residuals(model: &Model, u: &State<f64>) -> Constraints {
    let mesh = &model.mesh;
    let div_b_max = linalg::max_abs(&mesh.div_b.apply(&u.b));
    let gauss_max = u.rho.as_ref().map(|rho| {
        let mut r = mesh.div_e.apply(&u.e);
        for v in r.iter_mut() {
            *v *= model.eps0();
        }
        for rs in rho {
            for (a, b) in r.iter_mut().zip(rs) {
                *a -= b;
            }
        }
        linalg::max_abs(&r)
    });
    let bn_pec_max = mesh.pec_normal_faces.iter().fold(0.0f64, |m, &f| m.max(u.b[f].abs()));
    Constraints { div_b_max, gauss_max, bn_pec_max }
}

/// Per-step record of the energy ledger.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Time at the end of the step.
    pub t: f64,
    /// Synchronized energy `1/2 |U|_X^2` at the end of the step.
    pub energy: f64,
    /// Modified energy that the scheme never increases when `g = 0`.
    pub energy_discrete: f64,
    pub dissipation_vol: f64,
    pub dissipation_bdry: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub energy: EnergyReport,
    pub energy_discrete: f64,
    pub dissipation_vol: f64,
    pub dissipation_bdry: f64,
    pub residual_balance: f64,
    pub constraints: Constraints,
    pub solver_iters: usize,
    pub solver_residual: f64,
    pub norm_x: f64,
}

impl Default for EnergyReport {
    fn default() -> Self {
        EnergyReport {
            t: 0.0,
            total: 0.0,
            kinetic: Vec::new(),
            electric: 0.0,
            magnetic: 0.0,
            boundary_flux: 0.0,
            dissipation_vol: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub dt: f64,
    pub initial_energy: f64,
    pub initial_energy_discrete: f64,
    pub steps: Vec<StepRecord>,
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    /// `(t, |U|_X)` at the output rows.
    pub fn norm_series(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.t, r.norm_x)).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n_species = self.rows.first().map_or(2, |r| r.energy.kinetic.len()).max(2);
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = vec!["t".into(), "E_total".into()];
        header.extend((1..=n_species).map(|s| format!("E_J{s}")));
        header.extend(
            [
                "E_E",
                "E_B",
                "dissipation_vol",
                "dissipation_bdry",
                "residual_balance",
                "divB_max",
                "gauss_max",
                "E_discrete",
                "solver_iters",
                "solver_residual",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![fmt(r.t), fmt(r.energy.total)];
            rec.extend((0..n_species).map(|s| fmt(r.energy.kinetic.get(s).copied().unwrap_or(0.0))));
            rec.extend([
                fmt(r.energy.electric),
                fmt(r.energy.magnetic),
                fmt(r.dissipation_vol),
                fmt(r.dissipation_bdry),
                fmt(r.residual_balance),
                fmt(r.constraints.div_b_max),
                r.constraints.gauss_max.map_or_else(|| "NaN".to_string(), fmt),
                fmt(r.energy_discrete),
                r.solver_iters.to_string(),
                fmt(r.solver_residual),
            ]);
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest representation that round-trips, so CSVs are reproducible byte for byte.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// `(E^{n+1} - E^n)/dt + vol^{n+1/2} + bdry^{n+1/2}` per step.
    pub residuals: Vec<f64>,
    pub max_abs: f64,
    pub l2: f64,
    /// Largest single-step increase of the modified energy, relative to its initial value.
    pub max_increase: f64,
}

pub fn dissipation_balance(trace: &RunTrace) -> BalanceReport {
    let mut prev = trace.initial_energy;
    let mut prev_d = trace.initial_energy_discrete;
    let scale = trace.initial_energy_discrete.abs().max(f64::MIN_POSITIVE);
    let mut residuals = Vec::with_capacity(trace.steps.len());
    let mut max_increase = f64::NEG_INFINITY;
    for s in &trace.steps {
        residuals.push((s.energy - prev) / trace.dt + s.dissipation_vol + s.dissipation_bdry);
        max_increase = max_increase.max((s.energy_discrete - prev_d) / scale);
        prev = s.energy;
        prev_d = s.energy_discrete;
    }
    let max_abs = linalg::max_abs(&residuals);
    let l2 = (residuals.iter().map(|r| r * r).sum::<f64>() * trace.dt).sqrt();
    BalanceReport { residuals, max_abs, l2, max_increase }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    /// `|U| ~ C t^rate`
    Poly,
    /// `|U| ~ C e^{rate t}`
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub rate: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    /// RMS of the log residuals.
    pub residual: f64,
    pub points: usize,
}

/// Default window `[max(1, T/10), T]`.
pub fn default_window(series: &[(f64, f64)]) -> (f64, f64) {
    let t_end = series.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    ((t_end / 10.0).max(1.0), t_end)
}

pub fn fit_decay(series: &[(f64, f64)], model: DecayModel, window: Option<(f64, f64)>) -> Result<DecayFit> {
    if series.is_empty() {
        return Err(Error::DegenerateSeries("empty series".into()));
    }
    let window = window.unwrap_or_else(|| default_window(series));
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|p| p.0 >= window.0 && p.0 <= window.1).collect();
    if pts.len() < 3 {
        return Err(Error::DegenerateSeries(format!("{} points in window {:?}", pts.len(), window)));
    }
    if let Some(p) = pts.iter().find(|p| !(p.1 > 0.0) || !p.1.is_finite() || (model == DecayModel::Poly && p.0 <= 0.0)) {
        return Err(Error::DegenerateSeries(format!("non-positive sample {:?}", p)));
    }
    let xy: Vec<(f64, f64)> = pts
        .iter()
        .map(|&(t, v)| (if model == DecayModel::Poly { t.ln() } else { t }, v.ln()))
        .collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateSeries("all samples at one abscissa".into()));
    }
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let rate = sxy / sxx;
    let icpt = my - rate * mx;
    let residual = (xy.iter().map(|p| (p.1 - icpt - rate * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(DecayFit { model, rate, prefactor: icpt.exp(), window, residual, points: pts.len() })
}
