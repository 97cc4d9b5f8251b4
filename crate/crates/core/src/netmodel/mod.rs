//! Per-unit network model: buses, branches, generators and cost curves.
//!
//! A [`NetworkCase`] is built once (usually by [`parse_matpower`]) and is
//! immutable afterwards. All electrical quantities are stored in per-unit on
//! `base_mva`; cost curves keep their native MW / $ units and are converted
//! when the objective is assembled.

mod matpower;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matpower::{parse_matpower, parse_matpower_str, MatpowerData};

/// Errors raised while reading or validating a case.
#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required matrix mpc.{0}")]
    MissingMatrix(&'static str),
    #[error("{what} references bus {bus}, which is not in mpc.bus")]
    DanglingBus { what: String, bus: u32 },
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CaseError {
    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        CaseError::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External (MATPOWER) bus number.
    pub id: u32,
    pub vmin: f64,
    pub vmax: f64,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub is_slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b_charge: f64,
    /// Off-nominal turns ratio, 1 for lines.
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// Apparent-power limit; `None` means unconstrained.
    pub smax: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: u32,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    pub cost: CostCurve,
}

/// Generator cost as a function of active output in MW, in $/h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostCurve {
    /// `quadratic * P^2 + linear * P + constant`.
    Polynomial {
        quadratic: f64,
        linear: f64,
        constant: f64,
    },
    /// Breakpoints `(P, cost)` with strictly increasing `P`.
    PiecewiseLinear { points: Vec<(f64, f64)> },
}

impl CostCurve {
    /// Cost at output `p_mw` (MW). Piecewise-linear curves are extended
    /// beyond their end points along the first/last segment.
    pub fn eval_mw(&self, p_mw: f64) -> f64 {
        match self {
            CostCurve::Polynomial {
                quadratic,
                linear,
                constant,
            } => quadratic * p_mw * p_mw + linear * p_mw + constant,
            CostCurve::PiecewiseLinear { points } if points.len() == 1 => points[0].1,
            CostCurve::PiecewiseLinear { .. } => self
                .segments()
                .map(|(slope, intercept)| slope * p_mw + intercept)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// `(slope, intercept)` of each piecewise-linear segment, in MW units.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let pts: &[(f64, f64)] = match self {
            CostCurve::PiecewiseLinear { points } => points,
            CostCurve::Polynomial { .. } => &[],
        };
        pts.windows(2).map(|w| {
            let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            (slope, w[0].1 - slope * w[0].0)
        })
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            CostCurve::Polynomial {
                quadratic,
                linear,
                constant,
            } => {
                if !(quadratic.is_finite() && linear.is_finite() && constant.is_finite()) {
                    return Err("non-finite polynomial coefficient".into());
                }
                if *quadratic < 0.0 {
                    return Err(format!("quadratic coefficient {quadratic} < 0 (nonconvex)"));
                }
            }
            CostCurve::PiecewiseLinear { points } => {
                if points.is_empty() {
                    return Err("piecewise-linear cost without breakpoints".into());
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err("breakpoints are not strictly increasing".into());
                }
                let slopes: Vec<f64> = self.segments().map(|s| s.0).collect();
                if slopes.windows(2).any(|w| w[1] < w[0] - 1e-12 * w[0].abs().max(1.0)) {
                    return Err("segment slopes decrease (nonconvex)".into());
                }
            }
        }
        Ok(())
    }
}

/// Pi-model two-port admittances of a branch, such that
/// `I_from = ff * V_from + ft * V_to` and `I_to = tf * V_from + tt * V_to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub ff: Complex64,
    pub ft: Complex64,
    pub tf: Complex64,
    pub tt: Complex64,
}

/// Two-port admittance block of the standard pi-model with series admittance
/// `1 / (r + jx)`, half the charging susceptance at each end, and a complex
/// off-nominal ratio `tap * e^{j shift}` on the from side.
pub fn branch_admittance(branch: &Branch) -> BranchAdmittance {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(branch.r, branch.x);
    let half_charge = Complex64::new(0.0, branch.b_charge / 2.0);
    let ratio = Complex64::from_polar(branch.tap, branch.shift);
    BranchAdmittance {
        ff: (ys + half_charge) / (branch.tap * branch.tap),
        ft: -ys / ratio.conj(),
        tf: -ys / ratio,
        tt: ys + half_charge,
    }
}

/// Validated network in per-unit on `base_mva`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCase", into = "RawCase")]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    index: HashMap<u32, usize>,
    slack: usize,
}

#[derive(Serialize, Deserialize)]
struct RawCase {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
}

impl TryFrom<RawCase> for NetworkCase {
    type Error = CaseError;
    fn try_from(raw: RawCase) -> Result<Self, CaseError> {
        NetworkCase::new(raw.name, raw.base_mva, raw.buses, raw.branches, raw.generators)
    }
}

impl From<NetworkCase> for RawCase {
    fn from(case: NetworkCase) -> Self {
        RawCase {
            name: case.name,
            base_mva: case.base_mva,
            buses: case.buses,
            branches: case.branches,
            generators: case.generators,
        }
    }
}

impl NetworkCase {
    /// Validates the components and builds the external-id index.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self, CaseError> {
        if !(base_mva > 0.0 && base_mva.is_finite()) {
            return Err(CaseError::invalid("baseMVA", format!("{base_mva} is not positive")));
        }
        if buses.is_empty() {
            return Err(CaseError::invalid("case", "no buses"));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (k, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, k).is_some() {
                return Err(CaseError::DuplicateBus(bus.id));
            }
            if !(bus.vmin > 0.0 && bus.vmin <= bus.vmax) {
                return Err(CaseError::invalid(
                    format!("bus {}", bus.id),
                    format!("voltage bounds [{}, {}] violate 0 < vmin <= vmax", bus.vmin, bus.vmax),
                ));
            }
        }
        let slacks: Vec<usize> = (0..buses.len()).filter(|&k| buses[k].is_slack).collect();
        if slacks.len() != 1 {
            return Err(CaseError::invalid(
                "case",
                format!("expected exactly one slack bus, found {}", slacks.len()),
            ));
        }
        for (k, br) in branches.iter().enumerate() {
            for end in [br.from, br.to] {
                if !index.contains_key(&end) {
                    return Err(CaseError::DanglingBus {
                        what: format!("branch {} ({}-{})", k + 1, br.from, br.to),
                        bus: end,
                    });
                }
            }
            let what = || format!("branch {} ({}-{})", k + 1, br.from, br.to);
            if br.from == br.to {
                return Err(CaseError::invalid(what(), "self loop"));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(CaseError::invalid(what(), "zero series impedance"));
            }
            if !(br.tap > 0.0) {
                return Err(CaseError::invalid(what(), format!("tap ratio {} <= 0", br.tap)));
            }
            if let Some(s) = br.smax {
                if !(s > 0.0) {
                    return Err(CaseError::invalid(what(), format!("flow limit {s} <= 0")));
                }
            }
        }
        for (k, gen) in generators.iter().enumerate() {
            if !index.contains_key(&gen.bus) {
                return Err(CaseError::DanglingBus {
                    what: format!("generator {}", k + 1),
                    bus: gen.bus,
                });
            }
            let what = || format!("generator {} at bus {}", k + 1, gen.bus);
            if gen.pmin > gen.pmax {
                return Err(CaseError::invalid(what(), "pmin > pmax"));
            }
            if gen.qmin > gen.qmax {
                return Err(CaseError::invalid(what(), "qmin > qmax"));
            }
            gen.cost.validate().map_err(|reason| CaseError::invalid(what(), reason))?;
        }
        Ok(NetworkCase {
            name: name.into(),
            base_mva,
            buses,
            branches,
            generators,
            index,
            slack: slacks[0],
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Dense internal index of an external bus id.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Internal index of the slack (reference) bus.
    pub fn slack_index(&self) -> usize {
        self.slack
    }

    /// Internal `(from, to)` indices of a branch.
    pub fn branch_ends(&self, k: usize) -> (usize, usize) {
        let br = &self.branches[k];
        (self.index[&br.from], self.index[&br.to])
    }

    /// Internal bus index of a generator.
    pub fn gen_bus(&self, g: usize) -> usize {
        self.index[&self.generators[g].bus]
    }

    /// Generators grouped by internal bus index.
    pub fn gens_by_bus(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_buses()];
        for g in 0..self.generators.len() {
            out[self.gen_bus(g)].push(g);
        }
        out
    }

    /// Generator cost in $/h at per-unit output `p`.
    pub fn gen_cost(&self, g: usize, p: f64) -> f64 {
        self.generators[g].cost.eval_mw(p * self.base_mva)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        Ok(serde_json::from_str(text)?)
    }
}

impl fmt::Display for NetworkCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} buses, {} branches, {} generators, base {} MVA",
            self.name,
            self.buses.len(),
            self.branches.len(),
            self.generators.len(),
            self.base_mva
        )
    }
}

/// True iff the in-service network is a tree.
pub fn is_radial(case: &NetworkCase) -> Result<bool, crate::graph::GraphError> {
    let g = crate::graph::PowerGraph::from_case(case);
    g.check_connected()?;
    Ok(case.branches.len() + 1 == case.n_buses())
}

pub(crate) fn deg_to_rad(deg: f64) -> f64 {
    deg * PI / 180.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(r: f64, x: f64, b: f64, tap: f64, shift: f64) -> Branch {
        Branch {
            from: 1,
            to: 2,
            r,
            x,
            b_charge: b,
            tap,
            shift,
            smax: None,
        }
    }

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn lossless_line_admittance() {
        let y = branch_admittance(&line(0.0, 0.1, 0.0, 1.0, 0.0));
        assert!(close(y.ff, Complex64::new(0.0, -10.0)));
        assert!(close(y.ft, Complex64::new(0.0, 10.0)));
        assert!(close(y.tf, y.ft));
        assert!(close(y.tt, y.ff));
    }

    #[test]
    fn charging_adds_half_susceptance() {
        let y = branch_admittance(&line(0.01, 0.1, 0.02, 1.0, 0.0));
        // 1/(0.01+0.1j) = (0.01-0.1j)/(0.0001+0.01)
        let series = Complex64::new(0.01, -0.1) / 0.0101;
        assert!(close(y.ff, series + Complex64::new(0.0, 0.01)));
        assert!(close(y.tt, series + Complex64::new(0.0, 0.01)));
        assert!(close(y.ft, -series));
    }

    #[test]
    fn tap_scales_from_side() {
        let base = branch_admittance(&line(0.0, 0.1, 0.0, 1.0, 0.0));
        let y = branch_admittance(&line(0.0, 0.1, 0.0, 2.0, 0.0));
        assert!(close(y.ft, base.ft / 2.0));
        assert!(close(y.tf, base.tf / 2.0));
        assert!(close(y.ff, base.ff / 4.0));
        assert!(close(y.tt, base.tt));
    }

    #[test]
    fn phase_shift_breaks_symmetry() {
        let y = branch_admittance(&line(0.0, 0.1, 0.0, 1.0, 0.1));
        assert!(!close(y.ft, y.tf));
        assert!((y.ft.norm() - y.tf.norm()).abs() < 1e-12);
    }

    #[test]
    fn pwl_cost_is_max_of_segments() {
        let c = CostCurve::PiecewiseLinear {
            points: vec![(0.0, 0.0), (10.0, 100.0), (20.0, 300.0)],
        };
        assert_eq!(c.eval_mw(5.0), 50.0);
        assert_eq!(c.eval_mw(15.0), 200.0);
        assert!(c.validate().is_ok());
        let bad = CostCurve::PiecewiseLinear {
            points: vec![(0.0, 0.0), (10.0, 100.0), (20.0, 150.0)],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn negative_quadratic_rejected() {
        let c = CostCurve::Polynomial {
            quadratic: -1.0,
            linear: 0.0,
            constant: 0.0,
        };
        assert!(c.validate().is_err());
    }
}
