//! Time-stamped simulation records and their CSV export.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::system::State;

/// Per-sample bookkeeping of port powers and storage values.
#[derive(Debug, Clone, Copy)]
pub struct SupplySample {
    /// Sample time, seconds.
    pub t: f64,
    /// Port-1 power `y₁ᵀu₁`, watts.
    pub s1: f64,
    /// Port-2 power `y₂ᵀu₂`, watts.
    pub s2: f64,
    /// `H(x(t))`, joules.
    pub h: f64,
    /// Constrained-mode storage sample (`H₁*(ē₁, x₂(t))` in constant-`y₁`
    /// mode, `H(x̄₁, x₂(t))` in constant-`x₁` mode), joules.
    pub h_star: Option<f64>,
}

/// One simulation run: states, port inputs/outputs and supply samples on a
/// strictly increasing time grid. Single-writer; cheap to clone for
/// post-processing.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub inputs: Vec<(DVector<f64>, DVector<f64>)>,
    pub outputs: Vec<(DVector<f64>, DVector<f64>)>,
    pub supplies: Vec<SupplySample>,
}

impl Trajectory {
    pub fn with_capacity(cap: usize) -> Self {
        Self {
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
            inputs: Vec::with_capacity(cap),
            outputs: Vec::with_capacity(cap),
            supplies: Vec::with_capacity(cap),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(
        &mut self,
        t: f64,
        x: State,
        u: (DVector<f64>, DVector<f64>),
        y: (DVector<f64>, DVector<f64>),
        supply: SupplySample,
    ) {
        self.times.push(t);
        self.states.push(x);
        self.inputs.push(u);
        self.outputs.push(y);
        self.supplies.push(supply);
    }

    /// Strictly increasing grid, finite states, finite supply entries.
    pub fn validate(&self) -> Result<()> {
        for w in self.times.windows(2) {
            if !(w[1] - w[0] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "time grid not strictly increasing at t = {}",
                    w[0]
                )));
            }
        }
        for x in &self.states {
            if let Some(i) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "state",
                    index: i,
                });
            }
        }
        for s in &self.supplies {
            if !(s.s1.is_finite() && s.s2.is_finite() && s.h.is_finite()) {
                return Err(Error::NonFinite {
                    what: "supply sample",
                    index: 0,
                });
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> &State {
        &self.states[0]
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("non-empty trajectory")
    }

    /// `‖x(end) − x(0)‖`, optionally restricted to masked components.
    pub fn closure_defect(&self, mask: Option<&[bool]>) -> f64 {
        let a = self.initial_state();
        let b = self.final_state();
        let mut acc = 0.0;
        for i in 0..a.len() {
            if mask.map(|m| m[i]).unwrap_or(true) {
                let d = b[i] - a[i];
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// Column names of the full export layout:
    /// `t, x[0..n), u1[..], u2[..], y1[..], y2[..], s1, s2, H, Hstar`.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["t".to_string()];
        let n = self.states.first().map(|x| x.len()).unwrap_or(0);
        let (m1, m2) = self
            .inputs
            .first()
            .map(|(a, b)| (a.len(), b.len()))
            .unwrap_or((0, 0));
        let (p1, p2) = self
            .outputs
            .first()
            .map(|(a, b)| (a.len(), b.len()))
            .unwrap_or((0, 0));
        names.extend((0..n).map(|i| format!("x{i}")));
        names.extend((0..m1).map(|i| format!("u1_{i}")));
        names.extend((0..m2).map(|i| format!("u2_{i}")));
        names.extend((0..p1).map(|i| format!("y1_{i}")));
        names.extend((0..p2).map(|i| format!("y2_{i}")));
        names.extend(["s1", "s2", "H", "Hstar"].map(String::from));
        names
    }

    fn row_values(&self, k: usize) -> Vec<f64> {
        let mut row = vec![self.times[k]];
        row.extend(self.states[k].iter().copied());
        row.extend(self.inputs[k].0.iter().copied());
        row.extend(self.inputs[k].1.iter().copied());
        row.extend(self.outputs[k].0.iter().copied());
        row.extend(self.outputs[k].1.iter().copied());
        let s = &self.supplies[k];
        row.extend([s.s1, s.s2, s.h, s.h_star.unwrap_or(f64::NAN)]);
        row
    }

    /// Full CSV export (all columns), 17 significant digits, deterministic
    /// byte-for-byte given identical inputs.
    pub fn to_csv(&self) -> String {
        let names = self.column_names();
        self.to_csv_columns(&names.iter().map(String::as_str).collect::<Vec<_>>())
    }

    /// CSV restricted to the selected columns (header row included).  An
    /// empty selection yields a header-only CSV.
    pub fn to_csv_columns(&self, which: &[&str]) -> String {
        let names = self.column_names();
        let sel: Vec<usize> = which
            .iter()
            .filter_map(|w| names.iter().position(|n| n == w))
            .collect();
        let mut out = String::new();
        out.push_str(&which.join(","));
        out.push('\n');
        for k in 0..self.len() {
            let row = self.row_values(k);
            let cells: Vec<String> = sel.iter().map(|&i| format!("{:.16e}", row[i])).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_traj() -> Trajectory {
        let mut tr = Trajectory::default();
        for k in 0..3 {
            let t = k as f64 * 0.5;
            tr.push(
                t,
                DVector::from_vec(vec![t, -t]),
                (DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])),
                (DVector::from_vec(vec![0.5]), DVector::from_vec(vec![0.25])),
                SupplySample {
                    t,
                    s1: 0.5,
                    s2: 0.5,
                    h: 1.0,
                    h_star: None,
                },
            );
        }
        tr
    }

    #[test]
    fn validates_increasing_grid() {
        let mut tr = tiny_traj();
        assert!(tr.validate().is_ok());
        tr.times[2] = tr.times[1];
        assert!(tr.validate().is_err());
    }

    #[test]
    fn csv_header_and_shape() {
        let tr = tiny_traj();
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x0,x1,u1_0,u2_0,y1_0,y2_0,s1,s2,H,Hstar"
        );
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn csv_empty_selection_is_header_only() {
        let tr = tiny_traj();
        let csv = tr.to_csv_columns(&[]);
        assert_eq!(csv, "\n");
    }

    #[test]
    fn csv_cells_parse_back() {
        let tr = tiny_traj();
        let csv = tr.to_csv_columns(&["t", "s1"]);
        let line = csv.lines().nth(2).unwrap();
        let t: f64 = line.split(',').next().unwrap().parse().unwrap();
        assert_eq!(t, 0.5);
    }

    #[test]
    fn closure_defect_masks_components() {
        let tr = tiny_traj();
        let full = tr.closure_defect(None);
        assert!(full > 1.0);
        let masked = tr.closure_defect(Some(&[false, false]));
        assert_eq!(masked, 0.0);
    }
}
