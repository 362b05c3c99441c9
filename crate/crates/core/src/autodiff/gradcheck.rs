//! Central finite-difference verification of tape gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries whose ±step evaluations crossed a ReLU or max-pool kink.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// Every `(name, flat index)` entry of `params`.
pub fn all_entries(params: &ParamStore) -> Vec<(String, usize)> {
    params
        .iter()
        .flat_map(|(n, p)| (0..p.value.numel()).map(move |i| (n.to_string(), i)))
        .collect()
}

/// A uniform random subset of `count` entries (all of them if fewer).
pub fn sample_entries<R: Rng + ?Sized>(params: &ParamStore, count: usize, rng: &mut R) -> Vec<(String, usize)> {
    let mut all = all_entries(params);
    all.shuffle(rng);
    all.truncate(count);
    all.sort();
    all
}

/// Compares the tape gradient of the scalar built by `loss` with central
/// differences on each listed entry.
pub fn check<F>(params: &ParamStore, entries: &[(String, usize)], step: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, params)?;
    let base_sig = tape.kink_signature();
    tape.backward(l)?;
    let mut analytic = ParamStore::new();
    analytic.accumulate_grads_from(&tape, params)?;

    let eval = |p: &ParamStore| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let v = loss(&mut t, p)?;
        Ok((t.value(v).item(), t.kink_signature()))
    };

    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for (name, i) in entries {
        let orig = work.value(name).expect("entry from this store").data()[*i];
        work.get_mut(name).unwrap().value.data_mut()[*i] = orig + step;
        let (fp, sp) = eval(&work)?;
        work.get_mut(name).unwrap().value.data_mut()[*i] = orig - step;
        let (fm, sm) = eval(&work)?;
        work.get_mut(name).unwrap().value.data_mut()[*i] = orig;
        if sp != base_sig || sm != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic
            .get(name)
            .and_then(|p| p.grad.as_ref())
            .map_or(0.0, |g| g.data()[*i]);
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((name.clone(), *i, a, numeric));
        }
    }
    Ok(report)
}

impl ParamStore {
    /// Copies parameter values from `source` with the gradients `tape` holds.
    fn accumulate_grads_from(&mut self, tape: &Tape, source: &ParamStore) -> Result<()> {
        for (name, p) in source.iter() {
            self.set(name, p.value.clone());
        }
        self.accumulate_grads(tape)
    }
}
