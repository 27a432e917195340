//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Per-tensor outcome of a gradient check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_error: f64,
    /// `max|g_ad - g_fd| / max(1e-12, max|g_ad| + max|g_fd|)` over the
    /// checked entries. This decides `passed`.
    pub rel_error: f64,
    /// Worst single-entry `|g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|)`.
    /// Entries whose true gradient sits at roundoff level inflate this.
    pub max_entry_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub loss: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-12, analytic.abs() + numeric.abs())
}

fn eval<F>(objective: &F, params: &ParamStore) -> Result<(f64, Tape, Var)>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.params_from(params);
    let loss = objective(&mut tape, &vars)?;
    let value = tape.value(loss);
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    Ok((value.data()[0], tape, loss))
}

/// Which entries of each tensor get a finite-difference probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Entries {
    #[default]
    All,
    /// At most `per_tensor` entries per tensor, chosen by `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

impl Entries {
    fn select(self, len: usize) -> Vec<usize> {
        match self {
            Entries::All => (0..len).collect(),
            Entries::Sample { per_tensor, .. } if per_tensor >= len => (0..len).collect(),
            Entries::Sample { per_tensor, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ len as u64);
                let mut picked = rand::seq::index::sample(&mut rng, len, per_tensor).into_vec();
                picked.sort_unstable();
                picked
            }
        }
    }
}

/// Compares reverse-mode gradients of `objective` against central
/// differences with step `h` for every entry of every tensor in `params`.
///
/// `objective` records a scalar loss on the tape given the registered
/// parameter handles.
pub fn grad_check<F>(objective: F, params: &ParamStore, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    grad_check_entries(objective, params, h, tol, Entries::All)
}

pub fn grad_check_entries<F>(
    objective: F,
    params: &ParamStore,
    h: f64,
    tol: f64,
    entries: Entries,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let (loss, tape, loss_var) = eval(&objective, params)?;
    let (again, _, _) = eval(&objective, params)?;
    if loss.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic {
            first: loss,
            second: again,
        });
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let analytic = tape.param_grads(&tape.backward(loss_var)?);

    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    for (name, base) in params.iter() {
        let ga = analytic.get(name)?.data().to_vec();
        let picked = entries.select(base.len());
        let (mut max_abs, mut max_entry_rel): (f64, f64) = (0.0, 0.0);
        let (mut max_a, mut max_n): (f64, f64) = (0.0, 0.0);
        for &i in &picked {
            let orig = base.data()[i];
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig + h;
            let plus = eval(&objective, &probe)?.0;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig - h;
            let minus = eval(&objective, &probe)?.0;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            max_abs = max_abs.max((ga[i] - numeric).abs());
            max_entry_rel = max_entry_rel.max(relative_error(ga[i], numeric));
            max_a = max_a.max(ga[i].abs());
            max_n = max_n.max(numeric.abs());
        }
        let rel = max_abs / f64::max(1e-12, max_a + max_n);
        checks.push(ParamCheck {
            name: name.clone(),
            entries: picked.len(),
            max_abs_error: max_abs,
            rel_error: rel,
            max_entry_rel_error: max_entry_rel,
            passed: rel <= tol,
        });
    }
    Ok(GradCheckReport {
        step: h,
        tolerance: tol,
        loss,
        params: checks,
    })
}
