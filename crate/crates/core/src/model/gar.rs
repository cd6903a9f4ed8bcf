use rand::Rng;

use super::ModelError;
use crate::action::ActionId;
use crate::numeric::{Graph, Tensor, Var};

/// One agent's action scores: `K_intr` intrinsic logits followed by one
/// interactive logit per unit (`j = self` included), plus availability.
#[derive(Clone, Debug, PartialEq)]
pub struct GarLogits {
    pub intrinsic: Vec<f64>,
    pub interactive: Vec<f64>,
    pub availability: Vec<bool>,
}

impl GarLogits {
    /// Splits a combined row `intrinsic ⊕ interactive` after `k_intr` entries.
    pub fn from_row(row: &[f64], k_intr: usize, availability: Vec<bool>) -> Result<Self, ModelError> {
        if row.len() < k_intr || availability.len() != row.len() {
            return Err(ModelError::Input(format!(
                "logit row of {} entries, {} intrinsic, {} availability flags",
                row.len(),
                k_intr,
                availability.len()
            )));
        }
        Ok(GarLogits {
            intrinsic: row[..k_intr].to_vec(),
            interactive: row[k_intr..].to_vec(),
            availability,
        })
    }

    pub fn len(&self) -> usize {
        self.intrinsic.len() + self.interactive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn combined(&self) -> Vec<f64> {
        combined_logits(&self.intrinsic, &self.interactive)
    }

    /// Softmax over available actions; unavailable entries get probability 0.
    pub fn probabilities(&self) -> Result<Vec<f64>, ModelError> {
        let logits = self.combined();
        let max = logits
            .iter()
            .zip(&self.availability)
            .filter(|(_, a)| **a)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(ModelError::NoAvailableAction);
        }
        let mut p: Vec<f64> = logits
            .iter()
            .zip(&self.availability)
            .map(|(l, a)| if *a { (l - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        Ok(p)
    }
}

pub fn combined_logits(intrinsic: &[f64], interactive: &[f64]) -> Vec<f64> {
    intrinsic.iter().chain(interactive).copied().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Selection {
    /// Highest available logit, lowest index on ties.
    #[default]
    Argmax,
    /// Draw from the softmax over available actions.
    Sample,
}

pub fn select_action<R: Rng + ?Sized>(
    logits: &GarLogits,
    mode: Selection,
    rng: &mut R,
) -> Result<ActionId, ModelError> {
    if logits.availability.len() != logits.len() {
        return Err(ModelError::Input(format!(
            "{} availability flags for {} logits",
            logits.availability.len(),
            logits.len()
        )));
    }
    match mode {
        Selection::Argmax => {
            let combined = logits.combined();
            let mut best: Option<(usize, f64)> = None;
            for (k, (&l, &a)) in combined.iter().zip(&logits.availability).enumerate() {
                if a && best.is_none_or(|(_, b)| l > b) {
                    best = Some((k, l));
                }
            }
            best.map(|(k, _)| ActionId(k)).ok_or(ModelError::NoAvailableAction)
        }
        Selection::Sample => {
            let p = logits.probabilities()?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = None;
            for (k, pk) in p.iter().enumerate() {
                if *pk > 0.0 {
                    acc += pk;
                    last = Some(k);
                    if u < acc {
                        return Ok(ActionId(k));
                    }
                }
            }
            // rounding left u just above the running total
            last.map(ActionId).ok_or(ModelError::NoAvailableAction)
        }
    }
}

/// Imitation loss on a graph: mean cross-entropy of the combined softmax
/// over rows that carry a target. Rows of dead agents, uncontrollable
/// units and padding carry `None` and leave both sum and count untouched.
/// With `availability` the softmax runs over available actions only.
pub fn imitation_loss(
    g: &mut Graph,
    logits: Var,
    targets: &[Option<usize>],
    availability: Option<&[bool]>,
) -> Result<Var, ModelError> {
    Ok(g.masked_cross_entropy(logits, targets, availability)?)
}

/// Value-only imitation loss over per-agent logits, masked by their
/// availability.
pub fn imitation_loss_value(logits: &[GarLogits], targets: &[Option<ActionId>]) -> Result<f64, ModelError> {
    if logits.len() != targets.len() {
        return Err(ModelError::Input(format!("{} logit rows for {} targets", logits.len(), targets.len())));
    }
    let width = logits.first().map(GarLogits::len).unwrap_or(0);
    if logits.iter().any(|l| l.len() != width) {
        return Err(ModelError::Input("logit rows of different lengths".into()));
    }
    let data: Vec<f64> = logits.iter().flat_map(|l| l.combined()).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![logits.len(), width], data)?)?;
    let t: Vec<Option<usize>> = targets.iter().map(|t| t.map(|a| a.index())).collect();
    let avail: Vec<bool> = logits.iter().flat_map(|l| l.availability.iter().copied()).collect();
    if avail.len() != logits.len() * width {
        return Err(ModelError::Input("availability does not match logits".into()));
    }
    let loss = imitation_loss(&mut g, x, &t, Some(&avail))?;
    Ok(g.value(loss).item())
}
