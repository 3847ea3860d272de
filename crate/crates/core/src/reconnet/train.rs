use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::ReconNets;
use crate::difffield::{bce, bce_grad, Adam, AdamConfig};
use crate::error::{contract, Error, Result};
use crate::synthcorpus::ScanRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconTrainConfig {
    pub epochs: usize,
    /// Scans per optimisation step.
    pub batch_size: usize,
    pub lr: f64,
    pub steps_per_epoch: usize,
    /// Labelled points drawn per scan and step.
    pub points_per_scan: usize,
    /// Points per scan in the fixed set the loss history is measured on.
    pub monitor_points: usize,
    pub seed: u64,
}

impl Default for ReconTrainConfig {
    fn default() -> Self {
        Self { epochs: 40, batch_size: 4, lr: 1e-3, steps_per_epoch: 50, points_per_scan: 512, monitor_points: 512, seed: 0 }
    }
}

impl ReconTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.points_per_scan == 0 || self.monitor_points == 0 {
            return Err(contract("batch size and point counts must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(contract("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedRecon {
    pub nets: ReconNets,
    /// Mean BCE on the monitor set before training.
    pub initial: f64,
    /// Mean BCE on the monitor set after each epoch.
    pub history: Vec<f64>,
}

fn subset(len: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    rand::seq::index::sample(rng, len, count).into_vec()
}

/// Mean BCE over the given points of each record.
pub fn recon_loss(nets: &ReconNets, records: &[&ScanRecord], picks: &[Vec<usize>]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (rec, idx) in records.iter().zip(picks) {
        let enc = nets.encode(&rec.front, &rec.back)?;
        let pts: Vec<_> = idx.iter().map(|&i| rec.points.points[i]).collect();
        for (o, &i) in nets.eval(&enc, &pts)?.iter().zip(idx) {
            sum += bce(*o, rec.points.labels[i]);
        }
        n += idx.len();
    }
    if n == 0 {
        return Err(contract("loss over an empty point set"));
    }
    Ok(sum / n as f64)
}

/// Accumulates the gradient of the batch's mean BCE and returns the loss.
pub fn recon_loss_and_grad(nets: &mut ReconNets, records: &[&ScanRecord], picks: &[Vec<usize>]) -> Result<f64> {
    let n: usize = picks.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(contract("loss over an empty point set"));
    }
    let mut sum = 0.0;
    for (rec, idx) in records.iter().zip(picks) {
        let enc = nets.encode_tape(&rec.front, &rec.back)?;
        let pts: Vec<_> = idx.iter().map(|&i| rec.points.points[i]).collect();
        let (occ, tape) = nets.eval_tape(&enc, &pts)?;
        let mut grad = Vec::with_capacity(occ.len());
        for (o, &i) in occ.iter().zip(idx) {
            let t = rec.points.labels[i];
            sum += bce(*o, t);
            grad.push(bce_grad(*o, t) / n as f64);
        }
        nets.backward(&enc, &tape, &grad)?;
    }
    Ok(sum / n as f64)
}

/// Minimises the mean BCE of predicted occupancy against the labelled
/// canonical points of each scan, conditioned on its canonical normal maps.
pub fn train_recon(
    mut nets: ReconNets,
    records: &[ScanRecord],
    cfg: &ReconTrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainedRecon> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(contract("reconstruction training needs at least one scan"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all: Vec<&ScanRecord> = records.iter().collect();
    let monitor: Vec<Vec<usize>> = records.iter().map(|r| subset(r.points.len(), cfg.monitor_points, &mut rng)).collect();
    let initial = recon_loss(&nets, &all, &monitor)?;
    let mut adam = Adam::new(&nets, AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for _ in 0..cfg.steps_per_epoch {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            let mut picks = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size.min(records.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let rec = &records[order[cursor]];
                cursor += 1;
                picks.push(subset(rec.points.len(), cfg.points_per_scan, &mut rng));
                batch.push(rec);
            }
            nets.zero_grad();
            let loss = recon_loss_and_grad(&mut nets, &batch, &picks)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { iteration: step, detail: format!("reconstruction loss {loss}") });
            }
            adam.step(&mut nets);
            step += 1;
        }
        let loss = recon_loss(&nets, &all, &monitor)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: step, detail: format!("monitor loss {loss}") });
        }
        history.push(loss);
        progress(epoch, loss);
    }
    Ok(TrainedRecon { nets, initial, history })
}
