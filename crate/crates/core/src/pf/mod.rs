//! Joint class and 6-DOF pose estimation with a particle filter.
//!
//! The object never moves, so a particle is a static hypothesis (class, pose)
//! whose weight accumulates the likelihood of every observation so far. Each
//! step runs: weight update on the new evidence, MAP extraction from the
//! freshly normalised weights, resampling back down to a fixed population,
//! and, when the MAP explains the data poorly, targeted proposals built by
//! aligning model feature pairs onto observed contact pairs.
//!
//! Two bookkeeping rules matter throughout. `log_w` is the (log) sampling
//! weight and is reset by resampling; `log_evidence` is the running sum of
//! per-observation log-likelihoods and survives resampling, because the
//! known/novel decision and the proposal weights both need the actual data
//! fit of a hypothesis, not its sampling weight.

mod ppf;

pub use ppf::{align_pair, compute_ppf, poses_onto_contact, PairRef, PpfKey, PpfTable};

use crate::geometry::{OrientedPoint, Pose};
use crate::measurement::{batch_log_lik, NoiseParams, Observation};
use crate::sdf::{Library, ObjectModel, SdfField};
use nalgebra::Point3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

/// One hypothesis: the object is an instance of `class_id` at `pose`.
#[derive(Debug, Clone)]
pub struct Particle {
    pub class_id: usize,
    pub pose: Pose,
    /// Log sampling weight; normalised in place after every update.
    pub log_w: f64,
    /// Running sum of per-observation log-likelihoods over everything this
    /// hypothesis has been scored on.
    pub log_evidence: f64,
}

/// The shape data the filter needs per known class. Index in the model list
/// is the class id.
pub struct FilterModel {
    pub name: String,
    pub field: SdfField,
    pub features: Vec<OrientedPoint>,
}

impl FilterModel {
    pub fn from_object(m: &ObjectModel) -> Self {
        Self {
            name: m.name.clone(),
            field: m.field.clone(),
            features: m.features.clone(),
        }
    }
}

/// Known classes of a [`Library`], ordered by class id.
pub fn models_from_library(lib: &Library) -> Vec<FilterModel> {
    let known = lib.known();
    for (idx, m) in known.iter().enumerate() {
        assert_eq!(m.class_id, idx, "library class ids must be dense");
    }
    known.iter().map(|m| FilterModel::from_object(m)).collect()
}

/// Build the pair-feature table over a model list.
pub fn table_from_models(models: &[FilterModel]) -> PpfTable {
    let feats: Vec<&[OrientedPoint]> = models.iter().map(|m| m.features.as_slice()).collect();
    PpfTable::build(&feats)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterParams {
    /// Post-resampling population.
    pub n_particles: usize,
    /// Spin discretisation around the first contact normal at initialisation.
    pub azimuth_bins: usize,
    /// Anchor count for proposal scoring.
    pub n_anchors: usize,
    /// Proposal trigger: propose when the per-observation geometric-mean
    /// likelihood of the MAP drops below this.
    pub lambda: f64,
    /// Known/novel decision: per-contact likelihood factor a known object is
    /// allowed to average.
    pub known_contact_factor: f64,
    /// Same, per registered free-space point.
    pub known_free_factor: f64,
    /// At most this many proposal candidates are scored per class per step.
    pub candidate_cap: usize,
    /// Candidates this many log units below their class best are dropped.
    pub prune_margin: f64,
    pub noise: NoiseParams,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            n_particles: 2000,
            azimuth_bins: 12,
            n_anchors: 30,
            lambda: 0.97,
            known_contact_factor: 0.90,
            known_free_factor: 0.50,
            candidate_cap: 200,
            prune_margin: 40.0,
            noise: NoiseParams::default(),
        }
    }
}

/// Snapshot of the best particle at MAP extraction time.
#[derive(Debug, Clone)]
pub struct MapEstimate {
    pub class_id: usize,
    pub pose: Pose,
    /// Data fit over all observations registered so far.
    pub log_evidence: f64,
    /// Normalised log weight at extraction (the w-bar of the proposal rule).
    pub log_weight: f64,
}

/// `true` when evidence clears the known-object bar: each contact may cost on
/// average `contact_factor`, each free point `free_factor`.
pub fn is_known(
    log_evidence: f64,
    n_pos: usize,
    n_neg: usize,
    contact_factor: f64,
    free_factor: f64,
) -> bool {
    log_evidence >= n_pos as f64 * contact_factor.ln() + n_neg as f64 * free_factor.ln()
}

/// Proposals fire when the per-observation geometric-mean likelihood of the
/// MAP drops under `lambda`. No data, no proposals.
pub fn proposal_trigger(log_evidence: f64, n_pos: usize, n_neg: usize, lambda: f64) -> bool {
    let n = n_pos + n_neg;
    n > 0 && log_evidence / (n as f64) < lambda.ln()
}

/// Seed hypotheses from the very first contact: every feature point of every
/// class is mapped onto the contact, fanned over the unconstrained spin.
pub fn init_particles(
    first_contact: &OrientedPoint,
    models: &[FilterModel],
    azimuth_bins: usize,
) -> Vec<Particle> {
    let mut out = Vec::new();
    for (class_id, m) in models.iter().enumerate() {
        for f in &m.features {
            for pose in poses_onto_contact(f, first_contact, azimuth_bins) {
                out.push(Particle {
                    class_id,
                    pose,
                    log_w: 0.0,
                    log_evidence: 0.0,
                });
            }
        }
    }
    out
}

/// Score a batch into every particle's weight and evidence, then normalise
/// the weights. Returns the log normalisation constant; `-inf` means every
/// particle underflowed and nothing was changed past the scoring.
pub fn update_weights(
    particles: &mut [Particle],
    models: &[FilterModel],
    batch: &[Observation],
    noise: &NoiseParams,
) -> f64 {
    for p in particles.iter_mut() {
        let delta = batch_log_lik(&models[p.class_id].field, &p.pose, batch, noise);
        p.log_w += delta;
        p.log_evidence += delta;
    }
    let lse = log_sum_exp(particles.iter().map(|p| p.log_w));
    if lse.is_finite() {
        for p in particles.iter_mut() {
            p.log_w -= lse;
        }
    }
    lse
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Index of the highest-weight particle; ties go to the lower class id, then
/// to the earlier particle.
pub fn map_particle(particles: &[Particle]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in particles.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let q = &particles[b];
                p.log_w > q.log_w || (p.log_w == q.log_w && p.class_id < q.class_id)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Stochastic universal resampling: `n` survivors picked by equally spaced
/// pointers from one uniform offset over the normalised weights. Guarantees
/// every particle with normalised weight above `1/n` survives. Survivors get
/// uniform weight and keep their evidence.
pub fn resample_sus<R: Rng + ?Sized>(particles: &mut Vec<Particle>, n: usize, rng: &mut R) {
    if particles.is_empty() || n == 0 {
        return;
    }
    // Weights are normalised logs; tiny drift is absorbed by scaling the
    // pointer spacing to the actual total.
    let w: Vec<f64> = particles.iter().map(|p| p.log_w.exp()).collect();
    let total: f64 = w.iter().sum();
    let step = total / n as f64;
    let mut u = rng.random::<f64>() * step;
    let uniform = -(n as f64).ln();
    let mut out = Vec::with_capacity(n);
    let mut acc = w[0];
    let mut idx = 0usize;
    for _ in 0..n {
        while acc < u && idx + 1 < particles.len() {
            idx += 1;
            acc += w[idx];
        }
        let mut p = particles[idx].clone();
        p.log_w = uniform;
        out.push(p);
        u += step;
    }
    *particles = out;
}

/// The anchor subset: previous contacts sorted by distance to the new one,
/// split into `n_s` near-equal segments (longer segments first), keeping each
/// segment's closest point. Always contains the nearest previous contact.
pub fn select_anchor_subset(
    prev_contacts: &[OrientedPoint],
    new_position: &Point3<f64>,
    n_s: usize,
) -> Vec<OrientedPoint> {
    let mut sorted: Vec<&OrientedPoint> = prev_contacts.iter().collect();
    sorted.sort_by(|a, b| {
        let da = (a.position - new_position).norm_squared();
        let db = (b.position - new_position).norm_squared();
        da.total_cmp(&db)
    });
    if sorted.len() <= n_s {
        return sorted.into_iter().copied().collect();
    }
    let q = sorted.len() / n_s;
    let r = sorted.len() % n_s;
    let mut out = Vec::with_capacity(n_s);
    let mut start = 0usize;
    for s in 0..n_s {
        out.push(*sorted[start]);
        start += q + usize::from(s < r);
    }
    out
}

/// Proposal output plus the quantities tests need to check the weight rule.
pub struct Proposals {
    pub particles: Vec<Particle>,
    /// Per appended particle: anchor-subset log-likelihood.
    pub anchor_scores: Vec<f64>,
    pub keys_queried: usize,
}

/// Sample new hypotheses from pair-feature matches against the new contact.
///
/// Every (new, anchor) pair in both orders is looked up (plus one-bin
/// neighbours); each retrieved model pair is aligned to give a candidate
/// pose. Candidates are scored per class on the anchor observations only;
/// each class's best is then scored on all data, anchoring the class's
/// absolute weight against the MAP particle:
/// `log w' = (ls - ls_best) + (lall_best - lall_map) + log w_map`.
pub fn propose_particles(
    new_contact: &OrientedPoint,
    anchors: &[OrientedPoint],
    all_obs: &[Observation],
    table: &PpfTable,
    models: &[FilterModel],
    map: &MapEstimate,
    params: &FilterParams,
) -> Proposals {
    let anchor_obs: Vec<Observation> = anchors
        .iter()
        .map(|a| Observation::Contact(*a))
        .collect();
    // Gather candidates per class, deduplicating near-identical poses so a
    // flat patch full of equivalent pairs does not flood the budget.
    let mut cands: HashMap<usize, Vec<Pose>> = HashMap::new();
    let mut seen: HashSet<(usize, [i64; 6])> = HashSet::new();
    let mut keys_queried = 0usize;
    for anchor in anchors {
        for (first, second) in [(new_contact, anchor), (anchor, new_contact)] {
            let Some(ppf) = compute_ppf(first, second) else {
                continue;
            };
            for key in PpfKey::quantize(ppf).with_neighbors() {
                keys_queried += 1;
                for &(c, i, j) in table.lookup(&key) {
                    let class = c as usize;
                    let feats = &models[class].features;
                    let Some(pose) =
                        align_pair((&feats[i as usize], &feats[j as usize]), (first, second))
                    else {
                        continue;
                    };
                    let slot = cands.entry(class).or_default();
                    if slot.len() >= params.candidate_cap {
                        continue;
                    }
                    if seen.insert((class, pose_cell(&pose))) {
                        slot.push(pose);
                    }
                }
            }
        }
    }
    let mut particles = Vec::new();
    let mut anchor_scores = Vec::new();
    let mut classes: Vec<usize> = cands.keys().copied().collect();
    classes.sort_unstable();
    for class in classes {
        let poses = &cands[&class];
        let field = &models[class].field;
        let scores: Vec<f64> = poses
            .iter()
            .map(|pose| batch_log_lik(field, pose, &anchor_obs, &params.noise))
            .collect();
        let best = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty candidate class");
        let ls_best = scores[best];
        let lall_best = batch_log_lik(field, &poses[best], all_obs, &params.noise);
        for (k, pose) in poses.iter().enumerate() {
            let rel = scores[k] - ls_best;
            if rel < -params.prune_margin {
                continue;
            }
            let log_w = rel + (lall_best - map.log_evidence) + map.log_weight;
            // The class best gets its exact full-data evidence; the rest are
            // offset by their anchor-set gap, the same approximation the
            // weight rule itself makes.
            let log_evidence = lall_best + rel;
            particles.push(Particle {
                class_id: class,
                pose: *pose,
                log_w,
                log_evidence,
            });
            anchor_scores.push(scores[k]);
        }
    }
    Proposals {
        particles,
        anchor_scores,
        keys_queried,
    }
}

/// Pose quantised to dedup cells: 0.05 in translation, 0.05 rad per angle.
fn pose_cell(pose: &Pose) -> [i64; 6] {
    let q = |v: f64| (v / 0.05).round() as i64;
    [
        q(pose.translation.x),
        q(pose.translation.y),
        q(pose.translation.z),
        q(pose.euler.x),
        q(pose.euler.y),
        q(pose.euler.z),
    ]
}

/// Outcome summary of one filter step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepReport {
    pub proposed: usize,
    pub degenerate: bool,
}

/// The filter state over one trial.
pub struct Filter {
    pub params: FilterParams,
    models: Arc<Vec<FilterModel>>,
    table: Arc<PpfTable>,
    particles: Vec<Particle>,
    observations: Vec<Observation>,
    contacts: Vec<OrientedPoint>,
    n_pos: usize,
    n_neg: usize,
    map: Option<MapEstimate>,
    force_proposals: bool,
    pub max_particles_seen: usize,
    pub degenerate_steps: usize,
}

impl Filter {
    pub fn new(models: Arc<Vec<FilterModel>>, table: Arc<PpfTable>, params: FilterParams) -> Self {
        assert!(!models.is_empty(), "a filter needs at least one known class");
        Self {
            params,
            models,
            table,
            particles: Vec::new(),
            observations: Vec::new(),
            contacts: Vec::new(),
            n_pos: 0,
            n_neg: 0,
            map: None,
            force_proposals: false,
            max_particles_seen: 0,
            degenerate_steps: 0,
        }
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn map(&self) -> Option<&MapEstimate> {
        self.map.as_ref()
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.n_pos, self.n_neg)
    }

    /// Known/novel decision on the current MAP evidence.
    pub fn known(&self) -> bool {
        self.map.as_ref().is_some_and(|m| {
            is_known(
                m.log_evidence,
                self.n_pos,
                self.n_neg,
                self.params.known_contact_factor,
                self.params.known_free_factor,
            )
        })
    }

    /// MAP evidence averaged per observation, the quantity the proposal
    /// trigger and the termination logging read.
    pub fn evidence_per_point(&self) -> Option<f64> {
        let n = self.n_pos + self.n_neg;
        match (&self.map, n) {
            (Some(m), 1..) => Some(m.log_evidence / n as f64),
            _ => None,
        }
    }

    /// Posterior class probabilities from the current particle set.
    pub fn class_marginals(&self) -> Vec<f64> {
        let mut mass = vec![0.0f64; self.models.len()];
        let lse = log_sum_exp(self.particles.iter().map(|p| p.log_w));
        if !lse.is_finite() {
            return mass;
        }
        for p in &self.particles {
            mass[p.class_id] += (p.log_w - lse).exp();
        }
        mass
    }

    /// Advance one time step on a batch of new observations.
    ///
    /// The first batch containing a contact initialises the particle set from
    /// that contact. Later steps follow the fixed order: weight update, MAP
    /// extraction from the new normalised weights, resampling, and (when the
    /// MAP under-explains the data) pair-feature proposals appended with
    /// absolute weights.
    pub fn step<R: Rng + ?Sized>(&mut self, batch: &[Observation], rng: &mut R) -> StepReport {
        let mut report = StepReport::default();
        if !self.particles.is_empty() && batch.is_empty() {
            // No new information: the posterior, and with it the tracked MAP,
            // is unchanged. Only the resampling noise acts.
            resample_sus(&mut self.particles, self.params.n_particles, rng);
            return report;
        }
        let new_contact = batch.iter().find_map(|o| match o {
            Observation::Contact(op) => Some(*op),
            Observation::Free(_) => None,
        });
        let initialising = self.particles.is_empty();
        if initialising {
            match new_contact {
                Some(c) => {
                    self.particles =
                        init_particles(&c, &self.models, self.params.azimuth_bins);
                    self.max_particles_seen = self.max_particles_seen.max(self.particles.len());
                }
                None => {
                    // Nothing to hypothesise from yet; bank the free points.
                    self.register(batch);
                    return report;
                }
            }
        }
        // Anchors come from contacts strictly before this step.
        let anchors = new_contact
            .map(|c| select_anchor_subset(&self.contacts, &c.position, self.params.n_anchors));
        self.register(batch);

        let lse = update_weights(&mut self.particles, &self.models, batch, &self.params.noise);
        if lse.is_finite() {
            let map_idx = map_particle(&self.particles).expect("non-empty particle set");
            let p = &self.particles[map_idx];
            self.map = Some(MapEstimate {
                class_id: p.class_id,
                pose: p.pose,
                log_evidence: p.log_evidence,
                log_weight: p.log_w,
            });
        } else {
            // Every hypothesis underflowed: keep the previous MAP (with its
            // evidence brought up to date) and force the proposal path.
            report.degenerate = true;
            self.degenerate_steps += 1;
            let uniform = -((self.particles.len() as f64).ln());
            for p in &mut self.particles {
                p.log_w = uniform;
            }
            if let Some(m) = &mut self.map {
                m.log_evidence +=
                    batch_log_lik(&self.models[m.class_id].field, &m.pose, batch, &self.params.noise);
            }
            self.force_proposals = true;
        }

        resample_sus(&mut self.particles, self.params.n_particles, rng);

        let should_propose = !initialising
            && self.map.is_some()
            && (self.force_proposals
                || self
                    .map
                    .as_ref()
                    .is_some_and(|m| {
                        proposal_trigger(m.log_evidence, self.n_pos, self.n_neg, self.params.lambda)
                    }));
        if should_propose {
            if let (Some(c), Some(anchors)) = (new_contact, anchors.as_ref()) {
                if !anchors.is_empty() {
                    let map = self.map.clone().expect("checked");
                    let proposals = propose_particles(
                        &c,
                        anchors,
                        &self.observations,
                        &self.table,
                        &self.models,
                        &map,
                        &self.params,
                    );
                    report.proposed = proposals.particles.len();
                    self.particles.extend(proposals.particles);
                    self.force_proposals = false;
                }
            }
        }
        self.max_particles_seen = self.max_particles_seen.max(self.particles.len());
        report
    }

    fn register(&mut self, batch: &[Observation]) {
        for o in batch {
            match o {
                Observation::Contact(op) => {
                    self.n_pos += 1;
                    self.contacts.push(*op);
                }
                Observation::Free(_) => self.n_neg += 1,
            }
        }
        self.observations.extend_from_slice(batch);
    }
}
