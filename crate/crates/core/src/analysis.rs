//! Breach probability for a forwarding path, and the collusion experiment
//! (first-spy estimator, anonymity sets).
//!
//! Breach model: an adversary compromises relays uniformly at random
//! without replacement. Each compromised path relay exposes itself and its
//! two path neighbours, so reconstructing a path of `f` relays takes
//! `k = ceil(f/3)` compromises. The path is breached when the first `k`
//! compromises all land on the path:
//! `P = prod_{i=0}^{k-1} (f-i)/(n-i)`, i.e. `C(f,k)/C(n,k)`.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::relay::ForwardingProtocol;
use crate::world::{CryptoMode, HopRecord, RequestSpec, TxRecord, World, WorldConfig, WorldError};
use crate::RelayId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("invalid breach model: f={f}, n={n}")]
    InvalidModel { f: u32, n: u32 },
    #[error("at least {min} trials required, got {got}")]
    TooFewTrials { min: u64, got: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BreachModel {
    pub f: u32,
    pub n: u32,
}

impl BreachModel {
    pub fn new(f: u32, n: u32) -> Result<Self, AnalysisError> {
        if n == 0 || f > n {
            return Err(AnalysisError::InvalidModel { f, n });
        }
        Ok(Self { f, n })
    }

    pub fn required_breaches(&self) -> u32 {
        self.f.div_ceil(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BreachForm {
    /// `ceil(f/3)` compromises, all on the path.
    #[default]
    ThirdOfPath,
    /// Both product indices run together from 0 to `floor(3f/n)`.
    Literal,
}

pub fn breach_probability_analytic(model: BreachModel) -> f64 {
    breach_probability(model, BreachForm::ThirdOfPath)
}

/// Zero for `f = 0`: the empty product would otherwise read as certainty.
pub fn breach_probability(model: BreachModel, form: BreachForm) -> f64 {
    let BreachModel { f, n } = model;
    if f == 0 {
        return 0.0;
    }
    let factors = match form {
        BreachForm::ThirdOfPath => model.required_breaches(),
        BreachForm::Literal => (3 * f / n + 1).min(f),
    };
    (0..factors).map(|i| (f - i) as f64 / (n - i) as f64).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub successes: u64,
    pub trials: u64,
}

impl Estimate {
    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

pub fn z_for(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + confidence / 2.0)
}

/// Wilson score interval.
pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = z_for(confidence);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

pub fn estimate(successes: u64, trials: u64, confidence: f64) -> Estimate {
    let (ci_low, ci_high) = wilson_interval(successes, trials, confidence);
    let p = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
    Estimate { p, ci_low, ci_high, successes, trials }
}

pub const MIN_MONTE_CARLO_TRIALS: u64 = 10_000;

/// Simulates the attack: path relays are `0..f`; each trial compromises
/// `ceil(f/3)` distinct relays and succeeds if every one is on the path.
/// Reported with a Wilson 99% interval.
pub fn breach_probability_montecarlo(model: BreachModel, trials: u64, seed: u64) -> Result<Estimate, AnalysisError> {
    if trials < MIN_MONTE_CARLO_TRIALS {
        return Err(AnalysisError::TooFewTrials { min: MIN_MONTE_CARLO_TRIALS, got: trials });
    }
    let BreachModel { f, n } = model;
    if f == 0 {
        return Ok(estimate(0, trials, 0.99));
    }
    let k = model.required_breaches() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..trials {
        if sample(&mut rng, n as usize, k).iter().all(|node| node < f as usize) {
            hits += 1;
        }
    }
    Ok(estimate(hits, trials, 0.99))
}

/// The earliest colluder sighting of a transaction.
pub fn first_observation<'a>(trace: &'a [HopRecord], colluders: &BTreeSet<RelayId>) -> Option<&'a HopRecord> {
    trace.iter().filter(|h| colluders.contains(&h.relay)).min_by_key(|h| h.at)
}

/// First-spy guess: the relay that handed the transaction to the first
/// colluder, or that colluder itself when it was the entry.
pub fn first_spy(trace: &[HopRecord], colluders: &BTreeSet<RelayId>) -> Option<RelayId> {
    first_observation(trace, colluders).map(|h| h.from.unwrap_or(h.relay))
}

/// Relays that held the copy seen by the first spy, walking back from the
/// spy's sender to the entry. Without any sighting, every relay that held
/// the transaction. The entry is always a member; when the first spy heard
/// it straight from the entry (or is the entry) the set is just the entry.
pub fn anonymity_set(trace: &[HopRecord], colluders: &BTreeSet<RelayId>) -> BTreeSet<RelayId> {
    let Some(entry) = trace.iter().find(|h| h.from.is_none()).map(|h| h.relay) else {
        return BTreeSet::new();
    };
    let Some(obs) = first_observation(trace, colluders) else {
        return trace.iter().map(|h| h.relay).collect();
    };
    let mut set = BTreeSet::new();
    let mut cursor = obs.from;
    let mut before = obs.at;
    while let Some(r) = cursor {
        set.insert(r);
        if r == entry {
            break;
        }
        let Some(hop) = trace.iter().filter(|h| h.relay == r && h.at <= before).max_by_key(|h| h.at) else {
            break;
        };
        cursor = hop.from;
        before = hop.at;
    }
    set.insert(entry);
    if obs.from.is_none() {
        set.retain(|r| *r == entry);
    }
    set
}

/// Origins an adversary cannot rule out when every relay may talk to every
/// other: any honest relay, unless a colluder was itself the entry.
pub fn candidate_origins(
    trace: &[HopRecord],
    colluders: &BTreeSet<RelayId>,
    all_relays: &[RelayId],
) -> BTreeSet<RelayId> {
    match first_observation(trace, colluders) {
        Some(h) if h.from.is_none() => BTreeSet::from([h.relay]),
        _ => all_relays.iter().copied().filter(|r| !colluders.contains(r)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollusionScenario {
    pub protocol: ForwardingProtocol,
    pub collusion_ratio: f64,
    pub n_relays: usize,
    pub n_transactions: usize,
    /// Colluder resamples; each runs `n_transactions` fresh transactions.
    pub trials: usize,
    pub seed: u64,
}

impl CollusionScenario {
    pub fn colluder_count(&self) -> usize {
        (self.collusion_ratio * self.n_relays as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnonymityMetrics {
    pub deanonymization_probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence_halfwidth: f64,
    pub mean_anonymity_set_size: f64,
    pub mean_candidate_set_size: f64,
    pub samples: u64,
    /// Transactions whose anonymity set missed the true entry; must be 0.
    pub soundness_violations: u64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    deanon: u64,
    samples: u64,
    set_total: f64,
    candidates_total: f64,
    unsound: u64,
}

impl Tally {
    fn add(&mut self, t: &TxRecord, colluders: &BTreeSet<RelayId>, all: &[RelayId]) {
        let Some(entry) = t.trace.iter().find(|h| h.from.is_none()).map(|h| h.relay) else {
            return;
        };
        self.samples += 1;
        if first_spy(&t.trace, colluders) == Some(entry) {
            self.deanon += 1;
        }
        let set = anonymity_set(&t.trace, colluders);
        if !set.contains(&entry) {
            self.unsound += 1;
        }
        self.set_total += set.len() as f64;
        self.candidates_total += candidate_origins(&t.trace, colluders, all).len() as f64;
    }

    fn metrics(&self) -> AnonymityMetrics {
        let e = estimate(self.deanon, self.samples, 0.95);
        let n = self.samples.max(1) as f64;
        AnonymityMetrics {
            deanonymization_probability: e.p,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            confidence_halfwidth: (e.ci_high - e.ci_low) / 2.0,
            mean_anonymity_set_size: self.set_total / n,
            mean_candidate_set_size: self.candidates_total / n,
            samples: self.samples,
            soundness_violations: self.unsound,
        }
    }
}

const COLLUSION_USER: &str = "collusion-probe";
const ARRIVAL_GAP_MS: u64 = 20;

/// Runs one scenario on an existing world built for `scenario.protocol`.
pub fn run_collusion_point(world: &mut World, scenario: &CollusionScenario, point: u64) -> AnonymityMetrics {
    world.authorize(COLLUSION_USER);
    let all: Vec<RelayId> = (0..scenario.n_relays as u32).map(RelayId).collect();
    let k = scenario.colluder_count();
    let mut tally = Tally::default();
    for trial in 0..scenario.trials as u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);
        rng.set_stream(point << 32 | trial);
        let colluders: BTreeSet<RelayId> = all.iter().copied().choose_multiple(&mut rng, k).into_iter().collect();
        let start = world.now();
        for i in 0..scenario.n_transactions as u64 {
            world
                .schedule_request(start + i * ARRIVAL_GAP_MS, RequestSpec::data(COLLUSION_USER, b""))
                .expect("probe user is authorized");
        }
        world.run();
        for t in world.take_records() {
            tally.add(&t, &colluders, &all);
        }
    }
    tally.metrics()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollusionRow {
    pub protocol: String,
    pub ratio: f64,
    pub metrics: AnonymityMetrics,
    pub seed: u64,
}

/// Every (protocol, ratio) pair, rows sorted by protocol then ratio.
pub fn run_collusion_sweep(
    protocols: &[ForwardingProtocol],
    ratios: &[f64],
    n_relays: usize,
    n_transactions: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<CollusionRow>, WorldError> {
    let results: Vec<Result<Vec<CollusionRow>, WorldError>> = std::thread::scope(|s| {
        let handles: Vec<_> = protocols
            .iter()
            .map(|&protocol| {
                s.spawn(move || {
                    let cfg =
                        WorldConfig { n_relays, protocol, seed, crypto: CryptoMode::Fast, ..WorldConfig::default() };
                    let mut world = World::new(cfg)?;
                    let mut rows = Vec::new();
                    for (i, &ratio) in ratios.iter().enumerate() {
                        let sc = CollusionScenario {
                            protocol,
                            collusion_ratio: ratio,
                            n_relays,
                            n_transactions,
                            trials,
                            seed,
                        };
                        let metrics = run_collusion_point(&mut world, &sc, i as u64);
                        rows.push(CollusionRow { protocol: protocol.name().to_owned(), ratio, metrics, seed });
                    }
                    Ok(rows)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| a.protocol.cmp(&b.protocol).then(a.ratio.total_cmp(&b.ratio)));
    Ok(rows)
}

pub const COLLUSION_CSV_HEADER: &str = "protocol,ratio,deanon_prob,ci_low,ci_high,mean_anon_set,trials,seed";

pub fn collusion_csv_rows(rows: &[CollusionRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            format!(
                "{},{:.2},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.protocol,
                r.ratio,
                r.metrics.deanonymization_probability,
                r.metrics.ci_low,
                r.metrics.ci_high,
                r.metrics.mean_anonymity_set_size,
                r.metrics.samples,
                r.seed
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    fn binom(n: u32, k: u32) -> BigUint {
        (0..k).fold(BigUint::from(1u32), |acc, i| acc * (n - i) / (i + 1))
    }

    fn hop(relay: u32, from: Option<u32>, at: u64) -> HopRecord {
        HopRecord { relay: RelayId(relay), from: from.map(RelayId), at, phase: crate::relay::PhaseTag::Stem }
    }

    #[test]
    fn analytic_matches_binomial_ratio() {
        for n in [10u32, 37, 100] {
            for f in 1..=n {
                let m = BreachModel::new(f, n).unwrap();
                let k = m.required_breaches();
                let exact = binom(f, k).to_f64().unwrap() / binom(n, k).to_f64().unwrap();
                let got = breach_probability_analytic(m);
                assert!((got - exact).abs() <= 1e-12 * exact.max(1e-300), "f={f} n={n}");
            }
        }
    }

    #[test]
    fn analytic_edges() {
        assert_eq!(breach_probability_analytic(BreachModel::new(0, 100).unwrap()), 0.0);
        assert_eq!(breach_probability_analytic(BreachModel::new(100, 100).unwrap()), 1.0);
        assert!(BreachModel::new(101, 100).is_err());
        assert!(BreachModel::new(0, 0).is_err());
        let p = breach_probability_analytic(BreachModel::new(3, 100).unwrap());
        assert!((p - 0.03).abs() < 1e-12);
    }

    #[test]
    fn literal_form_uses_floor_three_f_over_n() {
        // floor(30/100) = 0, one factor
        let p = breach_probability(BreachModel::new(10, 100).unwrap(), BreachForm::Literal);
        assert!((p - 0.1).abs() < 1e-12);
        // floor(120/100) = 1, two factors
        let p = breach_probability(BreachModel::new(40, 100).unwrap(), BreachForm::Literal);
        assert!((p - 40.0 / 100.0 * 39.0 / 99.0).abs() < 1e-12);
    }

    #[test]
    fn montecarlo_brackets_analytic() {
        for (f, n) in [(3, 20), (6, 30), (9, 40), (12, 60)] {
            let m = BreachModel::new(f, n).unwrap();
            let e = breach_probability_montecarlo(m, 100_000, 7).unwrap();
            assert!(e.contains(breach_probability_analytic(m)), "f={f} n={n} {e:?}");
        }
        assert!(breach_probability_montecarlo(BreachModel::new(3, 10).unwrap(), 10, 1).is_err());
    }

    #[test]
    fn wilson_matches_reference_values() {
        // 50/100 at 95%: 0.4038 .. 0.5962
        let (lo, hi) = wilson_interval(50, 100, 0.95);
        assert!((lo - 0.40383).abs() < 1e-4 && (hi - 0.59617).abs() < 1e-4);
        let (lo, hi) = wilson_interval(0, 10, 0.95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.27753).abs() < 1e-4);
    }

    #[test]
    fn first_spy_and_sets_on_a_stem() {
        // 1 -> 2 -> 3 -> 4, colluder 3
        let trace = vec![hop(1, None, 0), hop(2, Some(1), 10), hop(3, Some(2), 20), hop(4, Some(3), 30)];
        let c = BTreeSet::from([RelayId(3)]);
        assert_eq!(first_spy(&trace, &c), Some(RelayId(2)));
        assert_eq!(anonymity_set(&trace, &c), BTreeSet::from([RelayId(1), RelayId(2)]));
        let c = BTreeSet::from([RelayId(2)]);
        assert_eq!(first_spy(&trace, &c), Some(RelayId(1)));
        assert_eq!(anonymity_set(&trace, &c), BTreeSet::from([RelayId(1)]));
        let c = BTreeSet::from([RelayId(1), RelayId(4)]);
        assert_eq!(anonymity_set(&trace, &c), BTreeSet::from([RelayId(1)]));
        let none = BTreeSet::new();
        assert_eq!(first_spy(&trace, &none), None);
        assert_eq!(anonymity_set(&trace, &none).len(), 4);
    }

    #[test]
    fn set_follows_the_observed_copy_only() {
        // entry 1 fans out to 2 and 5; 2 -> 3 (colluder) is the first sighting
        let trace =
            vec![hop(1, None, 0), hop(5, Some(1), 8), hop(2, Some(1), 9), hop(6, Some(5), 15), hop(3, Some(2), 20)];
        let c = BTreeSet::from([RelayId(3)]);
        assert_eq!(anonymity_set(&trace, &c), BTreeSet::from([RelayId(1), RelayId(2)]));
    }

    #[test]
    fn candidate_origins_examples() {
        let all: Vec<RelayId> = (0..10).map(RelayId).collect();
        let trace = vec![hop(0, None, 0), hop(4, Some(0), 10)];
        assert_eq!(candidate_origins(&trace, &BTreeSet::new(), &all).len(), 10);
        // everyone but the origin colludes
        let c: BTreeSet<RelayId> = (1..10).map(RelayId).collect();
        assert_eq!(candidate_origins(&trace, &c, &all), BTreeSet::from([RelayId(0)]));
    }

    /// Brute force over a 10-relay full mesh: every honest relay that could
    /// start an honest path ending at the spy's sender is a possible origin.
    #[test]
    fn candidate_origins_match_enumeration() {
        let all: Vec<RelayId> = (0..10).map(RelayId).collect();
        let colluders = BTreeSet::from([RelayId(7), RelayId(8)]);
        let honest: Vec<u32> = (0..10).filter(|r| !colluders.contains(&RelayId(*r))).collect();
        let sender = 3u32;
        let mut origins = BTreeSet::new();
        let mut frontier: Vec<Vec<u32>> = vec![vec![sender]];
        for _ in 0..3 {
            let mut next = Vec::new();
            for path in &frontier {
                origins.insert(RelayId(path[0]));
                for &h in &honest {
                    if h != path[0] {
                        let mut p = vec![h];
                        p.extend(path);
                        next.push(p);
                    }
                }
            }
            frontier = next;
        }
        let trace = vec![hop(0, None, 0), hop(3, Some(0), 5), hop(7, Some(3), 10)];
        assert_eq!(candidate_origins(&trace, &colluders, &all), origins);
    }

    #[test]
    fn sweep_is_deterministic_and_sound() {
        let protos = [ForwardingProtocol::dandelion(), ForwardingProtocol::clover()];
        let a = run_collusion_sweep(&protos, &[0.0, 0.3], 30, 40, 3, 11).unwrap();
        let b = run_collusion_sweep(&protos, &[0.0, 0.3], 30, 40, 3, 11).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert_eq!(r.metrics.soundness_violations, 0);
            assert_eq!(r.metrics.samples, 120);
            if r.ratio == 0.0 {
                assert_eq!(r.metrics.deanonymization_probability, 0.0);
            }
        }
        assert_eq!(collusion_csv_rows(&a).len(), 4);
    }

    proptest! {
        #[test]
        fn analytic_is_a_probability_and_falls_with_n(f in 0u32..60, extra in 0u32..200) {
            let n = f.max(1) + extra;
            let p = breach_probability_analytic(BreachModel::new(f, n).unwrap());
            prop_assert!((0.0..=1.0).contains(&p));
            let q = breach_probability_analytic(BreachModel::new(f, n + 1).unwrap());
            prop_assert!(q <= p);
        }

        #[test]
        fn wilson_contains_point(s in 0u64..500, extra in 0u64..500) {
            let n = s + extra + 1;
            let (lo, hi) = wilson_interval(s, n, 0.99);
            let p = s as f64 / n as f64;
            prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
        }
    }
}
