//! Randomized scenario datasets, source matching and aggregated metrics.
//!
//! Errors are measured in array-centered coordinates: the angular error is
//! the angle between the directions of arrival, the radial error compares
//! distances to the array center.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{synthesize_rir, SparseMeasure};
use crate::geometry::{
    make_spherical_array, observable_subset, ArrayLayout, ImageSourceSet, Room, Scenario, Vec3, EM32_RADIUS,
    MIN_SOURCE_SEPARATION, MIN_WALL_CLEARANCE, SPEED_OF_SOUND,
};
use crate::kernels::{FilterKernel, SamplingSpec};
use crate::solver::{solve, RecoveryResult, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_rooms: usize,
    pub length_range: [f64; 2],
    pub width_range: [f64; 2],
    pub height_range: [f64; 2],
    pub absorption_range: [f64; 2],
    pub min_wall_clearance: f64,
    pub min_source_distance: f64,
    pub array_radius: f64,
    pub array_layout: ArrayLayout,
    pub c: f64,
    /// Placement draws per room before giving up.
    pub max_attempts: usize,
    pub rng_seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_rooms: 200,
            length_range: [2.0, 10.0],
            width_range: [2.0, 10.0],
            height_range: [2.0, 5.0],
            absorption_range: [0.01, 0.3],
            min_wall_clearance: MIN_WALL_CLEARANCE,
            min_source_distance: MIN_SOURCE_SEPARATION,
            array_radius: EM32_RADIUS,
            array_layout: ArrayLayout::Em32,
            c: SPEED_OF_SOUND,
            max_attempts: 10_000,
            rng_seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("length", self.length_range),
            ("width", self.width_range),
            ("height", self.height_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::invalid(format!("{name} range [{lo}, {hi}] must be nonempty and positive")));
            }
        }
        let [a_lo, a_hi] = self.absorption_range;
        if !(a_lo >= 0.0 && a_lo <= a_hi && a_hi < 1.0) {
            return Err(Error::invalid(format!("absorption range [{a_lo}, {a_hi}] must lie in [0, 1)")));
        }
        if !(self.min_wall_clearance >= MIN_WALL_CLEARANCE) || !(self.min_source_distance >= MIN_SOURCE_SEPARATION) {
            return Err(Error::invalid(format!(
                "clearance and separation must be at least {MIN_WALL_CLEARANCE} m and {MIN_SOURCE_SEPARATION} m"
            )));
        }
        let smallest = self.length_range[0].min(self.width_range[0]).min(self.height_range[0]);
        if 2.0 * self.min_wall_clearance >= smallest {
            return Err(Error::invalid(format!(
                "wall clearance {} m leaves no room for the array in a {} m dimension",
                self.min_wall_clearance, smallest
            )));
        }
        if !(self.array_radius > 0.0) || self.array_radius >= self.min_wall_clearance {
            return Err(Error::invalid(format!(
                "array radius {} m must be positive and below the wall clearance",
                self.array_radius
            )));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::invalid(format!("speed of sound must be positive, got {}", self.c)));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be at least 1"));
        }
        Ok(())
    }
}

/// Rotation drawn uniformly from SO(3).
pub fn random_rotation<R: Rng>(rng: &mut R) -> nalgebra::Matrix3<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-12 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        }
    }
}

/// Scenario `index` of the dataset; independent of every other index.
pub fn generate_scenario(spec: &DatasetSpec, index: usize) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(index as u64);
    let uniform = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.random_range(lo..hi) };
    let dims = Vec3::new(
        uniform(&mut rng, spec.length_range),
        uniform(&mut rng, spec.width_range),
        uniform(&mut rng, spec.height_range),
    );
    let mut absorption = [0.0; 6];
    for a in &mut absorption {
        *a = uniform(&mut rng, spec.absorption_range);
    }
    let room = Room::new(dims, absorption)?;
    let clear = spec.min_wall_clearance;
    for _ in 0..spec.max_attempts {
        let center = Vec3::new(
            rng.random_range(clear..dims.x - clear),
            rng.random_range(clear..dims.y - clear),
            rng.random_range(clear..dims.z - clear),
        );
        let src = Vec3::new(
            rng.random_range(0.0..dims.x),
            rng.random_range(0.0..dims.y),
            rng.random_range(0.0..dims.z),
        );
        if src.distance(center) < spec.min_source_distance || !room.contains_strictly(src) {
            continue;
        }
        let rotation = random_rotation(&mut rng);
        let array = make_spherical_array(spec.array_layout, center, spec.array_radius, &rotation)?;
        let seed = rng.random();
        return Scenario::new(room, src, array, seed, spec.c);
    }
    Err(Error::invalid(format!(
        "no placement satisfying the constraints found for room {index} in {} attempts",
        spec.max_attempts
    )))
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<Scenario>> {
    spec.validate()?;
    (0..spec.n_rooms).map(|i| generate_scenario(spec, i)).collect()
}

/// Angle between `r` and `r_hat`, in degrees.
pub fn angular_error(r: Vec3, r_hat: Vec3) -> Result<f64> {
    let (n, n_hat) = (r.norm(), r_hat.norm());
    if n == 0.0 || n_hat == 0.0 {
        return Err(Error::invalid("angular error of a zero vector"));
    }
    Ok((r.dot(r_hat) / (n * n_hat)).clamp(-1.0, 1.0).acos().to_degrees())
}

pub fn radial_error(r: Vec3, r_hat: Vec3) -> f64 {
    (r.norm() - r_hat.norm()).abs()
}

pub fn euclidean_error(r: Vec3, r_hat: Vec3) -> f64 {
    r.distance(r_hat)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchThresholds {
    /// Radial threshold in meters.
    pub re: f64,
    /// Angular threshold in degrees.
    pub ae_deg: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        MatchThresholds { re: 0.01, ae_deg: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub position: Vec3,
    pub amplitude: f64,
    pub order: Option<u32>,
}

impl Target {
    pub fn from_sources(set: &ImageSourceSet) -> Vec<Target> {
        set.sources
            .iter()
            .map(|s| Target { position: s.position, amplitude: s.amplitude, order: Some(s.order) })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceMatch {
    pub target: usize,
    pub estimate: usize,
    pub order: Option<u32>,
    pub ae_deg: f64,
    pub re: f64,
    pub ee: f64,
    pub amplitude_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matches: Vec<SourceMatch>,
    pub n_targets: usize,
    pub n_estimates: usize,
    pub recall: f64,
    pub precision: f64,
    /// Reflection order of every target, for per-order recall.
    pub target_orders: Vec<Option<u32>>,
}

impl MatchReport {
    pub fn matched_targets(&self) -> Vec<bool> {
        let mut out = vec![false; self.n_targets];
        for m in &self.matches {
            out[m.target] = true;
        }
        out
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Matches estimates to targets. A pair is admissible when both the radial
/// and angular errors are within the thresholds; each target takes its
/// closest admissible remaining estimate, targets being served in order of
/// their best admissible distance.
pub fn match_and_score(
    targets: &[Target],
    estimate: &SparseMeasure,
    center: Vec3,
    thresholds: MatchThresholds,
) -> Result<MatchReport> {
    if !(thresholds.re > 0.0 && thresholds.ae_deg > 0.0) {
        return Err(Error::invalid("matching thresholds must be positive"));
    }
    let rel = |p: Vec3| p - center;
    let mut candidates: Vec<Vec<(f64, usize)>> = Vec::with_capacity(targets.len());
    for t in targets {
        let r = rel(t.position);
        let mut c = Vec::new();
        for (j, s) in estimate.spikes.iter().enumerate() {
            let r_hat = rel(s.position);
            if radial_error(r, r_hat) > thresholds.re {
                continue;
            }
            let Ok(ae) = angular_error(r, r_hat) else { continue };
            if ae <= thresholds.ae_deg {
                c.push((euclidean_error(r, r_hat), j));
            }
        }
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        candidates.push(c);
    }
    let mut order: Vec<usize> = (0..targets.len()).filter(|&i| !candidates[i].is_empty()).collect();
    order.sort_by(|&a, &b| candidates[a][0].0.total_cmp(&candidates[b][0].0).then(a.cmp(&b)));
    let mut taken = vec![false; estimate.len()];
    let mut matches = Vec::new();
    for i in order {
        if let Some(&(ee, j)) = candidates[i].iter().find(|(_, j)| !taken[*j]) {
            taken[j] = true;
            let (r, r_hat) = (rel(targets[i].position), rel(estimate.spikes[j].position));
            matches.push(SourceMatch {
                target: i,
                estimate: j,
                order: targets[i].order,
                ae_deg: angular_error(r, r_hat)?,
                re: radial_error(r, r_hat),
                ee,
                amplitude_error: (targets[i].amplitude - estimate.spikes[j].amplitude).abs(),
            });
        }
    }
    matches.sort_by_key(|m| m.target);
    Ok(MatchReport {
        n_targets: targets.len(),
        n_estimates: estimate.len(),
        recall: ratio(matches.len(), targets.len()),
        precision: ratio(matches.len(), estimate.len()),
        target_orders: targets.iter().map(|t| t.order).collect(),
        matches,
    })
}

/// Source-count buckets of the per-room table: `[0, 200)`, `[200, 400)`,
/// `[400, 700)` and `700+`.
pub const SOURCE_BUCKETS: [(usize, Option<usize>); 4] = [(0, Some(200)), (200, Some(400)), (400, Some(700)), (700, None)];
pub const REPORTED_ORDERS: [u32; 4] = [0, 1, 2, 3];

pub fn bucket_label(lo: usize, hi: Option<usize>) -> String {
    match hi {
        Some(hi) => format!("{lo}-{hi}"),
        None => format!("{lo}+"),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n_targets: usize,
    pub n_estimates: usize,
    pub n_matched: usize,
    pub recall: f64,
    pub precision: Option<f64>,
    pub mean_re: Option<f64>,
    pub mean_ae_deg: Option<f64>,
    pub mean_ee: Option<f64>,
    pub mean_amplitude_error: Option<f64>,
}

impl MetricSummary {
    fn from_matches<'a>(
        n_targets: usize,
        n_estimates: Option<usize>,
        matches: impl Iterator<Item = &'a SourceMatch>,
    ) -> Self {
        let mut sums = [0.0; 4];
        let mut count = 0;
        for m in matches {
            sums[0] += m.re;
            sums[1] += m.ae_deg;
            sums[2] += m.ee;
            sums[3] += m.amplitude_error;
            count += 1;
        }
        let mean = |s: f64| (count > 0).then(|| s / count as f64);
        MetricSummary {
            n_targets,
            n_estimates: n_estimates.unwrap_or(0),
            n_matched: count,
            recall: ratio(count, n_targets),
            precision: n_estimates.map(|n| ratio(count, n)),
            mean_re: mean(sums[0]),
            mean_ae_deg: mean(sums[1]),
            mean_ee: mean(sums[2]),
            mean_amplitude_error: mean(sums[3]),
        }
    }
}

/// Metrics restricted to targets of one reflection order. Precision is not
/// defined per order.
pub fn order_summary(report: &MatchReport, order: u32) -> MetricSummary {
    let n = report.target_orders.iter().filter(|&&o| o == Some(order)).count();
    MetricSummary::from_matches(n, None, report.matches.iter().filter(|m| m.order == Some(order)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub n_scenarios: usize,
    pub summary: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub order: u32,
    pub summary: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateTables {
    pub by_sources: Vec<BucketRow>,
    pub by_order: Vec<OrderRow>,
    pub overall: MetricSummary,
}

/// Pools all matches of the reports, bucketed by each report's target count
/// and by reflection order. Means are taken over matched sources.
pub fn aggregate(reports: &[MatchReport]) -> AggregateTables {
    let pooled = |rs: &[&MatchReport]| {
        MetricSummary::from_matches(
            rs.iter().map(|r| r.n_targets).sum(),
            Some(rs.iter().map(|r| r.n_estimates).sum()),
            rs.iter().flat_map(|r| r.matches.iter()),
        )
    };
    let by_sources = SOURCE_BUCKETS
        .iter()
        .map(|&(lo, hi)| {
            let rs: Vec<&MatchReport> = reports
                .iter()
                .filter(|r| r.n_targets >= lo && hi.is_none_or(|h| r.n_targets < h))
                .collect();
            BucketRow { bucket: bucket_label(lo, hi), n_scenarios: rs.len(), summary: pooled(&rs) }
        })
        .collect();
    let by_order = REPORTED_ORDERS
        .iter()
        .map(|&order| {
            let n = reports
                .iter()
                .map(|r| r.target_orders.iter().filter(|&&o| o == Some(order)).count())
                .sum();
            let summary = MetricSummary::from_matches(
                n,
                None,
                reports.iter().flat_map(|r| r.matches.iter()).filter(|m| m.order == Some(order)),
            );
            OrderRow { order, summary }
        })
        .collect();
    let all: Vec<&MatchReport> = reports.iter().collect();
    AggregateTables { by_sources, by_order, overall: pooled(&all) }
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map(|x| format!("{:.4}", x * scale)).unwrap_or_default()
}

/// Per-bucket table; distances in millimeters, angles in degrees, rates in
/// percent.
pub fn write_bucket_table<W: std::io::Write>(w: W, tables: &AggregateTables) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "sources", "scenarios", "targets", "recall_pct", "precision_pct", "re_mm", "ae_deg", "ee_mm", "ame",
    ])?;
    for row in &tables.by_sources {
        let s = &row.summary;
        out.write_record([
            row.bucket.clone(),
            row.n_scenarios.to_string(),
            s.n_targets.to_string(),
            format!("{:.2}", 100.0 * s.recall),
            fmt_opt(s.precision, 100.0),
            fmt_opt(s.mean_re, 1000.0),
            fmt_opt(s.mean_ae_deg, 1.0),
            fmt_opt(s.mean_ee, 1000.0),
            fmt_opt(s.mean_amplitude_error, 1.0),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-order table with the same units as [`write_bucket_table`].
pub fn write_order_table<W: std::io::Write>(w: W, tables: &AggregateTables) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["order", "targets", "recall_pct", "re_mm", "ae_deg", "ee_mm", "ame"])?;
    for row in &tables.by_order {
        let s = &row.summary;
        out.write_record([
            row.order.to_string(),
            s.n_targets.to_string(),
            format!("{:.2}", 100.0 * s.recall),
            fmt_opt(s.mean_re, 1000.0),
            fmt_opt(s.mean_ae_deg, 1.0),
            fmt_opt(s.mean_ee, 1000.0),
            fmt_opt(s.mean_amplitude_error, 1.0),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub dataset: DatasetSpec,
    pub fs: f64,
    pub t_max: f64,
    pub max_order: u32,
    /// Kernel; the sinc low-pass at `fs` when absent.
    pub kernel: Option<FilterKernel>,
    pub psnr_db: Option<f64>,
    pub noise_seed: u64,
    pub solver: SolverConfig,
    pub thresholds: MatchThresholds,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dataset: DatasetSpec::default(),
            fs: 24_000.0,
            t_max: 0.05,
            max_order: 20,
            kernel: None,
            psnr_db: None,
            noise_seed: 0,
            solver: SolverConfig::default(),
            thresholds: MatchThresholds::default(),
        }
    }
}

impl BenchConfig {
    pub fn kernel(&self) -> FilterKernel {
        self.kernel.unwrap_or(FilterKernel::SincLowpass { fs: self.fs })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub index: usize,
    pub n_image_sources: usize,
    pub report: MatchReport,
    pub recovery: RecoveryResult,
}

/// Simulates, solves and scores one scenario.
pub fn run_scenario(config: &BenchConfig, scenario: &Scenario, index: usize) -> Result<ScenarioOutcome> {
    let spec = SamplingSpec::from_duration(config.fs, config.t_max)?;
    let (mut obs, set) = synthesize_rir(scenario, config.kernel(), spec, config.max_order)?;
    if let Some(psnr) = config.psnr_db {
        obs = obs.add_noise(psnr, config.noise_seed.wrapping_add(index as u64))?;
    }
    let visible = observable_subset(&set, &scenario.array, spec.t_max(), scenario.c, config.solver.eps_excl);
    let recovery = solve(&obs, &config.solver)?;
    let targets = Target::from_sources(&visible);
    let report = match_and_score(&targets, &recovery.measure, scenario.array.center(), config.thresholds)?;
    Ok(ScenarioOutcome { index, n_image_sources: visible.len(), report, recovery })
}

/// Runs every scenario of the dataset on a pool of `jobs` workers.
pub fn run_bench(config: &BenchConfig, jobs: usize) -> Result<(Vec<ScenarioOutcome>, AggregateTables)> {
    config.solver.validate()?;
    let scenarios = generate_dataset(&config.dataset)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<ScenarioOutcome> = pool.install(|| {
        scenarios
            .par_iter()
            .enumerate()
            .map(|(i, s)| run_scenario(config, s, i))
            .collect::<Result<_>>()
    })?;
    let reports: Vec<MatchReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    Ok((outcomes, aggregate(&reports)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Spike;

    fn measure(points: &[Vec3]) -> SparseMeasure {
        SparseMeasure::new(points.iter().map(|&p| Spike { amplitude: 0.5, position: p }).collect()).unwrap()
    }

    fn targets(points: &[Vec3]) -> Vec<Target> {
        points.iter().map(|&p| Target { position: p, amplitude: 0.5, order: Some(1) }).collect()
    }

    #[test]
    fn error_metrics() {
        let x = Vec3::new(1.0, 0.0, 0.0);
        assert!((angular_error(x, Vec3::new(0.0, 1.0, 0.0)).unwrap() - 90.0).abs() < 1e-12);
        let r = Vec3::new(0.3, -1.2, 2.0);
        assert_eq!(angular_error(r, r * 2.0).unwrap(), 0.0);
        assert_eq!(radial_error(r, r * 2.0), r.norm());
        assert_eq!(euclidean_error(r, r), 0.0);
        assert!(angular_error(Vec3::ZERO, x).is_err());
        // no NaN from rounding just past ±1
        assert!(angular_error(r, r * 3.0000001).unwrap().is_finite());
    }

    #[test]
    fn identical_sets_match_fully() {
        let pts = [Vec3::new(1.0, 2.0, 0.5), Vec3::new(-3.0, 0.2, 1.0)];
        let rep = match_and_score(&targets(&pts), &measure(&pts), Vec3::ZERO, MatchThresholds::default()).unwrap();
        assert_eq!((rep.recall, rep.precision), (1.0, 1.0));
        assert!(rep.matches.iter().all(|m| m.ee == 0.0 && m.amplitude_error == 0.0));
    }

    #[test]
    fn duplicate_estimates_count_once() {
        let t = Vec3::new(2.0, 0.0, 0.0);
        let est = [Vec3::new(2.003, 0.0, 0.0), Vec3::new(2.001, 0.0, 0.0)];
        let rep = match_and_score(&targets(&[t]), &measure(&est), Vec3::ZERO, MatchThresholds::default()).unwrap();
        assert_eq!(rep.matches.len(), 1);
        assert_eq!(rep.matches[0].estimate, 1);
        assert_eq!(rep.precision, 0.5);
    }

    #[test]
    fn radial_displacement_beyond_threshold_is_unmatched() {
        let t = Vec3::new(0.0, 3.0, 0.0);
        let rep = match_and_score(&targets(&[t]), &measure(&[Vec3::new(0.0, 3.02, 0.0)]), Vec3::ZERO, MatchThresholds::default())
            .unwrap();
        assert_eq!(rep.recall, 0.0);
    }

    #[test]
    fn empty_sets() {
        let rep = match_and_score(&[], &SparseMeasure::default(), Vec3::ZERO, MatchThresholds::default()).unwrap();
        assert_eq!((rep.recall, rep.precision), (1.0, 1.0));
    }

    #[test]
    fn dataset_is_reproducible_and_valid() {
        let spec = DatasetSpec { n_rooms: 20, rng_seed: 5, ..Default::default() };
        let a = generate_dataset(&spec).unwrap();
        assert_eq!(a, generate_dataset(&spec).unwrap());
        for s in &a {
            assert!(s.room.wall_clearance(s.array.center()) >= 0.25);
            assert!(s.src.distance(s.array.center()) >= 1.0);
            assert_eq!(s.array.len(), 32);
        }
        assert_ne!(a[0], a[1]);
        assert_eq!(generate_scenario(&spec, 7).unwrap(), a[7]);
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let spec = DatasetSpec { height_range: [0.4, 0.5], ..Default::default() };
        assert!(generate_dataset(&spec).is_err());
        let spec = DatasetSpec { length_range: [3.0, 2.0], ..Default::default() };
        assert!(generate_dataset(&spec).is_err());
    }

    #[test]
    fn buckets_partition_reports() {
        let mk = |n: usize| MatchReport {
            matches: Vec::new(),
            n_targets: n,
            n_estimates: 0,
            recall: 0.0,
            precision: 1.0,
            target_orders: vec![Some(0); n],
        };
        let reports: Vec<MatchReport> = [0, 199, 200, 450, 699, 700, 1500].into_iter().map(mk).collect();
        let t = aggregate(&reports);
        let counts: Vec<usize> = t.by_sources.iter().map(|r| r.n_scenarios).collect();
        assert_eq!(counts, vec![2, 1, 2, 2]);
        assert_eq!(t.by_order[0].summary.n_targets, reports.iter().map(|r| r.n_targets).sum::<usize>());
    }
}
