//! Fault-injection campaigns: paired fault-free/faulty runs, outcome
//! aggregation and the cross-set comparison report.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::{classify, ErrorModel, FaultSpec, Interpreter, OutcomeKind, RunConfig, Status};
use crate::ir::Function;
use crate::kernels::{self, KernelError, KernelSpec, DIC_CAP};
use crate::transform::{transform, TransformError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Native,
    Presage,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Native => "native",
            Variant::Presage => "presage",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "native" => Ok(Variant::Native),
            "presage" => Ok(Variant::Presage),
            other => Err(format!("unknown variant `{other}` (expected native or presage)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub kernel: String,
    pub variant: Variant,
    pub model: ErrorModel,
    pub runs: u64,
    pub seed: u64,
    /// Faulty runs longer than this many times the fault-free dynamic
    /// instruction count are hangs.
    pub budget_multiplier: u64,
}

impl CampaignConfig {
    pub fn new(kernel: &str, variant: Variant, model: ErrorModel, runs: u64, seed: u64) -> Self {
        CampaignConfig {
            kernel: kernel.to_string(),
            variant,
            model,
            runs,
            seed,
            budget_multiplier: 10,
        }
    }

    /// Set label, e.g. `presage_em1`.
    pub fn set_name(&self) -> String {
        format!("{}_{}", self.variant.as_str(), self.model.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("transform failed: {0}")]
    Transform(#[from] TransformError),
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("budget multiplier must be at least 1")]
    ZeroBudget,
    #[error("run {run}: fault-free execution did not complete ({status:?})")]
    FaultFree { run: u64, status: Status },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunOutcome {
    Sdc,
    Benign,
    Crash,
    Hang,
    NoSite,
}

impl RunOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            RunOutcome::Sdc => "sdc",
            RunOutcome::Benign => "benign",
            RunOutcome::Crash => "crash",
            RunOutcome::Hang => "hang",
            RunOutcome::NoSite => "no-site",
        }
    }
}

impl From<OutcomeKind> for RunOutcome {
    fn from(k: OutcomeKind) -> Self {
        match k {
            OutcomeKind::Sdc => RunOutcome::Sdc,
            OutcomeKind::Benign => RunOutcome::Benign,
            OutcomeKind::Crash => RunOutcome::Crash,
            OutcomeKind::Hang => RunOutcome::Hang,
        }
    }
}

/// One experimental run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: u64,
    pub input_seed: u64,
    /// Eligible dynamic instances in the fault-free run.
    pub sites: u64,
    pub k: Option<u64>,
    pub bit: Option<u32>,
    pub outcome: RunOutcome,
    pub detected: bool,
    pub fault_free_dic: u64,
    pub fault_free_detections: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub sdc: u64,
    pub benign: u64,
    pub crash: u64,
    pub hang: u64,
    pub no_site: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.sdc + self.benign + self.crash + self.hang + self.no_site
    }

    /// Runs that received a fault.
    pub fn injected(&self) -> u64 {
        self.total() - self.no_site
    }
}

/// Outcome fractions over injected runs (`no-site` runs excluded).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub sdc: f64,
    pub benign: f64,
    pub crash: f64,
    pub hang: f64,
    pub crash_or_hang: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub counts: Counts,
    pub detected_sdc: u64,
    pub detected_total: u64,
    pub rates: Rates,
    /// `detected_sdc / sdc`; null without SDCs.
    pub detection_rate: Option<f64>,
    /// Mean fault-free dynamic instruction count.
    pub mean_dic: f64,
    /// Mean presage over mean native fault-free dic; filled by
    /// [`compare_report`].
    pub dic_overhead: Option<f64>,
    /// Detector firings summed over all fault-free runs.
    pub fault_free_detections: u64,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

impl CampaignResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

/// The function a campaign injects into.
pub fn campaign_function(spec: &KernelSpec, variant: Variant) -> Result<Function, CampaignError> {
    let f = spec.build();
    Ok(match variant {
        Variant::Native => f,
        Variant::Presage => transform(&f)?.0,
    })
}

/// Random stream for run `run` of a campaign seeded with `seed`.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    if cfg.runs == 0 {
        return Err(CampaignError::NoRuns);
    }
    if cfg.budget_multiplier == 0 {
        return Err(CampaignError::ZeroBudget);
    }
    let spec = kernels::spec(&cfg.kernel)?;
    let f = campaign_function(&spec, cfg.variant)?;
    let interp = Interpreter::new(&f);
    let records: Vec<RunRecord> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| one_run(&interp, &spec, cfg, run))
        .collect::<Result<_, _>>()?;
    Ok(aggregate(cfg, records))
}

fn one_run(
    interp: &Interpreter<'_>,
    spec: &KernelSpec,
    cfg: &CampaignConfig,
    run: u64,
) -> Result<RunRecord, CampaignError> {
    let mut rng = run_rng(cfg.seed, run);
    let input_seed: u64 = rng.gen();
    let (mem, args) = kernels::gen_inputs_for(interp.function(), spec, input_seed);
    let ff = interp
        .run(&mem, &args, &RunConfig::fault_free(DIC_CAP))
        .expect("generated arguments match the kernel");
    if ff.status != Status::Completed {
        return Err(CampaignError::FaultFree { run, status: ff.status });
    }
    let sites = ff.eligible(cfg.model);
    let mut record = RunRecord {
        run,
        input_seed,
        sites,
        k: None,
        bit: None,
        outcome: RunOutcome::NoSite,
        detected: false,
        fault_free_dic: ff.dic,
        fault_free_detections: ff.detect_count,
    };
    if sites == 0 {
        return Ok(record);
    }
    let k = rng.gen_range(1..=sites);
    let bit = rng.gen_range(0..64u32);
    let faulty = interp
        .run(
            &mem,
            &args,
            &RunConfig {
                budget: ff.dic.saturating_mul(cfg.budget_multiplier),
                fault: Some(FaultSpec { model: cfg.model, k, bit }),
                trace: false,
            },
        )
        .expect("generated arguments match the kernel");
    let outcome = classify(&ff, &faulty).expect("fault-free run completed");
    record.k = Some(k);
    record.bit = Some(bit);
    record.outcome = outcome.kind.into();
    record.detected = outcome.detected;
    Ok(record)
}

fn aggregate(cfg: &CampaignConfig, records: Vec<RunRecord>) -> CampaignResult {
    let mut counts = Counts::default();
    let (mut detected_sdc, mut detected_total, mut ff_det, mut dic_sum) = (0, 0, 0, 0u128);
    for r in &records {
        match r.outcome {
            RunOutcome::Sdc => counts.sdc += 1,
            RunOutcome::Benign => counts.benign += 1,
            RunOutcome::Crash => counts.crash += 1,
            RunOutcome::Hang => counts.hang += 1,
            RunOutcome::NoSite => counts.no_site += 1,
        }
        if r.detected {
            detected_total += 1;
            if r.outcome == RunOutcome::Sdc {
                detected_sdc += 1;
            }
        }
        ff_det += r.fault_free_detections;
        dic_sum += u128::from(r.fault_free_dic);
    }
    let n = counts.injected();
    let frac = |c: u64| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let rates = Rates {
        sdc: frac(counts.sdc),
        benign: frac(counts.benign),
        crash: frac(counts.crash),
        hang: frac(counts.hang),
        crash_or_hang: frac(counts.crash + counts.hang),
    };
    CampaignResult {
        config: cfg.clone(),
        counts,
        detected_sdc,
        detected_total,
        rates,
        detection_rate: (counts.sdc > 0).then(|| detected_sdc as f64 / counts.sdc as f64),
        mean_dic: dic_sum as f64 / records.len().max(1) as f64,
        dic_overhead: None,
        fault_free_detections: ff_det,
        records,
    }
}

/// Rates of one experiment set in the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSummary {
    pub runs: u64,
    pub no_site: u64,
    pub sdc_rate: f64,
    pub benign_rate: f64,
    pub crash_rate: f64,
    pub hang_rate: f64,
    pub crash_or_hang_rate: f64,
    pub detection_rate: Option<f64>,
    pub mean_dic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelComparison {
    pub kernel: String,
    /// Keyed by `native_em1`, `native_em2`, `presage_em1`, `presage_em2`;
    /// null for sets not supplied.
    pub sets: BTreeMap<String, Option<SetSummary>>,
    /// Presage minus native crash rate, per error model.
    pub crash_delta: BTreeMap<String, Option<f64>>,
    /// Presage minus native crash-or-hang rate, per error model.
    pub crash_or_hang_delta: BTreeMap<String, Option<f64>>,
    /// Presage SDC detection rate, per error model.
    pub detection_rate: BTreeMap<String, Option<f64>>,
    pub dic_overhead: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub kernels: Vec<KernelComparison>,
    /// The inputs, with `dic_overhead` filled in for presage sets.
    pub campaigns: Vec<CampaignResult>,
}

const MODELS: [ErrorModel; 2] = [ErrorModel::Em1, ErrorModel::Em2];
const VARIANTS: [Variant; 2] = [Variant::Native, Variant::Presage];

/// Groups results by kernel and tabulates the four experiment sets. Missing
/// sets appear as nulls; later duplicates of a set replace earlier ones.
pub fn compare_report(results: &[CampaignResult]) -> ComparisonReport {
    let mut by_kernel: BTreeMap<String, BTreeMap<(Variant, ErrorModel), &CampaignResult>> =
        BTreeMap::new();
    let canon = |k: &str| kernels::spec(k).map(|s| s.name.to_string()).unwrap_or(k.to_string());
    for r in results {
        by_kernel
            .entry(canon(&r.config.kernel))
            .or_default()
            .insert((r.config.variant, r.config.model), r);
    }
    let mut overhead: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let kernels = by_kernel
        .iter()
        .map(|(kernel, sets)| {
            let get = |v: Variant, m: ErrorModel| sets.get(&(v, m)).copied();
            let mean_dic = |v: Variant| {
                MODELS
                    .iter()
                    .find_map(|m| get(v, *m))
                    .map(|r| r.mean_dic)
            };
            let dic_overhead = match (mean_dic(Variant::Presage), mean_dic(Variant::Native)) {
                (Some(p), Some(n)) if n > 0.0 => Some(p / n),
                _ => None,
            };
            overhead.insert(kernel.clone(), dic_overhead);
            let mut table = BTreeMap::new();
            for v in VARIANTS {
                for m in MODELS {
                    let summary = get(v, m).map(|r| SetSummary {
                        runs: r.config.runs,
                        no_site: r.counts.no_site,
                        sdc_rate: r.rates.sdc,
                        benign_rate: r.rates.benign,
                        crash_rate: r.rates.crash,
                        hang_rate: r.rates.hang,
                        crash_or_hang_rate: r.rates.crash_or_hang,
                        detection_rate: r.detection_rate,
                        mean_dic: r.mean_dic,
                    });
                    table.insert(format!("{}_{}", v.as_str(), m.as_str()), summary);
                }
            }
            let delta = |pick: fn(&Rates) -> f64| {
                MODELS
                    .iter()
                    .map(|m| {
                        let d = match (get(Variant::Presage, *m), get(Variant::Native, *m)) {
                            (Some(p), Some(n)) => Some(pick(&p.rates) - pick(&n.rates)),
                            _ => None,
                        };
                        (m.as_str().to_string(), d)
                    })
                    .collect()
            };
            KernelComparison {
                kernel: kernel.clone(),
                sets: table,
                crash_delta: delta(|r| r.crash),
                crash_or_hang_delta: delta(|r| r.crash_or_hang),
                detection_rate: MODELS
                    .iter()
                    .map(|m| {
                        let rate = get(Variant::Presage, *m).and_then(|r| r.detection_rate);
                        (m.as_str().to_string(), rate)
                    })
                    .collect(),
                dic_overhead,
            }
        })
        .collect();
    let campaigns = results
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.config.variant == Variant::Presage {
                r.dic_overhead = overhead.get(&canon(&r.config.kernel)).copied().flatten();
            }
            r
        })
        .collect();
    ComparisonReport { kernels, campaigns }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_conserved_and_rates_bounded() {
        let r = run_campaign(&CampaignConfig::new("foo1", Variant::Native, ErrorModel::Em1, 40, 3)).unwrap();
        assert_eq!(r.counts.total(), 40);
        assert_eq!(r.records.len(), 40);
        for x in [r.rates.sdc, r.rates.benign, r.rates.crash, r.rates.hang] {
            assert!((0.0..=1.0).contains(&x));
        }
        assert_eq!(r.fault_free_detections, 0);
    }

    #[test]
    fn zero_runs_is_rejected() {
        let cfg = CampaignConfig::new("foo1", Variant::Native, ErrorModel::Em1, 0, 3);
        assert!(matches!(run_campaign(&cfg), Err(CampaignError::NoRuns)));
    }

    #[test]
    fn unknown_kernel_is_rejected() {
        let cfg = CampaignConfig::new("nope", Variant::Native, ErrorModel::Em1, 1, 3);
        assert!(matches!(run_campaign(&cfg), Err(CampaignError::Kernel(_))));
    }

    #[test]
    fn detection_rate_is_null_without_sdcs() {
        let cfg = CampaignConfig::new("foo1", Variant::Native, ErrorModel::Em1, 1, 0);
        let rec = RunRecord {
            run: 0,
            input_seed: 0,
            sites: 3,
            k: Some(1),
            bit: Some(63),
            outcome: RunOutcome::Crash,
            detected: false,
            fault_free_dic: 10,
            fault_free_detections: 0,
        };
        let r = aggregate(&cfg, vec![rec]);
        assert_eq!(r.detection_rate, None);
        assert_eq!(r.rates.crash, 1.0);
    }

    #[test]
    fn no_site_runs_leave_the_denominator() {
        let cfg = CampaignConfig::new("foo1", Variant::Native, ErrorModel::Em1, 2, 0);
        let base = RunRecord {
            run: 0,
            input_seed: 0,
            sites: 0,
            k: None,
            bit: None,
            outcome: RunOutcome::NoSite,
            detected: false,
            fault_free_dic: 10,
            fault_free_detections: 0,
        };
        let sdc = RunRecord {
            sites: 1,
            outcome: RunOutcome::Sdc,
            ..base
        };
        let r = aggregate(&cfg, vec![base, sdc]);
        assert_eq!(r.counts.no_site, 1);
        assert_eq!(r.rates.sdc, 1.0);
        assert_eq!(r.detection_rate, Some(0.0));
    }

    #[test]
    fn missing_sets_are_null_in_the_comparison() {
        let r = run_campaign(&CampaignConfig::new("foo1", Variant::Native, ErrorModel::Em1, 5, 1)).unwrap();
        let cmp = compare_report(&[r]);
        let k = &cmp.kernels[0];
        assert!(k.sets["native_em1"].is_some());
        assert!(k.sets["presage_em2"].is_none());
        assert_eq!(k.dic_overhead, None);
        assert_eq!(k.crash_delta["em1"], None);
    }
}
