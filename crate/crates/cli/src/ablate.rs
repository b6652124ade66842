//! Ablation runner: the four-case grid {small, large sonar window} x
//! {consistency filtering on, off} over a batch of seeds, plus the
//! dead-reckoning baseline rows.

use std::fmt::Write as _;

use crate::mission::{run_mission, MissionError, RunStatus};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationCase {
    pub number: u8,
    pub large_window: bool,
    pub pcm: bool,
}

pub const CASES: [AblationCase; 4] = [
    AblationCase {
        number: 1,
        large_window: false,
        pcm: false,
    },
    AblationCase {
        number: 2,
        large_window: false,
        pcm: true,
    },
    AblationCase {
        number: 3,
        large_window: true,
        pcm: false,
    },
    AblationCase {
        number: 4,
        large_window: true,
        pcm: true,
    },
];

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub case_label: String,
    pub seed: u64,
    pub auv_id: u16,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub status: RunStatus,
}

#[derive(Debug, Clone, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,seed,auv_id,mae_m,rmse_m,status\n");
        for row in &self.rows {
            let mae = row.mae.map(|v| format!("{v:.6}")).unwrap_or_default();
            let rmse = row.rmse.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{mae},{rmse},{}",
                row.case_label,
                row.seed,
                row.auv_id,
                row.status.as_str()
            );
        }
        out
    }

    /// RMSE values of one case over seeds for one vehicle; failures and
    /// unmerged runs surface as None.
    pub fn case_rmse(&self, case_label: &str, auv_id: u16) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .filter(|r| r.case_label == case_label && r.auv_id == auv_id)
            .map(|r| match r.status {
                RunStatus::Ok => r.rmse,
                _ => None,
            })
            .collect()
    }
}

pub fn scenario_for_case(base: &Scenario, case: &AblationCase, seed: u64) -> Scenario {
    let mut scenario = base.clone();
    scenario.seed = seed;
    scenario.registration.sonar_window = if case.large_window {
        base.ablation.large_window
    } else {
        base.ablation.small_window
    };
    scenario.pcm.enabled = case.pcm;
    scenario.name = format!("{}-case{}", base.name, case.number);
    scenario
}

/// Run the full grid. Every case sees the same seeds, so rows are directly
/// comparable; a failed or unmerged run is reported, never skipped.
pub fn run_ablation(base: &Scenario, seeds: &[u64]) -> Result<AblationTable, MissionError> {
    let mut table = AblationTable::default();
    for case in &CASES {
        for &seed in seeds {
            let scenario = scenario_for_case(base, case, seed);
            let result = run_mission(&scenario)?;
            for report in &result.reports {
                table.rows.push(AblationRow {
                    case_label: format!("case{}", case.number),
                    seed,
                    auv_id: report.id,
                    mae: report.multi_robot.as_ref().map(|e| e.mae),
                    rmse: report.multi_robot.as_ref().map(|e| e.rmse),
                    status: report.status,
                });
                if case.number == 1 {
                    // Dead-reckoning baseline rows once per seed.
                    table.rows.push(AblationRow {
                        case_label: "dr-baseline".into(),
                        seed,
                        auv_id: report.id,
                        mae: Some(report.dead_reckoning.mae),
                        rmse: Some(report.dead_reckoning.rmse),
                        status: RunStatus::Ok,
                    });
                }
            }
        }
    }
    Ok(table)
}
