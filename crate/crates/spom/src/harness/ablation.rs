//! Config-driven ablation runs.

use crate::decoder::AttentionMode;
use crate::error::Result;
use crate::harness::{train, ConfusionMatrix, TrainConfig, TrainInputs};
use crate::representation::Group;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// One experimental condition: either a representation-group subset or an
/// attention mode, trained from the shared base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AblationCondition {
    Groups {
        label: String,
        groups: BTreeSet<Group>,
    },
    Mode {
        label: String,
        mode: AttentionMode,
    },
}

fn groups(gs: &[Group]) -> BTreeSet<Group> {
    gs.iter().copied().collect()
}

/// The seven group subsets, numbered (i)-(vii), plus the two attention
/// modes.
pub fn standard_conditions() -> Vec<AblationCondition> {
    use Group::{Aligned, Narrative, Scene};
    let table = [
        ("(i) AR+NR", vec![Aligned, Narrative]),
        ("(ii) SR+NR", vec![Scene, Narrative]),
        ("(iii) SR+AR", vec![Scene, Aligned]),
        ("(iv) SR", vec![Scene]),
        ("(v) AR", vec![Aligned]),
        ("(vi) NR", vec![Narrative]),
        ("(vii) SR+AR+NR", vec![Scene, Aligned, Narrative]),
    ];
    let mut conditions: Vec<AblationCondition> = table
        .into_iter()
        .map(|(label, gs)| AblationCondition::Groups {
            label: label.to_string(),
            groups: groups(&gs),
        })
        .collect();
    conditions.push(AblationCondition::Mode {
        label: "self-attention".to_string(),
        mode: AttentionMode::SelfAttn,
    });
    conditions.push(AblationCondition::Mode {
        label: "cross-attention".to_string(),
        mode: AttentionMode::Cross,
    });
    conditions
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub groups: Vec<String>,
    pub mode: AttentionMode,
    pub accuracy: f64,
    pub test: ConfusionMatrix,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable table")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,groups,mode,accuracy,tp,fp,tn,fn,best_epoch\n");
        for row in &self.rows {
            let mode = match row.mode {
                AttentionMode::Cross => "cross",
                AttentionMode::SelfAttn => "self",
            };
            out.push_str(&format!(
                "{},{},{},{:.6},{},{},{},{},{}\n",
                row.label,
                row.groups.join("+"),
                mode,
                row.accuracy,
                row.test.true_pos,
                row.test.false_pos,
                row.test.true_neg,
                row.test.false_neg,
                row.best_epoch,
            ));
        }
        out
    }
}

/// Train and evaluate one run per condition, all under the base config's
/// seed schedule, and tabulate test accuracies.
pub fn run_ablation(
    inputs: &TrainInputs,
    base: &TrainConfig,
    conditions: &[AblationCondition],
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(conditions.len());
    for condition in conditions {
        let (label, config) = match condition {
            AblationCondition::Groups { label, groups } => (
                label.clone(),
                TrainConfig {
                    enabled_groups: groups.clone(),
                    ..base.clone()
                },
            ),
            AblationCondition::Mode { label, mode } => (
                label.clone(),
                TrainConfig {
                    mode: *mode,
                    ..base.clone()
                },
            ),
        };
        let outcome = train(inputs, &config)?;
        rows.push(AblationRow {
            label,
            groups: config
                .enabled_groups
                .iter()
                .map(|g| g.label().to_string())
                .collect(),
            mode: config.mode,
            accuracy: outcome.result.test.accuracy(),
            test: outcome.result.test,
            best_epoch: outcome.result.best_epoch,
        });
    }
    Ok(AblationTable { rows })
}
