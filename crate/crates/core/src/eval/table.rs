use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eval::metrics::{aggregate_seeds, benefit_ratio, BenefitInput, SeedSummary, STD_CONVENTION};
use crate::selftrain::TrainMode;
use crate::verbalizers::HeadKind;

/// Placeholder for absent cells.
pub const ABSENT: &str = "-";

/// Per-seed test accuracies (fractions in [0, 1]) of one head and mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub head: String,
    pub mode: TrainMode,
    pub accs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub head: String,
    /// Percent accuracies keyed by mode name.
    pub cells: BTreeMap<String, SeedSummary>,
    /// `None` when a mode is missing or full equals small.
    pub benefit_ratio: Option<f64>,
}

/// Heads × modes grid in percent, with a benefit ratio per head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub std_convention: String,
    pub rows: Vec<TableRow>,
}

fn head_rank(name: &str) -> (usize, String) {
    let pos = HeadKind::ALL
        .iter()
        .position(|k| k.name() == name)
        .unwrap_or(HeadKind::ALL.len());
    (pos, name.to_string())
}

pub fn compare_table(cells: &[CellResult]) -> CompareTable {
    let mut by_head: BTreeMap<(usize, String), BTreeMap<TrainMode, Vec<f64>>> = BTreeMap::new();
    for c in cells {
        by_head
            .entry(head_rank(&c.head))
            .or_default()
            .entry(c.mode)
            .or_default()
            .extend(c.accs.iter().map(|a| a * 100.0));
    }
    let rows = by_head
        .into_iter()
        .map(|((_, head), modes)| {
            let cells: BTreeMap<String, SeedSummary> = modes
                .iter()
                .filter_map(|(m, v)| aggregate_seeds(v).ok().map(|s| (m.name().to_string(), s)))
                .collect();
            let mean = |m: TrainMode| cells.get(m.name()).map(|s| s.mean);
            let ratio = match (mean(TrainMode::Small), mean(TrainMode::Semi), mean(TrainMode::Full)) {
                (Some(acc_small), Some(acc_semi), Some(acc_full)) => benefit_ratio(&BenefitInput {
                    acc_small,
                    acc_semi,
                    acc_full,
                }),
                _ => None,
            };
            TableRow {
                head,
                cells,
                benefit_ratio: ratio,
            }
        })
        .collect();
    CompareTable {
        std_convention: STD_CONVENTION.into(),
        rows,
    }
}

impl CompareTable {
    fn fields(row: &TableRow) -> Vec<String> {
        let mut f = vec![row.head.clone()];
        for m in TrainMode::ALL {
            f.push(row.cells.get(m.name()).map_or(ABSENT.into(), SeedSummary::display));
        }
        f.push(row.benefit_ratio.map_or(ABSENT.into(), |r| format!("{r:.2}")));
        f
    }

    const HEADER: [&'static str; 5] = ["head", "small", "semi", "full", "benefit_ratio"];

    pub fn to_csv(&self) -> String {
        let mut out = Self::HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&Self::fields(r).join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    /// Space-aligned columns.
    pub fn to_text(&self) -> String {
        let mut grid = vec![Self::HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        grid.extend(self.rows.iter().map(Self::fields));
        let widths: Vec<usize> = (0..Self::HEADER.len())
            .map(|i| grid.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &grid {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(head: &str, mode: TrainMode, accs: &[f64]) -> CellResult {
        CellResult {
            head: head.into(),
            mode,
            accs: accs.to_vec(),
        }
    }

    #[test]
    fn complete_grid_has_four_ratios() {
        let mut cells = Vec::new();
        for h in ["cls", "single", "multi", "mav"] {
            cells.push(cell(h, TrainMode::Small, &[0.5, 0.6]));
            cells.push(cell(h, TrainMode::Semi, &[0.6, 0.7]));
            cells.push(cell(h, TrainMode::Full, &[0.8, 0.9]));
        }
        let t = compare_table(&cells);
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows.iter().all(|r| r.benefit_ratio.is_some()));
        assert_eq!(t.rows[0].head, "cls");
        assert!((t.rows[0].benefit_ratio.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn flat_semi_gives_zero_ratio() {
        let t = compare_table(&[
            cell("mav", TrainMode::Small, &[0.5]),
            cell("mav", TrainMode::Semi, &[0.5]),
            cell("mav", TrainMode::Full, &[0.9]),
        ]);
        assert_eq!(t.rows[0].benefit_ratio, Some(0.0));
    }

    #[test]
    fn missing_cells_render_absent() {
        let t = compare_table(&[cell("single", TrainMode::Semi, &[0.75])]);
        assert_eq!(t.rows[0].benefit_ratio, None);
        assert_eq!(t.to_csv(), "head,small,semi,full,benefit_ratio\nsingle,-,75.0 (0.0),-,-\n");
        assert!(t.to_text().contains("75.0 (0.0)"));
    }

    #[test]
    fn standard_ft_column() {
        // published small/semi/full triples and ratios of the standard fine-tuning row
        let rows = [
            ((70.1, 80.2, 90.8), 0.49),
            ((80.0, 79.4, 91.2), -0.05),
            ((21.2, 21.9, 36.4), 0.05),
            ((63.4, 64.4, 68.7), 0.19),
            ((84.6, 86.3, 88.5), 0.44),
        ];
        for ((s, m, f), expect) in rows {
            let got = benefit_ratio(&BenefitInput {
                acc_small: s,
                acc_semi: m,
                acc_full: f,
            })
            .unwrap();
            assert!((got - expect).abs() <= 0.02, "{got} vs {expect}");
        }
    }
}
