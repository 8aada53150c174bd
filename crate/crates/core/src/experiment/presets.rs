use super::{Cell, DataConfig, ExperimentConfig, Method};
use crate::sensing::HadamardOrdering;
use crate::training::{Modulation, TrainingStrategy};
use crate::{Error, Result};

pub const PRESETS: [&str; 4] = ["table1", "table2", "fig4", "acceptance"];

const RANDOM_BANK_SEED: u64 = 7;

fn random() -> Modulation {
    Modulation::Random { seed: RANDOM_BANK_SEED }
}

fn hadamard() -> Modulation {
    Modulation::Hadamard { ordering: HadamardOrdering::Sequency }
}

/// Built-in experiment grids.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig { name: name.to_string(), ..ExperimentConfig::default() };
    let cells = match name {
        "table1" => [0.5, 0.05, 0.01, 0.001, 0.0002]
            .iter()
            .flat_map(|&r| {
                [TrainingStrategy::OneStage, TrainingStrategy::TwoStage].map(|t| Cell::image_free(r, Modulation::Learned, t))
            })
            .collect(),
        "table2" => [0.1, 0.05, 0.01, 0.0002]
            .iter()
            .flat_map(|&r| [random(), hadamard(), Modulation::Learned].map(|m| Cell::image_free(r, m, TrainingStrategy::TwoStage)))
            .collect(),
        "fig4" => {
            let mut cells = vec![Cell::clean_image()];
            for r in [1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.001, 0.0002] {
                cells.push(Cell::image_free(r, Modulation::Learned, TrainingStrategy::TwoStage));
                cells.push(Cell::baseline(r, Method::Tvrec, hadamard()));
                cells.push(Cell::baseline(r, Method::Dlrec, hadamard()));
            }
            cells
        }
        "acceptance" => return Ok(acceptance()),
        other => return Err(Error::Config(format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")))),
    };
    Ok(ExperimentConfig { cells, ..base })
}

/// The reduced desk-scale grid: quarter-size blood-smear set, narrower
/// segmentation head, stand-in corpora written on demand. Batches of 8 keep
/// the optimizer step count of the full set at batch 32.
fn acceptance() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { name: "acceptance".into(), ..ExperimentConfig::default() };
    cfg.data = DataConfig { quarter: true, synthesize: true, natural_count: 1000, ..DataConfig::default() };
    cfg.network.seg_head.base_channels = 8;
    cfg.train.batch_size = 8;
    cfg.segmenter.head.base_channels = 8;
    cfg.segmenter.batch_size = 8;
    cfg.cells = vec![
        Cell::image_free(0.01, Modulation::Learned, TrainingStrategy::TwoStage),
        Cell::image_free(0.01, Modulation::Learned, TrainingStrategy::OneStage),
        Cell::image_free(0.01, random(), TrainingStrategy::TwoStage),
        Cell::clean_image(),
        Cell::baseline(1.0, Method::Tvrec, hadamard()),
        Cell::baseline(0.01, Method::Tvrec, hadamard()),
    ];
    cfg
}
