//! Dataset-free stand-in for the income data: a noisy XOR grid over two
//! continuous features, plus an informative and an uninformative
//! categorical column and a pure-noise continuous column.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ColumnKind, ColumnSpec, Schema};
use crate::data::RawTable;

pub const POSITIVE: &str = "pos";
pub const NEGATIVE: &str = "neg";

const GRID: usize = 3;
const LABEL_NOISE: f64 = 0.08;
const COLORS: [&str; 4] = ["red", "green", "blue", "grey"];
const SHAPES: [&str; 3] = ["round", "square", "flat"];

pub fn schema() -> Schema {
    let col = |name: &str, kind| ColumnSpec {
        name: name.into(),
        kind,
    };
    Schema {
        columns: vec![
            col("x1", ColumnKind::Continuous),
            col("x2", ColumnKind::Continuous),
            col("noise", ColumnKind::Continuous),
            col("color", ColumnKind::Categorical),
            col("shape", ColumnKind::Categorical),
            col("label", ColumnKind::Label),
        ],
        header: true,
        positive_label: Some(POSITIVE.into()),
    }
}

/// Class of a point: parity of its cell in a `GRID x GRID` checkerboard
/// over `[0, 10]^2`.
pub fn grid_class(x1: f64, x2: f64) -> bool {
    let cell = |v: f64| ((v / 10.0 * GRID as f64) as usize).min(GRID - 1);
    (cell(x1) + cell(x2)) % 2 == 1
}

pub fn generate(rows: usize, seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..rows)
        .map(|_| {
            let x1: f64 = rng.random_range(0.0..10.0);
            let x2: f64 = rng.random_range(0.0..10.0);
            let noise: f64 = rng.random_range(0.0..100.0);
            let mut positive = grid_class(x1, x2);
            if rng.random_bool(LABEL_NOISE) {
                positive = !positive;
            }
            // color leans towards the label, shape is independent
            let color = if rng.random_bool(0.6) {
                if positive {
                    COLORS[rng.random_range(0..2)]
                } else {
                    COLORS[rng.random_range(2..4)]
                }
            } else {
                COLORS[rng.random_range(0..4)]
            };
            let shape = SHAPES[rng.random_range(0..SHAPES.len())];
            vec![
                format!("{x1:.4}"),
                format!("{x2:.4}"),
                format!("{noise:.3}"),
                color.to_string(),
                shape.to_string(),
                if positive { POSITIVE } else { NEGATIVE }.to_string(),
            ]
        })
        .collect();
    RawTable { schema: schema(), rows }
}

/// Writes the table as CSV with a header row.
pub fn write_csv(table: &RawTable, w: impl std::io::Write) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(table.schema.columns.iter().map(|c| c.name.as_str()))?;
    for row in &table.rows {
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}
