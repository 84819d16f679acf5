//! Score tables. External methods are fed to the harness as
//! `dataset_id,point_id,score` rows, where `point_id` is the zero-based data
//! row of the point in its dataset file. Prediction output uses the same key
//! so it can be fed straight back in.

use std::collections::BTreeMap;
use std::path::Path;

use mfgpc_core::PredictionScore;

use super::{read_text, IoError, IoResult};
use crate::format::num;

/// Scores keyed by `(dataset_id, point_id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub scores: BTreeMap<(String, usize), f64>,
}

impl ScoreTable {
    pub fn get(&self, dataset_id: &str, point_id: usize) -> Option<f64> {
        self.scores.get(&(dataset_id.to_string(), point_id)).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores for the given points, or the first missing point id.
    pub fn lookup(&self, dataset_id: &str, points: &[usize]) -> Result<Vec<f64>, usize> {
        points.iter().map(|&p| self.get(dataset_id, p).ok_or(p)).collect()
    }
}

/// Reads a score file. Extra columns are ignored, so prediction files
/// (which carry `score` next to other columns) load as well.
pub fn load_scores(path: &Path) -> IoResult<ScoreTable> {
    let text = read_text(path)?;
    let err = |line: u64, message: String| IoError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| err(1, format!("unreadable header: {e}")))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| err(reader_line(&header), format!("missing column {name:?}")))
    };
    let (id_col, point_col, score_col) = (col("dataset_id")?, col("point_id")?, col("score")?);

    let mut table = ScoreTable::default();
    for record in reader.records() {
        let record = record.map_err(|e| {
            err(
                e.position().map_or(0, |p| p.line()),
                format!("malformed row: {e}"),
            )
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let point: usize = field(point_col)
            .parse()
            .map_err(|_| err(line, format!("point_id is not a count: {:?}", field(point_col))))?;
        let score: f64 = field(score_col)
            .parse()
            .map_err(|_| err(line, format!("score is not a number: {:?}", field(score_col))))?;
        if score.is_nan() {
            return Err(err(line, "score is NaN".into()));
        }
        let key = (field(id_col).to_string(), point);
        if table.scores.insert(key, score).is_some() {
            return Err(err(line, format!("duplicate point {point}")));
        }
    }
    Ok(table)
}

fn reader_line(header: &csv::StringRecord) -> u64 {
    header.position().map_or(1, |p| p.line())
}

/// Prediction table: one row per input point, in input order.
pub fn render_predictions(
    dataset_id: &str,
    point_ids: &[usize],
    scores: &[PredictionScore],
    comments: &[String],
) -> String {
    assert_eq!(point_ids.len(), scores.len());
    let mut out = String::new();
    for c in comments {
        out.push_str(c);
        out.push('\n');
    }
    out.push_str("dataset_id,point_id,latent_mean,score,label\n");
    for (p, s) in point_ids.iter().zip(scores) {
        out.push_str(&format!(
            "{dataset_id},{p},{},{},{}\n",
            num(s.latent_mean),
            num(s.probability),
            u8::from(s.label)
        ));
    }
    out
}
