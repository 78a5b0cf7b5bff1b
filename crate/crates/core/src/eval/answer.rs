use rand::Rng;

use super::grid::GridCell;
use crate::error::{Error, Result};
use crate::rng;
use crate::synth::Label;

pub const NORMAL_ANSWER: &str = "No, there are no abnormalities in the image.";

/// Abnormal answer templates; `{position}` receives the cell labels.
pub const ABNORMAL_TEMPLATES: [&str; 4] = [
    "Yes, the anomaly is visible at {position}.",
    "Yes, there is an anomaly in the image; it's at the {position}.",
    "Yes, an abnormal region appears at {position}.",
    "Yes, the image is abnormal; the defect lies at {position}.",
];

/// Renders the template with index `template` directly.
pub fn render_with_template(cells: &[GridCell], template: usize) -> Result<String> {
    if cells.is_empty() {
        return Err(Error::Input("an abnormal answer needs at least one position cell".into()));
    }
    let t = ABNORMAL_TEMPLATES
        .get(template)
        .ok_or_else(|| Error::Input(format!("template {template} outside 0..{}", ABNORMAL_TEMPLATES.len())))?;
    let mut sorted = cells.to_vec();
    sorted.sort();
    sorted.dedup();
    let position = sorted.iter().map(|c| c.label()).collect::<Vec<_>>().join(", ");
    Ok(t.replace("{position}", &position))
}

/// The fixed sentence for normal images; for abnormal ones a seeded choice of
/// template with cell labels in ascending id order.
pub fn render_answer(label: Label, cells: &[GridCell], template_seed: u64) -> Result<String> {
    match label {
        Label::Normal => Ok(NORMAL_ANSWER.to_string()),
        Label::Abnormal => {
            let idx = rng::stream(template_seed, 0xa115).random_range(0..ABNORMAL_TEMPLATES.len());
            render_with_template(cells, idx)
        }
    }
}
