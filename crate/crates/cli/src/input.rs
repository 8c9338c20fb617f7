//! Description input: a JSON array of `{id, text, category?}` or plain text
//! with one description per line.

use anyhow::{bail, Context, Result};
use partsynth::PartDescription;

pub fn parse_descriptions(text: &str) -> Result<Vec<PartDescription>> {
    let trimmed = text.trim_start();
    let descriptions = if trimmed.starts_with('[') {
        let parsed: Vec<PartDescription> =
            serde_json::from_str(trimmed).context("input is not a valid description array")?;
        for d in &parsed {
            d.check()?;
        }
        parsed
    } else {
        // ids follow the source line number so they stay stable when blank
        // lines are added or removed elsewhere
        text.lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| PartDescription::new(format!("line-{}", i + 1), line.trim()))
            .collect::<Result<_, _>>()?
    };
    if descriptions.is_empty() {
        bail!("input contains no descriptions");
    }
    let mut seen = std::collections::HashSet::new();
    for d in &descriptions {
        if !seen.insert(d.id.as_str()) {
            bail!("duplicate description id {:?}", d.id);
        }
    }
    Ok(descriptions)
}
