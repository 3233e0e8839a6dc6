//! Config emission for dataset-size and asset ablation studies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::GenerationConfig;
use crate::error::{Error, Result};

use super::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    Full,
    NoClothing,
    NoHairOrClothing,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 3] = [Self::Full, Self::NoClothing, Self::NoHairOrClothing];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoClothing => "no-clothing",
            Self::NoHairOrClothing => "no-hair-or-clothing",
        }
    }

    pub fn apply(self, config: &mut GenerationConfig) {
        config.ablation.hair_enabled = self != Self::NoHairOrClothing;
        config.ablation.clothing_enabled = self == Self::Full;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub name: String,
    pub sample_count: u64,
    pub variant: AblationVariant,
    pub config_file: String,
    #[serde(skip)]
    pub config: GenerationConfig,
}

/// One entry per (sample count, variant) pair, counts in the order given.
pub fn sweep_plan(base: &GenerationConfig, counts: &[u64], variants: &[AblationVariant]) -> Result<Vec<SweepEntry>> {
    if counts.is_empty() || variants.is_empty() {
        return Err(Error::config("sweep needs at least one sample count and one variant"));
    }
    if counts.contains(&0) {
        return Err(Error::config("sweep sample counts must be at least 1"));
    }
    let mut out = Vec::new();
    for &count in counts {
        for &variant in variants {
            let mut config = base.clone();
            variant.apply(&mut config);
            config.validate()?;
            let name = format!("{}-{count}", variant.name());
            out.push(SweepEntry { config_file: format!("{name}.toml"), name, sample_count: count, variant, config });
        }
    }
    Ok(out)
}

/// Writes one config per entry plus a `sweep.json` index into `dir`.
pub fn write_sweep(dir: &Path, plan: &[SweepEntry]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for entry in plan {
        write_atomic(&dir.join(&entry.config_file), entry.config.to_toml().as_bytes())?;
    }
    let index = serde_json::to_string_pretty(plan).expect("sweep index serializes");
    write_atomic(&dir.join("sweep.json"), index.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_matches_requested_counts() {
        let counts = [1000, 10_000, 100_000];
        let plan = sweep_plan(&GenerationConfig::default(), &counts, &AblationVariant::ALL).unwrap();
        assert_eq!(plan.len(), 9);
        let full: Vec<u64> = plan.iter().filter(|e| e.variant == AblationVariant::Full).map(|e| e.sample_count).collect();
        assert_eq!(full, counts);
        let bare = plan.iter().find(|e| e.variant == AblationVariant::NoHairOrClothing).unwrap();
        assert!(!bare.config.ablation.hair_enabled && !bare.config.ablation.clothing_enabled);
        let no_cloth = plan.iter().find(|e| e.variant == AblationVariant::NoClothing).unwrap();
        assert!(no_cloth.config.ablation.hair_enabled && !no_cloth.config.ablation.clothing_enabled);
        assert!(sweep_plan(&GenerationConfig::default(), &[0], &AblationVariant::ALL).is_err());
    }

    #[test]
    fn written_configs_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let plan = sweep_plan(&GenerationConfig::default(), &[5], &[AblationVariant::NoClothing]).unwrap();
        write_sweep(dir.path(), &plan).unwrap();
        let back = GenerationConfig::load(&dir.path().join("no-clothing-5.toml")).unwrap();
        assert_eq!(back, plan[0].config);
        let index: Vec<SweepEntry> = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
        assert_eq!(index[0].sample_count, 5);
    }
}
