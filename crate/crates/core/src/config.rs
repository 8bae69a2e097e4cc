//! Hyperparameters for the whole pipeline, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::StepPattern;
use crate::detect::{BarlineParams, NoteheadParams, StaffFeatureParams};
use crate::error::{Error, Result};
use crate::midi::MidiBootlegParams;
use crate::preprocess::PreprocessParams;
use crate::project::ProjectParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignParams {
    pub step_pattern: StepPattern,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub preprocess: PreprocessParams,
    pub notehead: NoteheadParams,
    pub staff: StaffFeatureParams,
    pub barline: BarlineParams,
    pub project: ProjectParams,
    pub midi: MidiBootlegParams,
    pub align: AlignParams,
}

/// Component switches that can be turned off (or on) one at a time.
pub const ABLATIONS: [&str; 8] = [
    "adaptive_template",
    "adaptive_resize",
    "background_subtract",
    "staffline_reestimate",
    "chord_blocks",
    "filler_repetition",
    "octave_interps",
    "clef_interps",
];

impl HyperParams {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let params: HyperParams = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        HyperParams::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("hyperparameters serialize")
    }

    /// Applies `section.key=value`; the value is read as a TOML literal and
    /// falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        if let Some(flag) = ABLATIONS.iter().find(|&&a| a == key) {
            let on = raw
                .parse::<bool>()
                .map_err(|_| Error::Config(format!("{flag} expects true or false")))?;
            return self.set_ablation(flag, on);
        }
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut doc = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let (sections, leaf) = match key.rsplit_once('.') {
            Some((head, leaf)) => (head.split('.').collect::<Vec<_>>(), leaf),
            None => (Vec::new(), key),
        };
        let mut node = &mut doc;
        for part in sections {
            node = node
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown section in `{key}`")))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not name a setting")))?;
        match table.get_mut(leaf) {
            Some(slot) => *slot = value,
            None => return Err(Error::Config(format!("unknown setting `{key}`"))),
        }
        let updated: HyperParams = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn set_ablation(&mut self, name: &str, on: bool) -> Result<()> {
        match name {
            "adaptive_template" => self.notehead.adaptive_template = on,
            "adaptive_resize" => self.preprocess.adaptive_resize = on,
            "background_subtract" => self.preprocess.background_subtract = on,
            "staffline_reestimate" => self.project.staffline_reestimate = on,
            "chord_blocks" => self.notehead.chord_blocks = on,
            "filler_repetition" => {
                self.midi.filler_repetition = on;
                self.project.filler_repetition = on;
            }
            "octave_interps" => self.midi.projection.octave_interps = on,
            "clef_interps" => self.midi.projection.clef_interps = on,
            other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
        Ok(())
    }

    pub fn ablation(&self, name: &str) -> Option<bool> {
        Some(match name {
            "adaptive_template" => self.notehead.adaptive_template,
            "adaptive_resize" => self.preprocess.adaptive_resize,
            "background_subtract" => self.preprocess.background_subtract,
            "staffline_reestimate" => self.project.staffline_reestimate,
            "chord_blocks" => self.notehead.chord_blocks,
            "filler_repetition" => self.midi.filler_repetition,
            "octave_interps" => self.midi.projection.octave_interps,
            "clef_interps" => self.midi.projection.clef_interps,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        let n = &self.notehead;
        if n.disk_diameter == 0 || n.blob_min_area == 0 || n.blob_min_area >= n.blob_max_area {
            return Err(Error::Config("notehead blob bounds must satisfy 0 < min < max".into()));
        }
        if !(n.tolerance_low > 0.0 && n.tolerance_low <= 1.0 && n.tolerance_high >= 1.0) {
            return Err(Error::Config("notehead tolerance must bracket 1".into()));
        }
        if n.chord_min_notes < 2 || n.chord_min_notes > n.chord_max_notes {
            return Err(Error::Config("chord note bounds must satisfy 2 <= min <= max".into()));
        }
        if n.fallback_height <= 0.0 || n.fallback_width <= 0.0 || n.fallback_area <= 0.0 {
            return Err(Error::Config("fallback template must be positive".into()));
        }
        let s = &self.staff;
        if s.num_columns == 0 || s.horizontal_length == 0 || s.beam_thickness == 0 {
            return Err(Error::Config("staff feature sizes must be positive".into()));
        }
        if !(s.spacing_min > 0.0 && s.spacing_min <= s.spacing_max && s.spacing_step > 0.0) {
            return Err(Error::Config("staff spacing range must be nonempty".into()));
        }
        let b = &self.barline;
        if b.straighten_length == 0 || b.vertical_length == 0 || b.thick_length == 0 {
            return Err(Error::Config("bar-line element sizes must be positive".into()));
        }
        let p = &self.project;
        if p.context_rows == 0 || p.narrow_context_rows == 0 || p.cluster_threshold <= 0.0 || p.staff_height <= 0.0 || p.max_staves == 0 {
            return Err(Error::Config("projection sizes must be positive".into()));
        }
        if self.midi.grouping_tolerance < 0.0 {
            return Err(Error::Config("grouping tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}
