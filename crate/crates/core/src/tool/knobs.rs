//! Attribution knobs: named arg-max selectors that gate expensive context
//! (call stack) retention to the current best candidate only.

use std::collections::BTreeMap;

use super::ToolError;

pub const KNOB_MAX_MEM_REFERENCED_KERNEL: &str = "MAX_MEM_REFERENCED_KERNEL";
pub const KNOB_MAX_CALLED_KERNEL: &str = "MAX_CALLED_KERNEL";

/// What a knob maximizes over kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnobMetric {
    /// Number of launches of the kernel.
    LaunchCount,
    /// Number of memory reference events attributed to the kernel.
    MemReferenceCount,
}

/// The set of known knobs and which of them are enabled. Unknown names are
/// rejected up front with the known-name list.
#[derive(Clone, Debug)]
pub struct Knobs {
    known: BTreeMap<String, KnobMetric>,
    enabled: Vec<String>,
}

impl Default for Knobs {
    fn default() -> Self {
        Self::new()
    }
}

impl Knobs {
    pub fn new() -> Self {
        let mut known = BTreeMap::new();
        known.insert(KNOB_MAX_CALLED_KERNEL.to_string(), KnobMetric::LaunchCount);
        known.insert(
            KNOB_MAX_MEM_REFERENCED_KERNEL.to_string(),
            KnobMetric::MemReferenceCount,
        );
        Knobs {
            known,
            enabled: Vec::new(),
        }
    }

    /// Register a user-defined knob under one of the supported metrics.
    pub fn register_custom(&mut self, name: &str, metric: KnobMetric) -> Result<(), ToolError> {
        if self.known.contains_key(name) {
            return Err(ToolError::Failed(format!("knob `{name}` already exists")));
        }
        self.known.insert(name.to_string(), metric);
        Ok(())
    }

    pub fn enable(&mut self, name: &str) -> Result<(), ToolError> {
        if !self.known.contains_key(name) {
            return Err(ToolError::UnknownKnob {
                name: name.to_string(),
                known: self.known.keys().cloned().collect(),
            });
        }
        if !self.enabled.iter().any(|n| n == name) {
            self.enabled.push(name.to_string());
        }
        Ok(())
    }

    pub fn enabled(&self) -> impl Iterator<Item = (&str, KnobMetric)> {
        self.enabled
            .iter()
            .map(|name| (name.as_str(), self.known[name]))
    }

    pub fn any_enabled(&self) -> bool {
        !self.enabled.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_knob_rejected_with_known_list() {
        let mut knobs = Knobs::new();
        match knobs.enable("MAX_BOGUS") {
            Err(ToolError::UnknownKnob { name, known }) => {
                assert_eq!(name, "MAX_BOGUS");
                assert!(known.contains(&KNOB_MAX_CALLED_KERNEL.to_string()));
                assert!(known.contains(&KNOB_MAX_MEM_REFERENCED_KERNEL.to_string()));
            }
            other => panic!("expected UnknownKnob, got {other:?}"),
        }
    }

    #[test]
    fn custom_knobs_extend_the_known_set() {
        let mut knobs = Knobs::new();
        knobs
            .register_custom("MAX_HOT_KERNEL", KnobMetric::MemReferenceCount)
            .unwrap();
        knobs.enable("MAX_HOT_KERNEL").unwrap();
        assert!(knobs.any_enabled());
    }
}
