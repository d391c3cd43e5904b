//! Range-specific analysis: restrict kernel-scoped events to a grid-id
//! window and/or to regions enclosed by labeled annotation markers.
//!
//! Object and tensor lifecycle events always pass, whatever the filter says:
//! tools need the allocation context to resolve accesses that are in range.
//! Range markers themselves also pass, which keeps filtering idempotent.

use std::collections::{BTreeSet, HashMap};

use crate::event::{Event, EventCategory, EventKind, EventPayload};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RangeFilter {
    /// Inclusive `[start, end]` grid-id window, per device.
    pub grid_window: Option<(u64, u64)>,
    /// Keep only events enclosed between RangeStart/RangeEnd markers carrying
    /// one of these labels.
    pub marker_labels: Option<BTreeSet<String>>,
}

impl RangeFilter {
    /// The empty filter passes everything.
    pub fn pass_all() -> Self {
        RangeFilter::default()
    }

    pub fn with_grid_window(start: u64, end: u64) -> Self {
        RangeFilter {
            grid_window: Some((start, end)),
            marker_labels: None,
        }
    }

    pub fn with_labels<I: IntoIterator<Item = String>>(labels: I) -> Self {
        RangeFilter {
            grid_window: None,
            marker_labels: Some(labels.into_iter().collect()),
        }
    }

    pub fn is_pass_all(&self) -> bool {
        self.grid_window.is_none() && self.marker_labels.is_none()
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some((start, end)) = self.grid_window {
            if start > end {
                return Err(format!("grid window start {start} exceeds end {end}"));
            }
        }
        Ok(())
    }

    /// Stateful filter over a stream of events.
    pub fn state(&self) -> FilterState {
        FilterState {
            filter: self.clone(),
            marker_depth: HashMap::new(),
            current_grid: HashMap::new(),
        }
    }

    /// Filter a borrowed slice (the one-shot form used by tests and tools).
    pub fn apply(&self, events: &[Event]) -> Vec<Event> {
        let mut state = self.state();
        events.iter().filter(|e| state.admit(e)).cloned().collect()
    }

    /// Wrap a fallible event stream; errors pass through untouched.
    pub fn filter_stream<E>(
        &self,
        events: impl Iterator<Item = Result<Event, E>>,
    ) -> impl Iterator<Item = Result<Event, E>> {
        let mut state = self.state();
        events.filter(move |item| match item {
            Ok(event) => state.admit(event),
            Err(_) => true,
        })
    }
}

/// See [`RangeFilter::apply`].
pub fn apply_range_filter(events: &[Event], filter: &RangeFilter) -> Vec<Event> {
    filter.apply(events)
}

pub struct FilterState {
    filter: RangeFilter,
    /// Per-device count of currently-open matching ranges.
    marker_depth: HashMap<u32, u64>,
    /// Per-device grid id of the most recent kernel launch, for device-side
    /// events that do not carry one.
    current_grid: HashMap<u32, u64>,
}

impl FilterState {
    /// Decide whether `event` passes, updating marker/kernel tracking.
    pub fn admit(&mut self, event: &Event) -> bool {
        // Lifecycle events bypass every filter.
        if matches!(
            event.kind,
            EventKind::DeviceMalloc
                | EventKind::DeviceFree
                | EventKind::DeviceSideMalloc
                | EventKind::DeviceSideFree
                | EventKind::TensorAlloc
                | EventKind::TensorReclaim
        ) {
            return true;
        }

        // Markers update the enclosure state and always pass.
        if let EventPayload::RangeMarker(info) = &event.payload {
            if let Some(labels) = &self.filter.marker_labels {
                if labels.contains(&info.label) {
                    let depth = self.marker_depth.entry(event.device).or_insert(0);
                    match event.kind {
                        EventKind::RangeStart => *depth += 1,
                        EventKind::RangeEnd => *depth = depth.saturating_sub(1),
                        _ => {}
                    }
                }
            }
            return true;
        }

        let enclosed = match &self.filter.marker_labels {
            None => true,
            Some(_) => self.marker_depth.get(&event.device).copied().unwrap_or(0) > 0,
        };

        let kernel_scoped = event.kind == EventKind::KernelLaunch
            || event.kind == EventKind::KernelComplete
            || event.kind.category() == EventCategory::DeviceOp;

        if !kernel_scoped {
            // Ambient host/framework events follow the marker enclosure only.
            return enclosed;
        }

        if event.kind == EventKind::KernelLaunch {
            if let Some(grid) = event.grid_id() {
                self.current_grid.insert(event.device, grid);
            }
        }
        let grid = event
            .grid_id()
            .or_else(|| self.current_grid.get(&event.device).copied());

        let in_window = match (self.filter.grid_window, grid) {
            (None, _) => true,
            (Some((start, end)), Some(grid)) => grid >= start && grid <= end,
            (Some(_), None) => false,
        };
        in_window && enclosed
    }
}
