use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::control::model::DutyModel;
use crate::error::{Channel, Error, Result};
use crate::pattern::RateSchedule;

/// The two fitted channel models used to render schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModels {
    pub valve: DutyModel,
    pub led: DutyModel,
}

impl ChannelModels {
    pub fn exact(params: &crate::plant::PlantParams) -> Self {
        ChannelModels { valve: DutyModel::exact(Channel::Valve, params), led: DutyModel::exact(Channel::Led, params) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub start: f64,
    pub end: f64,
    pub duty: f64,
    pub active: bool,
}

/// Per-channel duty commands over one presentation. An inactive entry has
/// duty 0, which is distinct from running at the bottom of the duty range.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuatorTimeline {
    pub duration: f64,
    pub valve: Vec<TimelineEntry>,
    pub led: Vec<TimelineEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TimelineRow {
    channel: Channel,
    #[serde(rename = "start_s")]
    start: f64,
    #[serde(rename = "end_s")]
    end: f64,
    duty: f64,
    active: bool,
}

impl ActuatorTimeline {
    /// Both channels idle for `duration` seconds.
    pub fn idle(duration: f64) -> Self {
        ActuatorTimeline { duration, ..Default::default() }
    }

    pub fn channel(&self, channel: Channel) -> &[TimelineEntry] {
        match channel {
            Channel::Valve => &self.valve,
            Channel::Led => &self.led,
        }
    }

    fn channel_mut(&mut self, channel: Channel) -> &mut Vec<TimelineEntry> {
        match channel {
            Channel::Valve => &mut self.valve,
            Channel::Led => &mut self.led,
        }
    }

    /// Append, merging with the previous entry when the command is unchanged.
    fn extend(&mut self, channel: Channel, entry: TimelineEntry) {
        let entries = self.channel_mut(channel);
        match entries.last_mut() {
            Some(last) if last.end == entry.start && last.duty == entry.duty && last.active == entry.active => {
                last.end = entry.end;
            }
            _ => entries.push(entry),
        }
    }

    /// Command in effect at time `t` on one channel; `None` outside any entry.
    pub fn entry_at(&self, channel: Channel, t: f64) -> Option<&TimelineEntry> {
        let entries = self.channel(channel);
        let idx = entries.partition_point(|e| e.end <= t);
        entries.get(idx).filter(|e| e.start <= t)
    }

    pub fn validate(&self) -> Result<()> {
        for channel in [Channel::Valve, Channel::Led] {
            let mut cursor = 0.0;
            for (i, e) in self.channel(channel).iter().enumerate() {
                if e.start != cursor || !(e.end > e.start) {
                    return Err(Error::invalid(format!("{channel} entry {i} breaks contiguity")));
                }
                if !(0.0..=1.0).contains(&e.duty) {
                    return Err(Error::invalid(format!("{channel} entry {i} duty {} outside [0, 1]", e.duty)));
                }
                cursor = e.end;
            }
            if cursor > self.duration {
                return Err(Error::invalid(format!("{channel} runs past the timeline duration")));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let rows = [Channel::Valve, Channel::Led].into_iter().flat_map(|channel| {
            self.channel(channel)
                .iter()
                .map(move |e| TimelineRow { channel, start: e.start, end: e.end, duty: e.duty, active: e.active })
        });
        let mut any = false;
        for row in rows {
            out.serialize(row)?;
            any = true;
        }
        if !any {
            out.write_record(["channel", "start_s", "end_s", "duty", "active"])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut timeline = ActuatorTimeline::default();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: TimelineRow = row?;
            timeline.duration = timeline.duration.max(row.end);
            timeline
                .channel_mut(row.channel)
                .push(TimelineEntry { start: row.start, end: row.end, duty: row.duty, active: row.active });
        }
        timeline.validate()?;
        Ok(timeline)
    }
}

/// Render a rate schedule as duty commands.
///
/// The valve holds the duty for the schedule's cooling rate throughout. On
/// segments whose target exceeds that rate the LEDs supply the difference,
/// `target - v_c`; elsewhere they are inactive.
pub fn schedule_to_timeline(schedule: &RateSchedule, models: &ChannelModels) -> Result<ActuatorTimeline> {
    let valve_duty = models.valve.invert(schedule.cooling_rate).map_err(|e| e.with_context("segment 0"))?;
    let mut timeline = ActuatorTimeline::idle(schedule.duration);
    for (i, seg) in schedule.segments.iter().enumerate() {
        timeline.extend(Channel::Valve, TimelineEntry { start: seg.start, end: seg.end, duty: valve_duty, active: true });
        let led = if seg.warm_active {
            let duty = models
                .led
                .invert(seg.target_rate - schedule.cooling_rate)
                .map_err(|e| e.with_context(format!("segment {i}")))?;
            TimelineEntry { start: seg.start, end: seg.end, duty, active: true }
        } else {
            TimelineEntry { start: seg.start, end: seg.end, duty: 0.0, active: false }
        };
        timeline.extend(Channel::Led, led);
    }
    Ok(timeline)
}
