use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{energy_to_dbfs, frame_energies};

/// Talk state of one 20 ms frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    FarEndSingleTalk,
    NearEndSingleTalk,
    DoubleTalk,
    Silence,
}

impl Activity {
    pub const ALL: [Activity; 4] =
        [Activity::FarEndSingleTalk, Activity::NearEndSingleTalk, Activity::DoubleTalk, Activity::Silence];

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::FarEndSingleTalk => "far_end_single_talk",
            Activity::NearEndSingleTalk => "near_end_single_talk",
            Activity::DoubleTalk => "double_talk",
            Activity::Silence => "silence",
        }
    }

    fn from_flags(near: bool, echo: bool) -> Self {
        match (near, echo) {
            (true, true) => Activity::DoubleTalk,
            (true, false) => Activity::NearEndSingleTalk,
            (false, true) => Activity::FarEndSingleTalk,
            (false, false) => Activity::Silence,
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activity::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown activity label '{s}'")))
    }
}

/// One label per 20 ms frame (hop 10 ms), plus the frames at which the echo
/// path changed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActivityLabels {
    pub frames: Vec<Activity>,
    pub echo_changes: Vec<usize>,
}

impl ActivityLabels {
    /// Labels from ground-truth near-end and echo stems against an absolute
    /// dBFS threshold.
    pub fn from_stems(near: &[f64], echo: &[f64], threshold_dbfs: f64) -> Result<Self> {
        if near.len() != echo.len() {
            return Err(Error::Shape(format!("near end has {} samples, echo {}", near.len(), echo.len())));
        }
        let active = |x: &[f64]| -> Vec<bool> {
            frame_energies(x).into_iter().map(|e| energy_to_dbfs(e) > threshold_dbfs).collect()
        };
        let (n, f) = (active(near), active(echo));
        Ok(Self {
            frames: n.iter().zip(&f).map(|(&a, &b)| Activity::from_flags(a, b)).collect(),
            echo_changes: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn count(&self, a: Activity) -> usize {
        self.frames.iter().filter(|&&x| x == a).count()
    }

    pub fn indices(&self, a: Activity) -> Vec<usize> {
        self.frames.iter().enumerate().filter(|(_, &x)| x == a).map(|(k, _)| k).collect()
    }

    /// One label per line. Echo-path changes are `# echo_change <frame>` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.frames.len() * 20);
        for k in &self.echo_changes {
            s.push_str(&format!("# echo_change {k}\n"));
        }
        for a in &self.frames {
            s.push_str(a.as_str());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(k) = rest.trim().strip_prefix("echo_change") {
                    let k = k.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad label line '{line}'")))?;
                    out.echo_changes.push(k);
                }
                continue;
            }
            out.frames.push(line.parse()?);
        }
        Ok(out)
    }
}
