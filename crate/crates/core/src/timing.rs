//! Wall-clock accounting per solver subtask.

use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subtask {
    AAssembly,
    StateSystem,
    NAssembly,
    HSystem,
    PSubproblem,
}

impl Subtask {
    pub const ALL: [Subtask; 5] = [
        Subtask::AAssembly,
        Subtask::StateSystem,
        Subtask::NAssembly,
        Subtask::HSystem,
        Subtask::PSubproblem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subtask::AAssembly => "A-assembly",
            Subtask::StateSystem => "state-system",
            Subtask::NAssembly => "N-assembly",
            Subtask::HSystem => "H-system",
            Subtask::PSubproblem => "denoiser",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    totals: [Duration; 5],
    counts: [usize; 5],
}

impl Timings {
    pub fn add(&mut self, task: Subtask, d: Duration) {
        self.totals[task.slot()] += d;
        self.counts[task.slot()] += 1;
    }

    pub fn total(&self, task: Subtask) -> Duration {
        self.totals[task.slot()]
    }

    pub fn count(&self, task: Subtask) -> usize {
        self.counts[task.slot()]
    }

    pub fn merge(&mut self, other: &Timings) {
        for t in Subtask::ALL {
            self.totals[t.slot()] += other.totals[t.slot()];
            self.counts[t.slot()] += other.counts[t.slot()];
        }
    }

    pub fn accounted(&self) -> Duration {
        self.totals.iter().sum()
    }

    /// Rows of `subtask,seconds,calls`, ending with the unaccounted share of
    /// `total` as `other`.
    pub fn to_csv(&self, total: Duration) -> String {
        let mut out = String::from("subtask,seconds,calls\n");
        for t in [
            Subtask::HSystem,
            Subtask::PSubproblem,
            Subtask::NAssembly,
            Subtask::AAssembly,
            Subtask::StateSystem,
        ] {
            out.push_str(&format!(
                "{},{:.6},{}\n",
                t.name(),
                self.total(t).as_secs_f64(),
                self.count(t)
            ));
        }
        let other = total.saturating_sub(self.accounted());
        out.push_str(&format!("other,{:.6},\n", other.as_secs_f64()));
        out
    }
}
