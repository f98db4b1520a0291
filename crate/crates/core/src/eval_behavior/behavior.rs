use serde::{Deserialize, Serialize};

use crate::agent::Episode;
use crate::toolset::ToolKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BehaviorClass {
    GlobalBrowseOnly,
    SimpleAction,
    IterativeSearch,
    FrameInspectTrap,
    ClipSearchTrap,
}

impl BehaviorClass {
    pub const ALL: [BehaviorClass; 5] = [
        BehaviorClass::GlobalBrowseOnly,
        BehaviorClass::SimpleAction,
        BehaviorClass::IterativeSearch,
        BehaviorClass::FrameInspectTrap,
        BehaviorClass::ClipSearchTrap,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BehaviorClass::GlobalBrowseOnly => "Global Browse Only",
            BehaviorClass::SimpleAction => "Simple Action",
            BehaviorClass::IterativeSearch => "Iterative Search",
            BehaviorClass::FrameInspectTrap => "Frame Inspect Trap",
            BehaviorClass::ClipSearchTrap => "Clip Search Trap",
        }
    }
}

fn longest_run(actions: &[ToolKind], tool: ToolKind) -> usize {
    let (mut best, mut cur) = (0, 0);
    for &a in actions {
        cur = if a == tool { cur + 1 } else { 0 };
        best = best.max(cur);
    }
    best
}

/// Adjacent ClipSearch/FrameInspect pairs that switch tool, GlobalBrowse ignored.
fn alternations(actions: &[ToolKind]) -> usize {
    let searchy: Vec<ToolKind> = actions
        .iter()
        .copied()
        .filter(|a| matches!(a, ToolKind::ClipSearch | ToolKind::FrameInspect))
        .collect();
    searchy.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Behavior class of a tool-action sequence; the first matching rule wins.
pub fn classify(actions: &[ToolKind]) -> BehaviorClass {
    if actions == [ToolKind::GlobalBrowse] {
        return BehaviorClass::GlobalBrowseOnly;
    }
    let cs = longest_run(actions, ToolKind::ClipSearch);
    let fi = longest_run(actions, ToolKind::FrameInspect);
    if fi > 3 {
        BehaviorClass::FrameInspectTrap
    } else if cs > 3 {
        BehaviorClass::ClipSearchTrap
    } else if cs <= 2 && fi <= 2 && alternations(actions) <= 1 {
        BehaviorClass::SimpleAction
    } else {
        BehaviorClass::IterativeSearch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRow {
    pub class: BehaviorClass,
    pub episodes: usize,
    pub ratio: f64,
    /// Mean step count, the Answer step included.
    pub avg_steps: f64,
    /// Fraction answered correctly; `None` when correctness is unknown.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub total: usize,
    /// Non-empty classes in canonical order.
    pub rows: Vec<BehaviorRow>,
}

impl BehaviorReport {
    pub fn row(&self, class: BehaviorClass) -> Option<&BehaviorRow> {
        self.rows.iter().find(|r| r.class == class)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<20} {:>8} {:>7} {:>9} {:>7}\n", "class", "episodes", "ratio", "avg_steps", "score");
        for r in &self.rows {
            let score = r.score.map_or_else(|| "-".to_string(), |s| format!("{s:.3}"));
            out.push_str(&format!(
                "{:<20} {:>8} {:>7.3} {:>9.2} {:>7}\n",
                r.class.label(),
                r.episodes,
                r.ratio,
                r.avg_steps,
                score
            ));
        }
        out.push_str(&format!("{:<20} {:>8}\n", "total", self.total));
        out
    }
}

/// Group episodes by class; `correct[i]` belongs to `episodes[i]`.
pub fn aggregate(episodes: &[Episode], correct: Option<&[bool]>) -> BehaviorReport {
    if let Some(c) = correct {
        assert_eq!(episodes.len(), c.len(), "correctness must align with episodes");
    }
    let total = episodes.len();
    let mut rows = Vec::new();
    for class in BehaviorClass::ALL {
        let members: Vec<usize> = (0..total).filter(|&i| classify(&episodes[i].tool_actions()) == class).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        rows.push(BehaviorRow {
            class,
            episodes: members.len(),
            ratio: n / total as f64,
            avg_steps: members.iter().map(|&i| episodes[i].steps.len() as f64).sum::<f64>() / n,
            score: correct.map(|c| members.iter().filter(|&&i| c[i]).count() as f64 / n),
        });
    }
    BehaviorReport { total, rows }
}
