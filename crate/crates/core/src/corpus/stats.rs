use serde::{Deserialize, Serialize};

use super::{AnnotatedPair, Politeness};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolitenessCounts {
    pub polite: usize,
    pub neutral: usize,
    pub rude: usize,
}

impl PolitenessCounts {
    pub fn total(&self) -> usize {
        self.polite + self.neutral + self.rude
    }

    pub fn get(&self, p: Politeness) -> usize {
        match p {
            Politeness::Polite => self.polite,
            Politeness::Neutral => self.neutral,
            Politeness::Rude => self.rude,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub yes: usize,
    pub no: usize,
}

impl BinaryCounts {
    pub fn total(&self) -> usize {
        self.yes + self.no
    }
}

/// Label fractions over the pairs labeled in each dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub polite: f64,
    pub neutral: f64,
    pub rude: f64,
    pub evidence_yes: f64,
    pub evidence_no: f64,
    pub refuting_yes: f64,
    pub refuting_no: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_pairs: usize,
    pub politeness: PolitenessCounts,
    pub evidence: BinaryCounts,
    pub refuting: BinaryCounts,
    pub proportions: Proportions,
}

fn frac(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

impl CorpusStats {
    pub fn rude_fraction(&self) -> f64 {
        self.proportions.rude
    }
}

pub fn compute_stats(pairs: &[AnnotatedPair]) -> CorpusStats {
    let mut politeness = PolitenessCounts::default();
    let mut evidence = BinaryCounts::default();
    let mut refuting = BinaryCounts::default();
    let bump = |counts: &mut BinaryCounts, v: bool| {
        if v {
            counts.yes += 1
        } else {
            counts.no += 1
        }
    };
    for pair in pairs {
        let r = &pair.response;
        match r.politeness {
            Some(Politeness::Polite) => politeness.polite += 1,
            Some(Politeness::Neutral) => politeness.neutral += 1,
            Some(Politeness::Rude) => politeness.rude += 1,
            None => {}
        }
        if let Some(e) = r.evidence {
            bump(&mut evidence, e);
        }
        if let Some(v) = r.refuting {
            bump(&mut refuting, v);
        }
    }
    let pt = politeness.total();
    let proportions = Proportions {
        polite: frac(politeness.polite, pt),
        neutral: frac(politeness.neutral, pt),
        rude: frac(politeness.rude, pt),
        evidence_yes: frac(evidence.yes, evidence.total()),
        evidence_no: frac(evidence.no, evidence.total()),
        refuting_yes: frac(refuting.yes, refuting.total()),
        refuting_no: frac(refuting.no, refuting.total()),
    };
    CorpusStats {
        n_pairs: pairs.len(),
        politeness,
        evidence,
        refuting,
        proportions,
    }
}
