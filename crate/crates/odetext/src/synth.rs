//! Seeded synthetic corpora with planted class tokens.
//!
//! Each document draws its class uniformly. It then gets the class's planted
//! token, two or three further cue words from its class pool, and filler
//! words shared by all classes, in shuffled order. With probability 0.05 a
//! single cue from another class pool is mixed in. Documents are 8 to 14
//! tokens long.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    /// Two classes, `home` and `admit`.
    Admit,
    /// Three classes, `-1`, `0` and `1`.
    Sentiment,
}

pub struct ClassRecipe {
    pub label: &'static str,
    pub planted: &'static str,
    pub cues: &'static [&'static str],
}

const ADMIT: [ClassRecipe; 2] = [
    ClassRecipe {
        label: "home",
        planted: "walkin",
        cues: &[
            "sprain",
            "refill",
            "rash",
            "discharged",
            "ambulatory",
            "stable",
            "followup",
            "minor",
        ],
    },
    ClassRecipe {
        label: "admit",
        planted: "admit",
        cues: &[
            "ambulance",
            "sepsis",
            "stroke",
            "icu",
            "intubated",
            "hypoxic",
            "transfer",
            "syncope",
        ],
    },
];

const SENTIMENT: [ClassRecipe; 3] = [
    ClassRecipe {
        label: "-1",
        planted: "terrible",
        cues: &["awful", "broken", "refund", "worst", "rude", "slow", "disappointed"],
    },
    ClassRecipe {
        label: "0",
        planted: "okay",
        cues: &[
            "average", "expected", "ordinary", "fine", "standard", "adequate", "plain",
        ],
    },
    ClassRecipe {
        label: "1",
        planted: "wonderful",
        cues: &["excellent", "friendly", "love", "fast", "perfect", "delighted", "great"],
    },
];

const ADMIT_FILLER: &[&str] = &[
    "patient",
    "reports",
    "pain",
    "history",
    "of",
    "the",
    "with",
    "and",
    "presents",
    "chest",
    "abdominal",
    "fever",
    "cough",
    "nausea",
    "since",
    "yesterday",
    "denies",
    "vitals",
    "noted",
    "17",
    "year",
    "old",
    "male",
    "female",
    "triage",
    "nurse",
    "recieved",
    "evaluation",
    "today",
    "mild",
];

const SENTIMENT_FILLER: &[&str] = &[
    "the", "product", "was", "it", "and", "service", "order", "arrived", "i", "my", "this", "store", "item",
    "delivery", "price", "staff", "a", "week", "after", "box",
];

impl Task {
    pub fn classes(self) -> &'static [ClassRecipe] {
        match self {
            Task::Admit => &ADMIT,
            Task::Sentiment => &SENTIMENT,
        }
    }

    fn filler(self) -> &'static [&'static str] {
        match self {
            Task::Admit => ADMIT_FILLER,
            Task::Sentiment => SENTIMENT_FILLER,
        }
    }

    /// Label names in class-index order.
    pub fn label_names(self) -> Vec<String> {
        self.classes().iter().map(|c| c.label.to_string()).collect()
    }
}

/// `n` documents as `(text, label)`, fully determined by `seed`.
pub fn generate(task: Task, n: usize, seed: u64) -> Vec<(String, &'static str)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = task.classes();
    let filler = task.filler();
    (0..n)
        .map(|_| {
            let c = rng.gen_range(0..classes.len());
            let class = &classes[c];
            let mut words: Vec<&str> = vec![class.planted];
            let n_cues = rng.gen_range(2..=3);
            words.extend(class.cues.choose_multiple(&mut rng, n_cues).copied());
            if rng.gen_bool(0.05) {
                let other = (c + rng.gen_range(1..classes.len())) % classes.len();
                words.push(classes[other].cues.choose(&mut rng).copied().expect("non-empty"));
            }
            let len = rng.gen_range(8..=14);
            while words.len() < len {
                words.push(filler.choose(&mut rng).copied().expect("non-empty"));
            }
            words.shuffle(&mut rng);
            (words.join(" "), class.label)
        })
        .collect()
}

/// Writes `text,label` CSV with a header row.
pub fn write_csv<W: Write>(docs: &[(String, &str)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["text", "label"])?;
    for (text, label) in docs {
        w.write_record([text.as_str(), label])?;
    }
    w.flush()?;
    Ok(())
}
