//! HOI label space and zero-shot split construction.
//!
//! A taxonomy is a list of object names, a list of verb names, and the valid
//! `(verb, object)` combinations with their training instance counts. Splits
//! partition the combinations into seen and unseen sets under one of five
//! protocols.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::rng;

/// Categories with fewer training instances than this are rare.
pub const RARE_THRESHOLD: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HoiPair {
    pub verb: usize,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoiTaxonomy {
    objects: Vec<String>,
    verbs: Vec<String>,
    hois: Vec<HoiPair>,
    train_instance_counts: Vec<u64>,
}

impl HoiTaxonomy {
    pub fn new(
        objects: Vec<String>,
        verbs: Vec<String>,
        hois: Vec<HoiPair>,
        train_instance_counts: Vec<u64>,
    ) -> Result<Self> {
        if hois.len() != train_instance_counts.len() {
            return Err(Error::Validation(format!(
                "{} hois but {} instance counts",
                hois.len(),
                train_instance_counts.len()
            )));
        }
        check_unique_names("object", &objects)?;
        check_unique_names("verb", &verbs)?;
        let mut seen = BTreeSet::new();
        for (id, h) in hois.iter().enumerate() {
            if h.verb >= verbs.len() {
                return Err(Error::Validation(format!(
                    "hoi {id}: verb id {} out of range ({} verbs)",
                    h.verb,
                    verbs.len()
                )));
            }
            if h.object >= objects.len() {
                return Err(Error::Validation(format!(
                    "hoi {id}: object id {} out of range ({} objects)",
                    h.object,
                    objects.len()
                )));
            }
            if !seen.insert(*h) {
                return Err(Error::Validation(format!(
                    "hoi {id}: duplicate pair (verb {}, object {})",
                    h.verb, h.object
                )));
            }
        }
        Ok(Self {
            objects,
            verbs,
            hois,
            train_instance_counts,
        })
    }

    /// Parses the line-oriented taxonomy format: `#objects`, `#verbs` and `#hois`
    /// sections, one entry per line, hoi lines as `verb_id object_id count`.
    /// Blank lines and `//` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        #[derive(Clone, Copy, PartialEq)]
        enum Section {
            None,
            Objects,
            Verbs,
            Hois,
        }
        let mut section = Section::None;
        let mut headers = [false; 3];
        let (mut objects, mut verbs, mut hois, mut counts) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let (s, slot) = match header.trim() {
                    "objects" => (Section::Objects, 0),
                    "verbs" => (Section::Verbs, 1),
                    "hois" => (Section::Hois, 2),
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("unknown section `#{other}`"),
                        })
                    }
                };
                if headers[slot] {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("section `#{}` repeated", header.trim()),
                    });
                }
                headers[slot] = true;
                section = s;
                continue;
            }
            match section {
                Section::None => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "entry before any section header".to_string(),
                    })
                }
                Section::Objects => objects.push(line.to_string()),
                Section::Verbs => verbs.push(line.to_string()),
                Section::Hois => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    if fields.len() != 3 {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("expected `verb_id object_id count`, got `{line}`"),
                        });
                    }
                    let num = |s: &str| -> Result<u64> {
                        s.parse::<u64>().map_err(|_| Error::Parse {
                            line: line_no,
                            message: format!("`{s}` is not a non-negative integer"),
                        })
                    };
                    hois.push(HoiPair {
                        verb: num(fields[0])? as usize,
                        object: num(fields[1])? as usize,
                    });
                    counts.push(num(fields[2])?);
                }
            }
        }
        for (present, name) in headers.iter().zip(["objects", "verbs", "hois"]) {
            if !present {
                return Err(Error::Parse {
                    line: text.lines().count(),
                    message: format!("missing section `#{name}`"),
                });
            }
        }
        Self::new(objects, verbs, hois, counts)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("#objects\n");
        for o in &self.objects {
            out.push_str(o);
            out.push('\n');
        }
        out.push_str("#verbs\n");
        for v in &self.verbs {
            out.push_str(v);
            out.push('\n');
        }
        out.push_str("#hois\n");
        for (h, c) in self.hois.iter().zip(&self.train_instance_counts) {
            out.push_str(&format!("{} {} {}\n", h.verb, h.object, c));
        }
        out
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn hois(&self) -> &[HoiPair] {
        &self.hois
    }

    pub fn hoi(&self, id: usize) -> Result<HoiPair> {
        self.hois.get(id).copied().ok_or(Error::UnknownCategory(id))
    }

    pub fn train_instance_counts(&self) -> &[u64] {
        &self.train_instance_counts
    }

    pub fn num_hois(&self) -> usize {
        self.hois.len()
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_verbs(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_rare(&self, id: usize) -> bool {
        self.train_instance_counts[id] < RARE_THRESHOLD
    }

    /// `(rare, nonrare)` HOI ids.
    pub fn rarity_partition(&self) -> (BTreeSet<usize>, BTreeSet<usize>) {
        (0..self.num_hois()).partition(|&h| self.is_rare(h))
    }

    /// HOI ids whose object is `object`.
    pub fn hois_with_object(&self, object: usize) -> impl Iterator<Item = usize> + '_ {
        self.hois
            .iter()
            .enumerate()
            .filter(move |(_, h)| h.object == object)
            .map(|(i, _)| i)
    }

    /// Replaces the instance counts, e.g. with tallies from a generated training set.
    pub fn with_counts(mut self, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != self.hois.len() {
            return Err(Error::Validation(format!(
                "{} counts for {} hois",
                counts.len(),
                self.hois.len()
            )));
        }
        self.train_instance_counts = counts;
        Ok(self)
    }
}

fn check_unique_names(kind: &str, names: &[String]) -> Result<()> {
    let mut set = BTreeSet::new();
    for n in names {
        if n.is_empty() || n.contains(char::is_whitespace) {
            return Err(Error::Validation(format!("{kind} name `{n}` must be a single token")));
        }
        if !set.insert(n.as_str()) {
            return Err(Error::Validation(format!("duplicate {kind} name `{n}`")));
        }
    }
    Ok(())
}

/// Binary class-membership vector of length `classes`.
pub fn multi_hot(labels: impl IntoIterator<Item = usize>, classes: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; classes];
    for id in labels {
        if id >= classes {
            return Err(Error::Index { id, classes });
        }
        out[id] = 1.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Setting {
    /// Random unseen combinations; every verb and object stays seen.
    #[cfg_attr(feature = "serde", serde(rename = "UC"))]
    Uc,
    /// Rarest combinations unseen.
    #[cfg_attr(feature = "serde", serde(rename = "RF_UC"))]
    RfUc,
    /// Most frequent combinations unseen.
    #[cfg_attr(feature = "serde", serde(rename = "NF_UC"))]
    NfUc,
    /// Whole verbs held out.
    #[cfg_attr(feature = "serde", serde(rename = "UV"))]
    Uv,
    /// Whole objects held out.
    #[cfg_attr(feature = "serde", serde(rename = "UO"))]
    Uo,
}

impl Setting {
    pub const ALL: [Setting; 5] = [Setting::Uc, Setting::RfUc, Setting::NfUc, Setting::Uv, Setting::Uo];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Uc => "UC",
            Setting::RfUc => "RF_UC",
            Setting::NfUc => "NF_UC",
            Setting::Uv => "UV",
            Setting::Uo => "UO",
        }
    }

    fn keeps_all_verbs_and_objects(self) -> bool {
        matches!(self, Setting::Uc | Setting::RfUc | Setting::NfUc)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Setting::ALL
            .into_iter()
            .find(|st| st.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown zero-shot setting `{s}`")))
    }
}

/// Disjoint seen/unseen partition of the HOI categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroShotSplit {
    pub setting: Setting,
    pub seed: u64,
    /// Number of held-out HOIs (UC family) or held-out objects/verbs (UO/UV).
    pub unseen_count: usize,
    pub num_hois: usize,
    pub seen_hois: BTreeSet<usize>,
    pub unseen_hois: BTreeSet<usize>,
    pub seen_objects: BTreeSet<usize>,
    pub seen_verbs: BTreeSet<usize>,
}

impl ZeroShotSplit {
    /// Assembles a split from an explicit unseen set and derives the seen sets.
    pub fn from_unseen(
        tax: &HoiTaxonomy,
        setting: Setting,
        seed: u64,
        unseen_count: usize,
        unseen_hois: BTreeSet<usize>,
    ) -> Result<Self> {
        if let Some(&bad) = unseen_hois.iter().find(|&&h| h >= tax.num_hois()) {
            return Err(Error::UnknownCategory(bad));
        }
        let seen_hois: BTreeSet<usize> = (0..tax.num_hois()).filter(|h| !unseen_hois.contains(h)).collect();
        let seen_objects = seen_hois.iter().map(|&h| tax.hois[h].object).collect();
        let seen_verbs = seen_hois.iter().map(|&h| tax.hois[h].verb).collect();
        Ok(Self {
            setting,
            seed,
            unseen_count,
            num_hois: tax.num_hois(),
            seen_hois,
            unseen_hois,
            seen_objects,
            seen_verbs,
        })
    }

    /// A split with no unseen categories (fully supervised training).
    pub fn fully_seen(tax: &HoiTaxonomy) -> Self {
        Self::from_unseen(tax, Setting::Uc, 0, 0, BTreeSet::new()).expect("empty unseen set is always valid")
    }

    pub fn is_seen(&self, hoi: usize) -> bool {
        self.seen_hois.contains(&hoi)
    }

    /// Checks every split invariant against the taxonomy.
    pub fn validate(&self, tax: &HoiTaxonomy) -> Result<()> {
        let c = tax.num_hois();
        if self.num_hois != c {
            return Err(Error::Validation(format!("split covers {} hois, taxonomy has {c}", self.num_hois)));
        }
        if let Some(h) = self.seen_hois.intersection(&self.unseen_hois).next() {
            return Err(Error::Validation(format!("hoi {h} is both seen and unseen")));
        }
        if self.seen_hois.len() + self.unseen_hois.len() != c
            || self.seen_hois.iter().chain(&self.unseen_hois).any(|&h| h >= c)
        {
            return Err(Error::Validation("seen and unseen sets do not cover the taxonomy".into()));
        }
        let derived_objects: BTreeSet<usize> = self.seen_hois.iter().map(|&h| tax.hois[h].object).collect();
        let derived_verbs: BTreeSet<usize> = self.seen_hois.iter().map(|&h| tax.hois[h].verb).collect();
        if derived_objects != self.seen_objects || derived_verbs != self.seen_verbs {
            return Err(Error::Validation("seen object/verb sets are stale".into()));
        }
        match self.setting {
            s if s.keeps_all_verbs_and_objects() => {
                for h in &tax.hois {
                    if !self.seen_verbs.contains(&h.verb) {
                        return Err(Error::Validation(format!("verb {} has no seen hoi", tax.verbs[h.verb])));
                    }
                    if !self.seen_objects.contains(&h.object) {
                        return Err(Error::Validation(format!(
                            "object {} has no seen hoi",
                            tax.objects[h.object]
                        )));
                    }
                }
            }
            Setting::Uo => {
                for &h in &self.unseen_hois {
                    if self.seen_objects.contains(&tax.hois[h].object) {
                        return Err(Error::Validation(format!("unseen hoi {h} has a seen object")));
                    }
                }
            }
            Setting::Uv => {
                for &h in &self.unseen_hois {
                    if self.seen_verbs.contains(&tax.hois[h].verb) {
                        return Err(Error::Validation(format!("unseen hoi {h} has a seen verb")));
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    /// Key-value document: setting, seed, unseen_count, num_hois, unseen ids.
    pub fn to_document(&self) -> String {
        let ids: Vec<String> = self.unseen_hois.iter().map(|h| h.to_string()).collect();
        format!(
            "setting = {}\nseed = {}\nunseen_count = {}\nnum_hois = {}\nunseen = {}\n",
            self.setting,
            self.seed,
            self.unseen_count,
            self.num_hois,
            ids.join(" ")
        )
    }

    pub fn from_document(text: &str, tax: &HoiTaxonomy) -> Result<Self> {
        let (mut setting, mut seed, mut count, mut num, mut unseen) = (None, None, None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let perr = |message: String| Error::Parse { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected `key = value`, got `{line}`")))?;
            let value = value.trim();
            let int = |v: &str| v.parse::<u64>().map_err(|_| perr(format!("`{v}` is not an integer")));
            match key.trim() {
                "setting" => setting = Some(value.parse::<Setting>()?),
                "seed" => seed = Some(int(value)?),
                "unseen_count" => count = Some(int(value)? as usize),
                "num_hois" => num = Some(int(value)? as usize),
                "unseen" => {
                    let ids = value
                        .split_whitespace()
                        .map(|v| int(v).map(|x| x as usize))
                        .collect::<Result<BTreeSet<usize>>>()?;
                    unseen = Some(ids);
                }
                other => return Err(perr(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Parse {
            line: 0,
            message: format!("missing key `{k}`"),
        };
        let num = num.ok_or_else(|| missing("num_hois"))?;
        if num != tax.num_hois() {
            return Err(Error::Validation(format!(
                "split file is for {num} hois, taxonomy has {}",
                tax.num_hois()
            )));
        }
        let split = Self::from_unseen(
            tax,
            setting.ok_or_else(|| missing("setting"))?,
            seed.ok_or_else(|| missing("seed"))?,
            count.ok_or_else(|| missing("unseen_count"))?,
            unseen.ok_or_else(|| missing("unseen"))?,
        )?;
        split.validate(tax)?;
        Ok(split)
    }
}

/// Builds a split under `setting`.
///
/// RF_UC and NF_UC walk the HOIs by ascending (resp. descending) instance count,
/// ties by ascending id; UC walks a seeded random permutation. In all three a
/// candidate is rejected when removing it would leave one of its verb or object
/// without any seen HOI. UO and UV hold out `unseen_count` whole object (verb)
/// columns chosen at random from the seed.
pub fn build_split(tax: &HoiTaxonomy, setting: Setting, unseen_count: usize, seed: u64) -> Result<ZeroShotSplit> {
    let c = tax.num_hois();
    if unseen_count >= c {
        return Err(Error::InfeasibleSplit(format!(
            "unseen_count {unseen_count} must be below the number of hois ({c})"
        )));
    }
    let unseen = match setting {
        Setting::Uc => {
            let order = rng::permutation(&mut rng::stream(seed, &[0x5543]), c);
            greedy_combinations(tax, &order, unseen_count)?
        }
        Setting::RfUc => {
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by_key(|&h| (tax.train_instance_counts[h], h));
            greedy_combinations(tax, &order, unseen_count)?
        }
        Setting::NfUc => {
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by_key(|&h| (core::cmp::Reverse(tax.train_instance_counts[h]), h));
            greedy_combinations(tax, &order, unseen_count)?
        }
        Setting::Uo => hold_out_columns(tax, unseen_count, seed, |h| h.object, "objects")?,
        Setting::Uv => hold_out_columns(tax, unseen_count, seed, |h| h.verb, "verbs")?,
    };
    let split = ZeroShotSplit::from_unseen(tax, setting, seed, unseen_count, unseen)?;
    split.validate(tax)?;
    Ok(split)
}

fn greedy_combinations(tax: &HoiTaxonomy, order: &[usize], unseen_count: usize) -> Result<BTreeSet<usize>> {
    let mut verb_left = vec![0usize; tax.num_verbs()];
    let mut object_left = vec![0usize; tax.num_objects()];
    for h in &tax.hois {
        verb_left[h.verb] += 1;
        object_left[h.object] += 1;
    }
    let mut unseen = BTreeSet::new();
    for &id in order {
        if unseen.len() == unseen_count {
            break;
        }
        let h = tax.hois[id];
        if verb_left[h.verb] > 1 && object_left[h.object] > 1 {
            verb_left[h.verb] -= 1;
            object_left[h.object] -= 1;
            unseen.insert(id);
        }
    }
    if unseen.len() < unseen_count {
        return Err(Error::InfeasibleSplit(format!(
            "only {} of {unseen_count} combinations can be held out while keeping every verb and object seen",
            unseen.len()
        )));
    }
    Ok(unseen)
}

fn hold_out_columns(
    tax: &HoiTaxonomy,
    count: usize,
    seed: u64,
    column: impl Fn(&HoiPair) -> usize,
    what: &str,
) -> Result<BTreeSet<usize>> {
    let used: Vec<usize> = tax.hois.iter().map(&column).collect::<BTreeSet<_>>().into_iter().collect();
    if count >= used.len() {
        return Err(Error::InfeasibleSplit(format!(
            "cannot hold out {count} {what}: only {} are used by any hoi",
            used.len()
        )));
    }
    let picks = rng::sample_without_replacement(&mut rng::stream(seed, &[0x554f]), used.len(), count);
    let held: BTreeSet<usize> = picks.into_iter().map(|i| used[i]).collect();
    Ok(tax
        .hois
        .iter()
        .enumerate()
        .filter(|(_, h)| held.contains(&column(h)))
        .map(|(i, _)| i)
        .collect())
}
