//! Prompt rendering for the three generation branches and the text prototypes.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::backend::Branch;
use crate::error::{Error, Result};
use crate::taxonomy::HoiTaxonomy;

const NO_INTERACTION: &str = "no_interaction";

/// `sports_ball` -> `sports ball`
pub fn display_name(name: &str) -> String {
    name.replace('_', " ")
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Indefinite article plus noun.
pub fn with_article(noun: &str) -> String {
    let noun = display_name(noun);
    match noun.chars().next() {
        Some(c) if is_vowel(c.to_ascii_lowercase()) => format!("an {noun}"),
        _ => format!("a {noun}"),
    }
}

/// Present participle of a (possibly multi-word) verb: `sit_on` -> `sitting on`.
pub fn gerund(verb: &str) -> String {
    let display = display_name(verb);
    let mut words = display.split(' ');
    let head = words.next().unwrap_or_default();
    let rest: Vec<&str> = words.collect();
    let mut out = participle(head);
    for w in rest {
        out.push(' ');
        out.push_str(w);
    }
    out
}

fn participle(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    if n == 0 {
        return String::new();
    }
    if word.ends_with("ie") {
        return format!("{}ying", &word[..word.len() - 2]);
    }
    if word.ends_with('e') && !word.ends_with("ee") && n > 2 {
        return format!("{}ing", &word[..word.len() - 1]);
    }
    // single-syllable consonant-vowel-consonant: run -> running
    let vowel_groups = chars
        .iter()
        .enumerate()
        .filter(|&(i, &c)| is_vowel(c) && (i == 0 || !is_vowel(chars[i - 1])))
        .count();
    if n >= 3
        && vowel_groups == 1
        && !is_vowel(chars[n - 1])
        && !matches!(chars[n - 1], 'w' | 'x' | 'y')
        && is_vowel(chars[n - 2])
        && !is_vowel(chars[n - 3])
    {
        return format!("{word}{}ing", chars[n - 1]);
    }
    format!("{word}ing")
}

/// Union-branch prompt: "a photo of a person riding a bicycle".
pub fn union_prompt(verb: &str, object: &str) -> String {
    if verb == NO_INTERACTION {
        format!("a photo of a person and {}", with_article(object))
    } else {
        format!("a photo of a person {} {}", gerund(verb), with_article(object))
    }
}

/// Human-branch prompt, categorised by the interacted object.
pub fn human_prompt(object: &str) -> String {
    format!("person who interacts with {}", display_name(object))
}

pub fn object_prompt(object: &str) -> String {
    format!("a photo of {}", with_article(object))
}

/// Handcrafted interaction description used for the semantic prototypes.
pub fn text_prototype_prompt(verb: &str, object: &str) -> String {
    if verb == NO_INTERACTION {
        format!("a photo of a person is not interacting with {}", with_article(object))
    } else {
        format!("a photo of a person is {} {}", gerund(verb), with_article(object))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptSpec {
    pub branch: Branch,
    pub verb: Option<usize>,
    pub object: usize,
    pub text: String,
}

/// Every prompt the generator is conditioned on, in a fixed order: one union
/// prompt per HOI, then one human and one object prompt per object.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptTable {
    prompts: Vec<PromptSpec>,
    num_hois: usize,
    num_objects: usize,
    hoi_objects: Vec<usize>,
}

impl PromptTable {
    pub fn for_taxonomy(tax: &HoiTaxonomy) -> Self {
        let mut prompts = Vec::with_capacity(tax.num_hois() + 2 * tax.num_objects());
        for h in tax.hois() {
            prompts.push(PromptSpec {
                branch: Branch::Union,
                verb: Some(h.verb),
                object: h.object,
                text: union_prompt(&tax.verbs()[h.verb], &tax.objects()[h.object]),
            });
        }
        for (o, name) in tax.objects().iter().enumerate() {
            prompts.push(PromptSpec {
                branch: Branch::Human,
                verb: None,
                object: o,
                text: human_prompt(name),
            });
        }
        for (o, name) in tax.objects().iter().enumerate() {
            prompts.push(PromptSpec {
                branch: Branch::Object,
                verb: None,
                object: o,
                text: object_prompt(name),
            });
        }
        Self {
            prompts,
            num_hois: tax.num_hois(),
            num_objects: tax.num_objects(),
            hoi_objects: tax.hois().iter().map(|h| h.object).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&PromptSpec> {
        self.prompts.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptSpec> {
        self.prompts.iter()
    }

    pub fn num_hois(&self) -> usize {
        self.num_hois
    }

    /// Prompt index for `(hoi category, branch)`.
    pub fn index_for(&self, hoi: usize, branch: Branch) -> Result<usize> {
        if hoi >= self.num_hois {
            return Err(Error::UnknownCategory(hoi));
        }
        let object = self.hoi_objects[hoi];
        match branch {
            Branch::Union => Ok(hoi),
            Branch::Human => Ok(self.num_hois + object),
            Branch::Object => Ok(self.num_hois + self.num_objects + object),
            other => Err(Error::Config(format!("branch {other} has no generator prompt"))),
        }
    }

    pub fn texts(&self) -> Vec<String> {
        self.prompts.iter().map(|p| p.text.to_string()).collect()
    }
}
